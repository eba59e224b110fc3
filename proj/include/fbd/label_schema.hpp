#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbd {

struct Label {
  std::int32_t id = 0;
  std::string name;
  std::string abbreviation;
  std::string group;
};

struct LabelSchema {
  std::string name;
  std::vector<Label> labels;  // foreground labels only; id 0 is background for exclusive schemas
  bool exclusive = true;

  std::size_t size() const { return labels.size(); }
  std::int32_t max_id() const;
  const Label* find_id(std::int32_t id) const;
  const Label* find_abbreviation(const std::string& abbr) const;
  // Throws DataError on duplicate or non-positive ids, or on empty names.
  void validate() const;
};

const LabelSchema& tissue_schema();        // 4 labels: WM, CGM, SGM, CSF
const LabelSchema& tract_schema();         // 31 labels, overlapping
const LabelSchema& parcellation_schema();  // 96 labels
// "tissue", "tract" or "parcellation" (also "sg", "tr", "pc"); UsageError otherwise.
const LabelSchema& schema_by_name(const std::string& name);

// Per-hemisphere tract names before bilateral merging: "<abbr>_L", "<abbr>_R"
// for bilateral tracts and the bare abbreviation for commissural ones (55).
const std::vector<std::string>& tract_source_names();
bool tract_is_bilateral(const std::string& abbreviation);

}  // namespace fbd
