#include <json.hpp>
#include <set>

#include "fbd/annotation.hpp"
#include "fbd/errors.hpp"

namespace fbd {

TractMaskSet merge_bilateral(const std::vector<NamedMask>& inputs, std::int64_t voxel_count) {
  const auto& names = tract_source_names();
  std::map<std::string, const NamedMask*> by_name;
  for (const auto& in : inputs) {
    if (std::find(names.begin(), names.end(), in.name) == names.end()) throw DataError("unknown tract " + in.name);
    if (!by_name.emplace(in.name, &in).second) throw DataError("tract " + in.name + " given twice");
    if (!in.missing && static_cast<std::int64_t>(in.mask.size()) != voxel_count) {
      throw DataError("tract " + in.name + " mask has the wrong voxel count");
    }
  }
  auto present = [&](const std::string& n) -> const NamedMask* {
    const auto it = by_name.find(n);
    return it == by_name.end() || it->second->missing ? nullptr : it->second;
  };

  TractMaskSet out;
  for (const auto& label : tract_schema().labels) {
    std::vector<const NamedMask*> parts;
    bool partial = false;
    if (tract_is_bilateral(label.abbreviation)) {
      const auto* l = present(label.abbreviation + "_L");
      const auto* r = present(label.abbreviation + "_R");
      if (l) parts.push_back(l);
      if (r) parts.push_back(r);
      partial = parts.size() == 1;
    } else if (const auto* c = present(label.abbreviation)) {
      parts.push_back(c);
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(voxel_count), 0);
    for (const auto* p : parts)
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] |= p->mask[i] ? 1 : 0;
    out.names.push_back(label.abbreviation);
    out.masks.push_back(std::move(mask));
    out.present.push_back(parts.empty() ? 0 : 1);
    out.partial.push_back(partial ? 1 : 0);
  }
  return out;
}

namespace {

std::int32_t tissue_id(const std::string& s) {
  if (s == "background" || s == "BG" || s == "0") return 0;
  if (const auto* l = tissue_schema().find_abbreviation(s)) return l->id;
  throw DataError("unknown tissue class '" + s + "'");
}

}  // namespace

// Fetal atlas tissue labels. Subplate and intermediate zone are merged into
// WM for the younger atlas.
const std::vector<AtlasLabel>& young_atlas_labels() {
  static const std::vector<AtlasLabel> v = {
      {1, "Cortical plate", "CGM"},       {2, "Subplate", "WM"},
      {3, "Intermediate zone", "WM"},     {4, "Ventricular zone", "WM"},
      {5, "Hippocampus", "CGM"},          {6, "Caudate", "SGM"},
      {7, "Thalamus", "SGM"},             {8, "Lentiform", "SGM"},
      {9, "Brainstem", "WM"},             {10, "Cerebellum", "SGM"},
      {11, "Lateral ventricles", "CSF"},  {12, "External CSF", "CSF"},
  };
  return v;
}

const std::vector<AtlasLabel>& older_atlas_labels() {
  static const std::vector<AtlasLabel> v = {
      {1, "Cortical gray matter", "CGM"}, {2, "White matter", "WM"},
      {3, "Corpus callosum", "WM"},       {4, "Hippocampus", "CGM"},
      {5, "Caudate", "SGM"},              {6, "Thalamus", "SGM"},
      {7, "Lentiform", "SGM"},            {8, "Brainstem", "WM"},
      {9, "Cerebellum", "SGM"},           {10, "Lateral ventricles", "CSF"},
      {11, "External CSF", "CSF"},
  };
  return v;
}

TissueMapping tissue_mapping(const std::vector<AtlasLabel>& labels) {
  TissueMapping m;
  for (const auto& l : labels) m[l.id] = tissue_id(l.tissue);
  return m;
}

TissueMapping parse_tissue_mapping(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tissue mapping is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("tissue mapping must be a JSON object");
  TissueMapping m;
  for (const auto& [key, value] : j.items()) {
    std::int32_t src = 0;
    try {
      std::size_t used = 0;
      src = std::stoi(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw FormatError("tissue mapping key '" + key + "' is not an integer id");
    }
    std::int32_t dst;
    if (value.is_number_integer()) {
      dst = value.get<std::int32_t>();
      if (dst < 0 || dst > 4) throw DataError("tissue id " + std::to_string(dst) + " out of range");
    } else if (value.is_string()) {
      dst = tissue_id(value.get<std::string>());
    } else {
      throw FormatError("tissue mapping value for '" + key + "' must be a string or integer");
    }
    m[src] = dst;
  }
  return m;
}

std::vector<std::int32_t> merge_tissue_labels(const std::vector<std::int32_t>& atlas, const TissueMapping& mapping) {
  for (const auto& [src, dst] : mapping) {
    if (dst < 0 || dst > 4) throw DataError("tissue id " + std::to_string(dst) + " out of range");
  }
  std::vector<std::int32_t> out(atlas.size());
  std::set<std::int32_t> unmapped;
  for (std::size_t i = 0; i < atlas.size(); ++i) {
    const auto it = mapping.find(atlas[i]);
    if (it != mapping.end()) {
      out[i] = it->second;
    } else if (atlas[i] == 0) {
      out[i] = 0;
    } else {
      unmapped.insert(atlas[i]);
    }
  }
  if (!unmapped.empty()) {
    std::string ids;
    for (auto id : unmapped) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw DataError("atlas ids without a tissue mapping: " + ids);
  }
  return out;
}

}  // namespace fbd
