#include "fbd/label_schema.hpp"

#include <algorithm>
#include <set>

#include "fbd/errors.hpp"

namespace fbd {

namespace {

struct Entry {
  const char* group;
  const char* name;
  const char* abbr;
  bool bilateral;
};

// Tracts in table order.
const Entry kTracts[] = {
    {"projection", "Corticospinal tract", "CST", true},
    {"projection", "Fronto-pontine tract", "FPT", true},
    {"projection", "Parieto-occipital pontine tract", "POPT", true},
    {"projection", "Fronto-orbital-striatal", "ST_FO", true},
    {"projection", "Occipito-striatal", "ST_OCC", true},
    {"projection", "Parieto-striatal", "ST_PAR", true},
    {"projection", "Postcentral-striatal", "ST_POSTC", true},
    {"projection", "Precentral-striatal", "ST_PREC", true},
    {"projection", "Prefrontal-striatal", "ST_PREF", true},
    {"projection", "Premotor-striatal", "ST_PREM", true},
    {"projection", "Anterior thalamic radiation", "ATR", true},
    {"projection", "Optic radiation", "OR", true},
    {"projection", "Superior thalamic radiation", "STR", true},
    {"projection", "Thalamo-occipital radiation", "T_OCC", true},
    {"projection", "Thalamo-parietal radiation", "T_PAR", true},
    {"projection", "Thalamo-postcentral radiation", "T_POSTC", true},
    {"projection", "Thalamo-precentral radiation", "T_PREC", true},
    {"projection", "Thalamo-prefrontal radiation", "T_PREF", true},
    {"projection", "Thalamo-premotor radiation", "T_PREM", true},
    {"association", "Frontal aslant tract", "FAT", true},
    {"association", "Inferior fronto-occipital fasciculus", "IFO", true},
    {"association", "Inferior longitudinal fascicle", "ILF", true},
    {"association", "Middle longitudinal fascicle", "MLF", true},
    {"association", "Uncinate fasciculus", "UF", true},
    {"commissural", "Corpus callosum rostrum", "CC_1", false},
    {"commissural", "Corpus callosum genu", "CC_2", false},
    {"commissural", "Corpus callosum rostral body", "CC_3", false},
    {"commissural", "Corpus callosum anterior midbody", "CC_4", false},
    {"commissural", "Corpus callosum posterior midbody", "CC_5", false},
    {"commissural", "Corpus callosum isthmus", "CC_6", false},
    {"commissural", "Corpus callosum splenium", "CC_7", false},
};

// Parcellation structures, left table column then right column.
const Entry kParcels[] = {
    {"frontal", "Gyrus rectus", "Rect", true},
    {"frontal", "Medial superior frontal gyrus", "MedSupF", true},
    {"frontal", "Middle frontal gyrus", "MidF", true},
    {"frontal", "Olfactory cortex", "Olf", true},
    {"frontal", "Opercular part of the inferior frontal gyrus", "OpIF", true},
    {"frontal", "Orbital part of the inferior frontal gyrus", "OrbIF", true},
    {"frontal", "Orbital part of the medial frontal gyrus", "OrbMF", true},
    {"frontal", "Orbital part of the middle frontal gyrus", "OrbMidF", true},
    {"frontal", "Orbital part of the superior frontal gyrus", "OrbSF", true},
    {"frontal", "Paracentral lobule", "PCL", true},
    {"frontal", "Precentral gyrus", "PreC", true},
    {"frontal", "Rolandic operculum", "RolOper", true},
    {"frontal", "Superior frontal gyrus", "SupF", true},
    {"frontal", "Supplementary motor area", "SMA", true},
    {"frontal", "Triangular part of the inferior frontal gyrus", "TriIFG", true},
    {"parietal", "Angular gyrus", "Ang", true},
    {"parietal", "Inferior parietal lobule", "IPL", true},
    {"parietal", "Postcentral gyrus", "Pstcent", true},
    {"parietal", "Precuneus", "Precuneus", true},
    {"parietal", "Superior parietal lobule", "SPL", true},
    {"parietal", "Supramarginal gyrus", "SMG", true},
    {"occipital", "Calcarine cortex", "Calc", true},
    {"occipital", "Cuneus", "Cuneus", true},
    {"occipital", "Fusiform gyrus", "Fusiform", true},
    {"occipital", "Inferior occipital gyrus", "InfOcc", true},
    {"occipital", "Lingual gyrus", "Ling", true},
    {"occipital", "Middle occipital gyrus", "MidOcc", true},
    {"occipital", "Superior occipital gyrus", "SupOcc", true},
    {"temporal", "Temporal pole (superior)", "SupTP", true},
    {"temporal", "Hippocampus", "Hipp", true},
    {"temporal", "Inferior temporal gyrus", "InfTemp", true},
    {"temporal", "Middle temporal gyrus", "MidTemp", true},
    {"temporal", "Parahippocampal gyrus", "ParaHip", true},
    {"temporal", "Superior temporal gyrus", "SupTemp", true},
    {"temporal", "Temporal pole (middle)", "MidTP", true},
    {"temporal", "Transverse temporal gyrus", "TransTemp", true},
    {"cingulate", "Anterior cingulate cortex", "AntCng", true},
    {"cingulate", "Middle cingulate cortex", "MidCng", true},
    {"cingulate", "Posterior cingulate cortex", "PostCng", true},
    {"insula", "Insula", "Ins", true},
    {"white_matter", "Brainstem", "BS", false},
    {"white_matter", "Corpus callosum", "CC", false},
    {"white_matter", "Internal capsule", "IC", true},
    {"white_matter", "Periventricular white matter", "pWM", true},
    {"deep_gray", "Amygdala", "Amyg", true},
    {"deep_gray", "Caudate nucleus", "Caud", true},
    {"deep_gray", "Lentiform", "Lent", true},
    {"deep_gray", "Thalamus", "Thal", true},
    {"cerebellum", "Cerebellum", "Cb", true},
};

LabelSchema build_tissue() {
  LabelSchema s{"tissue", {}, true};
  s.labels = {{1, "White matter", "WM", "tissue"},
              {2, "Cortical gray matter", "CGM", "tissue"},
              {3, "Subcortical gray matter", "SGM", "tissue"},
              {4, "Cerebrospinal fluid", "CSF", "tissue"}};
  return s;
}

LabelSchema build_tract() {
  LabelSchema s{"tract", {}, false};
  std::int32_t id = 1;
  for (const auto& e : kTracts) s.labels.push_back({id++, e.name, e.abbr, e.group});
  return s;
}

LabelSchema build_parcellation() {
  LabelSchema s{"parcellation", {}, true};
  std::int32_t id = 1;
  for (const auto& e : kParcels) {
    if (e.bilateral) {
      s.labels.push_back({id++, std::string(e.name) + " (left)", std::string(e.abbr) + "_L", e.group});
      s.labels.push_back({id++, std::string(e.name) + " (right)", std::string(e.abbr) + "_R", e.group});
    } else {
      s.labels.push_back({id++, e.name, e.abbr, e.group});
    }
  }
  return s;
}

const LabelSchema& checked(const LabelSchema& s, std::size_t expected) {
  s.validate();
  if (s.size() != expected) {
    throw DataError("schema " + s.name + " has " + std::to_string(s.size()) + " labels, expected " +
                    std::to_string(expected));
  }
  return s;
}

}  // namespace

std::int32_t LabelSchema::max_id() const {
  std::int32_t m = 0;
  for (const auto& l : labels) m = std::max(m, l.id);
  return m;
}

const Label* LabelSchema::find_id(std::int32_t id) const {
  for (const auto& l : labels)
    if (l.id == id) return &l;
  return nullptr;
}

const Label* LabelSchema::find_abbreviation(const std::string& abbr) const {
  for (const auto& l : labels)
    if (l.abbreviation == abbr) return &l;
  return nullptr;
}

void LabelSchema::validate() const {
  std::set<std::int32_t> ids;
  std::set<std::string> abbrs;
  for (const auto& l : labels) {
    if (l.id <= 0) throw DataError("schema " + name + ": label ids must be positive (0 is background)");
    if (!ids.insert(l.id).second) throw DataError("schema " + name + ": duplicate id " + std::to_string(l.id));
    if (l.abbreviation.empty()) throw DataError("schema " + name + ": empty abbreviation");
    if (!abbrs.insert(l.abbreviation).second) throw DataError("schema " + name + ": duplicate " + l.abbreviation);
  }
}

const LabelSchema& tissue_schema() {
  static const LabelSchema s = build_tissue();
  return checked(s, 4);
}

const LabelSchema& tract_schema() {
  static const LabelSchema s = build_tract();
  return checked(s, 31);
}

const LabelSchema& parcellation_schema() {
  static const LabelSchema s = build_parcellation();
  return checked(s, 96);
}

const LabelSchema& schema_by_name(const std::string& name) {
  if (name == "tissue" || name == "sg") return tissue_schema();
  if (name == "tract" || name == "tr") return tract_schema();
  if (name == "parcellation" || name == "pc") return parcellation_schema();
  throw UsageError("unknown schema '" + name + "' (expected tissue, tract or parcellation)");
}

const std::vector<std::string>& tract_source_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& e : kTracts) {
      if (e.bilateral) {
        v.push_back(std::string(e.abbr) + "_L");
        v.push_back(std::string(e.abbr) + "_R");
      } else {
        v.push_back(e.abbr);
      }
    }
    return v;
  }();
  return names;
}

bool tract_is_bilateral(const std::string& abbreviation) {
  for (const auto& e : kTracts)
    if (abbreviation == e.abbr) return e.bilateral;
  throw DataError("unknown tract " + abbreviation);
}

}  // namespace fbd
