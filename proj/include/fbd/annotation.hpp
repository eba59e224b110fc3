#pragma once

// Label-generation helpers: multi-label STAPLE fusion, streamline density
// masks, bilateral tract merging and atlas-to-tissue relabeling.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fbd/label_schema.hpp"
#include "fbd/tck.hpp"
#include "fbd/volume.hpp"

namespace fbd {

// ---- STAPLE ----

struct StapleOptions {
  int max_iter = 100;
  double tol = 1e-6;              // on max |delta theta|
  double init_diagonal = 0.9;     // off-diagonal mass spread uniformly
  std::vector<double> prior;      // per label; empty = relative frequencies over all candidates
  int threads = 1;
};

struct FusionResult {
  int num_labels = 0;                           // labels are 0 .. num_labels-1
  std::int64_t voxels = 0;
  std::vector<double> posterior;                // voxel-major: posterior[i * L + s]
  std::vector<std::int32_t> hard;               // argmax, lowest id wins ties
  std::vector<std::vector<double>> confusion;   // per rater, row-major L x L: theta[s * L + s']
  std::vector<double> prior;
  std::vector<double> log_likelihood;           // one entry per EM iteration
  std::vector<std::int32_t> absent_labels;      // never observed; their posterior is the prior
  int iterations = 0;
  bool converged = false;
};

// Candidates are flat label maps of equal length with values in [0, num_labels).
FusionResult staple_fuse(const std::vector<std::vector<std::int32_t>>& candidates, int num_labels,
                         const StapleOptions& options = {});
// Volume form: identical grids, labels within the schema (background 0 included).
FusionResult staple_fuse(const std::vector<Volume>& candidates, const LabelSchema& schema,
                         const StapleOptions& options = {});

// ---- streamline density ----

// Voxel i has its centre at i * voxel_size mm on each axis.
struct DensityResult {
  std::vector<std::int32_t> density;  // distinct streamlines per voxel
  double threshold = 0.0;
  std::vector<std::uint8_t> mask;
  std::int64_t skipped_points = 0;    // points outside the grid
};

// Linear interpolation between closest ranks: h = (n - 1) * q.
double percentile_linear(std::vector<double> values, double q);

// Voxels crossed by the segment a-b in voxel-index coordinates (face-connected walk).
std::vector<std::array<std::int64_t, 3>> traverse_segment(const std::array<double, 3>& a, const std::array<double, 3>& b);

DensityResult density_mask(const StreamlineSet& streamlines, const VolumeMeta& meta, double percentile = 5.0,
                           int threads = 1);

// ---- tract merging ----

struct NamedMask {
  std::string name;                 // one of tract_source_names()
  std::vector<std::uint8_t> mask;
  bool missing = false;             // marked absent by the annotator
};

struct TractMaskSet {
  std::vector<std::string> names;                  // tract schema order
  std::vector<std::vector<std::uint8_t>> masks;    // one per tract
  std::vector<std::uint8_t> present;               // task mask m_tr per tract
  std::vector<std::uint8_t> partial;               // only one side available
};

TractMaskSet merge_bilateral(const std::vector<NamedMask>& inputs, std::int64_t voxel_count);

// ---- tissue merging ----

// Atlas id -> tissue id (0 background, 1 WM, 2 CGM, 3 SGM, 4 CSF).
using TissueMapping = std::map<std::int32_t, std::int32_t>;

struct AtlasLabel {
  std::int32_t id;
  const char* name;
  const char* tissue;  // tissue abbreviation
};

const std::vector<AtlasLabel>& young_atlas_labels();  // 12 labels, below 31 weeks
const std::vector<AtlasLabel>& older_atlas_labels();  // 11 labels
TissueMapping tissue_mapping(const std::vector<AtlasLabel>& labels);
// JSON object {"<atlas id>": "<tissue abbreviation or id>", ...}
TissueMapping parse_tissue_mapping(const std::string& json_text);

// Background 0 maps to 0 unless listed. Throws DataError listing unmapped ids.
std::vector<std::int32_t> merge_tissue_labels(const std::vector<std::int32_t>& atlas, const TissueMapping& mapping);

}  // namespace fbd
