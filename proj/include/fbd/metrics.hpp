#pragma once

// Overlap and surface-distance metrics with per-label reports.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbd/label_schema.hpp"
#include "fbd/volume.hpp"

namespace fbd {

using Grid3 = std::array<std::int64_t, 3>;  // nx, ny, nz (x fastest)
using Spacing = std::array<double, 3>;      // mm along x, y, z

// 2|A∩B| / (|A|+|B|); nullopt when both are empty. ShapeError on size mismatch.
std::optional<double> dsc(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// Foreground voxels with at least one face neighbour in the background.
// Neighbours outside the grid count as background.
std::vector<std::int64_t> surface_voxels(const std::vector<std::uint8_t>& mask, const Grid3& grid);

// Euclidean length of an index offset; isotropic spacing is evaluated as
// s * sqrt(integer) so equal offsets compare equal bit for bit.
double offset_length(std::int64_t dx, std::int64_t dy, std::int64_t dz, const Spacing& spacing);

// Nearest-surface distances from every surface voxel of a to the surface of b
// and vice versa, pooled and sorted. nullopt when either mask is empty.
std::optional<std::vector<double>> surface_distances(const std::vector<std::uint8_t>& a,
                                                     const std::vector<std::uint8_t>& b, const Grid3& grid,
                                                     const Spacing& spacing);

struct DistanceMetrics {
  std::optional<double> hd95;  // 95th percentile, linear interpolation
  std::optional<double> asd;   // mean
};
DistanceMetrics distance_metrics(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                 const Grid3& grid, const Spacing& spacing);

struct LabelMetrics {
  std::int32_t id = 0;
  std::string name;
  std::int64_t pred_voxels = 0, ref_voxels = 0;
  std::optional<double> dsc, hd95, asd;  // unset = undefined, excluded from aggregates
};

struct Aggregate {
  double mean = 0.0, std = 0.0;  // population std
  int count = 0;
};
Aggregate aggregate(const std::vector<std::optional<double>>& values);

struct TaskReport {
  std::string task;
  std::vector<LabelMetrics> labels;
  Aggregate dsc, hd95, asd;
  void finalize();  // recomputes aggregates
};

struct MetricReport {
  std::string case_id;
  std::vector<TaskReport> tasks;
};

// Exclusive label maps against a schema. Label ids outside the schema are a
// DataError; grid mismatch is a ShapeError.
TaskReport evaluate_labels(const Volume& pred, const Volume& ref, const LabelSchema& schema);
// Non-exclusive masks, one per name; masks are x-fastest over `meta`'s grid.
TaskReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& pred,
                          const std::vector<std::vector<std::uint8_t>>& ref, const std::vector<std::string>& names,
                          const VolumeMeta& meta);

std::string report_csv(const MetricReport& report);  // one row per label
nlohmann::json report_json(const MetricReport& report);
std::string report_table(const MetricReport& report);  // mean ± std per task

}  // namespace fbd
