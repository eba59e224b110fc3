#pragma once

// Diffusion tensor estimation by weighted linear least squares on the
// log-signal, plus forward simulation and scalar maps.
//
// Tensor components are ordered (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz) in mm^2/s.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fbd/volume.hpp"

namespace fbd {

using Tensor6 = std::array<double, 6>;
using Vec3 = std::array<double, 3>;

struct GradientTable {
  std::vector<Vec3> directions;
  std::vector<double> bvalues;  // s/mm^2

  std::size_t size() const { return bvalues.size(); }
  // Unit directions for b > 0 (within 1e-6), non-negative b values,
  // at least one b = 0 row and six distinct b > 0 directions. Throws DataError.
  void validate() const;
};

// Text format: one "gx gy gz b" row per measurement; '#' starts a comment.
GradientTable parse_gradient_table(const std::string& text);
GradientTable read_gradient_table(const std::string& path);
std::string format_gradient_table(const GradientTable& table);
// n_b0 b=0 rows followed by n_dirs near-uniform hemisphere directions.
GradientTable default_gradient_table(int n_dirs = 30, double bvalue = 500.0, int n_b0 = 1);

std::vector<double> simulate_signal(const Tensor6& d, double s0, const GradientTable& table);

enum class FitStatus : std::uint8_t { Ok = 0, Masked = 1, NonPositive = 2, Singular = 3 };

struct WllsOptions {
  bool second_pass = false;    // re-weight with fitted signals
  bool weighted = true;        // false gives ordinary least squares
  double b0_threshold = 0.0;   // voxels with mean b=0 signal <= threshold are skipped
  int threads = 1;
};

struct VoxelFit {
  Tensor6 d{};
  double ln_s0 = 0.0;
  FitStatus status = FitStatus::Masked;
};

VoxelFit fit_voxel(const std::vector<double>& signals, const GradientTable& table, const WllsOptions& options = {});

struct DtiVolume {
  VolumeMeta meta;                  // dims {nx, ny, nz, 6}
  std::vector<double> components;   // channel-major: component c of voxel i at c * N + i
  std::vector<double> ln_s0;        // per voxel
  std::vector<FitStatus> status;    // per voxel
  std::vector<std::uint8_t> negative_eigenvalue;  // fitted tensor not positive semi-definite

  std::int64_t voxel_count() const { return meta.spatial_size(); }
  Tensor6 tensor(std::int64_t voxel) const;
  Volume to_volume() const;  // float32, 6 channels
  static DtiVolume from_volume(const Volume& v);
};

// signals: 4-D volume {nx, ny, nz, K} with K equal to the table size.
DtiVolume fit_wlls(const Volume& signals, const GradientTable& table, const WllsOptions& options = {});

Vec3 tensor_eigenvalues(const Tensor6& d);  // ascending
Vec3 principal_direction(const Tensor6& d);
double mean_diffusivity(const Tensor6& d);
double fractional_anisotropy(const Tensor6& d);  // clamped to [0, 1]

struct ScalarMaps {
  std::vector<double> md;
  std::vector<double> fa;
};
ScalarMaps tensor_scalars(const DtiVolume& dti);

}  // namespace fbd
