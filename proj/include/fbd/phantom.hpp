#pragma once

// Synthetic DTI phantoms with known tissue, tract and parcel labels.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbd/annotation.hpp"
#include "fbd/dti.hpp"
#include "fbd/training.hpp"
#include "fbd/volume.hpp"

namespace fbd {

// Coordinates are voxel indices {x, y, z}; voxel k is centered at k.
struct TissuePrimitive {
  std::int32_t label = 1;        // tissue id, painted in list order
  std::string shape = "ellipsoid";  // ellipsoid | box
  std::array<double, 3> center{};
  std::array<double, 3> radii{};  // semi-axes or half extents
};

struct TractTube {
  std::string name;  // tract schema abbreviation
  std::vector<std::array<double, 3>> points;  // polyline centerline
  double radius = 2.0;
};

struct PhantomSpec {
  std::array<std::int64_t, 3> dims{32, 32, 32};
  std::array<double, 3> voxel_size_mm{1.2, 1.2, 1.2};
  std::vector<TissuePrimitive> tissues;
  std::array<double, 5> tissue_md{0.0, 0.7e-3, 0.9e-3, 0.8e-3, 3.0e-3};  // isotropic MD by tissue id
  std::vector<TractTube> tracts;
  std::array<double, 2> tract_eigenvalues{1.7e-3, 0.3e-3};  // axial, radial
  // Cortex parcels: angular sectors around the z axis, optionally split at the
  // center plane in z. Each parcel shifts the cortical MD by parcel_md_step.
  std::int32_t parcel_tissue = 2;
  int parcel_sectors = 3;
  bool parcel_split_z = true;
  double parcel_md_step = 0.04e-3;
  double tensor_noise = 0.02e-3;  // sd of per-component Gaussian jitter
  // Optional simulated signals.
  bool simulate_signals = false;
  double s0 = 1000.0;
  double signal_noise = 0.0;  // sd of additive Gaussian noise
  int gradient_directions = 30;
  double bvalue = 500.0;

  int parcel_count() const { return parcel_sectors * (parcel_split_z ? 2 : 1); }
  void validate() const;  // DataError / UsageError

  // 32^3, four nested tissue classes, four tubes, six parcels.
  static PhantomSpec default_spec();
  // Same layout scaled to other cube sizes.
  static PhantomSpec scaled(std::array<std::int64_t, 3> dims);
};

void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

struct Phantom {
  DtiVolume dti;
  Volume y_sg;
  TractMaskSet tracts;
  Volume y_pc;
  std::optional<Volume> signals;
  GradientTable table;
};

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

// Tensor-layout case for training: x = DTI components * input_scale.
TrainingCase make_training_case(const DtiVolume& dti, const Volume& y_sg, const TractMaskSet& tracts,
                                const Volume& y_pc, double input_scale);

}  // namespace fbd
