#include "fbd/volume.hpp"

#include <cmath>
#include <limits>

#include "fbd/errors.hpp"

namespace fbd {

const char* datatype_name(DataType type) {
  switch (type) {
    case DataType::UInt8: return "uint8";
    case DataType::Int16: return "int16";
    case DataType::Float32: return "float32";
  }
  return "?";
}

int datatype_bytes(DataType type) {
  switch (type) {
    case DataType::UInt8: return 1;
    case DataType::Int16: return 2;
    case DataType::Float32: return 4;
  }
  return 0;
}

std::int64_t VolumeMeta::spatial_size() const {
  std::int64_t n = 1;
  for (std::size_t i = 0; i < 3 && i < dims.size(); ++i) n *= dims[i];
  return n;
}

std::int64_t VolumeMeta::channels() const { return dims.size() == 4 ? dims[3] : 1; }

std::int64_t VolumeMeta::element_count() const { return spatial_size() * channels(); }

void VolumeMeta::validate() const {
  if (dims.size() != 3 && dims.size() != 4) {
    throw DataError("volume must have 3 or 4 dims, got " + std::to_string(dims.size()));
  }
  for (auto d : dims)
    if (d < 1) throw DataError("volume extents must be positive");
  for (double v : voxel_size_mm)
    if (!(v > 0) || !std::isfinite(v)) throw DataError("voxel sizes must be positive and finite");
}

bool VolumeMeta::same_grid(const VolumeMeta& o) const {
  if (dims.size() < 3 || o.dims.size() < 3) return false;
  for (int i = 0; i < 3; ++i)
    if (dims[i] != o.dims[i]) return false;
  return voxel_size_mm == o.voxel_size_mm;
}

Volume::Volume(VolumeMeta meta, Storage data) : meta_(std::move(meta)), data_(std::move(data)) {
  meta_.validate();
  // Headers store voxel sizes as float32; keep the in-memory value identical.
  for (auto& v : meta_.voxel_size_mm) v = static_cast<double>(static_cast<float>(v));
  const auto n = std::visit([](const auto& v) { return static_cast<std::int64_t>(v.size()); }, data_);
  if (n != meta_.element_count()) {
    throw DataError("volume buffer has " + std::to_string(n) + " elements, dims imply " +
                    std::to_string(meta_.element_count()));
  }
  const DataType actual = std::visit(
      [](const auto& v) {
        using V = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<V, std::uint8_t>) return DataType::UInt8;
        else if constexpr (std::is_same_v<V, std::int16_t>) return DataType::Int16;
        else return DataType::Float32;
      },
      data_);
  if (actual != meta_.datatype) throw DataError("volume storage type does not match meta datatype");
}

Volume Volume::from_floats(std::vector<std::int64_t> dims, std::vector<float> values,
                           std::array<double, 3> voxel_size) {
  return Volume(VolumeMeta{std::move(dims), voxel_size, DataType::Float32}, std::move(values));
}

Volume Volume::from_labels(std::vector<std::int64_t> dims, const std::vector<std::int32_t>& labels,
                           std::array<double, 3> voxel_size) {
  std::vector<std::int16_t> v(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < std::numeric_limits<std::int16_t>::min() || labels[i] > std::numeric_limits<std::int16_t>::max()) {
      throw DataError("label " + std::to_string(labels[i]) + " does not fit int16");
    }
    v[i] = static_cast<std::int16_t>(labels[i]);
  }
  return Volume(VolumeMeta{std::move(dims), voxel_size, DataType::Int16}, std::move(v));
}

Volume Volume::from_masks(std::vector<std::int64_t> dims, std::vector<std::uint8_t> masks,
                          std::array<double, 3> voxel_size) {
  return Volume(VolumeMeta{std::move(dims), voxel_size, DataType::UInt8}, std::move(masks));
}

std::vector<float> Volume::to_floats() const {
  return std::visit(
      [](const auto& v) {
        std::vector<float> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
        return out;
      },
      data_);
}

std::vector<std::int32_t> Volume::to_labels() const {
  return std::visit(
      [](const auto& v) {
        std::vector<std::int32_t> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double x = static_cast<double>(v[i]);
          if (x != std::floor(x) || std::abs(x) > 1e9) throw DataError("volume holds non-integer label values");
          out[i] = static_cast<std::int32_t>(x);
        }
        return out;
      },
      data_);
}

bool Volume::operator==(const Volume& o) const {
  return meta_.dims == o.meta_.dims && meta_.voxel_size_mm == o.meta_.voxel_size_mm &&
         meta_.datatype == o.meta_.datatype && data_ == o.data_;
}

}  // namespace fbd
