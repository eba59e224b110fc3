#pragma once

// Voxel-grid volumes. dims follow NIfTI order {nx, ny, nz[, nt]} with x
// fastest, which matches tensor layout [nt, nz, ny, nx].

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace fbd {

enum class DataType : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16 };

const char* datatype_name(DataType type);
int datatype_bytes(DataType type);

struct VolumeMeta {
  std::vector<std::int64_t> dims;  // 3 or 4 extents
  std::array<double, 3> voxel_size_mm{1.2, 1.2, 1.2};
  DataType datatype = DataType::Float32;

  std::int64_t spatial_size() const;  // nx*ny*nz
  std::int64_t channels() const;      // nt, or 1 for 3-D
  std::int64_t element_count() const;
  void validate() const;  // throws DataError
  bool same_grid(const VolumeMeta& other) const;  // spatial dims and voxel sizes
};

class Volume {
 public:
  using Storage = std::variant<std::vector<std::uint8_t>, std::vector<std::int16_t>, std::vector<float>>;

  Volume() = default;
  Volume(VolumeMeta meta, Storage data);

  static Volume from_floats(std::vector<std::int64_t> dims, std::vector<float> values,
                            std::array<double, 3> voxel_size = {1.2, 1.2, 1.2});
  static Volume from_labels(std::vector<std::int64_t> dims, const std::vector<std::int32_t>& labels,
                            std::array<double, 3> voxel_size = {1.2, 1.2, 1.2});
  static Volume from_masks(std::vector<std::int64_t> dims, std::vector<std::uint8_t> masks,
                           std::array<double, 3> voxel_size = {1.2, 1.2, 1.2});

  const VolumeMeta& meta() const { return meta_; }
  const Storage& storage() const { return data_; }

  // Converting views. Labels reject non-integral float values.
  std::vector<float> to_floats() const;
  std::vector<std::int32_t> to_labels() const;

  bool operator==(const Volume& other) const;

 private:
  VolumeMeta meta_;
  Storage data_;
};

}  // namespace fbd
