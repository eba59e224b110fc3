#include "fbd/nifti.hpp"

#include <cmath>
#include <cstring>

#include "fbd/binary_io.hpp"
#include "fbd/errors.hpp"

namespace fbd {

namespace {

// Byte offsets of the NIfTI-1 header fields used here.
constexpr std::size_t kSizeofHdr = 0;
constexpr std::size_t kDim = 40;
constexpr std::size_t kDatatype = 70;
constexpr std::size_t kBitpix = 72;
constexpr std::size_t kPixdim = 76;
constexpr std::size_t kVoxOffset = 108;
constexpr std::size_t kSclSlope = 112;
constexpr std::size_t kXyztUnits = 123;
constexpr std::size_t kQformCode = 252;
constexpr std::size_t kSformCode = 254;
constexpr std::size_t kSrowX = 280;
constexpr std::size_t kMagic = 344;

template <typename T>
void poke(std::vector<unsigned char>& buf, std::size_t offset, T value, bool big_endian) {
  std::vector<unsigned char> tmp;
  bin::put<T>(tmp, value, big_endian);
  std::memcpy(buf.data() + offset, tmp.data(), sizeof(T));
}

bool supported(std::int16_t code) { return code == 2 || code == 4 || code == 16; }

}  // namespace

std::vector<unsigned char> encode_nifti(const Volume& volume, bool big_endian) {
  const auto& meta = volume.meta();
  meta.validate();
  std::vector<unsigned char> out(kNiftiVoxOffset, 0);
  poke<std::int32_t>(out, kSizeofHdr, static_cast<std::int32_t>(kNiftiHeaderSize), big_endian);
  std::int16_t dim[8] = {static_cast<std::int16_t>(meta.dims.size()), 1, 1, 1, 1, 1, 1, 1};
  for (std::size_t i = 0; i < meta.dims.size(); ++i) {
    if (meta.dims[i] > 32767) throw DataError("NIfTI-1 extents are limited to 32767");
    dim[i + 1] = static_cast<std::int16_t>(meta.dims[i]);
  }
  for (int i = 0; i < 8; ++i) poke<std::int16_t>(out, kDim + 2 * i, dim[i], big_endian);
  poke<std::int16_t>(out, kDatatype, static_cast<std::int16_t>(meta.datatype), big_endian);
  poke<std::int16_t>(out, kBitpix, static_cast<std::int16_t>(8 * datatype_bytes(meta.datatype)), big_endian);
  float pixdim[8] = {1.0f,
                     static_cast<float>(meta.voxel_size_mm[0]),
                     static_cast<float>(meta.voxel_size_mm[1]),
                     static_cast<float>(meta.voxel_size_mm[2]),
                     1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) poke<float>(out, kPixdim + 4 * i, pixdim[i], big_endian);
  poke<float>(out, kVoxOffset, static_cast<float>(kNiftiVoxOffset), big_endian);
  poke<float>(out, kSclSlope, 0.0f, big_endian);
  out[kXyztUnits] = 2;  // mm
  poke<std::int16_t>(out, kQformCode, 0, big_endian);
  poke<std::int16_t>(out, kSformCode, 1, big_endian);
  for (int r = 0; r < 3; ++r) poke<float>(out, kSrowX + 16 * r + 4 * r, pixdim[r + 1], big_endian);
  std::memcpy(out.data() + kMagic, "n+1\0", 4);

  std::visit(
      [&](const auto& values) {
        using V = typename std::decay_t<decltype(values)>::value_type;
        out.reserve(out.size() + values.size() * sizeof(V));
        for (V v : values) bin::put<V>(out, v, big_endian);
      },
      volume.storage());
  return out;
}

Volume decode_nifti(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kNiftiHeaderSize) throw FormatError("file too short for a NIfTI-1 header");
  bool big = false;
  if (bin::get_at<std::int32_t>(bytes.data() + kSizeofHdr, false) != 348) {
    if (bin::get_at<std::int32_t>(bytes.data() + kSizeofHdr, true) != 348) {
      throw FormatError("not a NIfTI-1 header (sizeof_hdr != 348)");
    }
    big = true;
  }
  if (std::memcmp(bytes.data() + kMagic, "n+1\0", 4) != 0) throw FormatError("bad NIfTI magic (expected \"n+1\")");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = bin::get_at<std::int16_t>(bytes.data() + kDim + 2 * i, big);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("invalid dim[0] = " + std::to_string(dim[0]));
  int ndim = dim[0];
  while (ndim > 4 && dim[ndim] == 1) --ndim;
  if (ndim > 4) throw UnsupportedError("volumes with more than 4 non-trivial dimensions are not supported");
  VolumeMeta meta;
  for (int i = 1; i <= std::max(ndim, 3); ++i) {
    const std::int64_t d = i <= ndim ? dim[i] : 1;
    if (d < 1) throw FormatError("non-positive extent in dim[" + std::to_string(i) + "]");
    meta.dims.push_back(d);
  }
  const auto code = bin::get_at<std::int16_t>(bytes.data() + kDatatype, big);
  if (!supported(code)) throw UnsupportedError("unsupported NIfTI datatype " + std::to_string(code));
  meta.datatype = static_cast<DataType>(code);
  for (int i = 0; i < 3; ++i) {
    const float p = bin::get_at<float>(bytes.data() + kPixdim + 4 * (i + 1), big);
    meta.voxel_size_mm[static_cast<std::size_t>(i)] = std::abs(static_cast<double>(p));
  }
  meta.validate();
  const float offset_f = bin::get_at<float>(bytes.data() + kVoxOffset, big);
  if (!(offset_f >= static_cast<float>(kNiftiVoxOffset)) || offset_f != std::floor(offset_f)) {
    throw FormatError("invalid vox_offset for a single-file NIfTI");
  }
  const auto offset = static_cast<std::size_t>(offset_f);
  const auto count = static_cast<std::size_t>(meta.element_count());
  const std::size_t need = count * static_cast<std::size_t>(datatype_bytes(meta.datatype));
  if (bytes.size() < offset || bytes.size() - offset < need) {
    throw IoError("truncated NIfTI payload: need " + std::to_string(need) + " bytes after offset " +
                  std::to_string(offset) + ", file has " + std::to_string(bytes.size()));
  }
  const unsigned char* p = bytes.data() + offset;
  auto decode = [&](auto tag) {
    using V = decltype(tag);
    std::vector<V> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = bin::get_at<V>(p + i * sizeof(V), big);
    return Volume(meta, std::move(v));
  };
  switch (meta.datatype) {
    case DataType::UInt8: return decode(std::uint8_t{});
    case DataType::Int16: return decode(std::int16_t{});
    case DataType::Float32: return decode(float{});
  }
  throw UnsupportedError("unsupported datatype");
}

Volume read_nifti(const std::string& path) {
  const auto bytes = bin::read_file(path);
  try {
    return decode_nifti(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(path + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_nifti(const std::string& path, const Volume& volume) { bin::write_file(path, encode_nifti(volume)); }

}  // namespace fbd
