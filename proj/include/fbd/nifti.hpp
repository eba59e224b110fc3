#pragma once

// Single-file NIfTI-1 (.nii) subset: uncompressed, datatypes uint8/int16/
// float32, 3-D or 4-D. Only dims, voxel sizes and datatype are interpreted.

#include <string>
#include <vector>

#include "fbd/volume.hpp"

namespace fbd {

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

// Header + 4-byte extension pad + payload.
std::vector<unsigned char> encode_nifti(const Volume& volume, bool big_endian = false);
Volume decode_nifti(const std::vector<unsigned char>& bytes);

Volume read_nifti(const std::string& path);
void write_nifti(const std::string& path, const Volume& volume);

}  // namespace fbd
