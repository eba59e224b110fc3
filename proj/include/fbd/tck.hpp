#pragma once

// MRtrix .tck streamlines: text header ("mrtrix tracks" ... "END"), then
// float32 LE xyz triplets in mm. Streamlines are separated by a NaN triplet
// and the stream ends with an Inf triplet.

#include <array>
#include <string>
#include <vector>

namespace fbd {

using Point3 = std::array<float, 3>;
using Streamline = std::vector<Point3>;

struct StreamlineSet {
  std::vector<Streamline> streamlines;
  std::size_t point_count() const;
};

std::vector<unsigned char> encode_tck(const StreamlineSet& set);
StreamlineSet decode_tck(const std::vector<unsigned char>& bytes);

StreamlineSet read_tck(const std::string& path);
void write_tck(const std::string& path, const StreamlineSet& set);

// Byte offset of the payload inside an encoded file.
std::size_t tck_payload_offset(const std::vector<unsigned char>& bytes);

}  // namespace fbd
