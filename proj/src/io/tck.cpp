#include "fbd/tck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <sstream>

#include "fbd/binary_io.hpp"
#include "fbd/errors.hpp"

namespace fbd {

namespace {

struct TckHeader {
  std::map<std::string, std::string> fields;
  std::size_t header_end = 0;  // first byte after "END\n"
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

TckHeader parse_header(const std::vector<unsigned char>& bytes) {
  TckHeader h;
  std::size_t pos = 0;
  bool first = true;
  while (pos < bytes.size()) {
    auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
    if (nl == bytes.end()) break;
    const auto end = static_cast<std::size_t>(nl - bytes.begin());
    const std::string line = trim(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl));
    pos = end + 1;
    if (first) {
      if (line != "mrtrix tracks") throw FormatError("not a TCK file (first line must be \"mrtrix tracks\")");
      first = false;
      continue;
    }
    if (line == "END") {
      h.header_end = pos;
      return h;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    h.fields[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
  }
  if (first) throw FormatError("not a TCK file (empty header)");
  throw FormatError("TCK header has no END marker");
}

void append_triplet(std::vector<unsigned char>& out, float x, float y, float z) {
  bin::put<float>(out, x);
  bin::put<float>(out, y);
  bin::put<float>(out, z);
}

}  // namespace

std::size_t StreamlineSet::point_count() const {
  std::size_t n = 0;
  for (const auto& s : streamlines) n += s.size();
  return n;
}

std::vector<unsigned char> encode_tck(const StreamlineSet& set) {
  for (const auto& s : set.streamlines) {
    if (s.size() < 2) throw DataError("streamlines need at least 2 points");
    for (const auto& p : s)
      for (float c : p)
        if (!std::isfinite(c)) throw DataError("streamline coordinates must be finite");
  }
  // The offset is written with a fixed width so the header length does not
  // depend on its own value.
  std::ostringstream head;
  head << "mrtrix tracks\n"
       << "datatype: Float32LE\n"
       << "count: " << set.streamlines.size() << "\n";
  const std::string prefix = head.str();
  const std::string file_key = "file: . ";
  const std::string tail = "\nEND\n";
  const std::size_t width = 10;
  const std::size_t offset = prefix.size() + file_key.size() + width + tail.size();
  std::string off = std::to_string(offset);
  off.insert(0, width - off.size(), ' ');  // "file: .      123" parses fine after trimming
  std::string header = prefix + file_key + off + tail;

  std::vector<unsigned char> out(header.begin(), header.end());
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < set.streamlines.size(); ++i) {
    for (const auto& p : set.streamlines[i]) append_triplet(out, p[0], p[1], p[2]);
    if (i + 1 < set.streamlines.size()) append_triplet(out, nan, nan, nan);
  }
  append_triplet(out, inf, inf, inf);
  return out;
}

std::size_t tck_payload_offset(const std::vector<unsigned char>& bytes) {
  const auto h = parse_header(bytes);
  const auto it = h.fields.find("file");
  if (it == h.fields.end()) throw FormatError("TCK header has no 'file' entry");
  std::istringstream ss(it->second);
  std::string dot;
  long long offset = -1;
  if (!(ss >> dot >> offset) || dot != "." || offset < 0) {
    throw FormatError("TCK 'file' entry must be \". <offset>\", got \"" + it->second + "\"");
  }
  if (static_cast<std::size_t>(offset) < h.header_end) throw FormatError("TCK data offset points inside the header");
  return static_cast<std::size_t>(offset);
}

StreamlineSet decode_tck(const std::vector<unsigned char>& bytes) {
  const auto h = parse_header(bytes);
  const auto dt = h.fields.find("datatype");
  if (dt == h.fields.end()) throw FormatError("TCK header has no datatype");
  if (dt->second != "Float32LE") throw UnsupportedError("unsupported TCK datatype " + dt->second);
  const std::size_t offset = tck_payload_offset(bytes);
  if (offset > bytes.size()) throw IoError("TCK data offset beyond end of file");

  StreamlineSet set;
  Streamline current;
  auto flush = [&]() {
    if (current.empty()) return;
    if (current.size() < 2) {
      throw DataError("streamline " + std::to_string(set.streamlines.size()) + " has fewer than 2 points");
    }
    set.streamlines.push_back(std::move(current));
    current.clear();
  };
  std::size_t pos = offset;
  while (bytes.size() - pos >= 12) {
    Point3 p{bin::get_at<float>(bytes.data() + pos, false), bin::get_at<float>(bytes.data() + pos + 4, false),
             bin::get_at<float>(bytes.data() + pos + 8, false)};
    pos += 12;
    if (std::isinf(p[0]) && std::isinf(p[1]) && std::isinf(p[2])) {
      flush();
      return set;
    }
    if (std::isnan(p[0]) && std::isnan(p[1]) && std::isnan(p[2])) {
      flush();
      continue;
    }
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw DataError("non-finite coordinate inside streamline " + std::to_string(set.streamlines.size()));
    }
    current.push_back(p);
  }
  // Files cut off before the Inf terminator are accepted up to the last
  // complete triplet.
  flush();
  return set;
}

StreamlineSet read_tck(const std::string& path) {
  const auto bytes = bin::read_file(path);
  try {
    return decode_tck(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(path + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_tck(const std::string& path, const StreamlineSet& set) { bin::write_file(path, encode_tck(set)); }

}  // namespace fbd
