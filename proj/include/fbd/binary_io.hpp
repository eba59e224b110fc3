#pragma once

// Little/big-endian scalar packing for the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "fbd/errors.hpp"

namespace fbd::bin {

template <typename T>
T byteswap(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&value, b, sizeof(T));
  return value;
}

template <typename T>
void put(std::vector<unsigned char>& out, T value, bool big_endian = false) {
  if ((std::endian::native == std::endian::big) != big_endian) value = byteswap(value);
  const auto* p = reinterpret_cast<const unsigned char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

inline void put_bytes(std::vector<unsigned char>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  out.insert(out.end(), p, p + n);
}

template <typename T>
T get_at(const unsigned char* p, bool big_endian = false) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if ((std::endian::native == std::endian::big) != big_endian) value = byteswap(value);
  return value;
}

// Bounds-checked sequential reader over a byte buffer.
class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  template <typename T>
  T get(bool big_endian = false) {
    need(sizeof(T));
    T v = get_at<T>(data_ + pos_, big_endian);
    pos_ += sizeof(T);
    return v;
  }

  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw FormatError(what_ + ": truncated");
  }

  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace fbd::bin
