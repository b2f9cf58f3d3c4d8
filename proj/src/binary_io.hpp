// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "gcrnn/errors.hpp"

namespace gcrnn::detail {

// Little-endian scalar IO, independent of host byte order.

template <typename U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  os.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("truncated " + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void put_f32(std::ostream& os, double v) {
  put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline double get_f32(std::istream& is, const std::string& what) {
  return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is, what)));
}

inline void put_f64(std::ostream& os, double v) {
  put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline double get_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

/// Writes `magic` padded with NULs to 12 bytes followed by a u32 version.
inline void put_header(std::ostream& os, const char* magic, std::uint32_t version) {
  char buf[12] = {};
  std::strncpy(buf, magic, sizeof(buf));
  os.write(buf, sizeof(buf));
  put_le<std::uint32_t>(os, version);
}

inline std::uint32_t get_header(std::istream& is, const char* magic, const std::string& what) {
  char buf[12] = {};
  if (!is.read(buf, sizeof(buf))) throw FormatError("truncated header in " + what);
  char expect[12] = {};
  std::strncpy(expect, magic, sizeof(expect));
  if (std::memcmp(buf, expect, sizeof(buf)) != 0) {
    throw FormatError("bad magic in " + what + ", expected " + magic);
  }
  return get_le<std::uint32_t>(is, what);
}

}  // namespace gcrnn::detail
