#pragma once

// Little-endian binary stream helpers shared by the checkpoint, cache spill
// and LUT formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "instantft/errors.hpp"

namespace instantft::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("unexpected end of file");
  return v;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!is) throw DataError("unexpected end of file");
}

inline void expect_magic(std::istream& is, const char* magic, std::size_t n) {
  std::string got(n, '\0');
  is.read(got.data(), static_cast<std::streamsize>(n));
  if (!is || std::memcmp(got.data(), magic, n) != 0) throw DataError(std::string("bad magic, expected ") + magic);
}

}  // namespace instantft::io
