#pragma once

// Little-endian byte encoding used by the checkpoint, hyperplane and B2V files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace hypercut::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  os.write(bytes, sizeof(U));
}

inline void write_f32(std::ostream& os, float value) { write_le(os, std::bit_cast<std::uint32_t>(value)); }

template <typename U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError("unexpected end of file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is)); }

/// Bulk float write/read. On little-endian hosts this is a plain memcpy of the data.
void write_f32_array(std::ostream& os, const float* data, std::size_t count);
void read_f32_array(std::istream& is, float* data, std::size_t count);

inline void write_magic(std::ostream& os, const std::string& magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError("bad magic: expected \"" + magic + "\"");
  }
}

}  // namespace hypercut::io
