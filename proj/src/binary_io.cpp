#include "hypercut/binary_io.hpp"

#include <vector>

namespace hypercut::io {

void write_f32_array(std::ostream& os, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < count; ++i) write_f32(os, data[i]);
  }
}

void read_f32_array(std::istream& is, float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)))) {
      throw FormatError("unexpected end of file");
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = read_f32(is);
  }
}

}  // namespace hypercut::io
