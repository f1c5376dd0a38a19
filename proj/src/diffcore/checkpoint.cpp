#include "hypercut/diffcore/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "hypercut/binary_io.hpp"

namespace hypercut::diff {

namespace {
constexpr const char* kMagic = "HCKPT1";
}

void write_checkpoint(std::ostream& os, const ParameterSet& params) {
  io::write_magic(os, kMagic);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw io::FormatError("parameter name too long: " + p.name);
    }
    io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.value.rank()));
    for (int d : p.value.shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    io::write_f32_array(os, p.value.data(), p.value.size());
  }
  if (!os) throw io::FormatError("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

ParameterSet read_checkpoint(std::istream& is) {
  io::expect_magic(is, kMagic);
  const auto count = io::read_le<std::uint32_t>(is);
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::read_le<std::uint16_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw io::FormatError("truncated parameter name");
    const auto rank = io::read_le<std::uint8_t>(is);
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(io::read_le<std::uint32_t>(is)));
    Parameter& p = params.add(name, shape);
    io::read_f32_array(is, p.value.data(), p.value.size());
  }
  return params;
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open " + path.string());
  return read_checkpoint(is);
}

void assign_parameters(ParameterSet& target, const ParameterSet& source) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    Parameter& p = target[i];
    const Parameter* q = source.find(p.name);
    if (!q) throw io::FormatError("checkpoint lacks parameter " + p.name);
    if (q->value.shape() != p.value.shape()) {
      throw io::FormatError("parameter " + p.name + " has shape " + shape_str(q->value.shape()) +
                            ", expected " + shape_str(p.value.shape()));
    }
    p.value = q->value;
  }
}

}  // namespace hypercut::diff
