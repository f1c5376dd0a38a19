#pragma once

#include <filesystem>
#include <iosfwd>

#include "hypercut/diffcore/parameters.hpp"

namespace hypercut::diff {

// Layout: "HCKPT1", u32 parameter count, then per parameter
// u16 name length, name bytes, u8 rank, rank x u32 dims, f32 data.
// All integers and floats little-endian.

void write_checkpoint(std::ostream& os, const ParameterSet& params);
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);

ParameterSet read_checkpoint(std::istream& is);
ParameterSet load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into `target` by name; every parameter of
/// `target` must exist in `source` with the same shape.
void assign_parameters(ParameterSet& target, const ParameterSet& source);

}  // namespace hypercut::diff
