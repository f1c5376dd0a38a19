#pragma once

#include <filesystem>
#include <vector>

#include "hypercut/scenes/scene.hpp"

namespace hypercut::cli {

/// 8-bit grayscale (C = 1) or RGB (C = 3) PNG; values are clamped to [0, 1].
void write_png(const std::filesystem::path& path, const scenes::Image& image);

/// Places equally sized images left to right with a `gap`-pixel white border.
scenes::Image tile_row(const std::vector<scenes::Image>& images, int gap = 1);
/// Stacks rows of possibly different widths, padding with white.
scenes::Image tile_column(const std::vector<scenes::Image>& rows, int gap = 1);

}  // namespace hypercut::cli
