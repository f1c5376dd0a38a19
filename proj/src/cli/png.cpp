#include "hypercut/cli/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace hypercut::cli {

void write_png(const std::filesystem::path& path, const scenes::Image& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw std::invalid_argument("PNG output needs an H x W x 1 or H x W x 3 image, got " +
                                diff::shape_str(image.shape()));
  }
  const int h = image.dim(0);
  const int w = image.dim(1);
  const int c = image.dim(2);
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const float v = std::clamp(image[static_cast<std::size_t>(y) * row.size() + i], 0.0f, 1.0f);
      row[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

std::size_t pixel(const scenes::Image& im, int y, int x) {
  return (static_cast<std::size_t>(y) * im.dim(1) + x) * im.dim(2);
}

}  // namespace

scenes::Image tile_row(const std::vector<scenes::Image>& images, int gap) {
  if (images.empty()) throw std::invalid_argument("nothing to tile");
  const diff::Shape& s = images.front().shape();
  const int h = s[0];
  const int w = s[1];
  const int c = s[2];
  const int n = static_cast<int>(images.size());
  scenes::Image out({h, n * w + (n - 1) * gap, c});
  std::fill(out.values().begin(), out.values().end(), 1.0f);
  const scenes::Image& s_img = images.front();
  for (int i = 0; i < n; ++i) {
    if (images[static_cast<std::size_t>(i)].shape() != s) throw diff::ShapeError("tiled images differ in shape");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          out[pixel(out, y, i * (w + gap) + x) + ch] = images[static_cast<std::size_t>(i)][pixel(s_img, y, x) + ch];
        }
      }
    }
  }
  return out;
}

scenes::Image tile_column(const std::vector<scenes::Image>& rows, int gap) {
  if (rows.empty()) throw std::invalid_argument("nothing to tile");
  const int c = rows.front().dim(2);
  int h = 0;
  int w = 0;
  for (const auto& r : rows) {
    if (r.dim(2) != c) throw diff::ShapeError("tiled rows differ in channel count");
    h += r.dim(0);
    w = std::max(w, r.dim(1));
  }
  h += gap * (static_cast<int>(rows.size()) - 1);
  scenes::Image out({h, w, c});
  std::fill(out.values().begin(), out.values().end(), 1.0f);
  int top = 0;
  for (const auto& r : rows) {
    for (int y = 0; y < r.dim(0); ++y) {
      for (int x = 0; x < r.dim(1); ++x) {
        for (int ch = 0; ch < c; ++ch) out[pixel(out, top + y, x) + ch] = r[pixel(r, y, x) + ch];
      }
    }
    top += r.dim(0) + gap;
  }
  return out;
}

}  // namespace hypercut::cli
