#pragma once

// Straight-line reimplementations used as independent oracles. None of this
// code calls into the library's kernels or graph.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hypercut/diffcore/parameters.hpp"
#include "hypercut/scenes/scene.hpp"

namespace oracle {

using Planes = std::vector<double>;  // [C][H][W]

struct Maps {
  int c = 0, h = 0, w = 0;
  Planes v;
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

inline Maps conv3x3(const Maps& in, const hypercut::diff::ParameterSet& p, const std::string& name, int stride) {
  const auto& w = p.at(name + ".w").value;
  const auto& b = p.at(name + ".b").value;
  const int out_c = w.dim(0);
  Maps out;
  out.c = out_c;
  out.h = (in.h + 2 - 3) / stride + 1;
  out.w = (in.w + 2 - 3) / stride + 1;
  out.v.assign(static_cast<std::size_t>(out.c) * out.h * out.w, 0.0);
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < in.c; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * stride - 1 + ky;
              const int ix = x * stride - 1 + kx;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              acc += w[((static_cast<std::size_t>(o) * in.c + c) * 3 + ky) * 3 + kx] * in.at(c, iy, ix);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

inline Maps lrelu(Maps m, double slope) {
  for (double& x : m.v) x = x > 0 ? x : slope * x;
  return m;
}

/// Embedding of the pair (a, b) under the encoder parameter naming.
inline std::vector<double> encoder_embedding(const hypercut::diff::ParameterSet& p, const hypercut::scenes::Image& a,
                                             const hypercut::scenes::Image& b, double slope) {
  Maps x;
  x.h = a.dim(0);
  x.w = a.dim(1);
  const int c = a.dim(2);
  x.c = 2 * c;
  x.v.resize(static_cast<std::size_t>(x.c) * x.h * x.w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) {
        const std::size_t src = (static_cast<std::size_t>(y) * x.w + xx) * c + ch;
        x.at(ch, y, xx) = a[src];
        x.at(c + ch, y, xx) = b[src];
      }
    }
  }
  x = lrelu(conv3x3(x, p, "enc.conv1", 2), slope);
  x = lrelu(conv3x3(x, p, "enc.conv2", 2), slope);
  x = lrelu(conv3x3(x, p, "enc.conv3", 2), slope);
  Maps r = conv3x3(lrelu(conv3x3(x, p, "enc.res1", 1), slope), p, "enc.res2", 1);
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += r.v[i];
  x = lrelu(x, slope);
  std::vector<double> pooled(static_cast<std::size_t>(x.c), 0.0);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) pooled[static_cast<std::size_t>(ch)] += x.at(ch, y, xx);
    }
    pooled[static_cast<std::size_t>(ch)] /= x.h * x.w;
  }
  const auto& fw = p.at("enc.fc.w").value;
  const auto& fb = p.at("enc.fc.b").value;
  const int n = fw.dim(1);
  std::vector<double> e(static_cast<std::size_t>(n));
  double norm = 0.0;
  for (int j = 0; j < n; ++j) {
    double acc = fb[static_cast<std::size_t>(j)];
    for (int i = 0; i < x.c; ++i) acc += pooled[static_cast<std::size_t>(i)] * fw[static_cast<std::size_t>(i) * n + j];
    e[static_cast<std::size_t>(j)] = acc;
    norm += acc * acc;
  }
  norm = std::sqrt(norm);
  for (double& v : e) v /= norm;
  return e;
}

/// Full-canvas brute-force rasterizer: every pixel tests 4x4 sample points
/// against every object, painting objects in order over the background.
inline std::vector<double> rasterize(const hypercut::scenes::SceneSpec& s, int k) {
  const int h = s.height, w = s.width, c = s.channels;
  std::vector<double> out(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double v = s.background[static_cast<std::size_t>(ch)];
        if (!s.background_slope_x.empty()) v += s.background_slope_x[static_cast<std::size_t>(ch)] * (x + 0.5) / w;
        if (!s.background_slope_y.empty()) v += s.background_slope_y[static_cast<std::size_t>(ch)] * (y + 0.5) / h;
        for (const auto& o : s.objects) {
          const double left = o.x + k * o.vx;
          const double top = o.y + k * o.vy;
          int inside = 0;
          for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
              const double px = x + (j + 0.5) / 4.0;
              const double py = y + (i + 0.5) / 4.0;
              bool in = false;
              if (o.kind == hypercut::scenes::ShapeKind::kRectangle) {
                in = px >= left && px < left + o.size && py >= top && py < top + o.size;
              } else {
                const double r = o.size / 2.0;
                in = std::pow(px - left - r, 2) + std::pow(py - top - r, 2) < r * r;
              }
              inside += in;
            }
          }
          const double cov = inside / 16.0;
          v = v * (1.0 - cov) + o.color[static_cast<std::size_t>(ch)] * cov;
        }
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return out;
}

/// PSNR by its definition, MSE over every element, peak 1, capped at 100 dB.
inline double psnr(const hypercut::scenes::Image& a, const hypercut::scenes::Image& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(static_cast<double>(a[i]) - b[i], 2);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, -10.0 * std::log10(mse));
}

inline hypercut::scenes::Image random_image(std::mt19937_64& rng, int h, int w, int c, double lo = 0.0,
                                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  hypercut::scenes::Image im({h, w, c});
  for (std::size_t i = 0; i < im.size(); ++i) im[i] = static_cast<float>(u(rng));
  return im;
}

/// Scratch directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hypercut_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
