#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hypercut/scenes/scene.hpp"

namespace hypercut::pipeline {

using scenes::Image;

/// 3x4 affine color map applied to homogeneous pixels [r, g, b, 1].
struct ColorCorrection {
  std::array<double, 12> m{};  // row-major

  double operator()(int row, int col) const { return m[static_cast<std::size_t>(row * 4 + col)]; }
  double& operator()(int row, int col) { return m[static_cast<std::size_t>(row * 4 + col)]; }

  static ColorCorrection identity();
};

/// Grayscale images become 3 identical channels; RGB is returned unchanged.
Image to_rgb(const Image& image);

inline constexpr double kColorRidge = 1e-8;

/// Least-squares M minimizing sum ||M x~ - y||^2 over pixels, via the normal
/// equations with a small ridge term.
ColorCorrection fit_color_matrix(const Image& x, const Image& y, double ridge = kColorRidge);

/// Per-pixel affine map, clamped to [0, 1]. Always returns RGB.
Image apply_color(const ColorCorrection& c, const Image& image);
/// Same map without the clamp.
Image apply_color_unclamped(const ColorCorrection& c, const Image& image);

inline constexpr int kFakeBlurFrames = 7;
inline constexpr int kInsertedPerGap = 2;

/// Inserts `per_gap` linearly interpolated frames into every gap.
std::vector<Image> upsample_frames(const std::vector<Image>& frames, int per_gap = kInsertedPerGap);

/// Mean of the 19-frame linear upsampling of exactly 7 sharp frames.
Image synth_fake_blur(const std::vector<Image>& frames);

struct AlignmentResult {
  int offset = 0;
  ColorCorrection correction;
  double score = 0.0;
  /// Score for every candidate offset.
  std::vector<double> scores;
  /// Corrected frames x[p..p+6].
  std::vector<Image> frames;

  std::string to_json() const;
};

/// Scores every offset i by the PSNR between the color-corrected fake blur of
/// x[i..i+6] and y, and keeps the largest (smallest index on ties).
AlignmentResult temporal_align(const Image& y, const std::vector<Image>& stream);

/// Synthetic alignment case: an RGB sharp stream, the blurry frame built from
/// x[offset..offset+6] through a known color transform.
struct AlignmentFixture {
  std::vector<Image> stream;
  Image blurry;
  int offset = 0;
  ColorCorrection truth;
};

AlignmentFixture make_alignment_fixture(std::uint64_t seed, int length = 50, int size = 32);

}  // namespace hypercut::pipeline
