#include "hypercut/pipeline/pipeline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "hypercut/metrics/metrics.hpp"

namespace hypercut::pipeline {

ColorCorrection ColorCorrection::identity() {
  ColorCorrection c;
  for (int i = 0; i < 3; ++i) c(i, i) = 1.0;
  return c;
}

Image to_rgb(const Image& image) {
  if (image.rank() != 3) throw diff::ShapeError("expected an H x W x C image, got " + diff::shape_str(image.shape()));
  const int c = image.dim(2);
  if (c == 3) return image;
  if (c != 1) throw std::invalid_argument("color pipeline needs RGB or grayscale input, got " + std::to_string(c) + " channels");
  Image out({image.dim(0), image.dim(1), 3});
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = image[i];
  }
  return out;
}

ColorCorrection fit_color_matrix(const Image& x, const Image& y, double ridge) {
  const Image xr = to_rgb(x);
  const Image yr = to_rgb(y);
  if (xr.shape() != yr.shape()) {
    throw diff::ShapeError("color fit: shapes " + diff::shape_str(x.shape()) + " and " + diff::shape_str(y.shape()) +
                           " differ");
  }
  Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, 3> b = Eigen::Matrix<double, 4, 3>::Zero();
  const std::size_t pixels = xr.size() / 3;
  for (std::size_t p = 0; p < pixels; ++p) {
    const Eigen::Vector4d v(xr[3 * p], xr[3 * p + 1], xr[3 * p + 2], 1.0);
    const Eigen::RowVector3d t(yr[3 * p], yr[3 * p + 1], yr[3 * p + 2]);
    a.noalias() += v * v.transpose();
    b.noalias() += v * t;
  }
  a += ridge * Eigen::Matrix4d::Identity();
  const Eigen::Matrix<double, 4, 3> mt = a.ldlt().solve(b);
  ColorCorrection c;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) c(r, k) = mt(k, r);
  }
  return c;
}

namespace {

Image apply_impl(const ColorCorrection& c, const Image& image, bool clamp) {
  Image out = to_rgb(image);
  const std::size_t pixels = out.size() / 3;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double r = out[3 * p];
    const double g = out[3 * p + 1];
    const double b = out[3 * p + 2];
    for (int row = 0; row < 3; ++row) {
      double v = c(row, 0) * r + c(row, 1) * g + c(row, 2) * b + c(row, 3);
      if (clamp) v = std::clamp(v, 0.0, 1.0);
      out[3 * p + static_cast<std::size_t>(row)] = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

Image apply_color(const ColorCorrection& c, const Image& image) { return apply_impl(c, image, true); }

Image apply_color_unclamped(const ColorCorrection& c, const Image& image) { return apply_impl(c, image, false); }

std::vector<Image> upsample_frames(const std::vector<Image>& frames, int per_gap) {
  if (frames.empty()) throw std::invalid_argument("nothing to upsample");
  if (per_gap < 0) throw std::invalid_argument("per_gap must be non-negative");
  for (const Image& f : frames) {
    if (f.shape() != frames.front().shape()) throw diff::ShapeError("frames differ in shape");
  }
  std::vector<Image> out;
  const double steps = per_gap + 1;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    out.push_back(frames[i]);
    for (int j = 1; j <= per_gap; ++j) {
      const double wb = j / steps;
      const double wa = (per_gap + 1 - j) / steps;
      Image f(frames[i].shape());
      for (std::size_t q = 0; q < f.size(); ++q) f[q] = static_cast<float>(wa * frames[i][q] + wb * frames[i + 1][q]);
      out.push_back(std::move(f));
    }
  }
  out.push_back(frames.back());
  return out;
}

Image synth_fake_blur(const std::vector<Image>& frames) {
  if (static_cast<int>(frames.size()) != kFakeBlurFrames) {
    throw std::invalid_argument("fake blur needs exactly 7 frames, got " + std::to_string(frames.size()));
  }
  for (const Image& f : frames) {
    if (f.shape() != frames.front().shape()) throw diff::ShapeError("frames differ in shape");
  }
  // Upsampled frame j is wa*x_i + wb*x_{i+1}; summing it together with its
  // mirror 18-j in double keeps the result identical under reversal.
  const int total = (kFakeBlurFrames - 1) * (kInsertedPerGap + 1) + 1;
  const double steps = kInsertedPerGap + 1;
  auto sample = [&](int j, std::size_t q) {
    const int i = j / (kInsertedPerGap + 1);
    const int r = j % (kInsertedPerGap + 1);
    const double a = frames[static_cast<std::size_t>(i)][q];
    if (r == 0) return a;
    const double b = frames[static_cast<std::size_t>(i + 1)][q];
    return (kInsertedPerGap + 1 - r) / steps * a + r / steps * b;
  };
  Image out(frames.front().shape());
  for (std::size_t q = 0; q < out.size(); ++q) {
    double acc = 0.0;
    for (int j = 0; j < total / 2; ++j) acc += sample(j, q) + sample(total - 1 - j, q);
    if (total % 2 == 1) acc += sample(total / 2, q);
    out[q] = static_cast<float>(acc / total);
  }
  return out;
}

std::string AlignmentResult::to_json() const {
  nlohmann::json j;
  j["p"] = offset;
  j["score"] = score;
  j["scores"] = scores;
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) m.push_back({correction(r, 0), correction(r, 1), correction(r, 2), correction(r, 3)});
  j["M"] = std::move(m);
  return j.dump(2) + "\n";
}

AlignmentResult temporal_align(const Image& y, const std::vector<Image>& stream) {
  if (static_cast<int>(stream.size()) < kFakeBlurFrames) {
    throw std::invalid_argument("alignment needs a stream of at least 7 frames, got " + std::to_string(stream.size()));
  }
  const Image target = to_rgb(y);
  const int candidates = static_cast<int>(stream.size()) - kFakeBlurFrames + 1;
  std::vector<double> scores(static_cast<std::size_t>(candidates));
  std::vector<ColorCorrection> fits(static_cast<std::size_t>(candidates));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < candidates; ++i) {
    const std::vector<Image> window(stream.begin() + i, stream.begin() + i + kFakeBlurFrames);
    const Image fake = to_rgb(synth_fake_blur(window));
    const ColorCorrection c = fit_color_matrix(fake, target);
    fits[static_cast<std::size_t>(i)] = c;
    scores[static_cast<std::size_t>(i)] = metrics::psnr(apply_color(c, fake), target);
  }
  AlignmentResult r;
  r.scores = scores;
  r.score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < candidates; ++i) {
    if (scores[static_cast<std::size_t>(i)] > r.score) {
      r.score = scores[static_cast<std::size_t>(i)];
      r.offset = i;
    }
  }
  r.correction = fits[static_cast<std::size_t>(r.offset)];
  for (int k = 0; k < kFakeBlurFrames; ++k) {
    r.frames.push_back(apply_color(r.correction, stream[static_cast<std::size_t>(r.offset + k)]));
  }
  return r;
}

AlignmentFixture make_alignment_fixture(std::uint64_t seed, int length, int size) {
  if (length < kFakeBlurFrames) throw std::invalid_argument("fixture stream needs at least 7 frames");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  scenes::SceneSpec spec;
  spec.height = size;
  spec.width = size;
  spec.channels = 3;
  spec.frames = length;
  for (int ch = 0; ch < 3; ++ch) {
    spec.background.push_back(static_cast<float>(uniform(0.3, 0.5)));
    spec.background_slope_x.push_back(static_cast<float>(uniform(-0.1, 0.1)));
    spec.background_slope_y.push_back(static_cast<float>(uniform(-0.1, 0.1)));
  }
  // Slow objects stay on the canvas for most of the stream.
  for (int i = 0; i < 4; ++i) {
    scenes::SceneObject o;
    o.kind = i % 2 == 0 ? scenes::ShapeKind::kDisc : scenes::ShapeKind::kRectangle;
    o.size = uniform(0.2, 0.35) * size;
    o.vx = uniform(-0.5, 0.5) * size / length;
    o.vy = uniform(-0.5, 0.5) * size / length;
    o.x = uniform(0.0, size - o.size);
    o.y = uniform(0.0, size - o.size);
    for (int ch = 0; ch < 3; ++ch) o.color.push_back(static_cast<float>(uniform(0.15, 0.8)));
    spec.objects.push_back(std::move(o));
  }
  AlignmentFixture fx;
  fx.stream = scenes::render_sequence(spec, seed).frames;
  fx.offset = static_cast<int>(unit(rng) * (length - kFakeBlurFrames + 1));
  fx.offset = std::min(fx.offset, length - kFakeBlurFrames);
  // Pixels lie in [0.1, 0.8], so this distortion never reaches the clamp.
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) fx.truth(r, c) = (r == c ? uniform(0.7, 0.9) : uniform(-0.05, 0.05));
    fx.truth(r, 3) = uniform(0.02, 0.08);
  }
  const std::vector<Image> window(fx.stream.begin() + fx.offset, fx.stream.begin() + fx.offset + kFakeBlurFrames);
  fx.blurry = apply_color(fx.truth, synth_fake_blur(window));
  return fx;
}

}  // namespace hypercut::pipeline
