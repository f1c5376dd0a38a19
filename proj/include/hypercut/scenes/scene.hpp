#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "hypercut/diffcore/tensor.hpp"

namespace hypercut::scenes {

/// H x W x C image, values in [0, 1].
using Image = diff::Tensor;

enum class ShapeKind { kRectangle, kDisc };

struct SceneObject {
  ShapeKind kind = ShapeKind::kRectangle;
  double size = 8.0;
  /// Top-left corner of the bounding box at frame 0 (column, row).
  double x = 0.0;
  double y = 0.0;
  /// Displacement per frame in pixels.
  double vx = 0.0;
  double vy = 0.0;
  std::vector<float> color;  // one value per channel
};

struct SceneSpec {
  int height = 32;
  int width = 32;
  int channels = 1;
  int frames = 7;  // N + 1
  std::vector<float> background;
  /// Per-channel background change across the full width / height.
  std::vector<float> background_slope_x;
  std::vector<float> background_slope_y;
  std::vector<SceneObject> objects;
  bool directional = false;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct FrameSequence {
  std::vector<Image> frames;
  std::uint64_t seed = 0;

  int count() const { return static_cast<int>(frames.size()); }
  int last_index() const { return count() - 1; }  // N
  int height() const { return frames.empty() ? 0 : frames.front().dim(0); }
  int width() const { return frames.empty() ? 0 : frames.front().dim(1); }
  int channels() const { return frames.empty() ? 0 : frames.front().dim(2); }

  friend bool operator==(const FrameSequence& a, const FrameSequence& b) { return a.frames == b.frames; }
};

struct BlurryObservation {
  Image image;
  std::uint64_t source_seed = 0;
};

/// Supersampling factor per axis used by the rasterizer.
inline constexpr int kSupersample = 4;

/// Frame k places every object at (x, y) + k * (vx, vy) and rasterizes it
/// with 4x4 supersampled coverage over the background.
FrameSequence render_sequence(const SceneSpec& spec, std::uint64_t seed);

/// Per-pixel arithmetic mean over the frames (identity camera response).
BlurryObservation synth_blur(const FrameSequence& seq);

/// Frame k of the result is frame N - k of the input.
FrameSequence reverse_sequence(const FrameSequence& seq);

/// Parameters of the random scene family used for datasets.
struct SceneDistribution {
  int height = 32;
  int width = 32;
  int channels = 1;
  int frames = 7;
  int min_objects = 1;
  int max_objects = 2;
  double min_size = 6.0;
  double max_size = 12.0;
  /// Horizontal speed magnitude range in pixels per frame.
  double min_speed = 1.0;
  double max_speed = 2.5;
  double max_vertical_speed = 0.5;
  double min_contrast = 0.3;
  double disc_probability = 0.5;
  /// All objects in a scene move with the same horizontal sign.
  bool shared_direction = true;
  /// False produces static scenes (every velocity zero).
  bool directional = true;
  /// Adds a random per-channel background gradient.
  bool background_gradient = false;
};

SceneSpec sample_scene(const SceneDistribution& dist, std::mt19937_64& rng);

}  // namespace hypercut::scenes
