#include "hypercut/scenes/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hypercut::scenes {

namespace {

bool covers(const SceneObject& o, double ox, double oy, double px, double py) {
  if (o.kind == ShapeKind::kRectangle) {
    return px >= ox && px < ox + o.size && py >= oy && py < oy + o.size;
  }
  const double r = 0.5 * o.size;
  const double dx = px - (ox + r);
  const double dy = py - (oy + r);
  return dx * dx + dy * dy < r * r;
}

bool visible_in_some_frame(const SceneSpec& spec, const SceneObject& o) {
  for (int k = 0; k < spec.frames; ++k) {
    const double x = o.x + k * o.vx;
    const double y = o.y + k * o.vy;
    if (x < spec.width && x + o.size > 0 && y < spec.height && y + o.size > 0) return true;
  }
  return false;
}

}  // namespace

void SceneSpec::validate() const {
  if (frames < 2) throw std::invalid_argument("scene needs at least 2 frames, got " + std::to_string(frames));
  if (height < 8 || width < 8) {
    throw std::invalid_argument("canvas must be at least 8x8, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (static_cast<int>(background.size()) != channels) throw std::invalid_argument("background needs one value per channel");
  if (!background_slope_x.empty() && static_cast<int>(background_slope_x.size()) != channels) {
    throw std::invalid_argument("background_slope_x needs one value per channel");
  }
  if (!background_slope_y.empty() && static_cast<int>(background_slope_y.size()) != channels) {
    throw std::invalid_argument("background_slope_y needs one value per channel");
  }
  bool moving = false;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const SceneObject& o = objects[i];
    if (!(o.size > 0)) throw std::invalid_argument("object " + std::to_string(i) + " has non-positive size");
    if (static_cast<int>(o.color.size()) != channels) {
      throw std::invalid_argument("object " + std::to_string(i) + " needs one color value per channel");
    }
    if (!visible_in_some_frame(*this, o)) {
      throw std::invalid_argument("object " + std::to_string(i) + " lies outside the canvas in every frame");
    }
    moving = moving || o.vx != 0.0 || o.vy != 0.0;
  }
  if (directional && !moving) throw std::invalid_argument("directional scene has no moving object");
}

FrameSequence render_sequence(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int h = spec.height;
  const int w = spec.width;
  const int c = spec.channels;
  constexpr double kSub = kSupersample;
  constexpr double kSamples = kSupersample * kSupersample;

  FrameSequence seq;
  seq.seed = seed;
  seq.frames.reserve(static_cast<std::size_t>(spec.frames));
  std::vector<double> canvas(static_cast<std::size_t>(h) * w * c);

  for (int k = 0; k < spec.frames; ++k) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        for (int ch = 0; ch < c; ++ch) {
          double v = spec.background[static_cast<std::size_t>(ch)];
          if (!spec.background_slope_x.empty()) v += spec.background_slope_x[static_cast<std::size_t>(ch)] * (col + 0.5) / w;
          if (!spec.background_slope_y.empty()) v += spec.background_slope_y[static_cast<std::size_t>(ch)] * (r + 0.5) / h;
          canvas[(static_cast<std::size_t>(r) * w + col) * c + ch] = v;
        }
      }
    }
    for (const SceneObject& o : spec.objects) {
      const double ox = o.x + k * o.vx;
      const double oy = o.y + k * o.vy;
      const int r0 = std::max(0, static_cast<int>(std::floor(oy)));
      const int r1 = std::min(h - 1, static_cast<int>(std::ceil(oy + o.size)));
      const int c0 = std::max(0, static_cast<int>(std::floor(ox)));
      const int c1 = std::min(w - 1, static_cast<int>(std::ceil(ox + o.size)));
      for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
          int hits = 0;
          for (int si = 0; si < kSupersample; ++si) {
            for (int sj = 0; sj < kSupersample; ++sj) {
              hits += covers(o, ox, oy, col + (sj + 0.5) / kSub, r + (si + 0.5) / kSub);
            }
          }
          if (hits == 0) continue;
          const double cov = hits / kSamples;
          for (int ch = 0; ch < c; ++ch) {
            double& v = canvas[(static_cast<std::size_t>(r) * w + col) * c + ch];
            v = v * (1.0 - cov) + o.color[static_cast<std::size_t>(ch)] * cov;
          }
        }
      }
    }
    Image frame({h, w, c});
    for (std::size_t i = 0; i < canvas.size(); ++i) frame[i] = static_cast<float>(std::clamp(canvas[i], 0.0, 1.0));
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

BlurryObservation synth_blur(const FrameSequence& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("cannot blur an empty sequence");
  const Image& first = seq.frames.front();
  for (const Image& f : seq.frames) {
    if (f.shape() != first.shape()) throw diff::ShapeError("sequence frames differ in shape");
  }
  // Per-pixel values are summed in sorted order, so the mean depends only on
  // the multiset of frame values and is bit-identical under any reordering.
  const std::size_t n = first.size();
  const std::size_t count = seq.frames.size();
  BlurryObservation out;
  out.source_seed = seq.seed;
  out.image = Image(first.shape());
  std::vector<float> column(count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < count; ++k) column[k] = seq.frames[k][i];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (float v : column) acc += v;
    out.image[i] = static_cast<float>(acc / static_cast<double>(count));
  }
  return out;
}

FrameSequence reverse_sequence(const FrameSequence& seq) {
  FrameSequence out;
  out.seed = seq.seed;
  out.frames.assign(seq.frames.rbegin(), seq.frames.rend());
  return out;
}

SceneSpec sample_scene(const SceneDistribution& dist, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SceneSpec spec;
  spec.height = dist.height;
  spec.width = dist.width;
  spec.channels = dist.channels;
  spec.frames = dist.frames;
  spec.directional = dist.directional;
  for (int ch = 0; ch < dist.channels; ++ch) spec.background.push_back(static_cast<float>(uniform(0.15, 0.85)));
  if (dist.background_gradient) {
    for (int ch = 0; ch < dist.channels; ++ch) {
      spec.background_slope_x.push_back(static_cast<float>(uniform(-0.3, 0.3)));
      spec.background_slope_y.push_back(static_cast<float>(uniform(-0.3, 0.3)));
    }
  }

  const int span = dist.max_objects - dist.min_objects + 1;
  const int count = dist.min_objects + static_cast<int>(unit(rng) * span) % std::max(span, 1);
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  const int n = dist.frames - 1;

  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.kind = unit(rng) < dist.disc_probability ? ShapeKind::kDisc : ShapeKind::kRectangle;
    o.size = uniform(dist.min_size, dist.max_size);
    if (dist.directional) {
      const double s = dist.shared_direction ? sign : (unit(rng) < 0.5 ? -1.0 : 1.0);
      o.vx = s * uniform(dist.min_speed, dist.max_speed);
      o.vy = uniform(-dist.max_vertical_speed, dist.max_vertical_speed);
    }
    // Keep the whole trajectory on the canvas when it fits.
    auto place = [&](double extent, double travel) {
      const double lo = std::max(0.0, -travel);
      const double hi = std::min(extent - o.size, extent - o.size - travel);
      return hi > lo ? uniform(lo, hi) : std::clamp(0.5 * (extent - o.size - travel), -o.size + 1.0, extent - 1.0);
    };
    o.x = place(dist.width, o.vx * n);
    o.y = place(dist.height, o.vy * n);
    for (int ch = 0; ch < dist.channels; ++ch) {
      const double bg = spec.background[static_cast<std::size_t>(ch)];
      double v = bg;
      // Objects keep a minimum contrast against the base background level.
      if (ch == 0 || dist.channels == 1) {
        const bool brighter = bg + dist.min_contrast <= 1.0 && (bg - dist.min_contrast < 0.0 || unit(rng) < 0.5);
        v = brighter ? uniform(bg + dist.min_contrast, 1.0) : uniform(0.0, bg - dist.min_contrast);
      } else {
        v = uniform(0.0, 1.0);
      }
      o.color.push_back(static_cast<float>(v));
    }
    spec.objects.push_back(std::move(o));
  }
  return spec;
}

}  // namespace hypercut::scenes
