#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "hypercut/diffcore/graph.hpp"
#include "hypercut/diffcore/parameters.hpp"
#include "hypercut/scenes/scene.hpp"

namespace hypercut::order {

using scenes::Image;

/// Fixed random direction in the embedding space. The side of an embedding
/// is the sign of its inner product with `normal`.
struct Hyperplane {
  std::vector<float> normal;
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(normal.size()); }
  double project(std::span<const float> embedding) const;

  friend bool operator==(const Hyperplane&, const Hyperplane&) = default;
};

/// Draws a standard normal vector from `seed` and scales it to unit length.
Hyperplane make_hyperplane(int dim, std::uint64_t seed);

// Sidecar layout: "HCHYP1", u32 n, n x f32 normal, u64 seed (little-endian).
void save_hyperplane(const std::filesystem::path& path, const Hyperplane& h);
Hyperplane load_hyperplane(const std::filesystem::path& path);

/// Strided conv stack + residual block + global average pool + linear, with
/// an L2 normalization at the end.
struct EncoderArch {
  int channels = 1;  // per frame; the network sees 2 * channels
  int height = 32;
  int width = 32;
  std::vector<int> widths = {16, 32, 64};
  int dim = 128;
  double slope = 0.1;
  /// Initialize the second frame's first-layer filters as the negation of
  /// the first frame's, so the initial features are temporal differences.
  bool difference_init = true;

  void validate() const;
};

struct OrderEncoder {
  EncoderArch arch;
  diff::ParameterSet params;
};

OrderEncoder make_encoder(const EncoderArch& arch, std::uint64_t seed);

/// Wires the encoder into `g`. `pairs` is [B, 2C, H, W]; returns unit-norm
/// embeddings [B, dim].
template <typename T>
diff::Var build_embedding(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const EncoderArch& arch,
                          diff::Var pairs);

/// Channel-concatenation of two H x W x C frames into a 2C x H x W block.
void pack_pair(const Image& a, const Image& b, float* out);

/// Batched inference over frame pairs. Holds its own copy of the weights.
class PairEmbedder {
 public:
  PairEmbedder(const OrderEncoder& encoder, const Hyperplane& h);

  /// Unit embeddings H([a, b]) for each pair, row-major [pairs][dim].
  std::vector<std::vector<float>> embed(const std::vector<std::pair<const Image*, const Image*>>& pairs);
  /// Signed projections <H([a, b]), h>.
  std::vector<double> project(const std::vector<std::pair<const Image*, const Image*>>& pairs);

  const Hyperplane& hyperplane() const { return h_; }
  const EncoderArch& arch() const { return arch_; }

 private:
  void run(const std::vector<std::pair<const Image*, const Image*>>& pairs, std::size_t begin, std::size_t end);

  EncoderArch arch_;
  diff::ParameterSet params_;
  Hyperplane h_;
  diff::Graph graph_;
  diff::Var embedding_;
};

}  // namespace hypercut::order
