#include "hypercut/order/encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "hypercut/binary_io.hpp"
#include "hypercut/diffcore/layers.hpp"

namespace hypercut::order {

double Hyperplane::project(std::span<const float> embedding) const {
  if (embedding.size() != normal.size()) {
    throw diff::ShapeError("embedding has " + std::to_string(embedding.size()) + " entries, hyperplane " +
                           std::to_string(normal.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < normal.size(); ++i) acc += static_cast<double>(embedding[i]) * normal[i];
  return acc;
}

Hyperplane make_hyperplane(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("hyperplane dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  while (norm == 0.0) {
    norm = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  Hyperplane h;
  h.seed = seed;
  for (double x : v) h.normal.push_back(static_cast<float>(x / norm));
  return h;
}

void save_hyperplane(const std::filesystem::path& path, const Hyperplane& h) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io::FormatError("cannot open " + path.string() + " for writing");
  io::write_magic(os, "HCHYP1");
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h.normal.size()));
  io::write_f32_array(os, h.normal.data(), h.normal.size());
  io::write_le<std::uint64_t>(os, h.seed);
  if (!os) throw io::FormatError("write failed: " + path.string());
}

Hyperplane load_hyperplane(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::FormatError("cannot open " + path.string());
  io::expect_magic(is, "HCHYP1");
  Hyperplane h;
  h.normal.resize(io::read_le<std::uint32_t>(is));
  io::read_f32_array(is, h.normal.data(), h.normal.size());
  h.seed = io::read_le<std::uint64_t>(is);
  return h;
}

void EncoderArch::validate() const {
  if (channels < 1) throw std::invalid_argument("encoder needs at least one channel");
  if (widths.size() != 3) throw std::invalid_argument("encoder expects three conv widths");
  if (height < 8 || width < 8) throw std::invalid_argument("encoder input must be at least 8x8");
  if (dim < 1) throw std::invalid_argument("embedding dimension must be positive");
}

OrderEncoder make_encoder(const EncoderArch& arch, std::uint64_t seed) {
  arch.validate();
  OrderEncoder enc;
  enc.arch = arch;
  std::mt19937_64 rng(seed);
  const int c2 = 2 * arch.channels;
  diff::add_conv_params(enc.params, "enc.conv1", c2, arch.widths[0], 3, rng);
  if (arch.difference_init) {
    diff::Tensor& w = enc.params.at("enc.conv1.w").value;
    const std::size_t taps = 9;
    const auto half = static_cast<std::size_t>(arch.channels) * taps;
    for (int o = 0; o < arch.widths[0]; ++o) {
      float* row = w.data() + static_cast<std::size_t>(o) * 2 * half;
      for (std::size_t i = 0; i < half; ++i) row[half + i] = -row[i];
    }
  }
  diff::add_conv_params(enc.params, "enc.conv2", arch.widths[0], arch.widths[1], 3, rng);
  diff::add_conv_params(enc.params, "enc.conv3", arch.widths[1], arch.widths[2], 3, rng);
  diff::add_conv_params(enc.params, "enc.res1", arch.widths[2], arch.widths[2], 3, rng);
  diff::add_conv_params(enc.params, "enc.res2", arch.widths[2], arch.widths[2], 3, rng);
  diff::add_linear_params(enc.params, "enc.fc", arch.widths[2], arch.dim, rng);
  return enc;
}

template <typename T>
diff::Var build_embedding(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const EncoderArch& arch,
                          diff::Var pairs) {
  using diff::conv_layer;
  const double s = arch.slope;
  diff::Var x = g.leaky_relu(conv_layer(g, params, "enc.conv1", pairs, 2, 1), s);
  x = g.leaky_relu(conv_layer(g, params, "enc.conv2", x, 2, 1), s);
  x = g.leaky_relu(conv_layer(g, params, "enc.conv3", x, 2, 1), s);
  diff::Var r = g.leaky_relu(conv_layer(g, params, "enc.res1", x, 1, 1), s);
  r = conv_layer(g, params, "enc.res2", r, 1, 1);
  x = g.leaky_relu(g.add(x, r), s);
  diff::Var pooled = g.global_avg_pool(x);
  return g.l2_normalize_rows(diff::linear_layer(g, params, "enc.fc", pooled));
}

template diff::Var build_embedding<float>(diff::BasicGraph<float>&, diff::BasicParameterSet<float>&,
                                          const EncoderArch&, diff::Var);
template diff::Var build_embedding<double>(diff::BasicGraph<double>&, diff::BasicParameterSet<double>&,
                                           const EncoderArch&, diff::Var);

void pack_pair(const Image& a, const Image& b, float* out) {
  if (a.shape() != b.shape() || a.rank() != 3) throw diff::ShapeError("pair frames must share an H x W x C shape");
  const int h = a.dim(0);
  const int w = a.dim(1);
  const int c = a.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    float* pa = out + static_cast<std::size_t>(ch) * plane;
    float* pb = out + static_cast<std::size_t>(c + ch) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = a[i * c + ch];
      pb[i] = b[i * c + ch];
    }
  }
}

namespace {
constexpr std::size_t kInferenceBatch = 64;
}

PairEmbedder::PairEmbedder(const OrderEncoder& encoder, const Hyperplane& h)
    : arch_(encoder.arch), params_(encoder.params), h_(h) {
  if (h_.dim() != arch_.dim) {
    throw diff::ShapeError("hyperplane has dimension " + std::to_string(h_.dim()) + ", encoder " +
                           std::to_string(arch_.dim));
  }
  params_.set_trainable(false);
  diff::Var in = graph_.input("pairs", {-1, 2 * arch_.channels, arch_.height, arch_.width});
  embedding_ = build_embedding(graph_, params_, arch_, in);
}

void PairEmbedder::run(const std::vector<std::pair<const Image*, const Image*>>& pairs, std::size_t begin,
                       std::size_t end) {
  const int b = static_cast<int>(end - begin);
  const std::size_t block = static_cast<std::size_t>(2 * arch_.channels) * arch_.height * arch_.width;
  diff::Tensor batch({b, 2 * arch_.channels, arch_.height, arch_.width});
  for (std::size_t i = begin; i < end; ++i) {
    const Image& first = *pairs[i].first;
    if (first.shape() != diff::Shape{arch_.height, arch_.width, arch_.channels}) {
      throw diff::ShapeError("frame shape " + diff::shape_str(first.shape()) + " does not match the encoder");
    }
    pack_pair(first, *pairs[i].second, batch.data() + (i - begin) * block);
  }
  graph_.evaluate({{"pairs", batch}});
}

std::vector<std::vector<float>> PairEmbedder::embed(const std::vector<std::pair<const Image*, const Image*>>& pairs) {
  std::vector<std::vector<float>> out;
  out.reserve(pairs.size());
  const auto dim = static_cast<std::size_t>(arch_.dim);
  for (std::size_t begin = 0; begin < pairs.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(pairs.size(), begin + kInferenceBatch);
    run(pairs, begin, end);
    const diff::Tensor& e = graph_.value(embedding_);
    for (std::size_t i = 0; i < end - begin; ++i) out.emplace_back(e.data() + i * dim, e.data() + (i + 1) * dim);
  }
  return out;
}

std::vector<double> PairEmbedder::project(const std::vector<std::pair<const Image*, const Image*>>& pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  const auto dim = static_cast<std::size_t>(arch_.dim);
  for (std::size_t begin = 0; begin < pairs.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(pairs.size(), begin + kInferenceBatch);
    run(pairs, begin, end);
    const diff::Tensor& e = graph_.value(embedding_);
    for (std::size_t i = 0; i < end - begin; ++i) out.push_back(h_.project({e.data() + i * dim, dim}));
  }
  return out;
}

}  // namespace hypercut::order
