#include "hypercut/order/hypercut.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hypercut/diffcore/adam.hpp"

namespace hypercut::order {

SequenceList sequences(const scenes::Dataset& ds, scenes::Split which) {
  SequenceList out;
  for (std::size_t i : ds.indices(which)) out.push_back(&ds.samples[i].sequence);
  return out;
}

SequenceList sequences(const scenes::Dataset& ds) {
  SequenceList out;
  for (const auto& s : ds.samples) out.push_back(&s.sequence);
  return out;
}

std::vector<std::pair<int, int>> symmetric_pairs(int frame_count) {
  std::vector<std::pair<int, int>> out;
  const int n = frame_count - 1;
  for (int k = 0; 2 * k < n; ++k) out.emplace_back(k, n - k);
  return out;
}

double separation_product(PairEmbedder& embedder, const Image& a, const Image& b) {
  const auto p = embedder.project({{&a, &b}, {&b, &a}});
  return p[0] * p[1];
}

namespace {

template <typename T>
struct LossNodes {
  diff::Var forward_proj;
  diff::Var swapped_proj;
  diff::Var loss;
};

template <typename T>
LossNodes<T> wire_loss(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const EncoderArch& arch,
                       const Hyperplane& h) {
  if (h.dim() != arch.dim) throw diff::ShapeError("hyperplane dimension differs from the encoder output");
  const diff::Shape in_shape{-1, 2 * arch.channels, arch.height, arch.width};
  diff::Var fwd = g.input("forward", in_shape);
  diff::Var swp = g.input("swapped", in_shape);
  std::vector<T> normal(h.normal.begin(), h.normal.end());
  diff::Var hv = g.constant(diff::BasicTensor<T>({arch.dim, 1}, std::move(normal)), "h");
  LossNodes<T> n;
  n.forward_proj = g.matmul(build_embedding(g, params, arch, fwd), hv);
  n.swapped_proj = g.matmul(build_embedding(g, params, arch, swp), hv);
  n.loss = g.mean(g.softplus(g.mul(n.forward_proj, n.swapped_proj)));
  g.set_label(n.loss, "hypercut_loss");
  return n;
}

struct PairRef {
  const FrameSequence* seq;
  int a;
  int b;
};

std::vector<PairRef> all_pairs(const SequenceList& seqs) {
  std::vector<PairRef> out;
  for (const FrameSequence* s : seqs) {
    for (auto [a, b] : symmetric_pairs(s->count())) out.push_back({s, a, b});
  }
  return out;
}

}  // namespace

template <typename T>
diff::Var build_hypercut_loss(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const EncoderArch& arch,
                              const Hyperplane& h) {
  return wire_loss(g, params, arch, h).loss;
}

template diff::Var build_hypercut_loss<float>(diff::BasicGraph<float>&, diff::BasicParameterSet<float>&,
                                              const EncoderArch&, const Hyperplane&);
template diff::Var build_hypercut_loss<double>(diff::BasicGraph<double>&, diff::BasicParameterSet<double>&,
                                               const EncoderArch&, const Hyperplane&);

double hypercut_loss(PairEmbedder& embedder, const std::vector<std::pair<const Image*, const Image*>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("hypercut loss needs at least one pair");
  std::vector<std::pair<const Image*, const Image*>> both;
  both.reserve(2 * pairs.size());
  for (const auto& p : pairs) both.push_back(p);
  for (const auto& p : pairs) both.emplace_back(p.second, p.first);
  const auto proj = embedder.project(both);
  double acc = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) acc += diff::softplus(proj[i] * proj[i + pairs.size()]);
  return acc / static_cast<double>(pairs.size());
}

OrderTrainResult train_order_encoder(const SequenceList& train, const OrderTrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("order encoder training needs a nonempty dataset");
  if (config.epochs < 0 || config.batch < 1) throw std::invalid_argument("epochs must be >= 0 and batch >= 1");
  const FrameSequence& first = *train.front();
  if (first.count() < 2) throw std::invalid_argument("sequences need at least 2 frames");
  EncoderArch arch = config.arch;
  arch.channels = first.channels();
  arch.height = first.height();
  arch.width = first.width();

  OrderTrainResult result;
  result.encoder = make_encoder(arch, diff::derive_seed(config.seed, 1));
  result.hyperplane = make_hyperplane(arch.dim, diff::derive_seed(config.seed, 2));
  std::mt19937_64 shuffle_rng(diff::derive_seed(config.seed, 3));

  std::vector<PairRef> pairs = all_pairs(train);
  if (pairs.empty()) throw std::invalid_argument("training sequences have no symmetric pairs");
  for (const PairRef& p : pairs) {
    if (p.seq->frames[static_cast<std::size_t>(p.a)].shape() != diff::Shape{arch.height, arch.width, arch.channels}) {
      throw diff::ShapeError("training sequences differ in frame shape");
    }
  }
  result.degenerate = std::all_of(pairs.begin(), pairs.end(), [](const PairRef& p) {
    return p.seq->frames[static_cast<std::size_t>(p.a)] == p.seq->frames[static_cast<std::size_t>(p.b)];
  });
  if (result.degenerate) {
    result.warnings.push_back(
        "degenerate dataset: every symmetric pair is palindromic, so no pair can be separated and the hit rate is 0");
  }

  diff::ParameterSet& params = result.encoder.params;
  diff::Graph g;
  const LossNodes<float> nodes = wire_loss(g, params, arch, result.hyperplane);
  diff::AdamConfig adam_config;
  adam_config.learning_rate = config.lr;
  diff::AdamState adam = diff::make_adam_state(params, adam_config);

  const std::size_t block = static_cast<std::size_t>(2 * arch.channels) * arch.height * arch.width;
  auto fill_batch = [&](std::size_t begin, std::size_t end, diff::Tensor& fwd, diff::Tensor& swp) {
    const int b = static_cast<int>(end - begin);
    fwd.resize({b, 2 * arch.channels, arch.height, arch.width});
    swp.resize({b, 2 * arch.channels, arch.height, arch.width});
    for (std::size_t i = begin; i < end; ++i) {
      const Image& xa = pairs[i].seq->frames[static_cast<std::size_t>(pairs[i].a)];
      const Image& xb = pairs[i].seq->frames[static_cast<std::size_t>(pairs[i].b)];
      pack_pair(xa, xb, fwd.data() + (i - begin) * block);
      pack_pair(xb, xa, swp.data() + (i - begin) * block);
    }
  };

  const auto batch = static_cast<std::size_t>(config.batch);
  diff::Tensor fwd;
  diff::Tensor swp;
  {
    double acc = 0.0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += batch) {
      const std::size_t end = std::min(pairs.size(), begin + batch);
      fill_batch(begin, end, fwd, swp);
      g.evaluate({{"forward", fwd}, {"swapped", swp}});
      acc += static_cast<double>(g.value(nodes.loss).item()) * static_cast<double>(end - begin);
    }
    result.initial_loss = acc / static_cast<double>(pairs.size());
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), shuffle_rng);
    double loss_acc = 0.0;
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += batch) {
      const std::size_t end = std::min(pairs.size(), begin + batch);
      fill_batch(begin, end, fwd, swp);
      params.zero_grad();
      g.evaluate({{"forward", fwd}, {"swapped", swp}});
      g.backward(nodes.loss);
      diff::adam_update(params, adam);
      loss_acc += static_cast<double>(g.value(nodes.loss).item()) * static_cast<double>(end - begin);
      const diff::Tensor& pf = g.value(nodes.forward_proj);
      const diff::Tensor& ps = g.value(nodes.swapped_proj);
      for (std::size_t i = 0; i < pf.size(); ++i) hits += static_cast<double>(pf[i]) * ps[i] < 0.0;
    }
    OrderEpoch e;
    e.epoch = epoch;
    e.loss = loss_acc / static_cast<double>(pairs.size());
    e.train_hit = static_cast<double>(hits) / static_cast<double>(pairs.size());
    result.log.push_back(e);
    if (config.on_epoch) config.on_epoch(e.epoch, e.loss, e.train_hit);
  }
  params.zero_grad();
  return result;
}

OrderLabel label_from_projections(const std::vector<double>& projections) {
  if (projections.empty()) throw std::invalid_argument("order label needs at least one symmetric pair");
  int positive = 0;
  int negative = 0;
  double largest = 0.0;
  double largest_signed = 0.0;
  for (double p : projections) {
    positive += p > 0.0;
    negative += p < 0.0;
    if (std::abs(p) > largest) {
      largest = std::abs(p);
      largest_signed = p;
    }
  }
  if (positive == 0 && negative == 0) throw std::domain_error("sequence is unorientable: every projection is 0");
  OrderLabel label;
  label.margin = largest;
  if (positive != negative) {
    label.value = positive > negative ? 1 : 0;
  } else {
    label.value = largest_signed > 0.0 ? 1 : 0;
  }
  return label;
}

OrderLabel order_label(PairEmbedder& embedder, const FrameSequence& seq) {
  std::vector<std::pair<const Image*, const Image*>> refs;
  for (auto [a, b] : symmetric_pairs(seq.count())) {
    refs.emplace_back(&seq.frames[static_cast<std::size_t>(a)], &seq.frames[static_cast<std::size_t>(b)]);
  }
  if (refs.empty()) throw std::invalid_argument("order label needs at least 2 frames");
  return label_from_projections(embedder.project(refs));
}

PairProjections collect_projections(PairEmbedder& embedder, const SequenceList& seqs) {
  std::vector<std::pair<const Image*, const Image*>> refs;
  std::vector<std::size_t> counts;
  for (const FrameSequence* s : seqs) {
    const auto sp = symmetric_pairs(s->count());
    counts.push_back(sp.size());
    for (auto [a, b] : sp) {
      refs.emplace_back(&s->frames[static_cast<std::size_t>(a)], &s->frames[static_cast<std::size_t>(b)]);
    }
  }
  const std::size_t total = refs.size();
  for (std::size_t i = 0; i < total; ++i) refs.emplace_back(refs[i].second, refs[i].first);
  const auto proj = embedder.project(refs);
  PairProjections out;
  std::size_t at = 0;
  for (std::size_t c : counts) {
    out.forward.emplace_back(proj.begin() + static_cast<std::ptrdiff_t>(at),
                             proj.begin() + static_cast<std::ptrdiff_t>(at + c));
    out.swapped.emplace_back(proj.begin() + static_cast<std::ptrdiff_t>(total + at),
                             proj.begin() + static_cast<std::ptrdiff_t>(total + at + c));
    at += c;
  }
  return out;
}

double hit_rate(const PairProjections& p) {
  std::size_t pairs = 0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < p.forward.size(); ++s) {
    for (std::size_t k = 0; k < p.forward[s].size(); ++k) {
      ++pairs;
      hits += p.forward[s][k] * p.swapped[s][k] < 0.0;
    }
  }
  if (pairs == 0) throw std::invalid_argument("hit rate needs at least one pair");
  return static_cast<double>(hits) / static_cast<double>(pairs);
}

double hit_rate(PairEmbedder& embedder, const SequenceList& seqs) {
  if (seqs.empty()) throw std::invalid_argument("hit rate needs a nonempty dataset");
  return hit_rate(collect_projections(embedder, seqs));
}

namespace {

int side_of(double p) { return (p > 0.0) - (p < 0.0); }

// Visits every size-x subset of {0..n-1} in lexicographic order.
template <typename F>
void for_each_subset(int n, int x, F&& visit) {
  std::vector<int> idx(static_cast<std::size_t>(x));
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    visit(idx);
    int i = x - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - x + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < x; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

}  // namespace

double con_rate(const std::vector<std::vector<double>>& forward, int x) {
  if (x < 1) throw std::invalid_argument("con rate needs X >= 1");
  if (forward.empty()) throw std::invalid_argument("con rate needs a nonempty dataset");
  std::size_t total = 0;
  std::size_t agree = 0;
  for (const auto& seq : forward) {
    const int n = static_cast<int>(seq.size());
    if (n < x) {
      throw std::invalid_argument("con@" + std::to_string(x) + " needs " + std::to_string(x) +
                                  " symmetric pairs per sequence, found " + std::to_string(n));
    }
    for_each_subset(n, x, [&](const std::vector<int>& idx) {
      const int s0 = side_of(seq[static_cast<std::size_t>(idx[0])]);
      bool same = true;
      for (int i : idx) same = same && side_of(seq[static_cast<std::size_t>(i)]) == s0;
      ++total;
      agree += same;
    });
  }
  return static_cast<double>(agree) / static_cast<double>(total);
}

double con_rate(PairEmbedder& embedder, const SequenceList& seqs, int x) {
  if (seqs.empty()) throw std::invalid_argument("con rate needs a nonempty dataset");
  for (const FrameSequence* s : seqs) {
    const auto n = static_cast<int>(symmetric_pairs(s->count()).size());
    if (n < x) {
      throw std::invalid_argument("con@" + std::to_string(x) + " needs " + std::to_string(x) +
                                  " symmetric pairs per sequence, found " + std::to_string(n));
    }
  }
  return con_rate(collect_projections(embedder, seqs).forward, x);
}

std::vector<EmbeddingPoint> project_embeddings_2d(const std::vector<std::vector<float>>& embeddings,
                                                  const Hyperplane& h, const std::vector<bool>& reversed) {
  if (embeddings.size() < 2) throw std::invalid_argument("embedding projection needs at least 2 samples");
  if (reversed.size() != embeddings.size()) throw std::invalid_argument("reversed flags must match the embeddings");
  const auto m = static_cast<Eigen::Index>(embeddings.size());
  const auto n = static_cast<Eigen::Index>(embeddings.front().size());
  Eigen::MatrixXd x(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (static_cast<Eigen::Index>(embeddings[static_cast<std::size_t>(i)].size()) != n) {
      throw diff::ShapeError("embeddings differ in length");
    }
    for (Eigen::Index j = 0; j < n; ++j) x(i, j) = embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come out ascending.
  Eigen::MatrixXd basis(n, 2);
  for (int c = 0; c < 2; ++c) {
    const Eigen::Index col = n - 1 - c;
    Eigen::VectorXd v = col >= 0 ? Eigen::VectorXd(eig.eigenvectors().col(col)) : Eigen::VectorXd::Zero(n);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
  }
  const Eigen::MatrixXd pts = x * basis;
  std::vector<EmbeddingPoint> out;
  out.reserve(embeddings.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    EmbeddingPoint p;
    p.x = pts(i, 0);
    p.y = pts(i, 1);
    p.side = side_of(h.project(embeddings[static_cast<std::size_t>(i)]));
    p.reversed = reversed[static_cast<std::size_t>(i)];
    out.push_back(p);
  }
  return out;
}

std::vector<EmbeddingPoint> project_embeddings_2d(PairEmbedder& embedder, const SequenceList& seqs) {
  std::vector<std::pair<const Image*, const Image*>> refs;
  for (const FrameSequence* s : seqs) {
    for (auto [a, b] : symmetric_pairs(s->count())) {
      refs.emplace_back(&s->frames[static_cast<std::size_t>(a)], &s->frames[static_cast<std::size_t>(b)]);
    }
  }
  const std::size_t count = refs.size();
  for (std::size_t i = 0; i < count; ++i) refs.emplace_back(refs[i].second, refs[i].first);
  std::vector<bool> reversed(refs.size(), false);
  std::fill(reversed.begin() + static_cast<std::ptrdiff_t>(count), reversed.end(), true);
  return project_embeddings_2d(embedder.embed(refs), embedder.hyperplane(), reversed);
}

double linear_separability(const std::vector<EmbeddingPoint>& points) {
  if (points.empty()) throw std::invalid_argument("no points to classify");
  const auto m = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd a(m, 3);
  Eigen::VectorXd t(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    a(i, 0) = p.x;
    a(i, 1) = p.y;
    a(i, 2) = 1.0;
    t(i) = p.side > 0 ? 1.0 : -1.0;
  }
  const Eigen::Vector3d w = a.colPivHouseholderQr().solve(t);
  const Eigen::VectorXd score = a * w;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < m; ++i) correct += (score(i) > 0.0) == (t(i) > 0.0);
  return static_cast<double>(correct) / static_cast<double>(m);
}

std::string OrderReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "sequences=" << sequences << '\n';
  os << "pairs=" << pairs << '\n';
  os << "hit=" << hit << '\n';
  os << "con2=" << con2 << '\n';
  os << "con3=" << con3 << '\n';
  os << "label_unchanged_under_reversal=" << label_unchanged << '\n';
  return os.str();
}

OrderReport evaluate_order(PairEmbedder& embedder, const SequenceList& seqs) {
  if (seqs.empty()) throw std::invalid_argument("evaluation needs a nonempty dataset");
  const PairProjections p = collect_projections(embedder, seqs);
  OrderReport r;
  r.sequences = seqs.size();
  std::size_t min_pairs = std::numeric_limits<std::size_t>::max();
  std::size_t unchanged = 0;
  for (std::size_t s = 0; s < p.forward.size(); ++s) {
    r.pairs += p.forward[s].size();
    min_pairs = std::min(min_pairs, p.forward[s].size());
    // The reversed sequence pairs (x_{N-k}, x_k): exactly the swapped projections.
    try {
      unchanged += label_from_projections(p.forward[s]).value == label_from_projections(p.swapped[s]).value;
    } catch (const std::domain_error&) {
      ++unchanged;
    }
  }
  r.hit = hit_rate(p);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.con2 = min_pairs >= 2 ? con_rate(p.forward, 2) : nan;
  r.con3 = min_pairs >= 3 ? con_rate(p.forward, 3) : nan;
  r.label_unchanged = static_cast<double>(unchanged) / static_cast<double>(seqs.size());
  return r;
}

}  // namespace hypercut::order
