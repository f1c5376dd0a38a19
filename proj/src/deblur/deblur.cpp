#include "hypercut/deblur/deblur.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>

#include "hypercut/diffcore/adam.hpp"
#include "hypercut/diffcore/layers.hpp"
#include "hypercut/order/hypercut.hpp"

namespace hypercut::deblur {

void PredictorArch::validate() const {
  if (channels < 1) throw std::invalid_argument("predictor needs at least one channel");
  if (frames < 1) throw std::invalid_argument("predictor needs at least one output frame");
  if (widths.size() != 2) throw std::invalid_argument("predictor expects two encoder widths");
  if (height % 4 != 0 || width % 4 != 0 || height < 8 || width < 8) {
    throw std::invalid_argument("predictor input must be at least 8x8 with sides divisible by 4, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
}

FramePredictor make_predictor(const PredictorArch& arch, std::uint64_t seed) {
  arch.validate();
  FramePredictor model;
  model.arch = arch;
  std::mt19937_64 rng(seed);
  const int w0 = arch.widths[0];
  const int w1 = arch.widths[1];
  diff::add_conv_params(model.params, "dec.down1", arch.channels, w0, 3, rng);
  diff::add_conv_params(model.params, "dec.down2", w0, w1, 3, rng);
  diff::add_conv_params(model.params, "dec.res1", w1, w1, 3, rng);
  diff::add_conv_params(model.params, "dec.res2", w1, w1, 3, rng);
  diff::add_conv_transpose_params(model.params, "dec.up1", w1, w0, 3, rng);
  diff::add_conv_transpose_params(model.params, "dec.up2", w0, w0, 3, rng);
  diff::add_conv_params(model.params, "dec.head", w0 + arch.channels, arch.out_channels(), 3, rng);
  return model;
}

template <typename T>
diff::Var build_prediction(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const PredictorArch& arch,
                           diff::Var blurry) {
  using diff::conv_layer;
  using diff::conv_transpose_layer;
  const double s = arch.slope;
  diff::Var e1 = g.leaky_relu(conv_layer(g, params, "dec.down1", blurry, 2, 1), s);
  diff::Var e2 = g.leaky_relu(conv_layer(g, params, "dec.down2", e1, 2, 1), s);
  diff::Var r = g.leaky_relu(conv_layer(g, params, "dec.res1", e2, 1, 1), s);
  r = conv_layer(g, params, "dec.res2", r, 1, 1);
  e2 = g.leaky_relu(g.add(e2, r), s);
  diff::Var d1 = g.leaky_relu(g.add(conv_transpose_layer(g, params, "dec.up1", e2, 2, 1, 1), e1), s);
  diff::Var d2 = g.leaky_relu(conv_transpose_layer(g, params, "dec.up2", d1, 2, 1, 1), s);
  diff::Var head = conv_layer(g, params, "dec.head", g.concat({d2, blurry}, 1), 1, 1);
  diff::Var out = g.sigmoid(head);
  g.set_label(out, "frames");
  return out;
}

template diff::Var build_prediction<float>(diff::BasicGraph<float>&, diff::BasicParameterSet<float>&,
                                           const PredictorArch&, diff::Var);
template diff::Var build_prediction<double>(diff::BasicGraph<double>&, diff::BasicParameterSet<double>&,
                                            const PredictorArch&, diff::Var);

Regime parse_regime(const std::string& name) {
  if (name == "rec") return Regime::kRec;
  if (name == "oi") return Regime::kOi;
  if (name == "oi+hypercut") return Regime::kOiHypercut;
  if (name == "rec+hypercut") return Regime::kRecHypercut;
  throw std::invalid_argument("unknown regime '" + name + "' (expected rec, oi, oi+hypercut or rec+hypercut)");
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kRec: return "rec";
    case Regime::kOi: return "oi";
    case Regime::kOiHypercut: return "oi+hypercut";
    case Regime::kRecHypercut: return "rec+hypercut";
  }
  return "?";
}

BaseLoss base_loss_of(Regime r) {
  return r == Regime::kRec || r == Regime::kRecHypercut ? BaseLoss::kRec : BaseLoss::kOrderInvariant;
}

bool uses_hypercut(Regime r) { return r == Regime::kOiHypercut || r == Regime::kRecHypercut; }

template <typename T>
diff::Var build_loss_rec(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt) {
  diff::Var l = g.mean(g.square(g.sub(pred, gt)));
  g.set_label(l, "loss_rec");
  return l;
}

namespace {

template <typename T>
diff::Var row_norm(diff::BasicGraph<T>& g, diff::Var x, NormKind norm) {
  return norm == NormKind::kL2 ? g.norm_rows(x) : g.sum_rows(g.abs(x));
}

template <typename T>
diff::Var frame(diff::BasicGraph<T>& g, diff::Var x, int k, int channels) {
  return g.slice(x, 1, k * channels, channels);
}

}  // namespace

template <typename T>
diff::Var build_loss_oi(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt, int frames, int channels, NormKind norm) {
  std::vector<diff::Var> terms;
  for (auto [a, b] : order::symmetric_pairs(frames)) {
    diff::Var pa = frame(g, pred, a, channels);
    diff::Var pb = frame(g, pred, b, channels);
    diff::Var xa = frame(g, gt, a, channels);
    diff::Var xb = frame(g, gt, b, channels);
    if (norm == NormKind::kPixel) {
      diff::Var d = g.abs(g.sub(g.abs(g.sub(pa, pb)), g.abs(g.sub(xa, xb))));
      diff::Var s = g.abs(g.sub(g.abs(g.add(pa, pb)), g.abs(g.add(xa, xb))));
      terms.push_back(g.sum_rows(g.add(d, s)));
      continue;
    }
    diff::Var diff_term = g.abs(g.sub(row_norm(g, g.sub(pa, pb), norm), row_norm(g, g.sub(xa, xb), norm)));
    diff::Var sum_term = g.abs(g.sub(row_norm(g, g.add(pa, pb), norm), row_norm(g, g.add(xa, xb), norm)));
    terms.push_back(g.add(diff_term, sum_term));
  }
  if (frames % 2 == 1) {
    const int mid = frames / 2;
    terms.push_back(g.sum_rows(g.square(g.sub(frame(g, pred, mid, channels), frame(g, gt, mid, channels)))));
  }
  diff::Var per_sample = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) per_sample = g.add(per_sample, terms[i]);
  diff::Var l = g.mean(per_sample);
  g.set_label(l, "loss_oi");
  return l;
}

template <typename T>
diff::Var build_regularizer(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& encoder_params,
                            const order::EncoderArch& encoder_arch, const order::Hyperplane& h, diff::Var pred,
                            int frames, int channels) {
  if (encoder_arch.channels != channels) throw diff::ShapeError("encoder channel count differs from the predictor");
  if (h.dim() != encoder_arch.dim) throw diff::ShapeError("hyperplane dimension differs from the encoder output");
  const auto pairs = order::symmetric_pairs(frames);
  if (pairs.empty()) throw std::invalid_argument("regularizer needs at least 2 output frames");
  std::vector<diff::Var> stacked;
  for (auto [a, b] : pairs) stacked.push_back(g.concat({frame(g, pred, a, channels), frame(g, pred, b, channels)}, 1));
  diff::Var batch = stacked.size() == 1 ? stacked.front() : g.concat(stacked, 0);
  std::vector<T> normal(h.normal.begin(), h.normal.end());
  diff::Var hv = g.constant(diff::BasicTensor<T>({encoder_arch.dim, 1}, std::move(normal)), "h");
  diff::Var proj = g.matmul(order::build_embedding(g, encoder_params, encoder_arch, batch), hv);
  // Mean over pairs * batch, scaled by the pair count: sum over pairs, mean over batch.
  diff::Var r = g.scale(g.mean(proj), static_cast<double>(pairs.size()));
  g.set_label(r, "hypercut_regularizer");
  return r;
}

template <typename T>
diff::Var build_total_loss(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt, int frames, int channels,
                           BaseLoss base, NormKind norm, double alpha, diff::BasicParameterSet<T>* encoder_params,
                           const order::EncoderArch* encoder_arch, const order::Hyperplane* h) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
  diff::Var ld = base == BaseLoss::kRec ? build_loss_rec(g, pred, gt) : build_loss_oi(g, pred, gt, frames, channels, norm);
  if (alpha == 0.0) return ld;
  if (encoder_params == nullptr || encoder_arch == nullptr || h == nullptr) {
    throw std::invalid_argument("alpha > 0 requires a trained order encoder and hyperplane");
  }
  diff::Var r = build_regularizer(g, *encoder_params, *encoder_arch, *h, pred, frames, channels);
  diff::Var total = g.add(ld, g.scale(r, alpha));
  g.set_label(total, "total_loss");
  return total;
}

#define HYPERCUT_INSTANTIATE_LOSSES(T)                                                                              \
  template diff::Var build_loss_rec<T>(diff::BasicGraph<T>&, diff::Var, diff::Var);                                \
  template diff::Var build_loss_oi<T>(diff::BasicGraph<T>&, diff::Var, diff::Var, int, int, NormKind);             \
  template diff::Var build_regularizer<T>(diff::BasicGraph<T>&, diff::BasicParameterSet<T>&,                       \
                                          const order::EncoderArch&, const order::Hyperplane&, diff::Var, int, int); \
  template diff::Var build_total_loss<T>(diff::BasicGraph<T>&, diff::Var, diff::Var, int, int, BaseLoss, NormKind, \
                                         double, diff::BasicParameterSet<T>*, const order::EncoderArch*,          \
                                         const order::Hyperplane*);
HYPERCUT_INSTANTIATE_LOSSES(float)
HYPERCUT_INSTANTIATE_LOSSES(double)
#undef HYPERCUT_INSTANTIATE_LOSSES

namespace {

void require_same(const FrameSequence& pred, const FrameSequence& gt) {
  if (pred.count() != gt.count() || pred.count() == 0) {
    throw diff::ShapeError("prediction has " + std::to_string(pred.count()) + " frames, ground truth " +
                           std::to_string(gt.count()));
  }
  for (int k = 0; k < gt.count(); ++k) {
    if (pred.frames[static_cast<std::size_t>(k)].shape() != gt.frames[static_cast<std::size_t>(k)].shape()) {
      throw diff::ShapeError("frame " + std::to_string(k) + " shapes differ");
    }
  }
}

double combo_norm(const Image& a, const Image& b, double sign, NormKind norm) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = static_cast<double>(a[i]) + sign * static_cast<double>(b[i]);
    acc += norm == NormKind::kL2 ? v * v : std::abs(v);
  }
  return norm == NormKind::kL2 ? std::sqrt(acc) : acc;
}

}  // namespace

double loss_rec(const FrameSequence& pred, const FrameSequence& gt) {
  require_same(pred, gt);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < gt.frames.size(); ++k) {
    for (std::size_t i = 0; i < gt.frames[k].size(); ++i) {
      const double d = static_cast<double>(pred.frames[k][i]) - gt.frames[k][i];
      acc += d * d;
    }
    count += gt.frames[k].size();
  }
  return acc / static_cast<double>(count);
}

double loss_order_invariant(const FrameSequence& pred, const FrameSequence& gt, NormKind norm) {
  require_same(pred, gt);
  double total = 0.0;
  for (auto [a, b] : order::symmetric_pairs(gt.count())) {
    const Image& pa = pred.frames[static_cast<std::size_t>(a)];
    const Image& pb = pred.frames[static_cast<std::size_t>(b)];
    const Image& xa = gt.frames[static_cast<std::size_t>(a)];
    const Image& xb = gt.frames[static_cast<std::size_t>(b)];
    if (norm == NormKind::kPixel) {
      for (std::size_t q = 0; q < pa.size(); ++q) {
        const double p0 = pa[q], p1 = pb[q], x0 = xa[q], x1 = xb[q];
        total += std::abs(std::abs(p0 - p1) - std::abs(x0 - x1)) + std::abs(std::abs(p0 + p1) - std::abs(x0 + x1));
      }
      continue;
    }
    total += std::abs(combo_norm(pa, pb, -1.0, norm) - combo_norm(xa, xb, -1.0, norm));
    total += std::abs(combo_norm(pa, pb, 1.0, norm) - combo_norm(xa, xb, 1.0, norm));
  }
  if (gt.count() % 2 == 1) {
    const auto mid = static_cast<std::size_t>(gt.count() / 2);
    const double e = combo_norm(pred.frames[mid], gt.frames[mid], -1.0, NormKind::kL2);
    total += e * e;
  }
  return total;
}

double hypercut_regularizer(order::PairEmbedder& embedder, const std::vector<FrameSequence>& preds) {
  if (preds.empty()) throw std::invalid_argument("regularizer needs at least one prediction");
  std::vector<std::pair<const Image*, const Image*>> refs;
  for (const FrameSequence& p : preds) {
    for (auto [a, b] : order::symmetric_pairs(p.count())) {
      refs.emplace_back(&p.frames[static_cast<std::size_t>(a)], &p.frames[static_cast<std::size_t>(b)]);
    }
  }
  double acc = 0.0;
  for (double v : embedder.project(refs)) acc += v;
  return acc / static_cast<double>(preds.size());
}

void pack_image(const Image& image, float* out) {
  const int h = image.dim(0);
  const int w = image.dim(1);
  const int c = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[static_cast<std::size_t>(ch) * plane + i] = image[i * c + ch];
  }
}

void pack_frames(const std::vector<Image>& frames, float* out) {
  for (const Image& f : frames) {
    pack_image(f, out);
    out += f.size();
  }
}

FrameSequence unpack_frames(const float* data, int frames, int height, int width, int channels) {
  FrameSequence seq;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int k = 0; k < frames; ++k) {
    Image f({height, width, channels});
    for (int ch = 0; ch < channels; ++ch) {
      const float* src = data + (static_cast<std::size_t>(k) * channels + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) f[i * channels + ch] = src[i];
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

namespace {
constexpr std::size_t kInferenceBatch = 32;
}

PredictorRunner::PredictorRunner(const FramePredictor& model) : arch_(model.arch), params_(model.params) {
  params_.set_trainable(false);
  diff::Var in = graph_.input("blurry", {-1, arch_.channels, arch_.height, arch_.width});
  out_ = build_prediction(graph_, params_, arch_, in);
}

std::vector<FrameSequence> PredictorRunner::predict(const std::vector<const Image*>& blurry) {
  std::vector<FrameSequence> out;
  out.reserve(blurry.size());
  const diff::Shape expect{arch_.height, arch_.width, arch_.channels};
  const std::size_t in_block = static_cast<std::size_t>(arch_.channels) * arch_.height * arch_.width;
  const std::size_t out_block = in_block * static_cast<std::size_t>(arch_.frames);
  for (std::size_t begin = 0; begin < blurry.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(blurry.size(), begin + kInferenceBatch);
    diff::Tensor batch({static_cast<int>(end - begin), arch_.channels, arch_.height, arch_.width});
    for (std::size_t i = begin; i < end; ++i) {
      if (blurry[i]->shape() != expect) {
        throw diff::ShapeError("blurry image " + diff::shape_str(blurry[i]->shape()) + " does not match the model " +
                               diff::shape_str(expect));
      }
      pack_image(*blurry[i], batch.data() + (i - begin) * in_block);
    }
    graph_.evaluate({{"blurry", batch}});
    const diff::Tensor& y = graph_.value(out_);
    for (std::size_t i = 0; i < end - begin; ++i) {
      out.push_back(unpack_frames(y.data() + i * out_block, arch_.frames, arch_.height, arch_.width, arch_.channels));
    }
  }
  return out;
}

FrameSequence PredictorRunner::predict(const Image& blurry) { return predict(std::vector<const Image*>{&blurry}).front(); }

FrameSequence predict_sequence(const FramePredictor& model, const Image& blurry) {
  PredictorRunner runner(model);
  return runner.predict(blurry);
}

FrameSequence target_sequence(const FrameSequence& seq, bool border_only) {
  if (!border_only) return seq;
  FrameSequence out;
  out.seed = seq.seed;
  out.frames = {seq.frames.front(), seq.frames.back()};
  return out;
}

std::string DeblurEpoch::line() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch=%d loss=%.6f test_ppsnr_mean=%.4f order_agreement=%.4f", epoch, loss,
                test_ppsnr_mean, order_agreement);
  return buf;
}

DeblurEvaluation evaluate_deblur(const FramePredictor& model, const std::vector<const scenes::Sample*>& test,
                                 bool border_only, order::PairEmbedder* embedder, metrics::PairedVariant variant) {
  if (test.empty()) throw std::invalid_argument("evaluation needs at least one test sample");
  PredictorRunner runner(model);
  std::vector<const Image*> inputs;
  std::vector<FrameSequence> targets;
  for (const scenes::Sample* s : test) {
    inputs.push_back(&s->blurry.image);
    targets.push_back(target_sequence(s->sequence, border_only));
  }
  DeblurEvaluation ev;
  ev.predictions = runner.predict(inputs);
  if (embedder != nullptr) {
    for (const FrameSequence& p : ev.predictions) {
      try {
        ev.labels.push_back(order::order_label(*embedder, p).value);
      } catch (const std::domain_error&) {
        ev.labels.push_back(1);
      }
    }
  }
  std::vector<const FrameSequence*> gts;
  for (const FrameSequence& t : targets) gts.push_back(&t);
  ev.report = metrics::evaluate_predictions(ev.predictions, gts, ev.labels, variant);
  return ev;
}

DeblurTrainResult train_deblur(const std::vector<const scenes::Sample*>& train,
                               const std::vector<const scenes::Sample*>& test, const DeblurTrainConfig& config,
                               const order::OrderEncoder* encoder, const order::Hyperplane* h) {
  if (train.empty()) throw std::invalid_argument("deblur training needs a nonempty dataset");
  if (config.epochs < 0 || config.batch < 1) throw std::invalid_argument("epochs must be >= 0 and batch >= 1");
  const double alpha = uses_hypercut(config.regime) ? config.alpha : 0.0;
  if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
  if (uses_hypercut(config.regime) && (encoder == nullptr || h == nullptr)) {
    throw std::invalid_argument("regime " + regime_name(config.regime) + " requires a trained order encoder");
  }

  const FrameSequence& first = train.front()->sequence;
  PredictorArch arch;
  arch.channels = first.channels();
  arch.height = first.height();
  arch.width = first.width();
  arch.frames = config.border_only ? 2 : first.count();
  arch.widths = config.widths;
  for (const scenes::Sample* s : train) {
    if (s->sequence.count() != first.count() || s->blurry.image.shape() != first.frames.front().shape()) {
      throw diff::ShapeError("training samples differ in geometry");
    }
  }

  order::OrderEncoder frozen;
  std::unique_ptr<order::PairEmbedder> embedder;
  if (encoder != nullptr && h != nullptr) {
    if (encoder->arch.channels != arch.channels || encoder->arch.height != arch.height ||
        encoder->arch.width != arch.width) {
      throw diff::ShapeError("order encoder geometry " + std::to_string(encoder->arch.height) + "x" +
                             std::to_string(encoder->arch.width) + "x" + std::to_string(encoder->arch.channels) +
                             " does not match the dataset");
    }
    frozen = *encoder;
    frozen.params.set_trainable(false);
    embedder = std::make_unique<order::PairEmbedder>(frozen, *h);
  }

  DeblurTrainResult result;
  result.predictor = make_predictor(arch, diff::derive_seed(config.seed, 1));
  diff::ParameterSet& params = result.predictor.params;
  std::mt19937_64 shuffle_rng(diff::derive_seed(config.seed, 3));

  diff::Graph g;
  diff::Var in = g.input("blurry", {-1, arch.channels, arch.height, arch.width});
  diff::Var gt = g.input("target", {-1, arch.out_channels(), arch.height, arch.width});
  diff::Var pred = build_prediction(g, params, arch, in);
  diff::Var loss = build_total_loss(g, pred, gt, arch.frames, arch.channels, base_loss_of(config.regime), config.norm,
                                    alpha, alpha > 0.0 ? &frozen.params : nullptr, alpha > 0.0 ? &frozen.arch : nullptr,
                                    h);
  diff::AdamConfig adam_config;
  adam_config.learning_rate = config.lr;
  diff::AdamState adam = diff::make_adam_state(params, adam_config);

  const std::size_t in_block = static_cast<std::size_t>(arch.channels) * arch.height * arch.width;
  const std::size_t out_block = in_block * static_cast<std::size_t>(arch.frames);
  std::vector<const scenes::Sample*> order(train.begin(), train.end());
  const auto batch = static_cast<std::size_t>(config.batch);
  diff::Tensor xb;
  diff::Tensor yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_acc = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const int b = static_cast<int>(end - begin);
      xb.resize({b, arch.channels, arch.height, arch.width});
      yb.resize({b, arch.out_channels(), arch.height, arch.width});
      for (std::size_t i = begin; i < end; ++i) {
        pack_image(order[i]->blurry.image, xb.data() + (i - begin) * in_block);
        pack_frames(target_sequence(order[i]->sequence, config.border_only).frames, yb.data() + (i - begin) * out_block);
      }
      params.zero_grad();
      g.evaluate({{"blurry", xb}, {"target", yb}});
      g.backward(loss);
      diff::adam_update(params, adam);
      loss_acc += static_cast<double>(g.value(loss).item()) * b;
    }
    DeblurEpoch e;
    e.epoch = epoch;
    e.loss = loss_acc / static_cast<double>(order.size());
    e.test_ppsnr_mean = std::numeric_limits<double>::quiet_NaN();
    e.order_agreement = std::numeric_limits<double>::quiet_NaN();
    const bool last = epoch + 1 == config.epochs;
    if (!test.empty() && (last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0))) {
      const DeblurEvaluation ev = evaluate_deblur(result.predictor, test, config.border_only, embedder.get());
      e.test_ppsnr_mean = ev.report.mean_ppsnr;
      e.order_agreement = ev.report.order_agreement;
    }
    result.log.push_back(e);
    if (config.on_log) config.on_log(e.line());
  }
  params.zero_grad();
  return result;
}

}  // namespace hypercut::deblur
