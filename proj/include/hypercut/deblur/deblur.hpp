#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hypercut/diffcore/graph.hpp"
#include "hypercut/metrics/metrics.hpp"
#include "hypercut/order/encoder.hpp"
#include "hypercut/scenes/dataset.hpp"

namespace hypercut::deblur {

using scenes::FrameSequence;
using scenes::Image;

/// Encoder-decoder mapping one blurry image to `frames` frames.
struct PredictorArch {
  int channels = 1;
  int height = 32;
  int width = 32;
  int frames = 7;
  std::vector<int> widths = {16, 32};
  double slope = 0.1;

  int out_channels() const { return frames * channels; }
  void validate() const;
};

struct FramePredictor {
  PredictorArch arch;
  diff::ParameterSet params;
};

FramePredictor make_predictor(const PredictorArch& arch, std::uint64_t seed);

/// `blurry` is [B, C, H, W]; returns sigmoid outputs [B, frames * C, H, W],
/// frame k occupying channels k*C .. k*C + C - 1.
template <typename T>
diff::Var build_prediction(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& params, const PredictorArch& arch,
                           diff::Var blurry);

enum class BaseLoss { kRec, kOrderInvariant };
/// kL2 / kL1: norms of whole frames. kPixel: the same expression evaluated per
/// element with absolute values, summed over elements.
enum class NormKind { kL2, kL1, kPixel };

enum class Regime { kRec, kOi, kOiHypercut, kRecHypercut };
Regime parse_regime(const std::string& name);
std::string regime_name(Regime r);
BaseLoss base_loss_of(Regime r);
bool uses_hypercut(Regime r);

// Graph builders. `pred` and `gt` are [B, F*C, H, W] in the layout above.

/// Mean squared error over every element.
template <typename T>
diff::Var build_loss_rec(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt);

/// Per sample: sum over pairs k < F/2 of
///   | ||p_k - p_{N-k}|| - ||x_k - x_{N-k}|| | + | ||p_k + p_{N-k}|| - ||x_k + x_{N-k}|| |
/// plus the squared error of the middle frame when F is odd; mean over the batch.
template <typename T>
diff::Var build_loss_oi(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt, int frames, int channels,
                        NormKind norm = NormKind::kL2);

/// Sum over pairs of <H([p_k, p_{N-k}]), h>, mean over the batch. The encoder
/// parameters should be frozen so only `pred` receives gradient.
template <typename T>
diff::Var build_regularizer(diff::BasicGraph<T>& g, diff::BasicParameterSet<T>& encoder_params,
                            const order::EncoderArch& encoder_arch, const order::Hyperplane& h, diff::Var pred,
                            int frames, int channels);

/// L_D + alpha * R. With alpha == 0 no regularizer is wired and the result is
/// the base loss node itself.
template <typename T>
diff::Var build_total_loss(diff::BasicGraph<T>& g, diff::Var pred, diff::Var gt, int frames, int channels,
                           BaseLoss base, NormKind norm, double alpha, diff::BasicParameterSet<T>* encoder_params,
                           const order::EncoderArch* encoder_arch, const order::Hyperplane* h);

// Direct evaluation on frame sequences (no clamping, double accumulation).

double loss_rec(const FrameSequence& pred, const FrameSequence& gt);
double loss_order_invariant(const FrameSequence& pred, const FrameSequence& gt, NormKind norm = NormKind::kL2);
/// Mean over `preds` of the per-sequence pair-projection sums.
double hypercut_regularizer(order::PairEmbedder& embedder, const std::vector<FrameSequence>& preds);

/// Channel-major packing of frames into one [F*C, H, W] block.
void pack_frames(const std::vector<Image>& frames, float* out);
/// Inverse of pack_frames for one sample.
FrameSequence unpack_frames(const float* data, int frames, int height, int width, int channels);
/// H x W x C -> C x H x W.
void pack_image(const Image& image, float* out);

/// Batched inference; holds its own copy of the weights.
class PredictorRunner {
 public:
  explicit PredictorRunner(const FramePredictor& model);
  std::vector<FrameSequence> predict(const std::vector<const Image*>& blurry);
  FrameSequence predict(const Image& blurry);

 private:
  PredictorArch arch_;
  diff::ParameterSet params_;
  diff::Graph graph_;
  diff::Var out_;
};

FrameSequence predict_sequence(const FramePredictor& model, const Image& blurry);

/// Ground-truth frames the predictor is trained against: the full sequence,
/// or frames {0, N} when `border_only`.
FrameSequence target_sequence(const FrameSequence& seq, bool border_only);

struct DeblurTrainConfig {
  int epochs = 20;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  Regime regime = Regime::kOi;
  double alpha = 0.2;
  NormKind norm = NormKind::kL2;
  bool border_only = false;
  std::vector<int> widths = {16, 32};
  /// Evaluate on the test split every this many epochs (and after the last).
  int eval_every = 1;
  std::function<void(const std::string&)> on_log;
};

struct DeblurEpoch {
  int epoch = 0;
  double loss = 0.0;
  double test_ppsnr_mean = 0.0;
  double order_agreement = 0.0;

  /// `epoch=<i> loss=<f> test_ppsnr_mean=<f> order_agreement=<f>`
  std::string line() const;
};

struct DeblurTrainResult {
  FramePredictor predictor;
  std::vector<DeblurEpoch> log;
};

/// Trains a predictor. Regimes with HyperCUT need `encoder`; the encoder is
/// copied and frozen. Throws on empty data or a geometry mismatch.
DeblurTrainResult train_deblur(const std::vector<const scenes::Sample*>& train,
                               const std::vector<const scenes::Sample*>& test, const DeblurTrainConfig& config,
                               const order::OrderEncoder* encoder = nullptr, const order::Hyperplane* h = nullptr);

struct DeblurEvaluation {
  std::vector<FrameSequence> predictions;
  std::vector<int> labels;  // empty without an encoder
  metrics::MetricReport report;
};

DeblurEvaluation evaluate_deblur(const FramePredictor& model, const std::vector<const scenes::Sample*>& test,
                                 bool border_only, order::PairEmbedder* embedder,
                                 metrics::PairedVariant variant = metrics::PairedVariant::kPerFrameMax);

}  // namespace hypercut::deblur
