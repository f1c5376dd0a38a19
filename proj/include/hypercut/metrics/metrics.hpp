#pragma once

#include <string>
#include <vector>

#include "hypercut/scenes/scene.hpp"

namespace hypercut::metrics {

using scenes::FrameSequence;
using scenes::Image;

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) with peak 1; identical images give kPsnrCap.
double psnr(const Image& a, const Image& b);

struct SsimOptions {
  int window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over non-overlapping window x window tiles (channels averaged).
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

enum class PairedVariant {
  /// Per frame: max(psnr(p_k, x_k), psnr(p_k, x_{N-k})).
  kPerFrameMax,
  /// Whole sequence: the better of the forward and backward mean scores.
  kSequenceAverage,
};

double ppsnr_k(const FrameSequence& pred, const FrameSequence& gt, int k);
double pssim_k(const FrameSequence& pred, const FrameSequence& gt, int k, const SsimOptions& options = {});

double mean_ppsnr(const FrameSequence& pred, const FrameSequence& gt,
                  PairedVariant variant = PairedVariant::kPerFrameMax);
double mean_pssim(const FrameSequence& pred, const FrameSequence& gt,
                  PairedVariant variant = PairedVariant::kPerFrameMax, const SsimOptions& options = {});

/// Fraction of labels equal to 0 (the negative side of h).
double order_agreement(const std::vector<int>& labels);

struct MetricReport {
  PairedVariant variant = PairedVariant::kPerFrameMax;
  std::size_t samples = 0;
  /// Dataset means of ppsnr_k / pssim_k for k = 0..N.
  std::vector<double> ppsnr;
  std::vector<double> pssim;
  double mean_ppsnr = 0.0;
  double mean_pssim = 0.0;
  /// Mean of the k = 0 and k = N entries.
  double border_ppsnr = 0.0;
  /// NaN when no encoder was available.
  double order_agreement = 0.0;

  std::string to_text() const;
  std::string to_json() const;
};

/// Averages the per-sample metrics over a test set. `labels` may be empty.
MetricReport evaluate_predictions(const std::vector<FrameSequence>& preds, const std::vector<const FrameSequence*>& gts,
                                  const std::vector<int>& labels, PairedVariant variant = PairedVariant::kPerFrameMax);

}  // namespace hypercut::metrics
