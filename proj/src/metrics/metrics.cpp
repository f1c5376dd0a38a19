#include "hypercut/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace hypercut::metrics {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw diff::ShapeError(std::string(what) + ": shapes " + diff::shape_str(a.shape()) + " and " +
                           diff::shape_str(b.shape()) + " differ");
  }
}

void require_same_geometry(const FrameSequence& pred, const FrameSequence& gt) {
  if (pred.count() != gt.count()) {
    throw diff::ShapeError("prediction has " + std::to_string(pred.count()) + " frames, ground truth " +
                           std::to_string(gt.count()));
  }
  if (gt.count() == 0) throw std::invalid_argument("empty sequence");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  if (a.size() == 0) throw std::invalid_argument("psnr of empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  if (acc == 0.0) return kPsnrCap;
  const double mse = acc / static_cast<double>(a.size());
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 3) throw diff::ShapeError("ssim expects H x W x C images");
  const int h = a.dim(0);
  const int w = a.dim(1);
  const int c = a.dim(2);
  const int win = options.window;
  if (win < 1 || h < win || w < win) {
    throw std::invalid_argument("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                                std::to_string(win) + "x" + std::to_string(win) + " SSIM window");
  }
  const double c1 = options.k1 * options.k1;
  const double c2 = options.k2 * options.k2;
  const double n = static_cast<double>(win) * win;
  double total = 0.0;
  int tiles = 0;
  for (int ty = 0; ty + win <= h; ty += win) {
    for (int tx = 0; tx + win <= w; tx += win) {
      for (int ch = 0; ch < c; ++ch) {
        double sa = 0.0, sb = 0.0;
        for (int r = ty; r < ty + win; ++r) {
          for (int q = tx; q < tx + win; ++q) {
            const std::size_t i = (static_cast<std::size_t>(r) * w + q) * c + ch;
            sa += a[i];
            sb += b[i];
          }
        }
        const double ma = sa / n;
        const double mb = sb / n;
        double vaa = 0.0, vbb = 0.0, vab = 0.0;
        for (int r = ty; r < ty + win; ++r) {
          for (int q = tx; q < tx + win; ++q) {
            const std::size_t i = (static_cast<std::size_t>(r) * w + q) * c + ch;
            const double da = a[i] - ma;
            const double db = b[i] - mb;
            vaa += da * da;
            vbb += db * db;
            vab += da * db;
          }
        }
        vaa /= n;
        vbb /= n;
        vab /= n;
        total += ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
        ++tiles;
      }
    }
  }
  return total / tiles;
}

namespace {

std::size_t checked_index(const FrameSequence& gt, int k) {
  if (k < 0 || k > gt.last_index()) {
    throw std::out_of_range("frame index " + std::to_string(k) + " outside 0.." + std::to_string(gt.last_index()));
  }
  return static_cast<std::size_t>(k);
}

template <typename Score>
double paired_k(const FrameSequence& pred, const FrameSequence& gt, int k, Score&& score) {
  require_same_geometry(pred, gt);
  const std::size_t i = checked_index(gt, k);
  const std::size_t j = static_cast<std::size_t>(gt.last_index() - k);
  return std::max(score(pred.frames[i], gt.frames[i]), score(pred.frames[i], gt.frames[j]));
}

// Per-k scores under the requested variant; the sequence-average variant
// picks one orientation for the whole sequence.
template <typename Score>
std::vector<double> paired_scores(const FrameSequence& pred, const FrameSequence& gt, PairedVariant variant,
                                  Score&& score) {
  require_same_geometry(pred, gt);
  const int n = gt.last_index();
  std::vector<double> out(static_cast<std::size_t>(n + 1));
  if (variant == PairedVariant::kPerFrameMax) {
    for (int k = 0; k <= n; ++k) out[static_cast<std::size_t>(k)] = paired_k(pred, gt, k, score);
    return out;
  }
  std::vector<double> fwd(out.size());
  std::vector<double> bwd(out.size());
  double sf = 0.0, sb = 0.0;
  for (int k = 0; k <= n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    fwd[i] = score(pred.frames[i], gt.frames[i]);
    bwd[i] = score(pred.frames[i], gt.frames[static_cast<std::size_t>(n - k)]);
    sf += fwd[i];
    sb += bwd[i];
  }
  return sf >= sb ? fwd : bwd;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

double ppsnr_k(const FrameSequence& pred, const FrameSequence& gt, int k) {
  return paired_k(pred, gt, k, [](const Image& a, const Image& b) { return psnr(a, b); });
}

double pssim_k(const FrameSequence& pred, const FrameSequence& gt, int k, const SsimOptions& options) {
  return paired_k(pred, gt, k, [&](const Image& a, const Image& b) { return ssim(a, b, options); });
}

double mean_ppsnr(const FrameSequence& pred, const FrameSequence& gt, PairedVariant variant) {
  return mean_of(paired_scores(pred, gt, variant, [](const Image& a, const Image& b) { return psnr(a, b); }));
}

double mean_pssim(const FrameSequence& pred, const FrameSequence& gt, PairedVariant variant,
                  const SsimOptions& options) {
  return mean_of(
      paired_scores(pred, gt, variant, [&](const Image& a, const Image& b) { return ssim(a, b, options); }));
}

double order_agreement(const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("order agreement needs at least one prediction");
  std::size_t zeros = 0;
  for (int l : labels) zeros += l == 0;
  return static_cast<double>(zeros) / static_cast<double>(labels.size());
}

namespace {

const char* variant_name(PairedVariant v) {
  return v == PairedVariant::kPerFrameMax ? "per_frame_max" : "sequence_average";
}

}  // namespace

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "ppsnr_definition=" << variant_name(variant) << '\n';
  os << "samples=" << samples << '\n';
  for (std::size_t k = 0; k < ppsnr.size(); ++k) os << "ppsnr_" << k << '=' << ppsnr[k] << '\n';
  for (std::size_t k = 0; k < pssim.size(); ++k) os << "pssim_" << k << '=' << pssim[k] << '\n';
  os << "mean_ppsnr=" << mean_ppsnr << '\n';
  os << "mean_pssim=" << mean_pssim << '\n';
  os << "border_ppsnr=" << border_ppsnr << '\n';
  os << "order_agreement=" << order_agreement << '\n';
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["ppsnr_definition"] = variant_name(variant);
  j["samples"] = samples;
  j["ppsnr"] = ppsnr;
  j["pssim"] = pssim;
  j["mean_ppsnr"] = mean_ppsnr;
  j["mean_pssim"] = mean_pssim;
  j["border_ppsnr"] = border_ppsnr;
  if (std::isnan(order_agreement)) {
    j["order_agreement"] = nullptr;
  } else {
    j["order_agreement"] = order_agreement;
  }
  return j.dump(2) + "\n";
}

MetricReport evaluate_predictions(const std::vector<FrameSequence>& preds, const std::vector<const FrameSequence*>& gts,
                                  const std::vector<int>& labels, PairedVariant variant) {
  if (preds.empty() || preds.size() != gts.size()) {
    throw std::invalid_argument("need one prediction per ground-truth sequence");
  }
  const std::size_t frames = static_cast<std::size_t>(gts.front()->count());
  MetricReport r;
  r.variant = variant;
  r.samples = preds.size();
  r.ppsnr.assign(frames, 0.0);
  r.pssim.assign(frames, 0.0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (static_cast<std::size_t>(gts[s]->count()) != frames) throw diff::ShapeError("ground-truth lengths differ");
    const auto p = paired_scores(preds[s], *gts[s], variant, [](const Image& a, const Image& b) { return psnr(a, b); });
    const auto q =
        paired_scores(preds[s], *gts[s], variant, [](const Image& a, const Image& b) { return ssim(a, b); });
    for (std::size_t k = 0; k < frames; ++k) {
      r.ppsnr[k] += p[k];
      r.pssim[k] += q[k];
    }
  }
  for (std::size_t k = 0; k < frames; ++k) {
    r.ppsnr[k] /= static_cast<double>(preds.size());
    r.pssim[k] /= static_cast<double>(preds.size());
  }
  r.mean_ppsnr = mean_of(r.ppsnr);
  r.mean_pssim = mean_of(r.pssim);
  r.border_ppsnr = 0.5 * (r.ppsnr.front() + r.ppsnr.back());
  r.order_agreement = labels.empty() ? std::numeric_limits<double>::quiet_NaN() : metrics::order_agreement(labels);
  return r;
}

}  // namespace hypercut::metrics
