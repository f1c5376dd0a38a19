#include <doctest.h>

#include <cmath>
#include <random>

#include "hypercut/metrics/metrics.hpp"
#include "oracles.hpp"

using namespace hypercut;
using scenes::FrameSequence;
using scenes::Image;

namespace {

FrameSequence constant_sequence(std::vector<float> levels) {
  FrameSequence s;
  for (float v : levels) s.frames.push_back(Image({8, 8, 1}, v));
  return s;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr of a uniform 0.1 error is 20 dB") {
    const Image a({8, 8, 1}, 0.2f);
    const Image b({8, 8, 1}, 0.3f);
    CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK(metrics::psnr(a, a) == metrics::kPsnrCap);
    CHECK_THROWS(metrics::psnr(a, Image({8, 7, 1})));
  }

  TEST_CASE("psnr matches its definition and is symmetric") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
      const Image a = oracle::random_image(rng, 6, 5, 3);
      const Image b = oracle::random_image(rng, 6, 5, 3);
      CHECK(metrics::psnr(a, b) == doctest::Approx(oracle::psnr(a, b)).epsilon(1e-6));
      CHECK(metrics::psnr(a, b) == metrics::psnr(b, a));
    }
  }

  TEST_CASE("paired psnr takes the better of the mirrored frames") {
    const auto gt = constant_sequence({0.0f, 0.5f, 1.0f});
    const auto pred = constant_sequence({0.9f, 0.5f, 0.2f});
    // frame 0: vs 0.0 -> 0.81 mse (0.915 dB); vs 1.0 -> 0.01 mse (20 dB)
    CHECK(metrics::ppsnr_k(pred, gt, 0) == doctest::Approx(20.0).epsilon(1e-5));
    // frame 2: vs 1.0 -> 0.64 mse; vs 0.0 -> 0.04 mse (13.98 dB)
    CHECK(metrics::ppsnr_k(pred, gt, 2) == doctest::Approx(-10.0 * std::log10(0.04)).epsilon(1e-5));
    CHECK(metrics::ppsnr_k(pred, gt, 1) == metrics::kPsnrCap);
  }

  TEST_CASE("mean paired psnr is reversal invariant in both variants") {
    std::mt19937_64 rng(2);
    for (auto variant : {metrics::PairedVariant::kPerFrameMax, metrics::PairedVariant::kSequenceAverage}) {
      FrameSequence gt, pred;
      for (int k = 0; k < 7; ++k) {
        gt.frames.push_back(oracle::random_image(rng, 4, 4, 1));
        pred.frames.push_back(oracle::random_image(rng, 4, 4, 1));
      }
      const double fwd = metrics::mean_ppsnr(pred, gt, variant);
      CHECK(metrics::mean_ppsnr(scenes::reverse_sequence(pred), gt, variant) == doctest::Approx(fwd).epsilon(1e-12));
      CHECK(metrics::mean_ppsnr(scenes::reverse_sequence(gt), gt, variant) == metrics::kPsnrCap);
    }
  }

  TEST_CASE("sequence average picks one direction for every frame") {
    const auto gt = constant_sequence({0.0f, 1.0f});
    const auto pred = constant_sequence({0.9f, 0.9f});
    // forward: frame 0 off by 0.9, frame 1 off by 0.1; backward is the same set
    const double expected = 0.5 * (-10.0 * std::log10(0.81) + 20.0);
    CHECK(metrics::mean_ppsnr(pred, gt, metrics::PairedVariant::kSequenceAverage) ==
          doctest::Approx(expected).epsilon(1e-5));
    CHECK(metrics::mean_ppsnr(pred, gt, metrics::PairedVariant::kPerFrameMax) == doctest::Approx(20.0).epsilon(1e-5));
  }

  TEST_CASE("ssim") {
    std::mt19937_64 rng(3);
    const Image a = oracle::random_image(rng, 16, 16, 1);
    CHECK(metrics::ssim(a, a) == doctest::Approx(1.0));
    Image b = a;
    for (float& v : b.values()) v = 1.0f - v;
    CHECK(metrics::ssim(a, b) < 0.0);
    CHECK(metrics::ssim(a, b) == doctest::Approx(metrics::ssim(b, a)));
    CHECK_THROWS(metrics::ssim(Image({4, 4, 1}), Image({4, 4, 1})));
  }

  TEST_CASE("order agreement") {
    CHECK(metrics::order_agreement({0, 0, 1, 0}) == doctest::Approx(0.75));
    CHECK(metrics::order_agreement({1, 1}) == doctest::Approx(0.0));
  }

  TEST_CASE("report averages over samples") {
    const auto gt = constant_sequence({0.0f, 0.5f, 1.0f});
    const auto pred = constant_sequence({0.1f, 0.5f, 0.9f});
    const std::vector<FrameSequence> preds{pred, pred};
    const std::vector<const FrameSequence*> gts{&gt, &gt};
    const auto rep = metrics::evaluate_predictions(preds, gts, {0, 1});
    CHECK(rep.samples == 2);
    REQUIRE(rep.ppsnr.size() == 3);
    CHECK(rep.border_ppsnr == doctest::Approx(20.0).epsilon(1e-5));
    CHECK(rep.mean_ppsnr == doctest::Approx((20.0 + 20.0 + 100.0) / 3).epsilon(1e-5));
    CHECK(rep.order_agreement == doctest::Approx(0.5));
    CHECK(std::isnan(metrics::evaluate_predictions(preds, gts, {}).order_agreement));
    CHECK(rep.to_text().find("border_ppsnr=") != std::string::npos);
  }
}
