// Times the OpenMP kernels against the serial reference loops.
//
//   hypercut_bench [repeats]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <vector>

#include "hypercut/diffcore/kernels.hpp"

namespace k = hypercut::kernels;

namespace {

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
  return d;
}

void conv_forward(const k::ConvGeometry& g, int batch, int out_c, const std::vector<float>& x,
                  const std::vector<float>& w, const std::vector<float>& bias, std::vector<float>& y) {
  const int cols = batch * g.positions();
  std::vector<float> col(static_cast<std::size_t>(g.col_rows()) * cols);
  std::vector<float> out(static_cast<std::size_t>(out_c) * cols);
  k::im2col(g, batch, x.data(), col.data());
  for (int o = 0; o < out_c; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o) * cols, cols, bias[o]);
  k::gemm(false, false, out_c, cols, g.col_rows(), w.data(), col.data(), out.data(), true);
  k::from_channel_major(batch, out_c, g.positions(), out.data(), y.data());
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  std::mt19937_64 rng(1);
  std::vector<int> threads{1};
  if (k::max_threads() > 1) threads.push_back(k::max_threads());
  std::printf("available threads: %d\n", omp_get_num_procs());

  {
    const int m = 256, n = 1024, kk = 288;
    const auto a = random_vec(static_cast<std::size_t>(m) * kk, rng);
    const auto b = random_vec(static_cast<std::size_t>(kk) * n, rng);
    std::vector<float> ref(static_cast<std::size_t>(m) * n), par(ref.size());
    const double t_ref = time_ms(repeats, [&] {
      k::reference::gemm(false, false, m, n, kk, a.data(), b.data(), ref.data(), false);
    });
    std::printf("gemm %dx%dx%d  reference: %8.2f ms\n", m, n, kk, t_ref);
    for (int t : threads) {
      k::set_threads(t);
      const double ms = time_ms(repeats, [&] { k::gemm(false, false, m, n, kk, a.data(), b.data(), par.data(), false); });
      std::printf("gemm %dx%dx%d  omp %2d thr: %8.2f ms  speedup %.2fx  max|diff| %.2e\n", m, n, kk, t, ms, t_ref / ms,
                  max_diff(ref, par));
    }
  }

  {
    const int batch = 32, c = 16, h = 32, w = 32, out_c = 32;
    const auto g = k::conv_geometry(c, h, w, 3, 1, 1);
    const auto x = random_vec(static_cast<std::size_t>(batch) * c * h * w, rng);
    const auto wt = random_vec(static_cast<std::size_t>(out_c) * c * 9, rng);
    const auto bias = random_vec(static_cast<std::size_t>(out_c), rng);
    std::vector<float> ref(static_cast<std::size_t>(batch) * out_c * g.positions()), par(ref.size());
    const double t_ref = time_ms(repeats, [&] {
      k::reference::conv2d(g, batch, out_c, x.data(), wt.data(), bias.data(), ref.data());
    });
    std::printf("conv3x3 b%d %d->%d %dx%d  reference: %8.2f ms\n", batch, c, out_c, h, w, t_ref);
    for (int t : threads) {
      k::set_threads(t);
      const double ms = time_ms(repeats, [&] { conv_forward(g, batch, out_c, x, wt, bias, par); });
      std::printf("conv3x3 b%d %d->%d %dx%d  omp %2d thr: %8.2f ms  speedup %.2fx  max|diff| %.2e\n", batch, c, out_c, h,
                  w, t, ms, t_ref / ms, max_diff(ref, par));
    }
  }
  return 0;
}
