#include "hypercut/diffcore/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

namespace hypercut::kernels {

ConvGeometry conv_geometry(int channels, int height, int width, int kernel, int stride, int pad) {
  if (channels <= 0 || height <= 0 || width <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
    throw std::invalid_argument("invalid convolution geometry");
  }
  ConvGeometry g;
  g.channels = channels;
  g.height = height;
  g.width = width;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_height = (height + 2 * pad - kernel) / stride + 1;
  g.out_width = (width + 2 * pad - kernel) / stride + 1;
  if (g.out_height <= 0 || g.out_width <= 0) {
    throw std::invalid_argument("convolution kernel " + std::to_string(kernel) +
                                " larger than padded input " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  return g;
}

int max_threads() { return omp_get_max_threads(); }

void set_threads(int threads) { omp_set_num_threads(std::max(1, threads)); }

namespace {

constexpr int kRowBlock = 4;
constexpr int kColTile = 256;
constexpr int kLanes = 16;

template <typename T>
void gemm_rows_nn(bool trans_a, int m, int n, int k, const T* a, const T* b, T* c,
                  bool accumulate) {
  const int row_blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (int rb = 0; rb < row_blocks; ++rb) {
    const int i0 = rb * kRowBlock;
    const int rows = std::min(kRowBlock, m - i0);
    alignas(64) T tile[kRowBlock][kColTile];
    for (int j0 = 0; j0 < n; j0 += kColTile) {
      const int cols = std::min(kColTile, n - j0);
      for (int r = 0; r < rows; ++r) {
        T* t = tile[r];
        const T* crow = c + static_cast<std::size_t>(i0 + r) * n + j0;
        for (int j = 0; j < cols; ++j) t[j] = accumulate ? crow[j] : T(0);
      }
      for (int p = 0; p < k; ++p) {
        const T* brow = b + static_cast<std::size_t>(p) * n + j0;
        for (int r = 0; r < rows; ++r) {
          const T av = trans_a ? a[static_cast<std::size_t>(p) * m + i0 + r]
                               : a[static_cast<std::size_t>(i0 + r) * k + p];
          T* t = tile[r];
          for (int j = 0; j < cols; ++j) t[j] += av * brow[j];
        }
      }
      for (int r = 0; r < rows; ++r) {
        std::memcpy(c + static_cast<std::size_t>(i0 + r) * n + j0, tile[r],
                    sizeof(T) * static_cast<std::size_t>(cols));
      }
    }
  }
}

// C[i,j] = sum_p A[i,p] * B[j,p]; both operands walk contiguous rows.
template <typename T>
void gemm_rows_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  const int row_blocks = (m + kRowBlock - 1) / kRowBlock;
  const int k_main = k - k % kLanes;
#pragma omp parallel for schedule(static)
  for (int rb = 0; rb < row_blocks; ++rb) {
    const int i0 = rb * kRowBlock;
    const int rows = std::min(kRowBlock, m - i0);
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      alignas(64) T lanes[kRowBlock][kLanes] = {};
      for (int p = 0; p < k_main; p += kLanes) {
        for (int r = 0; r < rows; ++r) {
          const T* arow = a + static_cast<std::size_t>(i0 + r) * k + p;
          for (int l = 0; l < kLanes; ++l) lanes[r][l] += arow[l] * brow[p + l];
        }
      }
      for (int r = 0; r < rows; ++r) {
        const T* arow = a + static_cast<std::size_t>(i0 + r) * k;
        T sum = T(0);
        for (int l = 0; l < kLanes; ++l) sum += lanes[r][l];
        for (int p = k_main; p < k; ++p) sum += arow[p] * brow[p];
        T& out = c[static_cast<std::size_t>(i0 + r) * n + j];
        out = accumulate ? out + sum : sum;
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
    return;
  }
  if (!trans_b) {
    gemm_rows_nn(trans_a, m, n, k, a, b, c, accumulate);
  } else if (!trans_a) {
    gemm_rows_nt(m, n, k, a, b, c, accumulate);
  } else {
    reference::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  }
}

template <typename T>
void im2col(const ConvGeometry& g, int batch, const T* images, T* col) {
  const int kk = g.kernel * g.kernel;
  const int rows = g.channels * kk;
  const std::size_t cols = static_cast<std::size_t>(batch) * g.positions();
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int c = row / kk;
    const int ki = (row % kk) / g.kernel;
    const int kj = row % g.kernel;
    T* out = col + static_cast<std::size_t>(row) * cols;
    for (int b = 0; b < batch; ++b) {
      const T* plane = images + (static_cast<std::size_t>(b) * g.channels + c) * g.pixels();
      for (int oh = 0; oh < g.out_height; ++oh) {
        const int ih = oh * g.stride - g.pad + ki;
        if (ih < 0 || ih >= g.height) {
          std::fill(out, out + g.out_width, T(0));
          out += g.out_width;
          continue;
        }
        const T* src = plane + static_cast<std::size_t>(ih) * g.width;
        for (int ow = 0; ow < g.out_width; ++ow) {
          const int iw = ow * g.stride - g.pad + kj;
          *out++ = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, int batch, const T* col, T* images) {
  const int kk = g.kernel * g.kernel;
  const std::size_t cols = static_cast<std::size_t>(batch) * g.positions();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      T* plane = images + (static_cast<std::size_t>(b) * g.channels + c) * g.pixels();
      std::fill(plane, plane + g.pixels(), T(0));
    }
    for (int r = 0; r < kk; ++r) {
      const int ki = r / g.kernel;
      const int kj = r % g.kernel;
      const T* in = col + static_cast<std::size_t>(c * kk + r) * cols;
      for (int b = 0; b < batch; ++b) {
        T* plane = images + (static_cast<std::size_t>(b) * g.channels + c) * g.pixels();
        for (int oh = 0; oh < g.out_height; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) {
            in += g.out_width;
            continue;
          }
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          for (int ow = 0; ow < g.out_width; ++ow, ++in) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += *in;
          }
        }
      }
    }
  }
}

template <typename T>
void to_channel_major(int batch, int channels, int plane, const T* src, T* dst) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      std::memcpy(dst + (static_cast<std::size_t>(c) * batch + b) * plane,
                  src + (static_cast<std::size_t>(b) * channels + c) * plane,
                  sizeof(T) * static_cast<std::size_t>(plane));
    }
  }
}

template <typename T>
void from_channel_major(int batch, int channels, int plane, const T* src, T* dst) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int b = 0; b < batch; ++b) {
      std::memcpy(dst + (static_cast<std::size_t>(b) * channels + c) * plane,
                  src + (static_cast<std::size_t>(c) * batch + b) * plane,
                  sizeof(T) * static_cast<std::size_t>(plane));
    }
  }
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T sum = T(0);
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[static_cast<std::size_t>(p) * m + i]
                             : a[static_cast<std::size_t>(i) * k + p];
        const T bv = trans_b ? b[static_cast<std::size_t>(j) * k + p]
                             : b[static_cast<std::size_t>(p) * n + j];
        sum += av * bv;
      }
      T& out = c[static_cast<std::size_t>(i) * n + j];
      out = accumulate ? out + sum : sum;
    }
  }
}

template <typename T>
void conv2d(const ConvGeometry& g, int batch, int out_channels, const T* x, const T* w,
            const T* bias, T* y) {
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < out_channels; ++o) {
      for (int oh = 0; oh < g.out_height; ++oh) {
        for (int ow = 0; ow < g.out_width; ++ow) {
          T sum = bias ? bias[o] : T(0);
          for (int c = 0; c < g.channels; ++c) {
            for (int ki = 0; ki < g.kernel; ++ki) {
              const int ih = oh * g.stride - g.pad + ki;
              if (ih < 0 || ih >= g.height) continue;
              for (int kj = 0; kj < g.kernel; ++kj) {
                const int iw = ow * g.stride - g.pad + kj;
                if (iw < 0 || iw >= g.width) continue;
                sum += x[((static_cast<std::size_t>(b) * g.channels + c) * g.height + ih) * g.width + iw] *
                       w[((static_cast<std::size_t>(o) * g.channels + c) * g.kernel + ki) * g.kernel + kj];
              }
            }
          }
          y[((static_cast<std::size_t>(b) * out_channels + o) * g.out_height + oh) * g.out_width + ow] = sum;
        }
      }
    }
  }
}

template <typename T>
void conv_transpose2d(const ConvGeometry& g, int batch, int in_channels, const T* x, const T* w,
                      const T* bias, T* y) {
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < g.channels; ++o) {
      T* plane = y + (static_cast<std::size_t>(b) * g.channels + o) * g.pixels();
      for (int p = 0; p < g.pixels(); ++p) plane[p] = bias ? bias[o] : T(0);
      for (int c = 0; c < in_channels; ++c) {
        for (int ih = 0; ih < g.out_height; ++ih) {
          for (int iw = 0; iw < g.out_width; ++iw) {
            const T xv = x[((static_cast<std::size_t>(b) * in_channels + c) * g.out_height + ih) * g.out_width + iw];
            for (int ki = 0; ki < g.kernel; ++ki) {
              const int oh = ih * g.stride - g.pad + ki;
              if (oh < 0 || oh >= g.height) continue;
              for (int kj = 0; kj < g.kernel; ++kj) {
                const int ow = iw * g.stride - g.pad + kj;
                if (ow < 0 || ow >= g.width) continue;
                plane[oh * g.width + ow] +=
                    xv * w[((static_cast<std::size_t>(c) * g.channels + o) * g.kernel + ki) * g.kernel + kj];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

#define HYPERCUT_INSTANTIATE_KERNELS(T)                                                       \
  template void gemm<T>(bool, bool, int, int, int, const T*, const T*, T*, bool);             \
  template void im2col<T>(const ConvGeometry&, int, const T*, T*);                            \
  template void col2im<T>(const ConvGeometry&, int, const T*, T*);                            \
  template void to_channel_major<T>(int, int, int, const T*, T*);                             \
  template void from_channel_major<T>(int, int, int, const T*, T*);                           \
  template void reference::gemm<T>(bool, bool, int, int, int, const T*, const T*, T*, bool);  \
  template void reference::conv2d<T>(const ConvGeometry&, int, int, const T*, const T*,       \
                                     const T*, T*);                                           \
  template void reference::conv_transpose2d<T>(const ConvGeometry&, int, int, const T*,       \
                                               const T*, const T*, T*);

HYPERCUT_INSTANTIATE_KERNELS(float)
HYPERCUT_INSTANTIATE_KERNELS(double)

#undef HYPERCUT_INSTANTIATE_KERNELS

}  // namespace hypercut::kernels
