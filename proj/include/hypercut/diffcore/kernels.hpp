#pragma once

// Dense compute kernels behind the graph ops.
//
// Every parallel kernel splits work over output rows (or output channels) so
// each output element is produced by exactly one thread with a fixed inner
// reduction order. Results are therefore bit-identical for any thread count.
// The serial versions in `reference` are straight loop nests kept for tests
// and the benchmark.

#include <cstddef>

namespace hypercut::kernels {

/// Geometry of a 2D convolution over one image of `channels` planes.
struct ConvGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int out_height = 0;
  int out_width = 0;

  int col_rows() const { return channels * kernel * kernel; }
  int positions() const { return out_height * out_width; }
  int pixels() const { return height * width; }
};

/// Output size follows floor((size + 2*pad - kernel) / stride) + 1.
ConvGeometry conv_geometry(int channels, int height, int width, int kernel, int stride, int pad);

/// Number of threads the parallel kernels may use.
int max_threads();
void set_threads(int threads);

/// Row-major C[m,n] (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
/// With trans_a, A is stored k x m; with trans_b, B is stored n x k.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate);

/// images [batch][channels][height][width] -> col [col_rows][batch * positions].
template <typename T>
void im2col(const ConvGeometry& g, int batch, const T* images, T* col);

/// Adjoint of im2col: scatters col back into zero-initialized images.
template <typename T>
void col2im(const ConvGeometry& g, int batch, const T* col, T* images);

/// [batch][channels][plane] <-> [channels][batch * plane]
template <typename T>
void to_channel_major(int batch, int channels, int plane, const T* src, T* dst);
template <typename T>
void from_channel_major(int batch, int channels, int plane, const T* src, T* dst);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate);

/// Direct convolution. x [batch][C][H][W], w [out_channels][C][k][k], bias [out_channels]
/// (nullable), y [batch][out_channels][OH][OW].
template <typename T>
void conv2d(const ConvGeometry& g, int batch, int out_channels, const T* x, const T* w,
            const T* bias, T* y);

/// Direct transposed convolution. x [batch][in_channels][IH][IW] where (IH, IW) are
/// g.out_height/g.out_width; w [in_channels][g.channels][k][k]; y [batch][g.channels][H][W].
template <typename T>
void conv_transpose2d(const ConvGeometry& g, int batch, int in_channels, const T* x, const T* w,
                      const T* bias, T* y);

}  // namespace reference

}  // namespace hypercut::kernels
