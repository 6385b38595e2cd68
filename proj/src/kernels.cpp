#include "mdaif/kernels.hpp"

#include <algorithm>
#include <vector>

namespace mdaif::kernels {

namespace {

// Range of output columns whose input column ox*s + kx - p lies in [0, W).
inline void valid_cols(const ConvGeometry& g, std::size_t kx, std::size_t ow, std::size_t& lo,
                       std::size_t& hi) {
  const long s = static_cast<long>(g.stride);
  const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
  const long w = static_cast<long>(g.width);
  long first = off >= 0 ? 0 : (-off + s - 1) / s;
  long last = (w - 1 - off) >= 0 ? (w - 1 - off) / s + 1 : 0;
  first = std::min<long>(first, static_cast<long>(ow));
  last = std::clamp<long>(last, first, static_cast<long>(ow));
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
}

inline long input_row(const ConvGeometry& g, std::size_t oy, std::size_t ky) {
  return static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  const std::size_t in_plane = g.height * g.width, out_plane = oh * ow;
  const long nb = static_cast<long>(g.batch), no = static_cast<long>(g.out_ch);
#pragma omp parallel for collapse(2) schedule(static)
  for (long b = 0; b < nb; ++b) {
    for (long o = 0; o < no; ++o) {
      T* yp = y.data() + (b * no + o) * out_plane;
      std::fill(yp, yp + out_plane, T(0));
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        const T* xp = x.data() + (b * g.in_ch + c) * in_plane;
        const T* wp = w.data() + ((o * g.in_ch) + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wp[ky * k + kx];
            std::size_t lo, hi;
            valid_cols(g, kx, ow, lo, hi);
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = input_row(g, oy, ky);
              if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
              const T* xr = xp + iy * g.width + (lo * g.stride + kx - g.pad);
              T* yr = yp + oy * ow + lo;
              const std::size_t len = hi - lo;
              if (g.stride == 1) {
#pragma omp simd
                for (std::size_t j = 0; j < len; ++j) yr[j] += wv * xr[j];
              } else {
                for (std::size_t j = 0; j < len; ++j) yr[j] += wv * xr[j * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<T> y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t c = 0; c < g.in_ch; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                acc += w[((o * g.in_ch + c) * k + ky) * k + kx] *
                       x[((b * g.in_ch + c) * g.height + iy) * g.width + ix];
              }
          y[((b * g.out_ch + o) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  const std::size_t in_plane = g.height * g.width, out_plane = oh * ow;
  const long nb = static_cast<long>(g.batch), nc = static_cast<long>(g.in_ch);
#pragma omp parallel for collapse(2) schedule(static)
  for (long b = 0; b < nb; ++b) {
    for (long c = 0; c < nc; ++c) {
      T* dxp = dx.data() + (b * nc + c) * in_plane;
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        const T* dyp = dy.data() + (b * g.out_ch + o) * out_plane;
        const T* wp = w.data() + (o * g.in_ch + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wp[ky * k + kx];
            std::size_t lo, hi;
            valid_cols(g, kx, ow, lo, hi);
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = input_row(g, oy, ky);
              if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
              T* xr = dxp + iy * g.width + (lo * g.stride + kx - g.pad);
              const T* yr = dyp + oy * ow + lo;
              const std::size_t len = hi - lo;
              if (g.stride == 1) {
#pragma omp simd
                for (std::size_t j = 0; j < len; ++j) xr[j] += wv * yr[j];
              } else {
                for (std::size_t j = 0; j < len; ++j) xr[j * g.stride] += wv * yr[j];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const T> dy,
                                     std::span<const T> w, std::span<T> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gy = dy[((b * g.out_ch + o) * oh + oy) * ow + ox];
          for (std::size_t c = 0; c < g.in_ch; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                dx[((b * g.in_ch + c) * g.height + iy) * g.width + ix] +=
                    w[((o * g.in_ch + c) * k + ky) * k + kx] * gy;
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  const std::size_t in_plane = g.height * g.width, out_plane = oh * ow;
  const long no = static_cast<long>(g.out_ch), nc = static_cast<long>(g.in_ch);
#pragma omp parallel for collapse(2) schedule(static)
  for (long o = 0; o < no; ++o) {
    for (long c = 0; c < nc; ++c) {
      T* dwp = dw.data() + (o * nc + c) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          std::size_t lo, hi;
          valid_cols(g, kx, ow, lo, hi);
          T acc = 0;
          for (std::size_t b = 0; b < g.batch; ++b) {
            const T* dyp = dy.data() + (b * g.out_ch + o) * out_plane;
            const T* xp = x.data() + (b * g.in_ch + c) * in_plane;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = input_row(g, oy, ky);
              if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
              const T* xr = xp + iy * g.width + (lo * g.stride + kx - g.pad);
              const T* yr = dyp + oy * ow + lo;
              const std::size_t len = hi - lo;
              if (g.stride == 1) {
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = 0; j < len; ++j) acc += yr[j] * xr[j];
              } else {
                for (std::size_t j = 0; j < len; ++j) acc += yr[j] * xr[j * g.stride];
              }
            }
          }
          dwp[ky * k + kx] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight_reference(const ConvGeometry& g, std::span<const T> dy,
                                      std::span<const T> x, std::span<T> dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.ksize;
  for (std::size_t o = 0; o < g.out_ch; ++o)
    for (std::size_t c = 0; c < g.in_ch; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T acc = 0;
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                acc += dy[((b * g.out_ch + o) * oh + oy) * ow + ox] *
                       x[((b * g.in_ch + c) * g.height + iy) * g.width + ix];
              }
          dw[((o * g.in_ch + c) * k + ky) * k + kx] += acc;
        }
}

namespace {

// rows x cols -> cols x rows
template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  std::vector<T> out(rows * cols);
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::size_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kTile); ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  // Operands are repacked so the inner loop is always unit-stride: A as
  // [m, k]; B as [n, k] for narrow outputs (dot form), else as [k, n].
  std::vector<T> a_buf, b_buf;
  const T* am = a.data();
  if (trans_a) {
    a_buf = transposed(a.data(), k, m);
    am = a_buf.data();
  }
  const bool dot_form = n < 16;
  const T* bm = b.data();
  if (dot_form != trans_b) {
    b_buf = trans_b ? transposed(b.data(), n, k) : transposed(b.data(), k, n);
    bm = b_buf.data();
  }
  const long nm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (long i = 0; i < nm; ++i) {
    T* crow = c.data() + i * n;
    const T* arow = am + i * k;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    if (dot_form) {
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = bm + j * k;
        T acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = bm + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_reference(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                    std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
}

#define MDAIF_INSTANTIATE_KERNELS(T)                                                          \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                               \
  template void conv2d_forward_reference<T>(const ConvGeometry&, std::span<const T>,          \
                                            std::span<const T>, std::span<T>);                 \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,             \
                                         std::span<const T>, std::span<T>);                    \
  template void conv2d_backward_input_reference<T>(const ConvGeometry&, std::span<const T>,   \
                                                   std::span<const T>, std::span<T>);          \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,            \
                                          std::span<const T>, std::span<T>);                   \
  template void conv2d_backward_weight_reference<T>(const ConvGeometry&, std::span<const T>,  \
                                                    std::span<const T>, std::span<T>);         \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, std::span<const T>, \
                        std::span<const T>, std::span<T>, bool);                               \
  template void gemm_reference<T>(bool, bool, std::size_t, std::size_t, std::size_t,          \
                                  std::span<const T>, std::span<const T>, std::span<T>, bool);

MDAIF_INSTANTIATE_KERNELS(float)
MDAIF_INSTANTIATE_KERNELS(double)

}  // namespace mdaif::kernels
