#pragma once

// Raw compute kernels. Each hot kernel has an OpenMP-parallel version used by
// the tensor ops and a plain serial reference kept for testing and the
// benchmark. Parallel versions assign every output element to exactly one
// thread with a fixed reduction order, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace mdaif::kernels {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, ksize, stride, pad;

  std::size_t out_h() const { return (height + 2 * pad - ksize) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - ksize) / stride + 1; }
};

// y[b,o,oy,ox] = sum_{c,ky,kx} w[o,c,ky,kx] * x[b,c,oy*s+ky-p,ox*s+kx-p]
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);
template <typename T>
void conv2d_forward_reference(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<T> y);

// dx += conv2d^T(dy, w)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const T> dy,
                                     std::span<const T> w, std::span<T> dx);

// dw += correlation of dy with x
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dy, std::span<const T> x,
                            std::span<T> dw);
template <typename T>
void conv2d_backward_weight_reference(const ConvGeometry& g, std::span<const T> dy,
                                      std::span<const T> x, std::span<T> dw);

// c[M,N] (+)= op(a) * op(b), op = optional transpose. Row-major, packed.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);
template <typename T>
void gemm_reference(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                    std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

}  // namespace mdaif::kernels
