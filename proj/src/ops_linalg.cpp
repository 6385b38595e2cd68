#include "mdaif/kernels.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif {

namespace {
template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.size(-1) != b.size(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.size(0), n = b.size(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  kernels::gemm<T>(false, false, m, n, k, a.data(), b.data(), out, false);
  NodePtr<T> an = a.node(), bn = b.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&a, &b},
                                [an, bn, m, n, k](const TensorNode<T>& o) {
    auto ga = detail::grad_buffer(*an);
    auto gb = detail::grad_buffer(*bn);
    std::span<const T> g = o.grad;
    if (!ga.empty()) kernels::gemm<T>(false, true, m, k, n, g, bn->data, ga, true);
    if (!gb.empty()) kernels::gemm<T>(true, false, k, n, m, an->data, g, gb, true);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.size(0) != b.size(0) || a.size(2) != b.size(1)) {
    throw DimensionError("bmm shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2), n = b.size(2);
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm<T>(false, false, m, n, k, a.data().subspan(i * m * k, m * k),
                     b.data().subspan(i * k * n, k * n),
                     std::span<T>(out).subspan(i * m * n, m * n), false);
  }
  NodePtr<T> an = a.node(), bn = b.node();
  return detail::make_result<T>(Shape{batch, m, n}, std::move(out), {&a, &b},
                                [an, bn, batch, m, n, k](const TensorNode<T>& o) {
    auto ga = detail::grad_buffer(*an);
    auto gb = detail::grad_buffer(*bn);
    std::span<const T> g = o.grad;
    std::span<const T> ad = an->data, bd = bn->data;
    for (std::size_t i = 0; i < batch; ++i) {
      auto gi = g.subspan(i * m * n, m * n);
      if (!ga.empty())
        kernels::gemm<T>(false, true, m, k, n, gi, bd.subspan(i * k * n, k * n),
                         ga.subspan(i * m * k, m * k), true);
      if (!gb.empty())
        kernels::gemm<T>(true, false, k, n, m, ad.subspan(i * m * k, m * k), gi,
                         gb.subspan(i * k * n, k * n), true);
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || kernel.rank() != 4 || kernel.size(1) != x.size(1) ||
      kernel.size(2) != kernel.size(3)) {
    throw DimensionError("conv2d shape mismatch: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  kernels::ConvGeometry g{x.size(0), x.size(1), x.size(2), x.size(3),
                          kernel.size(0), kernel.size(2), stride, pad};
  if (g.height + 2 * pad < g.ksize || g.width + 2 * pad < g.ksize) {
    throw DimensionError("conv2d kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(g.batch * g.out_ch * g.out_h() * g.out_w());
  kernels::conv2d_forward<T>(g, x.data(), kernel.data(), out);
  NodePtr<T> xn = x.node(), kn = kernel.node();
  return detail::make_result<T>(Shape{g.batch, g.out_ch, g.out_h(), g.out_w()}, std::move(out),
                                {&x, &kernel}, [xn, kn, g](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    auto gk = detail::grad_buffer(*kn);
    if (!gx.empty()) kernels::conv2d_backward_input<T>(g, o.grad, kn->data, gx);
    if (!gk.empty()) kernels::conv2d_backward_weight<T>(g, o.grad, xn->data, gk);
  });
}

#define MDAIF_INSTANTIATE_LINALG(T)                                                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);

MDAIF_INSTANTIATE_LINALG(float)
MDAIF_INSTANTIATE_LINALG(double)

}  // namespace mdaif
