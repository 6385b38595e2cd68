#include <algorithm>
#include <numeric>

#include "mdaif/tensor.hpp"

namespace mdaif {

namespace {
template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(std::move(shape), x.vec(), {&x}, [xn](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<std::size_t> perm) {
  const std::size_t rank = x.rank();
  {
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(rank);
    std::iota(iota.begin(), iota.end(), 0);
    if (sorted != iota) throw DimensionError("invalid permutation for " + shape_str(x.shape()));
  }
  const Shape& in = x.shape();
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = in[perm[d]];
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t d = rank - 1; d-- > 0;) in_stride[d] = in_stride[d + 1] * in[d + 1];
  // src[i] = flat input index of flat output element i
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      src[i] = off;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        off += in_stride[perm[d]];
        if (idx[d] < out_shape[d]) break;
        off -= in_stride[perm[d]] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  const auto& xs = x.vec();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[src[i]];
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [xn, src = std::move(src)](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t rank = xs[0].rank();
  const std::size_t ax = detail::normalize_axis(axis, rank);
  Shape out_shape = xs[0].shape();
  out_shape[ax] = 0;
  for (const auto& t : xs) {
    bool ok = t.rank() == rank;
    for (std::size_t d = 0; ok && d < rank; ++d)
      if (d != ax && t.shape()[d] != xs[0].shape()[d]) ok = false;
    if (!ok) {
      throw DimensionError("concat shape mismatch: " + shape_str(xs[0].shape()) + " vs " +
                           shape_str(t.shape()));
    }
    out_shape[ax] += t.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
  for (std::size_t d = ax + 1; d < rank; ++d) inner *= out_shape[d];
  const std::size_t out_row = out_shape[ax] * inner;
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t row = t.shape()[ax] * inner;
    const auto& ts = t.vec();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(ts.begin() + o * row, row, out.begin() + o * out_row + off);
    off += row;
  }
  std::vector<NodePtr<T>> nodes;
  for (const auto& t : xs) nodes.push_back(t.node());
  return detail::make_result<T>(std::move(out_shape), std::move(out), xs,
                                [nodes, offsets, outer, out_row](const TensorNode<T>& o) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto g = detail::grad_buffer(*nodes[k]);
      if (g.empty()) continue;
      const std::size_t row = g.size() / outer;
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t i = 0; i < row; ++i) g[a * row + i] += o.grad[a * out_row + offsets[k] + i];
    }
  });
}

template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t pad) {
  if (x.rank() < 2) throw DimensionError("pad_reflect needs rank >= 2");
  const std::size_t h = x.size(-2), w = x.size(-1);
  if (pad >= h || pad >= w) {
    throw DimensionError("reflect pad " + std::to_string(pad) + " too large for " +
                         shape_str(x.shape()));
  }
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  auto reflect = [](long i, long n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  std::vector<std::size_t> src(planes * ph * pw);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx) {
        const long sy = reflect(static_cast<long>(y) - static_cast<long>(pad), static_cast<long>(h));
        const long sx = reflect(static_cast<long>(xx) - static_cast<long>(pad), static_cast<long>(w));
        src[(p * ph + y) * pw + xx] = (p * h + sy) * w + sx;
      }
  const auto& xs = x.vec();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xs[src[i]];
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ph;
  out_shape[out_shape.size() - 1] = pw;
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [xn, src = std::move(src)](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("upsample needs rank >= 2");
  const std::size_t h = x.size(-2), w = x.size(-1);
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto& xs = x.vec();
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] = xs[(p * h + y / 2) * w + xx / 2];
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [xn, planes, h, w](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    if (gx.empty()) return;
    const std::size_t oh = 2 * h, ow = 2 * w;
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          gx[(p * h + y / 2) * w + xx / 2] += o.grad[(p * oh + y) * ow + xx];
  });
}

#define MDAIF_INSTANTIATE_LAYOUT(T)                                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                            \
  template Tensor<T> transpose<T>(const Tensor<T>&, std::vector<std::size_t>);       \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                  \
  template Tensor<T> pad_reflect<T>(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);

MDAIF_INSTANTIATE_LAYOUT(float)
MDAIF_INSTANTIATE_LAYOUT(double)

}  // namespace mdaif
