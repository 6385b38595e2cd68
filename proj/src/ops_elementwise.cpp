#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdaif/tensor.hpp"

namespace mdaif {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.numel());
  const auto& x = a.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  NodePtr<T> an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {&a},
                                [an, deriv](const TensorNode<T>& o) {
                                  auto ga = detail::grad_buffer(*an);
                                  if (ga.empty()) return;
                                  for (std::size_t i = 0; i < ga.size(); ++i)
                                    ga[i] += o.grad[i] * deriv(an->data[i], o.data[i]);
                                });
}

}  // namespace

template <typename T>
Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool scalar_b = b.numel() == 1 && a.numel() != 1;
  if (!scalar_b && a.shape() != b.shape()) {
    throw DimensionError("elementwise shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto& x = a.vec();
  const auto& y = b.vec();
  const std::size_t n = x.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T yv = scalar_b ? y[0] : y[i];
    switch (op) {
      case BinaryOp::add: out[i] = x[i] + yv; break;
      case BinaryOp::sub: out[i] = x[i] - yv; break;
      case BinaryOp::mul: out[i] = x[i] * yv; break;
      case BinaryOp::max: out[i] = x[i] >= yv ? x[i] : yv; break;
    }
  }
  NodePtr<T> an = a.node(), bn = b.node();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b},
                                [an, bn, op, scalar_b](const TensorNode<T>& o) {
    auto ga = detail::grad_buffer(*an);
    auto gb = detail::grad_buffer(*bn);
    const auto& x = an->data;
    const auto& y = bn->data;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const std::size_t j = scalar_b ? 0 : i;
      const T g = o.grad[i];
      T da = 0, db = 0;
      switch (op) {
        case BinaryOp::add: da = g; db = g; break;
        case BinaryOp::sub: da = g; db = -g; break;
        case BinaryOp::mul: da = g * y[j]; db = g * x[i]; break;
        case BinaryOp::max:
          if (x[i] >= y[j]) da = g; else db = g;
          break;
      }
      if (!ga.empty()) ga[i] += da;
      if (!gb.empty()) gb[j] += db;
    }
  });
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::mul, a, b); }
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::max, a, b); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::abs(x); },
               [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename T>
Tensor<T> broadcast(BinaryOp op, const Tensor<T>& x, const Tensor<T>& v, std::vector<int> axes) {
  if (op != BinaryOp::add && op != BinaryOp::mul) {
    throw DimensionError("broadcast supports add and mul only");
  }
  const std::size_t rank = x.rank();
  Shape expect;
  std::vector<std::size_t> used;
  for (int a : axes) {
    const std::size_t ax = detail::normalize_axis(a, rank);
    if (!used.empty() && ax <= used.back()) throw DimensionError("broadcast axes must increase");
    used.push_back(ax);
    expect.push_back(x.shape()[ax]);
  }
  if (expect != v.shape()) {
    throw DimensionError("broadcast operand " + shape_str(v.shape()) + " does not match axes of " +
                         shape_str(x.shape()));
  }
  // Stride into v for every axis of x (zero on broadcast axes).
  std::vector<std::size_t> vstride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = used.size(); i-- > 0;) {
      vstride[used[i]] = s;
      s *= expect[i];
    }
  }
  const auto& shape = x.shape();
  const std::size_t n = x.numel();
  std::vector<std::size_t> vindex(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t vi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vindex[i] = vi;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        vi += vstride[d];
        if (idx[d] < shape[d]) break;
        vi -= vstride[d] * shape[d];
        idx[d] = 0;
      }
    }
  }
  const auto& xs = x.vec();
  const auto& vs = v.vec();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = op == BinaryOp::add ? xs[i] + vs[vindex[i]] : xs[i] * vs[vindex[i]];
  NodePtr<T> xn = x.node(), vn = v.node();
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &v},
                                [xn, vn, op, vindex = std::move(vindex)](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    auto gv = detail::grad_buffer(*vn);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T g = o.grad[i];
      if (op == BinaryOp::add) {
        if (!gx.empty()) gx[i] += g;
        if (!gv.empty()) gv[vindex[i]] += g;
      } else {
        if (!gx.empty()) gx[i] += g * vn->data[vindex[i]];
        if (!gv.empty()) gv[vindex[i]] += g * xn->data[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != ax) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto& xs = x.vec();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xs[(o * s.extent + e) * s.inner + i];
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [xn, s](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    if (gx.empty()) return;
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(a * s.extent + e) * s.inner + i] += o.grad[a * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  return scale(sum(x, axis), T(1) / static_cast<T>(x.shape()[ax]));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.vec()) acc += v;
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(Shape{1}, std::vector<T>{acc}, {&x},
                                [xn](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    for (auto& g : gx) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> avgpool_global(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("avgpool_global needs [..., S, C], got " + shape_str(x.shape()));
  return mean(x, -2);
}

#define MDAIF_INSTANTIATE_ELEMENTWISE(T)                                                 \
  template Tensor<T> binary<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> maximum<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> abs<T>(const Tensor<T>&);                                           \
  template Tensor<T> square<T>(const Tensor<T>&);                                        \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                       \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                          \
  template Tensor<T> broadcast<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&, std::vector<int>); \
  template Tensor<T> sum<T>(const Tensor<T>&, int);                                      \
  template Tensor<T> mean<T>(const Tensor<T>&, int);                                     \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                       \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                                      \
  template Tensor<T> avgpool_global<T>(const Tensor<T>&);

MDAIF_INSTANTIATE_ELEMENTWISE(float)
MDAIF_INSTANTIATE_ELEMENTWISE(double)

}  // namespace mdaif
