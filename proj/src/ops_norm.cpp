#include <algorithm>
#include <cmath>

#include "mdaif/tensor.hpp"

namespace mdaif {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

struct Slices {
  std::size_t outer = 1, extent = 1, inner = 1;
  std::size_t at(std::size_t o, std::size_t e, std::size_t i) const {
    return (o * extent + e) * inner + i;
  }
};

Slices slices_of(const Shape& shape, std::size_t axis) {
  Slices s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const Slices s = slices_of(x.shape(), detail::normalize_axis(axis, x.rank()));
  const auto& xs = x.vec();
  std::vector<T> out(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mx = xs[s.at(o, 0, i)];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xs[s.at(o, e, i)]);
      T total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xs[s.at(o, e, i)] - mx);
        out[s.at(o, e, i)] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[s.at(o, e, i)] /= total;
    }
  NodePtr<T> xn = x.node();
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [xn, s](const TensorNode<T>& o) {
    auto gx = detail::grad_buffer(*xn);
    if (gx.empty()) return;
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t i = 0; i < s.inner; ++i) {
        T dot = 0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += o.grad[s.at(a, e, i)] * o.data[s.at(a, e, i)];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = s.at(a, e, i);
          gx[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, int axis, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const Slices s = slices_of(x.shape(), ax);
  if (gamma.numel() != s.extent || beta.numel() != s.extent) {
    throw DimensionError("layernorm affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match axis of " + shape_str(x.shape()));
  }
  const auto& xs = x.vec();
  const auto& gm = gamma.vec();
  const auto& bt = beta.vec();
  std::vector<T> out(xs.size()), xhat(xs.size()), inv_std(s.outer * s.inner);
  const T n = static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mu = 0;
      for (std::size_t e = 0; e < s.extent; ++e) mu += xs[s.at(o, e, i)];
      mu /= n;
      T var = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T d = xs[s.at(o, e, i)] - mu;
        var += d * d;
      }
      var /= n;
      const T r = T(1) / std::sqrt(var + eps);
      inv_std[o * s.inner + i] = r;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t k = s.at(o, e, i);
        xhat[k] = (xs[k] - mu) * r;
        out[k] = gm[e] * xhat[k] + bt[e];
      }
    }
  NodePtr<T> xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [xn, gn, bn, s, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorNode<T>& o) {
        auto gx = detail::grad_buffer(*xn);
        auto gg = detail::grad_buffer(*gn);
        auto gb = detail::grad_buffer(*bn);
        const T n = static_cast<T>(s.extent);
        for (std::size_t a = 0; a < s.outer; ++a)
          for (std::size_t i = 0; i < s.inner; ++i) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t k = s.at(a, e, i);
              const T g = o.grad[k];
              if (!gg.empty()) gg[e] += g * xhat[k];
              if (!gb.empty()) gb[e] += g;
              const T d = g * gn->data[e];
              mean_d += d;
              mean_dx += d * xhat[k];
            }
            if (gx.empty()) continue;
            mean_d /= n;
            mean_dx /= n;
            const T r = inv_std[a * s.inner + i];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t k = s.at(a, e, i);
              gx[k] += r * (o.grad[k] * gn->data[e] - mean_d - xhat[k] * mean_dx);
            }
          }
      });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    RunningStats<T>& stats, NormMode mode, T eps) {
  if (x.rank() < 2) throw DimensionError("batchnorm needs [B, C, ...], got " + shape_str(x.shape()));
  const std::size_t batch = x.size(0), channels = x.size(1);
  const std::size_t plane = x.numel() / (batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels || stats.mean.size() != channels ||
      stats.var.size() != channels) {
    throw DimensionError("batchnorm parameters do not match " + shape_str(x.shape()));
  }
  const std::size_t count = batch * plane;
  if (mode == NormMode::train && count < 2) {
    throw DegenerateBatchError("batchnorm in train mode needs at least 2 values per channel, got " +
                               std::to_string(count) + " for " + shape_str(x.shape()));
  }
  const auto& xs = x.vec();
  std::vector<T> out(xs.size()), xhat(xs.size()), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    T mu, var;
    if (mode == NormMode::train) {
      mu = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) mu += xs[(b * channels + c) * plane + p];
      mu /= static_cast<T>(count);
      var = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const T d = xs[(b * channels + c) * plane + p] - mu;
          var += d * d;
        }
      var /= static_cast<T>(count);
      const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
      stats.mean[c] = (T(1) - stats.momentum) * stats.mean[c] + stats.momentum * mu;
      stats.var[c] = (T(1) - stats.momentum) * stats.var[c] + stats.momentum * unbiased;
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    const T r = T(1) / std::sqrt(var + eps);
    inv_std[c] = r;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = (b * channels + c) * plane + p;
        xhat[k] = (xs[k] - mu) * r;
        out[k] = gamma.vec()[c] * xhat[k] + beta.vec()[c];
      }
  }
  NodePtr<T> xn = x.node(), gn = gamma.node(), bn = beta.node();
  const bool train = mode == NormMode::train;
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [xn, gn, bn, batch, channels, plane, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const TensorNode<T>& o) {
        auto gx = detail::grad_buffer(*xn);
        auto gg = detail::grad_buffer(*gn);
        auto gb = detail::grad_buffer(*bn);
        const T n = static_cast<T>(batch * plane);
        for (std::size_t c = 0; c < channels; ++c) {
          const T gam = gn->data[c];
          T mean_d = 0, mean_dx = 0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t k = (b * channels + c) * plane + p;
              const T g = o.grad[k];
              if (!gg.empty()) gg[c] += g * xhat[k];
              if (!gb.empty()) gb[c] += g;
              mean_d += g * gam;
              mean_dx += g * gam * xhat[k];
            }
          if (gx.empty()) continue;
          mean_d /= n;
          mean_dx /= n;
          const T r = inv_std[c];
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t k = (b * channels + c) * plane + p;
              const T d = o.grad[k] * gam;
              gx[k] += train ? r * (d - mean_d - xhat[k] * mean_dx) : r * d;
            }
        }
      });
}

#define MDAIF_INSTANTIATE_NORM(T)                                                           \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                     \
  template Tensor<T> layernorm<T>(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                  RunningStats<T>&, NormMode, T);

MDAIF_INSTANTIATE_NORM(float)
MDAIF_INSTANTIATE_NORM(double)

}  // namespace mdaif
