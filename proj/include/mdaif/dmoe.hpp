#pragma once

#include <string>
#include <vector>

#include "mdaif/nn.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif::dmoe {

template <typename T>
struct Expert {
  nn::Conv2d<T> spatial;  // 3x3
  nn::Conv2d<T> pointwise;  // 1x1
};

// Prior-routed dense mixture of N convolutional experts over [B, C, H, W].
template <typename T>
class Dmoe {
 public:
  Dmoe() = default;
  // Without prior guidance no cross-attention is registered and the router
  // reads flatten(F) directly.
  Dmoe(nn::ParamStore<T>& store, const std::string& name, std::size_t channels,
       std::size_t experts, bool prior_guided);

  // [B, C, H, W] x [B, S, C] -> softmax(QK^T / sqrt(C)) V + tokens: [B, HW, C]
  Tensor<T> cross_attend(const Tensor<T>& features, const Tensor<T>& prior,
                         Tensor<T>* attention = nullptr) const;
  // [B, HW, C] -> routing weights [B, N]
  Tensor<T> route_logits(const Tensor<T>& tokens) const;
  Tensor<T> route(const Tensor<T>& tokens) const { return softmax(route_logits(tokens), -1); }
  std::vector<Tensor<T>> experts_forward(const Tensor<T>& features) const;
  // sum_i w[:, i] * E_i, before normalization.
  Tensor<T> combine(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w) const;
  // GELU(BN(combine(E, w)))
  Tensor<T> mix(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w, NormMode mode) const;

  nn::Attention<T> cross;
  nn::Linear<T> reduce;  // C -> C/4
  nn::LayerNorm<T> reduce_norm, token_norm;
  nn::Linear<T> gate;  // C + C/4 -> N
  std::vector<Expert<T>> experts;
  nn::BatchNorm2d<T> norm;
  std::size_t channels = 0;
  bool prior_guided = true;
};

std::size_t dmoe_param_count(std::size_t channels, std::size_t experts, bool prior_guided);

// [B, C, H, W] -> [B, HW, C] and back.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width);

struct RoutingReport {
  std::vector<std::vector<double>> weights;  // per image
  std::vector<double> usage;                 // mean over images
  double entropy = 0;                        // nats, of `usage`
};

RoutingReport routing_report(const std::vector<std::vector<double>>& weights);
// "image,w_0,...,w_{N-1}" rows followed by "mean,..." and "entropy_nats,<H>".
std::string routing_csv(const std::vector<std::string>& names, const RoutingReport& report);

}  // namespace mdaif::dmoe
