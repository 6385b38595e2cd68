#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdaif/nn.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif::dcam {

// K x C bank: seeded Gaussian rows, modified Gram-Schmidt, then one global
// division by the largest |entry| so every entry lies in [-1, 1].
Tensor<double> init_prototypes(std::size_t k, std::size_t c, std::uint64_t seed);

// Prototype scores, channel gates and gated-residual modulation of a
// [B, C, H, W] feature map.
template <typename T>
class Dcam {
 public:
  Dcam() = default;
  Dcam(nn::ParamStore<T>& store, const std::string& name, std::size_t channels,
       std::size_t prototypes, std::uint64_t proto_seed);

  // prior: [B, S, C] -> sigmoid(LN_K(Mlp[C, K](mean_S(prior)))): [B, K]
  Tensor<T> scores(const Tensor<T>& prior) const;
  // Pre-sigmoid combination s @ W_proto: [B, C]
  Tensor<T> combination(const Tensor<T>& s) const;
  // sigmoid(s @ W_proto): [B, C]
  Tensor<T> channel_weights(const Tensor<T>& s) const;
  // LN_C(F) * gate + F, LN over the channel axis at each site.
  Tensor<T> modulate(const Tensor<T>& features, const Tensor<T>& s) const;

  nn::Mlp<T> phi;
  nn::LayerNorm<T> score_norm, feature_norm;
  Tensor<T> prototypes;  // [K, C]
  std::size_t channels = 0, k = 0;
};

std::size_t dcam_param_count(std::size_t channels, std::size_t prototypes);

struct Decomposition {
  std::vector<double> scores;       // s_K
  std::vector<double> proportions;  // s_K / sum(s_K)
  std::vector<double> combination;  // D_s = s_K @ W_proto
  // Per prototype, channel indices sorted by descending / ascending entry.
  std::vector<std::vector<std::size_t>> top_activated, top_suppressed;
};

Decomposition decompose(const std::vector<double>& scores, const Tensor<double>& prototypes,
                        std::size_t top_n = 10);

// "image,s_0,...,s_{K-1}" rows.
std::string scores_csv(const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& scores);
// "prototype,rank,activated_channel,activated_value,suppressed_channel,suppressed_value".
std::string rankings_csv(const Tensor<double>& prototypes, const Decomposition& d);

}  // namespace mdaif::dcam
