#pragma once

#include <cstdint>
#include <vector>

#include "mdaif/dcam.hpp"
#include "mdaif/dmoe.hpp"
#include "mdaif/nn.hpp"
#include "mdaif/prior.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif {

struct FuseNetConfig {
  std::size_t height = 64, width = 64;
  std::size_t channels = 16;       // C, split evenly between the two encoders
  std::size_t heads = 2;           // encoder attention heads
  std::size_t encoder_blocks = 4;
  std::size_t prior_tokens = 8;    // S
  std::size_t prior_width = 64;    // C_org
  std::size_t prototypes = 4;      // K
  std::size_t experts = 5;         // N
  bool use_dcam = true;
  bool use_dmoe = true;            // false: router reads features without cross-attention
  bool prior_residual = false;
  std::uint64_t init_seed = 0;

  static constexpr std::size_t kDownsample = 4;
  std::size_t feature_height() const { return height / kDownsample; }
  std::size_t feature_width() const { return width / kDownsample; }
  std::size_t decoder_width() const { return channels; }
  bool uses_prior() const { return use_dcam || use_dmoe; }
  void validate() const;
};

template <typename T>
struct ForwardTrace {
  Tensor<T> f_vi, f_ir, f_in;  // encoder outputs and their concatenation
  Tensor<T> prior;             // refined prior [B, S, C]
  Tensor<T> scores;            // s_K [B, K]
  Tensor<T> f_dcam;
  Tensor<T> tokens;            // router input [B, HW, C]
  Tensor<T> weights;           // w [B, N]
  Tensor<T> f_dmoe;
  Tensor<T> fused;
};

// Strided-conv patch embedding (/4), transformer blocks over the H/4 x W/4
// tokens, final layer norm.
template <typename T>
struct Encoder {
  Encoder() = default;
  Encoder(nn::ParamStore<T>& store, const std::string& name, std::size_t in_channels,
          std::size_t width, std::size_t heads, std::size_t blocks);
  Tensor<T> operator()(const Tensor<T>& x) const;

  nn::Conv2d<T> embed1, embed2;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> norm;
};

template <typename T>
class FuseNet {
 public:
  explicit FuseNet(const FuseNetConfig& cfg);
  FuseNet(const FuseNet&) = delete;
  FuseNet& operator=(const FuseNet&) = delete;

  // vi [B, 3, H, W], ir [B, 1, H, W] -> [B, C, H/4, W/4]
  Tensor<T> encode(const Tensor<T>& vi, const Tensor<T>& ir, ForwardTrace<T>* trace = nullptr) const;
  // raw_prior [B, S, C_org]; ignored (may be undefined) when no prior path is enabled.
  Tensor<T> forward(const Tensor<T>& vi, const Tensor<T>& ir, const Tensor<T>& raw_prior,
                    NormMode mode, ForwardTrace<T>* trace = nullptr) const;
  // [B, C, H/4, W/4] -> [B, 3, H, W] in (0, 1)
  Tensor<T> decode(const Tensor<T>& features) const;

  const FuseNetConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }
  const dcam::Dcam<T>* dcam() const { return cfg_.use_dcam ? &dcam_ : nullptr; }
  const dmoe::Dmoe<T>& dmoe() const { return dmoe_; }

 private:
  FuseNetConfig cfg_;
  nn::ParamStore<T> store_;
  Encoder<T> enc_vi_, enc_ir_;
  prior::PriorNet<T> prior_net_;
  dcam::Dcam<T> dcam_;
  dmoe::Dmoe<T> dmoe_;
  nn::Conv2d<T> up1_, up2_, head_;
};

std::size_t fusenet_param_count(const FuseNetConfig& cfg);

}  // namespace mdaif
