#include "mdaif/fusenet.hpp"

#include <stdexcept>

namespace mdaif {

void FuseNetConfig::validate() const {
  if (height == 0 || width == 0 || height % kDownsample || width % kDownsample)
    throw DimensionError("image size must be a positive multiple of " + std::to_string(kDownsample));
  if (channels == 0 || channels % 8)
    throw DimensionError("channel width must be a positive multiple of 8");
  if (heads == 0 || (channels / 2) % heads) throw DimensionError("encoder width must divide into heads");
  if (prior_tokens < 2 || prior_width == 0) throw DimensionError("prior needs >= 2 tokens of positive width");
  if (prototypes == 0 || prototypes > channels) throw DimensionError("prototype count must lie in [1, C]");
  if (experts == 0) throw DimensionError("expert count must be positive");
}

template <typename T>
Encoder<T>::Encoder(nn::ParamStore<T>& store, const std::string& name, std::size_t in,
                    std::size_t width, std::size_t heads, std::size_t count) {
  embed1 = nn::Conv2d<T>(store, name + ".embed1", in, width, 3, 2);
  embed2 = nn::Conv2d<T>(store, name + ".embed2", width, width, 3, 2);
  for (std::size_t i = 0; i < count; ++i)
    blocks.emplace_back(store, name + ".block" + std::to_string(i), nn::AttentionConfig{width, heads, true, true});
  norm = nn::LayerNorm<T>(store, name + ".norm", width);
}

template <typename T>
Tensor<T> Encoder<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> f = embed2(gelu(embed1(x)));
  const std::size_t h = f.size(2), w = f.size(3);
  Tensor<T> tokens = dmoe::to_tokens(f);
  for (const auto& b : blocks) tokens = b(tokens);
  return dmoe::from_tokens(norm(tokens), h, w);
}

template <typename T>
FuseNet<T>::FuseNet(const FuseNetConfig& cfg) : cfg_(cfg), store_(cfg.init_seed) {
  cfg_.validate();
  const std::size_t c = cfg_.channels, half = c / 2, dw = cfg_.decoder_width();
  enc_vi_ = Encoder<T>(store_, "enc_vi", 3, half, cfg_.heads, cfg_.encoder_blocks);
  enc_ir_ = Encoder<T>(store_, "enc_ir", 1, half, cfg_.heads, cfg_.encoder_blocks);
  if (cfg_.uses_prior()) prior_net_ = prior::PriorNet<T>(store_, "prior", cfg_.prior_width, c, cfg_.prior_residual);
  if (cfg_.use_dcam) dcam_ = dcam::Dcam<T>(store_, "dcam", c, cfg_.prototypes, cfg_.init_seed);
  dmoe_ = dmoe::Dmoe<T>(store_, "dmoe", c, cfg_.experts, cfg_.use_dmoe);
  up1_ = nn::Conv2d<T>(store_, "dec.up1", c, dw, 3);
  up2_ = nn::Conv2d<T>(store_, "dec.up2", dw, dw, 3);
  head_ = nn::Conv2d<T>(store_, "dec.head", dw, 3, 3);
}

template <typename T>
Tensor<T> FuseNet<T>::encode(const Tensor<T>& vi, const Tensor<T>& ir, ForwardTrace<T>* trace) const {
  auto check = [&](const Tensor<T>& x, std::size_t ch, const char* what) {
    if (x.rank() != 4 || x.size(1) != ch || x.size(2) != cfg_.height || x.size(3) != cfg_.width)
      throw DimensionError(std::string(what) + " input " + shape_str(x.shape()) + " does not match [B, " +
                           std::to_string(ch) + ", " + std::to_string(cfg_.height) + ", " +
                           std::to_string(cfg_.width) + "]");
  };
  check(vi, 3, "visible");
  check(ir, 1, "infrared");
  if (vi.size(0) != ir.size(0)) throw DimensionError("visible and infrared batch sizes differ");
  const Tensor<T> f_vi = enc_vi_(vi), f_ir = enc_ir_(ir);
  Tensor<T> f_in = concat<T>({f_vi, f_ir}, 1);
  if (trace) {
    trace->f_vi = f_vi;
    trace->f_ir = f_ir;
    trace->f_in = f_in;
  }
  return f_in;
}

template <typename T>
Tensor<T> FuseNet<T>::forward(const Tensor<T>& vi, const Tensor<T>& ir, const Tensor<T>& raw_prior,
                              NormMode mode, ForwardTrace<T>* trace) const {
  const Tensor<T> f_in = encode(vi, ir, trace);
  Tensor<T> prior;
  if (cfg_.uses_prior()) {
    if (!raw_prior.defined() || raw_prior.rank() != 3 || raw_prior.size(0) != vi.size(0))
      throw DimensionError("prior must be [B, S, C_org] matching the image batch");
    prior = prior_net_(raw_prior);
  }
  Tensor<T> scores, f_dcam = f_in;
  if (cfg_.use_dcam) {
    scores = dcam_.scores(prior);
    f_dcam = dcam_.modulate(f_in, scores);
  }
  const Tensor<T> tokens = dmoe_.cross_attend(f_dcam, prior);
  const Tensor<T> w = dmoe_.route(tokens);
  const Tensor<T> f_dmoe = dmoe_.mix(dmoe_.experts_forward(f_dcam), w, mode);
  Tensor<T> fused = decode(f_dmoe);
  if (trace) {
    trace->prior = prior;
    trace->scores = scores;
    trace->f_dcam = f_dcam;
    trace->tokens = tokens;
    trace->weights = w;
    trace->f_dmoe = f_dmoe;
    trace->fused = fused;
  }
  return fused;
}

template <typename T>
Tensor<T> FuseNet<T>::decode(const Tensor<T>& features) const {
  Tensor<T> h = gelu(up1_(upsample_nearest2x(features)));
  h = gelu(up2_(upsample_nearest2x(h)));
  return sigmoid(head_(h));
}

std::size_t fusenet_param_count(const FuseNetConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, half = c / 2, dw = cfg.decoder_width();
  auto encoder = [&](std::size_t in) {
    return nn::conv_param_count(in, half, 3) + nn::conv_param_count(half, half, 3) +
           cfg.encoder_blocks * nn::transformer_block_param_count({half, cfg.heads, true, true}) + 2 * half;
  };
  std::size_t total = encoder(3) + encoder(1);
  if (cfg.uses_prior()) total += prior::prior_net_param_count(cfg.prior_width, c);
  if (cfg.use_dcam) total += dcam::dcam_param_count(c, cfg.prototypes);
  total += dmoe::dmoe_param_count(c, cfg.experts, cfg.use_dmoe);
  total += nn::conv_param_count(c, dw, 3) + nn::conv_param_count(dw, dw, 3) + nn::conv_param_count(dw, 3, 3);
  return total;
}

template struct Encoder<float>;
template struct Encoder<double>;
template class FuseNet<float>;
template class FuseNet<double>;

}  // namespace mdaif
