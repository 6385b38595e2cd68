#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mdaif/tensor.hpp"

namespace mdaif::nn {

struct Init {
  enum class Kind { uniform_fan_in, zeros, ones } kind = Kind::zeros;
  std::size_t fan_in = 1;

  static Init uniform(std::size_t fan_in) { return {Kind::uniform_fan_in, fan_in}; }
  static Init zeros() { return {Kind::zeros, 1}; }
  static Init ones() { return {Kind::ones, 1}; }
};

// Named trainable tensors in registration order. Every parameter draws its
// initial values from its own generator, seeded by (init_seed, name), so
// initialization does not depend on construction order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  Tensor<T> create(const std::string& name, Shape shape, const Init& init);
  // Registers a tensor with caller-provided initial values.
  Tensor<T> adopt(const std::string& name, Tensor<T> values);
  std::shared_ptr<RunningStats<T>> create_stats(const std::string& name, std::size_t channels);

  bool contains(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<RunningStats<T>>>>& stats() const {
    return stats_;
  }

  std::size_t parameter_count() const;
  std::uint64_t init_seed() const { return init_seed_; }
  std::mt19937_64 rng_for(const std::string& name) const;
  void zero_grad();

 private:
  void check_new(const std::string& name) const;

  std::uint64_t init_seed_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<RunningStats<T>>>> stats_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true);
  // x: [..., in] -> [..., out]
  Tensor<T> operator()(const Tensor<T>& x) const;

  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined when bias-free
  std::size_t in = 0, out = 0;
};

// Linear layers with GELU between them, none after the last.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::vector<std::size_t> dims);
  Tensor<T> operator()(const Tensor<T>& x) const;

  std::vector<Linear<T>> layers;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t features);
  Tensor<T> operator()(const Tensor<T>& x, int axis = -1) const;

  Tensor<T> gamma, beta;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t ksize, std::size_t stride = 1, bool bias = true);
  // "same" padding for odd kernels at stride 1.
  Tensor<T> operator()(const Tensor<T>& x) const;

  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1, pad = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) const;

  Tensor<T> gamma, beta;
  std::shared_ptr<RunningStats<T>> stats;
};

struct AttentionConfig {
  std::size_t model_dim = 16;
  std::size_t head_count = 2;
  bool bias = true;
  bool out_proj = true;

  std::size_t key_dim() const { return model_dim / head_count; }
  void validate() const;
};

// Multi-head scaled dot-product attention. Queries come from `q_src`, keys
// and values from `kv_src`; both are [L, C] or [B, L, C].
template <typename T>
class Attention {
 public:
  Attention() = default;
  Attention(ParamStore<T>& store, const std::string& name, AttentionConfig cfg);
  Tensor<T> operator()(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                       Tensor<T>* weights = nullptr) const;

  AttentionConfig cfg;
  Linear<T> q, k, v, o;
};

// Pre-norm residual block: x + attn(LN(x)), then x + mlp(LN(x)).
template <typename T>
class TransformerBlock {
 public:
  static constexpr std::size_t kHiddenRatio = 4;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& name, AttentionConfig cfg);
  Tensor<T> operator()(const Tensor<T>& x) const;

  LayerNorm<T> ln1, ln2;
  Attention<T> attn;
  Mlp<T> mlp;
};

// Closed-form parameter counts, used to cross-check registration.
std::size_t linear_param_count(std::size_t in, std::size_t out, bool bias = true);
std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t k, bool bias = true);
std::size_t attention_param_count(const AttentionConfig& cfg);
std::size_t transformer_block_param_count(const AttentionConfig& cfg);

}  // namespace mdaif::nn
