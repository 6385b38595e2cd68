#include "mdaif/nn.hpp"

#include <algorithm>
#include <cmath>

#include "mdaif/seed.hpp"

namespace mdaif::nn {

template <typename T>
void ParamStore<T>::check_new(const std::string& name) const {
  if (contains(name)) throw std::invalid_argument("parameter registered twice: " + name);
}

template <typename T>
std::mt19937_64 ParamStore<T>::rng_for(const std::string& name) const {
  return std::mt19937_64(splitmix64(init_seed_ ^ fnv1a(name)));
}

template <typename T>
Tensor<T> ParamStore<T>::create(const std::string& name, Shape shape, const Init& init) {
  check_new(name);
  std::vector<T> values(shape_numel(shape));
  switch (init.kind) {
    case Init::Kind::zeros: std::fill(values.begin(), values.end(), T(0)); break;
    case Init::Kind::ones: std::fill(values.begin(), values.end(), T(1)); break;
    case Init::Kind::uniform_fan_in: {
      auto rng = rng_for(name);
      const double bound = 1.0 / std::sqrt(static_cast<double>(init.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = static_cast<T>(dist(rng));
      break;
    }
  }
  Tensor<T> t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::adopt(const std::string& name, Tensor<T> values) {
  check_new(name);
  Tensor<T> t = values.detach();
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
std::shared_ptr<RunningStats<T>> ParamStore<T>::create_stats(const std::string& name,
                                                             std::size_t channels) {
  for (const auto& [n, s] : stats_)
    if (n == name) throw std::invalid_argument("running stats registered twice: " + name);
  auto s = std::make_shared<RunningStats<T>>(channels);
  stats_.emplace_back(name, s);
  return s;
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p.first == name; });
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  for (auto& p : params_)
    if (p.first == name) return p.second;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.first == name) return p.second;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.second.clear_grad();
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in_features,
                  std::size_t out_features, bool with_bias)
    : in(in_features), out(out_features) {
  weight = store.create(name + ".weight", {in, out}, Init::uniform(in));
  if (with_bias) bias = store.create(name + ".bias", {out}, Init::zeros());
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  if (x.size(-1) != in) {
    throw DimensionError("linear expects last dim " + std::to_string(in) + ", got " +
                         shape_str(x.shape()));
  }
  Tensor<T> y = matmul(x, weight);
  if (bias.defined()) y = broadcast(BinaryOp::add, y, bias, {-1});
  return y;
}

template <typename T>
Mlp<T>::Mlp(ParamStore<T>& store, const std::string& name, std::vector<std::size_t> dims) {
  if (dims.size() < 2) throw std::invalid_argument("mlp needs at least two dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1]);
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = gelu(h);
  }
  return h;
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t features) {
  gamma = store.create(name + ".gamma", {features}, Init::ones());
  beta = store.create(name + ".beta", {features}, Init::zeros());
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x, int axis) const {
  return layernorm(x, axis, gamma, beta);
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t ksize, std::size_t stride_, bool with_bias)
    : stride(stride_), pad(ksize / 2) {
  if (ksize != 1 && ksize != 3) throw std::invalid_argument("conv kernel size must be 1 or 3");
  weight = store.create(name + ".weight", {out, in, ksize, ksize}, Init::uniform(in * ksize * ksize));
  if (with_bias) bias = store.create(name + ".bias", {out}, Init::zeros());
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = conv2d(x, weight, stride, pad);
  if (bias.defined()) y = broadcast(BinaryOp::add, y, bias, {1});
  return y;
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  gamma = store.create(name + ".gamma", {channels}, Init::ones());
  beta = store.create(name + ".beta", {channels}, Init::zeros());
  stats = store.create_stats(name + ".running", channels);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, NormMode mode) const {
  return batchnorm(x, gamma, beta, *stats, mode);
}

void AttentionConfig::validate() const {
  if (head_count == 0 || model_dim % head_count != 0) {
    throw std::invalid_argument("model dim " + std::to_string(model_dim) +
                                " not divisible by head count " + std::to_string(head_count));
  }
}

template <typename T>
Attention<T>::Attention(ParamStore<T>& store, const std::string& name, AttentionConfig c)
    : cfg(c) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  q = Linear<T>(store, name + ".q", d, d, cfg.bias);
  k = Linear<T>(store, name + ".k", d, d, cfg.bias);
  v = Linear<T>(store, name + ".v", d, d, cfg.bias);
  if (cfg.out_proj) o = Linear<T>(store, name + ".o", d, d, cfg.bias);
}

template <typename T>
Tensor<T> Attention<T>::operator()(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                                   Tensor<T>* weights) const {
  const std::size_t c = cfg.model_dim;
  if (q_src.size(-1) != c || kv_src.size(-1) != c) {
    throw DimensionError("attention channel mismatch: " + shape_str(q_src.shape()) + " vs " +
                         shape_str(kv_src.shape()) + " for width " + std::to_string(c));
  }
  const bool batched = q_src.rank() == 3;
  const std::size_t b = batched ? q_src.size(0) : 1;
  const std::size_t lq = q_src.size(-2), lk = kv_src.size(-2);
  const std::size_t h = cfg.head_count, dk = cfg.key_dim();

  // [B, L, C] -> [B*h, L, dk]
  auto split_heads = [&](const Tensor<T>& t, std::size_t len) {
    if (h == 1) return reshape(t, {b, len, dk});
    return reshape(transpose(reshape(t, {b, len, h, dk}), {0, 2, 1, 3}), {b * h, len, dk});
  };
  // 1/sqrt(dk) is applied to the queries, the smaller operand.
  Tensor<T> qh = scale(split_heads(q(q_src), lq), T(1) / std::sqrt(static_cast<T>(dk)));
  Tensor<T> kh = split_heads(k(kv_src), lk);
  Tensor<T> vh = split_heads(v(kv_src), lk);
  Tensor<T> scores = bmm(qh, transpose(kh, {0, 2, 1}));
  Tensor<T> attn = softmax(scores, -1);
  if (weights) *weights = attn;
  Tensor<T> ctx = bmm(attn, vh);
  if (h != 1) ctx = transpose(reshape(ctx, {b, h, lq, dk}), {0, 2, 1, 3});
  ctx = reshape(ctx, batched ? Shape{b, lq, c} : Shape{lq, c});
  return cfg.out_proj ? o(ctx) : ctx;
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParamStore<T>& store, const std::string& name,
                                      AttentionConfig cfg) {
  const std::size_t d = cfg.model_dim;
  ln1 = LayerNorm<T>(store, name + ".ln1", d);
  attn = Attention<T>(store, name + ".attn", cfg);
  ln2 = LayerNorm<T>(store, name + ".ln2", d);
  mlp = Mlp<T>(store, name + ".mlp", {d, kHiddenRatio * d, d});
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> n1 = ln1(x);
  Tensor<T> h = add(x, attn(n1, n1));
  return add(h, mlp(ln2(h)));
}

std::size_t linear_param_count(std::size_t in, std::size_t out, bool bias) {
  return in * out + (bias ? out : 0);
}

std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t k, bool bias) {
  return out * in * k * k + (bias ? out : 0);
}

std::size_t attention_param_count(const AttentionConfig& cfg) {
  const std::size_t per = linear_param_count(cfg.model_dim, cfg.model_dim, cfg.bias);
  return per * (cfg.out_proj ? 4 : 3);
}

std::size_t transformer_block_param_count(const AttentionConfig& cfg) {
  const std::size_t d = cfg.model_dim;
  const std::size_t hidden = TransformerBlock<double>::kHiddenRatio * d;
  return 2 * (2 * d) + attention_param_count(cfg) + linear_param_count(d, hidden) +
         linear_param_count(hidden, d);
}

#define MDAIF_INSTANTIATE_NN(T)        \
  template class ParamStore<T>;        \
  template class Linear<T>;            \
  template class Mlp<T>;               \
  template class LayerNorm<T>;         \
  template class Conv2d<T>;            \
  template class BatchNorm2d<T>;       \
  template class Attention<T>;         \
  template class TransformerBlock<T>;

MDAIF_INSTANTIATE_NN(float)
MDAIF_INSTANTIATE_NN(double)

}  // namespace mdaif::nn
