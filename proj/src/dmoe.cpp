#include "mdaif/dmoe.hpp"

#include <cmath>
#include <sstream>

namespace mdaif::dmoe {

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("expected [B, C, H, W], got " + shape_str(x.shape()));
  const std::size_t b = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  return transpose(reshape(x, {b, c, hw}), {0, 2, 1});
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width) {
  const std::size_t b = tokens.size(0), c = tokens.size(2);
  if (tokens.size(1) != height * width) throw DimensionError("token count does not match the map size");
  return reshape(transpose(tokens, {0, 2, 1}), {b, c, height, width});
}

template <typename T>
Dmoe<T>::Dmoe(nn::ParamStore<T>& store, const std::string& name, std::size_t channels_,
              std::size_t n, bool prior_guided_)
    : channels(channels_), prior_guided(prior_guided_) {
  if (n == 0) throw std::invalid_argument("expert count must be positive");
  if (channels % 4 != 0) throw DimensionError("router reduction needs channels divisible by 4");
  if (prior_guided) cross = nn::Attention<T>(store, name + ".cross", {channels, 1, false, false});
  reduce = nn::Linear<T>(store, name + ".reduce", channels, channels / 4);
  reduce_norm = nn::LayerNorm<T>(store, name + ".reduce_norm", channels / 4);
  token_norm = nn::LayerNorm<T>(store, name + ".token_norm", channels);
  gate = nn::Linear<T>(store, name + ".gate", channels + channels / 4, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string e = name + ".expert" + std::to_string(i);
    experts.push_back({nn::Conv2d<T>(store, e + ".spatial", channels, channels, 3),
                       nn::Conv2d<T>(store, e + ".pointwise", channels, channels, 1)});
  }
  norm = nn::BatchNorm2d<T>(store, name + ".norm", channels);
}

template <typename T>
Tensor<T> Dmoe<T>::cross_attend(const Tensor<T>& features, const Tensor<T>& prior,
                                Tensor<T>* attention) const {
  const Tensor<T> tokens = to_tokens(features);
  if (!prior_guided) return tokens;
  if (prior.rank() != 3 || prior.size(0) != features.size(0))
    throw DimensionError("prior " + shape_str(prior.shape()) + " does not match batch of " +
                         shape_str(features.shape()));
  return add(cross(tokens, prior, attention), tokens);
}

template <typename T>
Tensor<T> Dmoe<T>::route_logits(const Tensor<T>& tokens) const {
  const Tensor<T> branch_reduced = mean(gelu(reduce_norm(reduce(tokens))), 1);
  const Tensor<T> branch_full = mean(gelu(token_norm(tokens)), 1);
  return gate(concat<T>({branch_reduced, branch_full}, -1));
}

template <typename T>
std::vector<Tensor<T>> Dmoe<T>::experts_forward(const Tensor<T>& features) const {
  std::vector<Tensor<T>> out;
  out.reserve(experts.size());
  for (const auto& e : experts) out.push_back(e.pointwise(e.spatial(features)));
  return out;
}

template <typename T>
Tensor<T> Dmoe<T>::combine(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w) const {
  if (outputs.size() != experts.size() || w.rank() != 2 || w.size(1) != outputs.size())
    throw DimensionError("routing weights do not match the expert count");
  const Shape s = outputs.front().shape();
  std::vector<Tensor<T>> lifted;
  lifted.reserve(outputs.size());
  for (const auto& e : outputs) {
    if (e.shape() != s) throw DimensionError("expert outputs must share a shape");
    lifted.push_back(reshape(e, {s[0], 1, s[1], s[2], s[3]}));
  }
  // [B, N, C, H, W] weighted by w[B, N], reduced over N in expert order.
  return sum(broadcast(BinaryOp::mul, concat(lifted, 1), w, {0, 1}), 1);
}

template <typename T>
Tensor<T> Dmoe<T>::mix(const std::vector<Tensor<T>>& outputs, const Tensor<T>& w, NormMode mode) const {
  return gelu(norm(combine(outputs, w), mode));
}

std::size_t dmoe_param_count(std::size_t c, std::size_t n, bool prior_guided) {
  std::size_t total = prior_guided ? nn::attention_param_count({c, 1, false, false}) : 0;
  total += nn::linear_param_count(c, c / 4) + 2 * (c / 4) + 2 * c;
  total += nn::linear_param_count(c + c / 4, n);
  total += n * (nn::conv_param_count(c, c, 3) + nn::conv_param_count(c, c, 1));
  total += 2 * c;
  return total;
}

RoutingReport routing_report(const std::vector<std::vector<double>>& weights) {
  if (weights.empty()) throw std::invalid_argument("routing report needs at least one image");
  RoutingReport r;
  r.weights = weights;
  const std::size_t n = weights.front().size();
  r.usage.assign(n, 0.0);
  for (const auto& w : weights) {
    if (w.size() != n) throw DimensionError("routing rows have unequal lengths");
    for (std::size_t i = 0; i < n; ++i) r.usage[i] += w[i];
  }
  for (double& u : r.usage) u /= static_cast<double>(weights.size());
  for (double p : r.usage)
    if (p > 0) r.entropy -= p * std::log(p);
  return r;
}

std::string routing_csv(const std::vector<std::string>& names, const RoutingReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "image";
  for (std::size_t i = 0; i < report.usage.size(); ++i) out << ",w_" << i;
  out << "\n";
  for (std::size_t r = 0; r < report.weights.size(); ++r) {
    out << (r < names.size() ? names[r] : std::to_string(r));
    for (double v : report.weights[r]) out << "," << v;
    out << "\n";
  }
  out << "mean";
  for (double v : report.usage) out << "," << v;
  out << "\nentropy_nats," << report.entropy << "\n";
  return out.str();
}

template class Dmoe<float>;
template class Dmoe<double>;
template Tensor<float> to_tokens<float>(const Tensor<float>&);
template Tensor<double> to_tokens<double>(const Tensor<double>&);
template Tensor<float> from_tokens<float>(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> from_tokens<double>(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace mdaif::dmoe
