#include "mdaif/dcam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mdaif/seed.hpp"

namespace mdaif::dcam {

Tensor<double> init_prototypes(std::size_t k, std::size_t c, std::uint64_t seed) {
  if (k == 0 || c == 0) throw DimensionError("prototype bank must be non-empty");
  if (k > c) {
    throw DimensionError("cannot orthogonalize " + std::to_string(k) + " prototypes in " +
                         std::to_string(c) + " channels");
  }
  std::mt19937_64 rng(derive_seed(seed, "prototypes"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(k * c);
  for (std::size_t i = 0; i < k; ++i) {
    double* row = w.data() + i * c;
    for (;;) {
      for (std::size_t j = 0; j < c; ++j) row[j] = normal(rng);
      for (std::size_t p = 0; p < i; ++p) {
        const double* prev = w.data() + p * c;
        const double dot = std::inner_product(row, row + c, prev, 0.0);
        for (std::size_t j = 0; j < c; ++j) row[j] -= dot * prev[j];
      }
      const double norm = std::sqrt(std::inner_product(row, row + c, row, 0.0));
      if (norm > 1e-6) {
        for (std::size_t j = 0; j < c; ++j) row[j] /= norm;
        break;
      }
    }
  }
  double peak = 0;
  for (double v : w) peak = std::max(peak, std::abs(v));
  for (double& v : w) v /= peak;
  return Tensor<double>({k, c}, std::move(w));
}

template <typename T>
Dcam<T>::Dcam(nn::ParamStore<T>& store, const std::string& name, std::size_t channels_,
              std::size_t prototypes_, std::uint64_t proto_seed)
    : channels(channels_), k(prototypes_) {
  phi = nn::Mlp<T>(store, name + ".phi", {channels, k});
  score_norm = nn::LayerNorm<T>(store, name + ".score_norm", k);
  feature_norm = nn::LayerNorm<T>(store, name + ".feature_norm", channels);
  const Tensor<double> bank = init_prototypes(k, channels, proto_seed);
  std::vector<T> vals(bank.vec().begin(), bank.vec().end());
  prototypes = store.adopt(name + ".prototypes", Tensor<T>(bank.shape(), std::move(vals)));
}

template <typename T>
Tensor<T> Dcam<T>::scores(const Tensor<T>& prior) const {
  if (prior.size(-1) != channels)
    throw DimensionError("prior width " + std::to_string(prior.size(-1)) + " != " + std::to_string(channels));
  return sigmoid(score_norm(phi(avgpool_global(prior))));
}

template <typename T>
Tensor<T> Dcam<T>::combination(const Tensor<T>& s) const {
  return matmul(s, prototypes);
}

template <typename T>
Tensor<T> Dcam<T>::channel_weights(const Tensor<T>& s) const {
  return sigmoid(combination(s));
}

template <typename T>
Tensor<T> Dcam<T>::modulate(const Tensor<T>& features, const Tensor<T>& s) const {
  if (features.rank() != 4 || features.size(1) != channels)
    throw DimensionError("modulate expects [B, " + std::to_string(channels) + ", H, W], got " +
                         shape_str(features.shape()));
  const Tensor<T> gate = channel_weights(s);
  return add(broadcast(BinaryOp::mul, feature_norm(features, 1), gate, {0, 1}), features);
}

std::size_t dcam_param_count(std::size_t channels, std::size_t prototypes) {
  return nn::linear_param_count(channels, prototypes) + 2 * prototypes + 2 * channels + prototypes * channels;
}

Decomposition decompose(const std::vector<double>& scores, const Tensor<double>& prototypes,
                        std::size_t top_n) {
  const std::size_t k = prototypes.size(0), c = prototypes.size(1);
  if (scores.size() != k) throw DimensionError("score count does not match the prototype bank");
  Decomposition d;
  d.scores = scores;
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  for (double s : scores) d.proportions.push_back(total > 0 ? s / total : 1.0 / static_cast<double>(k));
  d.combination.assign(c, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < c; ++j) d.combination[j] += scores[i] * prototypes[i * c + j];
  const std::size_t n = std::min(top_n, c);
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<std::size_t> idx(c);
    std::iota(idx.begin(), idx.end(), 0);
    auto entry = [&](std::size_t j) { return prototypes[i * c + j]; };
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return entry(a) > entry(b); });
    d.top_activated.emplace_back(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return entry(a) < entry(b); });
    d.top_suppressed.emplace_back(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return d;
}

std::string scores_csv(const std::vector<std::string>& names, const std::vector<std::vector<double>>& scores) {
  std::ostringstream out;
  out.precision(9);
  out << "image";
  if (!scores.empty())
    for (std::size_t i = 0; i < scores.front().size(); ++i) out << ",s_" << i;
  out << "\n";
  for (std::size_t r = 0; r < scores.size(); ++r) {
    out << (r < names.size() ? names[r] : std::to_string(r));
    for (double v : scores[r]) out << "," << v;
    out << "\n";
  }
  return out.str();
}

std::string rankings_csv(const Tensor<double>& prototypes, const Decomposition& d) {
  std::ostringstream out;
  out.precision(9);
  const std::size_t c = prototypes.size(1);
  out << "prototype,rank,activated_channel,activated_value,suppressed_channel,suppressed_value\n";
  for (std::size_t i = 0; i < d.top_activated.size(); ++i)
    for (std::size_t r = 0; r < d.top_activated[i].size(); ++r) {
      const std::size_t a = d.top_activated[i][r], s = d.top_suppressed[i][r];
      out << i << "," << r << "," << a << "," << prototypes[i * c + a] << "," << s << ","
          << prototypes[i * c + s] << "\n";
    }
  return out.str();
}

template class Dcam<float>;
template class Dcam<double>;

}  // namespace mdaif::dcam
