#include "mdaif/prior.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "mdaif/seed.hpp"

namespace mdaif::prior {

void validate_tokens(const Tensor<double>& tokens) {
  if (!tokens.defined() || tokens.rank() != 2 || tokens.size(0) < 2 || tokens.size(1) < 1)
    throw ProviderError("prior tokens must be [S >= 2, C_org >= 1]");
  for (double v : tokens.vec())
    if (!std::isfinite(v)) throw ProviderError("prior tokens contain non-finite values");
}

namespace {

ImageBuffer luminance(const ImageBuffer& img) { return img.channels == 1 ? img : to_gray(img); }

// Separable box mean with edge clamping.
std::vector<double> box_mean(const ImageBuffer& g, std::size_t radius) {
  const auto H = static_cast<std::ptrdiff_t>(g.height), W = static_cast<std::ptrdiff_t>(g.width);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  std::vector<double> tmp(g.pixels.size()), out(g.pixels.size());
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double s = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) s += g.pixels[static_cast<std::size_t>(y * W + std::clamp(x + d, std::ptrdiff_t{0}, W - 1))];
      tmp[static_cast<std::size_t>(y * W + x)] = s / static_cast<double>(2 * r + 1);
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double s = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) s += tmp[static_cast<std::size_t>(std::clamp(y + d, std::ptrdiff_t{0}, H - 1) * W + x)];
      out[static_cast<std::size_t>(y * W + x)] = s / static_cast<double>(2 * r + 1);
    }
  return out;
}

// Connected components (4-neighbour) of `mask` with area <= max_area.
std::size_t small_components(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                             std::size_t max_area) {
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t count = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    std::size_t area = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t y = i / w, x = i % w;
      auto visit = [&](std::size_t j) {
        if (mask[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < w) visit(i + 1);
      if (y > 0) visit(i - w);
      if (y + 1 < h) visit(i + w);
    }
    if (area <= max_area) ++count;
  }
  return count;
}

double ramp(double v, double floor, double span) { return std::clamp((v - floor) / span, 0.0, 1.0); }

}  // namespace

double dark_channel_mean(const ImageBuffer& img, std::size_t patch) {
  if (img.width == 0 || img.height == 0) throw DimensionError("empty image");
  const std::size_t h = img.height, w = img.width;
  std::vector<double> mins(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double m = img.pixels[i * img.channels];
    for (std::size_t c = 1; c < img.channels; ++c) m = std::min(m, img.pixels[i * img.channels + c]);
    mins[i] = m;
  }
  // Separable min filter over a patch x patch window, clamped at borders.
  const auto r = static_cast<std::ptrdiff_t>(patch / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  std::vector<double> tmp(h * w);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double m = 1e300;
      for (std::ptrdiff_t d = std::max<std::ptrdiff_t>(0, x - r); d <= std::min(W - 1, x + r); ++d)
        m = std::min(m, mins[static_cast<std::size_t>(y * W + d)]);
      tmp[static_cast<std::size_t>(y * W + x)] = m;
    }
  double total = 0;
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double m = 1e300;
      for (std::ptrdiff_t d = std::max<std::ptrdiff_t>(0, y - r); d <= std::min(H - 1, y + r); ++d)
        m = std::min(m, tmp[static_cast<std::size_t>(d * W + x)]);
      total += m;
    }
  return total / static_cast<double>(h * w);
}

Descriptors describe(const ImageBuffer& img, const DescriptorCalibration& cal) {
  if (img.channels != 1 && img.channels != 3) throw DimensionError("descriptor input must have 1 or 3 channels");
  Descriptors d;
  const ImageBuffer g = luminance(img);
  const std::size_t h = g.height, w = g.width;
  d.dark_channel = dark_channel_mean(img, cal.dark_patch);

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x + 1 < w) d.energy_x += std::pow(g.at(y, x + 1) - g.at(y, x), 2);
      if (y + 1 < h) d.energy_y += std::pow(g.at(y + 1, x) - g.at(y, x), 2);
    }
  const double et = d.energy_x + d.energy_y;
  d.across_share = et > 1e-12 ? d.energy_x / et : 0.0;

  const auto local = box_mean(g, 3);
  std::vector<std::uint8_t> bright(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    bright[i] = g.pixels[i] > cal.bright_threshold && g.pixels[i] - local[i] > cal.bright_local_margin;
  d.blob_density = static_cast<double>(small_components(bright, h, w, cal.max_flake_area)) /
                   static_cast<double>(h * w);

  d.weather[0] = ramp(d.dark_channel, cal.haze_floor, cal.haze_span);
  d.weather[1] = ramp(d.across_share, cal.rain_floor, cal.rain_span);
  d.weather[2] = std::clamp(d.blob_density / cal.snow_full_density, 0.0, 1.0);
  d.weather[3] = std::max({d.weather[0], d.weather[1], d.weather[2]});

  double mean = 0, sq = 0, edges = 0, balance = 0;
  for (double v : g.pixels) mean += v;
  mean /= static_cast<double>(h * w);
  for (double v : g.pixels) sq += (v - mean) * (v - mean);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = x + 1 < w ? g.at(y, x + 1) - g.at(y, x) : 0.0;
      const double gy = y + 1 < h ? g.at(y + 1, x) - g.at(y, x) : 0.0;
      if (std::abs(gx) + std::abs(gy) > cal.edge_threshold) edges += 1;
      if (img.channels == 3) balance += img.at(y, x, 0) - img.at(y, x, 2);
    }
  const double n = static_cast<double>(h * w);
  d.scene = {mean, std::sqrt(sq / n), edges / n, balance / n};
  return d;
}

std::vector<double> walsh_row(std::size_t r, std::size_t n) {
  std::vector<double> row(n);
  for (std::size_t c = 0; c < n; ++c) row[c] = (std::popcount(r & c) & 1) ? -1.0 : 1.0;
  return row;
}

Tensor<double> mock_tokens(const ImageBuffer& img, std::uint64_t seed, const DescriptorCalibration& cal) {
  const Descriptors d = describe(img, cal);
  std::uint64_t content = fnv1a(std::string_view(reinterpret_cast<const char*>(img.pixels.data()),
                                                 img.pixels.size() * sizeof(double)));
  std::mt19937_64 rng(derive_seed(seed, "mock.noise", content));
  std::normal_distribution<double> noise(0.0, kMockNoiseSigma);
  std::vector<double> data(kMockTokens * kMockWidth);
  for (std::size_t i = 0; i < kWeatherTokens; ++i) {
    const auto basis = walsh_row(i + 1, kMockWidth);
    for (std::size_t c = 0; c < kMockWidth; ++c)
      data[i * kMockWidth + c] = d.weather[i] * basis[c] + noise(rng);
  }
  for (std::size_t j = 0; j < d.scene.size(); ++j)
    for (std::size_t c = 0; c < kMockWidth; ++c) data[(kWeatherTokens + j) * kMockWidth + c] = d.scene[j];
  return Tensor<double>({kMockTokens, kMockWidth}, std::move(data));
}

void ProviderConfig::validate() const {
  if (kind == Kind::service && endpoint.empty()) throw std::invalid_argument("service prior provider needs an endpoint");
  if (!(timeout_s > 0.0)) throw std::invalid_argument("provider timeout must be positive");
}

RawPrior MockProvider::extract(const ImageBuffer& image, const std::string&) {
  return {mock_tokens(image, seed_, cal_), id()};
}

namespace {

class FallbackProvider final : public Provider {
 public:
  FallbackProvider(std::unique_ptr<Provider> primary, std::unique_ptr<Provider> backup)
      : primary_(std::move(primary)), backup_(std::move(backup)) {}
  RawPrior extract(const ImageBuffer& image, const std::string& prompt) override {
    try {
      return primary_->extract(image, prompt);
    } catch (const ProviderError&) {
      return backup_->extract(image, prompt);
    }
  }
  std::string id() const override { return primary_->id() + "|" + backup_->id(); }

 private:
  std::unique_ptr<Provider> primary_, backup_;
};

}  // namespace

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg) {
  cfg.validate();
  if (cfg.kind == ProviderConfig::Kind::mock) return std::make_unique<MockProvider>(cfg.seed);
  auto service = std::make_unique<ServiceProvider>(cfg);
  if (!cfg.fallback_to_mock) return service;
  return std::make_unique<FallbackProvider>(std::move(service), std::make_unique<MockProvider>(cfg.seed));
}

template <typename T>
PriorNet<T>::PriorNet(nn::ParamStore<T>& store, const std::string& name, std::size_t c_org_,
                      std::size_t c_, bool residual_)
    : c_org(c_org_), c(c_), residual(residual_) {
  phi = nn::Mlp<T>(store, name + ".phi", {c_org, c, c});
  norm = nn::LayerNorm<T>(store, name + ".norm", c);
  attn = nn::Attention<T>(store, name + ".attn", {c, 1, false, false});
}

template <typename T>
Tensor<T> PriorNet<T>::project(const Tensor<T>& raw) const {
  if (raw.rank() < 2 || raw.size(-1) != c_org)
    throw DimensionError("prior tokens " + shape_str(raw.shape()) + " do not match width " + std::to_string(c_org));
  return norm(phi(raw));
}

template <typename T>
Tensor<T> PriorNet<T>::refine(const Tensor<T>& embed) const {
  Tensor<T> out = attn(embed, embed);
  return residual ? add(out, embed) : out;
}

std::size_t prior_net_param_count(std::size_t c_org, std::size_t c) {
  return nn::linear_param_count(c_org, c) + nn::linear_param_count(c, c) + 2 * c +
         nn::attention_param_count({c, 1, false, false});
}

template <typename T>
Tensor<T> stack_priors(const std::vector<const RawPrior*>& priors) {
  if (priors.empty()) throw DimensionError("no priors to stack");
  const Shape s0 = priors.front()->tokens.shape();
  std::vector<T> data;
  data.reserve(priors.size() * shape_numel(s0));
  for (const RawPrior* p : priors) {
    if (p->tokens.shape() != s0) throw DimensionError("priors in a batch must share a shape");
    for (double v : p->tokens.vec()) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({priors.size(), s0[0], s0[1]}, std::move(data));
}

template class PriorNet<float>;
template class PriorNet<double>;
template Tensor<float> stack_priors<float>(const std::vector<const RawPrior*>&);
template Tensor<double> stack_priors<double>(const std::vector<const RawPrior*>&);

}  // namespace mdaif::prior
