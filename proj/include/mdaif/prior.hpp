#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdaif/image.hpp"
#include "mdaif/nn.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif::prior {

inline constexpr std::size_t kMockTokens = 8;
inline constexpr std::size_t kMockWidth = 64;
inline constexpr std::size_t kWeatherTokens = 4;
inline constexpr double kMockNoiseSigma = 0.01;
inline const std::string kDefaultPrompt = "Describe the weather condition and the scene in this image.";

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawPrior {
  Tensor<double> tokens;  // [S, C_org]
  std::string provider_id;
};

// Throws ProviderError unless tokens are [S >= 2, C_org >= 1] and finite.
void validate_tokens(const Tensor<double>& tokens);

// ---------------------------------------------------------------------------
// Hand-crafted cues used by the mock provider.

struct DescriptorCalibration {
  std::size_t dark_patch = 7;
  double haze_floor = 0.3, haze_span = 0.25;        // dark-channel mean -> [0, 1]
  double rain_floor = 0.56, rain_span = 0.14;       // across-streak energy share -> [0, 1]
  double bright_threshold = 0.85;
  double bright_local_margin = 0.08;                // above the 7x7 box mean
  std::size_t max_flake_area = 16;
  double snow_full_density = 0.006;                 // small bright blobs per pixel
  double edge_threshold = 0.1;
};

struct Descriptors {
  double dark_channel = 0;   // mean of the 7x7 min-filtered min channel
  double energy_x = 0;       // sum of squared horizontal differences
  double energy_y = 0;       // sum of squared vertical differences
  double across_share = 0;   // energy_x / (energy_x + energy_y); 0 for a flat image
  double blob_density = 0;   // small bright components per pixel
  // Calibrated cues in [0, 1]; the last is the strongest of the first three.
  std::array<double, kWeatherTokens> weather{};
  // mean luminance, luminance std, edge density, mean(R - B)
  std::array<double, 4> scene{};
};

double dark_channel_mean(const ImageBuffer& img, std::size_t patch);
Descriptors describe(const ImageBuffer& img, const DescriptorCalibration& cal = {});

// Row r of the n x n Walsh-Hadamard matrix: (-1)^popcount(r & c).
std::vector<double> walsh_row(std::size_t r, std::size_t n);

// Weather token i is weather[i] * walsh_row(i + 1) plus N(0, sigma) noise
// seeded by (seed, image content); scene token j tiles scene[j].
Tensor<double> mock_tokens(const ImageBuffer& img, std::uint64_t seed,
                           const DescriptorCalibration& cal = {});

// ---------------------------------------------------------------------------
// Providers

struct ProviderConfig {
  enum class Kind { mock, service } kind = Kind::mock;
  std::string prompt = kDefaultPrompt;
  std::string endpoint;  // http://host:port, service only
  double timeout_s = 10.0;
  unsigned retries = 2;
  bool fallback_to_mock = false;
  std::uint64_t seed = 0;
  void validate() const;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual RawPrior extract(const ImageBuffer& image, const std::string& prompt) = 0;
  virtual std::string id() const = 0;
};

class MockProvider final : public Provider {
 public:
  explicit MockProvider(std::uint64_t seed, DescriptorCalibration cal = {}) : seed_(seed), cal_(cal) {}
  RawPrior extract(const ImageBuffer& image, const std::string& prompt) override;
  std::string id() const override { return "mock"; }

 private:
  std::uint64_t seed_;
  DescriptorCalibration cal_;
};

// HTTP client for the prior service: POST {endpoint}/prior and GET /health.
// Transport failures and timeouts are retried; HTTP error statuses are not.
class ServiceProvider final : public Provider {
 public:
  explicit ServiceProvider(ProviderConfig cfg);
  RawPrior extract(const ImageBuffer& image, const std::string& prompt) override;
  std::string id() const override { return "service:" + cfg_.endpoint; }
  bool healthy() const;
  // Requests sent by the last extract call, including retries.
  unsigned last_attempts() const { return last_attempts_; }

 private:
  ProviderConfig cfg_;
  unsigned last_attempts_ = 0;
};

// Builds the configured provider; with fallback_to_mock a service failure is
// answered by the mock instead of raised.
std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg);

// Request body and response parsing, exposed for conformance tests.
std::string encode_request(const ImageBuffer& image, const std::string& prompt);
RawPrior decode_response(const std::string& body);

// ---------------------------------------------------------------------------
// Learned projection and refinement of raw tokens.

// project: LN(Mlp[C_org, C, C](tokens)); refine: single-head bias-free
// self-attention softmax(QK^T / sqrt(C)) V with no output projection.
// Tokens are [S, C_org] or [B, S, C_org].
template <typename T>
class PriorNet {
 public:
  PriorNet() = default;
  PriorNet(nn::ParamStore<T>& store, const std::string& name, std::size_t c_org, std::size_t c,
           bool residual = false);

  Tensor<T> project(const Tensor<T>& raw) const;
  Tensor<T> refine(const Tensor<T>& embed) const;
  Tensor<T> operator()(const Tensor<T>& raw) const { return refine(project(raw)); }

  nn::Mlp<T> phi;
  nn::LayerNorm<T> norm;
  nn::Attention<T> attn;
  std::size_t c_org = 0, c = 0;
  bool residual = false;
};

std::size_t prior_net_param_count(std::size_t c_org, std::size_t c);

// Stacks raw priors into [B, S, C_org] in element type T.
template <typename T>
Tensor<T> stack_priors(const std::vector<const RawPrior*>& priors);

}  // namespace mdaif::prior
