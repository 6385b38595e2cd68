#include "mdaif/degrade.hpp"
#include "mdaif/prior.hpp"
#include "mdaif/seed.hpp"
#include "test_util.hpp"

using namespace mdaif;
using namespace mdaif::prior;
using D = Tensor<double>;

namespace {

ImageBuffer noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  ImageBuffer img(w, h, 3);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.7);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

void set_identity(nn::Linear<double>& l) {
  auto d = l.weight.data_mut();
  std::fill(d.begin(), d.end(), 0.0);
  for (std::size_t i = 0; i < std::min(l.in, l.out); ++i) d[i * l.out + i] = 1.0;
  if (l.bias.defined()) std::fill(l.bias.data_mut().begin(), l.bias.data_mut().end(), 0.0);
}

// Mean of token row `i` projected on Walsh row `r`.
double basis_weight(const D& tokens, std::size_t i, std::size_t r) {
  const auto basis = walsh_row(r, kMockWidth);
  double s = 0;
  for (std::size_t c = 0; c < kMockWidth; ++c) s += tokens[i * kMockWidth + c] * basis[c];
  return s / double(kMockWidth);
}

}  // namespace

TEST_CASE("descriptors of a constant gray image") {
  const ImageBuffer gray(32, 32, 3, 0.3);
  const Descriptors d = describe(gray);
  // Window means carry summation rounding of a few ulps.
  CHECK(std::abs(d.dark_channel - 0.3) <= 1e-12);
  CHECK(d.energy_x == 0.0);
  CHECK(d.energy_y == 0.0);
  CHECK(d.across_share == 0.0);
  CHECK(d.blob_density == 0.0);
  for (double w : d.weather) CHECK(std::abs(w) <= 1e-12);
  CHECK(std::abs(d.scene[0] - 0.3) <= 1e-12);
  CHECK(d.scene[1] == doctest::Approx(0.0));
  CHECK(d.scene[2] == 0.0);
  CHECK(d.scene[3] == 0.0);

  // Weather tokens are pure noise at sigma 0.01.
  const D tokens = mock_tokens(gray, 4);
  for (std::size_t i = 0; i < kWeatherTokens * kMockWidth; ++i) CHECK(std::abs(tokens[i]) < 6 * kMockNoiseSigma);
}

TEST_CASE("dark channel lies between the image minimum and its mean") {
  const ImageBuffer img = noise_image(24, 24, 3);
  double lo = 1, mean_min = 0;
  for (std::size_t i = 0; i < 24 * 24; ++i) {
    const double m = std::min({img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]});
    lo = std::min(lo, m);
    mean_min += m / (24 * 24);
  }
  const double dc = dark_channel_mean(img, 7);
  CHECK(dc >= lo);
  CHECK(dc <= mean_min);
  CHECK(dark_channel_mean(img, 1) == doctest::Approx(mean_min).epsilon(1e-13));
  CHECK(dc - lo < 0.05);  // 49-pixel minima of uniform noise sit near the floor
}

TEST_CASE("vertical streaks put the difference energy across x") {
  ImageBuffer stripes(4, 3, 1);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) stripes.at(y, x) = double(x % 2);
  const Descriptors d = describe(stripes);
  CHECK(d.energy_x == 9.0);  // 3 rows x 3 unit steps
  CHECK(d.energy_y == 0.0);
  CHECK(d.across_share == 1.0);
  CHECK(d.weather[1] == 1.0);

  const ImageBuffer streaked = degrade::synth_rain(ImageBuffer(64, 64, 3, 0.3), degrade::rain_preset(degrade::Severity::medium, 2));
  const Descriptors r = describe(streaked);
  CHECK(r.energy_x > 3.0 * r.energy_y);
  CHECK(r.across_share > 0.5);
}

TEST_CASE("isolated bright dots read as snow") {
  ImageBuffer img(40, 40, 3, 0.2);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t c = 0; c < 3; ++c) img.at(5 + 6 * k, 7, c) = 1.0;
  // One large bright area is not a flake.
  for (std::size_t y = 20; y < 30; ++y)
    for (std::size_t x = 20; x < 30; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
  const Descriptors d = describe(img);
  CHECK(d.blob_density == doctest::Approx(6.0 / 1600.0).epsilon(1e-15));
  CHECK(d.weather[2] == doctest::Approx(6.0 / 1600.0 / DescriptorCalibration{}.snow_full_density).epsilon(1e-14));
  CHECK(d.weather[3] == std::max({d.weather[0], d.weather[1], d.weather[2]}));
}

TEST_CASE("Walsh rows are orthogonal") {
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) {
      const auto ra = walsh_row(a, 64), rb = walsh_row(b, 64);
      double dot = 0;
      for (std::size_t c = 0; c < 64; ++c) dot += ra[c] * rb[c];
      CHECK(dot == (a == b ? 64.0 : 0.0));
    }
}

TEST_CASE("mock tokens encode the descriptors") {
  const ImageBuffer img = degrade::procedural_pair(64, 64, 5).vi;
  const Descriptors d = describe(img);
  const D tokens = mock_tokens(img, 7);
  REQUIRE(tokens.shape() == Shape{kMockTokens, kMockWidth});
  for (std::size_t i = 0; i < kWeatherTokens; ++i) {
    CHECK(std::abs(basis_weight(tokens, i, i + 1) - d.weather[i]) < 0.01);
    CHECK(std::abs(basis_weight(tokens, i, 0)) < 0.01);
  }
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < kMockWidth; ++c) CHECK(tokens[(kWeatherTokens + j) * kMockWidth + c] == d.scene[j]);

  CHECK(mock_tokens(img, 7).vec() == tokens.vec());
  const D other = mock_tokens(img, 8);
  CHECK(other.vec() != tokens.vec());
  CHECK(testutil::max_abs_diff(other, tokens) < 12 * kMockNoiseSigma);

  MockProvider provider(7);
  const RawPrior raw = provider.extract(img, kDefaultPrompt);
  CHECK(raw.provider_id == "mock");
  CHECK(raw.tokens.vec() == tokens.vec());
}

TEST_CASE("weather cues separate the degradations") {
  std::size_t hits = 0, total = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    std::vector<degrade::CleanPair> pairs{degrade::procedural_pair(64, 64, derive_seed(11, "pair", i))};
    for (const auto& s : degrade::synth_dataset(pairs, 1.0, derive_seed(11, "set", i))) {
      const auto w = describe(s.vi).weather;
      const auto best = std::max_element(w.begin(), w.begin() + 3) - w.begin();
      hits += static_cast<std::size_t>(best) == static_cast<std::size_t>(s.label);
      ++total;
    }
  }
  INFO("argmax accuracy ", hits, "/", total);
  CHECK(double(hits) >= 0.9 * double(total));
}

TEST_CASE("token validation and provider config") {
  CHECK_NOTHROW(validate_tokens(D({2, 3})));
  CHECK_THROWS_AS(validate_tokens(D({1, 3})), ProviderError);
    CHECK_THROWS_AS(validate_tokens(D({2, 3, 1})), ProviderError);
  D bad({2, 2});
  bad.data_mut()[3] = std::nan("");
  CHECK_THROWS_AS(validate_tokens(bad), ProviderError);
  CHECK_THROWS_AS(validate_tokens(D()), ProviderError);

  ProviderConfig cfg;
  cfg.kind = ProviderConfig::Kind::service;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_provider(cfg), std::invalid_argument);
  cfg.kind = ProviderConfig::Kind::mock;
  CHECK(make_provider(cfg)->id() == "mock");
}

TEST_CASE("prior projection") {
  nn::ParamStore<double> store(3);
  PriorNet<double> net(store, "prior", 6, 6);
  CHECK(store.parameter_count() == prior_net_param_count(6, 6));

  const D raw = testutil::random_tensor({5, 6}, 4);
  const D replay = net.norm(gelu(net.phi.layers[0](raw)));
  CHECK(testutil::max_abs_diff(net.project(raw), net.norm(net.phi.layers[1](gelu(net.phi.layers[0](raw))))) == 0.0);
  CHECK(net.project(raw).shape() == Shape{5, 6});
  CHECK(net(testutil::random_tensor({2, 3, 6}, 5)).shape() == Shape{2, 3, 6});
  CHECK(replay.shape() == Shape{5, 6});
  CHECK_THROWS_AS(net.project(D({5, 4})), DimensionError);

  set_identity(net.phi.layers[0]);
  set_identity(net.phi.layers[1]);
  const D constant({3, 6}, 0.4);
  for (double v : net.project(constant).vec()) CHECK(v == 0.0);
}

TEST_CASE("prior refinement") {
  nn::ParamStore<double> store(6);
  PriorNet<double> net(store, "prior", 4, 2);
  const D one = testutil::random_tensor({1, 2}, 7);
  CHECK(testutil::max_abs_diff(net.refine(one), net.attn.v(one)) <= 1e-15);

  const D row = testutil::random_tensor({1, 2}, 8);
  const D same = net.refine(concat<double>({row, row, row}, 0));
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) CHECK(same[i * 2 + c] == same[c]);

  set_identity(net.attn.q);
  set_identity(net.attn.k);
  set_identity(net.attn.v);
  const D x({2, 2}, {1, 0, 0, 2});
  const double s = 1.0 / std::sqrt(2.0);
  const double a0 = std::exp(s) / (std::exp(s) + 1.0);
  const double a1 = 1.0 / (1.0 + std::exp(4 * s));
  testutil::check_values(net.refine(x), {a0, (1 - a0) * 2, a1, (1 - a1) * 2}, 1e-14);

  nn::ParamStore<double> store2(6);
  PriorNet<double> res(store2, "prior", 4, 2, true);
  set_identity(res.attn.q);
  set_identity(res.attn.k);
  set_identity(res.attn.v);
  testutil::check_values(res.refine(x), {a0 + 1, (1 - a0) * 2, a1, (1 - a1) * 2 + 2}, 1e-14);
}

TEST_CASE("priors stack into batches") {
  RawPrior a{testutil::random_tensor({3, 4}, 1), "x"}, b{testutil::random_tensor({3, 4}, 2), "x"};
  const Tensor<float> s = stack_priors<float>({&a, &b});
  CHECK(s.shape() == Shape{2, 3, 4});
  CHECK(s[12] == static_cast<float>(b.tokens[0]));
  RawPrior c{testutil::random_tensor({2, 4}, 3), "x"};
  CHECK_THROWS_AS(stack_priors<float>({&a, &c}), DimensionError);
}
