#include <cstring>

#include "mdaif/dmoe.hpp"
#include "mdaif/gradcheck.hpp"
#include "test_util.hpp"

using namespace mdaif;
using namespace mdaif::dmoe;
using testutil::random_tensor;
using D = Tensor<double>;

namespace {

void zero(D& t) { std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0); }

void identity(nn::Linear<double>& l) {
  zero(l.weight);
  for (std::size_t i = 0; i < l.in; ++i) l.weight.data_mut()[i * l.out + i] = 1.0;
}

bool bit_equal(const D& a, const D& b) {
  return a.shape() == b.shape() && std::memcmp(a.vec().data(), b.vec().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("token layout") {
  const D x = random_tensor({2, 4, 3, 5}, 1);
  const D t = to_tokens(x);
  CHECK(t.shape() == Shape{2, 15, 4});
  CHECK(t[(1 * 15 + 7) * 4 + 2] == x[((1 * 4 + 2) * 3 + 1) * 5 + 2]);
  CHECK(from_tokens(t, 3, 5).vec() == x.vec());
  CHECK_THROWS_AS(from_tokens(t, 4, 4), DimensionError);
}

TEST_CASE("cross attention") {
  nn::ParamStore<double> store(2);
  Dmoe<double> moe(store, "moe", 4, 5, true);
  const D f = random_tensor({1, 4, 2, 2}, 3);

  // A single prior token: every site gets the same attended value.
  const D one = random_tensor({1, 1, 4}, 4);
  const D a = moe.cross_attend(f, one);
  const D tokens = to_tokens(f);
  const D v = moe.cross.v(one);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(a[p * 4 + c] == doctest::Approx(tokens[p * 4 + c] + v[c]).epsilon(1e-14));

  // Hand-set projections over a 2x2 map and a 2-token prior.
  identity(moe.cross.q);
  identity(moe.cross.k);
  identity(moe.cross.v);
  const D prior = random_tensor({1, 2, 4}, 5);
  const D out = moe.cross_attend(f, prior);
  for (std::size_t p = 0; p < 4; ++p) {
    double s[2];
    for (std::size_t j = 0; j < 2; ++j) {
      s[j] = 0;
      for (std::size_t c = 0; c < 4; ++c) s[j] += tokens[p * 4 + c] * prior[j * 4 + c];
      s[j] /= 2.0;  // sqrt(C)
    }
    const double a0 = 1.0 / (1.0 + std::exp(s[1] - s[0]));
    for (std::size_t c = 0; c < 4; ++c) {
      const double expect = a0 * prior[c] + (1 - a0) * prior[4 + c] + tokens[p * 4 + c];
      CHECK(out[p * 4 + c] == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  zero(moe.cross.v.weight);
  CHECK(testutil::max_abs_diff(moe.cross_attend(f, prior), tokens) == 0.0);
  CHECK_THROWS_AS(moe.cross_attend(f, random_tensor({2, 2, 4}, 6)), DimensionError);
}

TEST_CASE("routing weights") {
  nn::ParamStore<double> store(7);
  Dmoe<double> moe(store, "moe", 8, 5, true);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const D w = moe.route(random_tensor({3, 6, 8}, s, -3.0, 3.0));
    for (std::size_t b = 0; b < 3; ++b) {
      double total = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        CHECK(w[b * 5 + i] >= 0.0);
        total += w[b * 5 + i];
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }

  // Replay of the logits from the layer pieces.
  const D tokens = random_tensor({2, 6, 8}, 30);
  const D br = mean(gelu(moe.reduce_norm(moe.reduce(tokens))), 1);
  const D bf = mean(gelu(moe.token_norm(tokens)), 1);
  const D logits = moe.gate(concat<double>({br, bf}, -1));
  CHECK(testutil::max_abs_diff(moe.route_logits(tokens), logits) == 0.0);
  const D w = moe.route(tokens);
  for (std::size_t b = 0; b < 2; ++b) {
    double z = 0;
    for (std::size_t i = 0; i < 5; ++i) z += std::exp(logits[b * 5 + i]);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(w[b * 5 + i] == doctest::Approx(std::exp(logits[b * 5 + i]) / z).epsilon(1e-14));
  }

  zero(moe.gate.weight);
  zero(moe.gate.bias);
  for (double v : moe.route(tokens).vec()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("experts") {
  nn::ParamStore<double> store(8);
  Dmoe<double> moe(store, "moe", 4, 5, false);
  const D f = random_tensor({2, 4, 5, 5}, 9);
  const auto outs = moe.experts_forward(f);
  REQUIRE(outs.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(outs[i].shape() == f.shape());
    for (std::size_t j = i + 1; j < 5; ++j) CHECK(testutil::max_abs_diff(outs[i], outs[j]) > 0.0);
  }

  // Delta 3x3 and identity 1x1 kernels pass features through.
  auto& e = moe.experts[2];
  zero(e.spatial.weight);
  zero(e.spatial.bias);
  zero(e.pointwise.weight);
  zero(e.pointwise.bias);
  for (std::size_t c = 0; c < 4; ++c) {
    e.spatial.weight.data_mut()[(c * 4 + c) * 9 + 4] = 1.0;
    e.pointwise.weight.data_mut()[c * 4 + c] = 1.0;
  }
  CHECK(testutil::max_abs_diff(moe.experts_forward(f)[2], f) == 0.0);
}

TEST_CASE("mixing") {
  nn::ParamStore<double> store(10);
  Dmoe<double> moe(store, "moe", 4, 5, true);
  const D f = random_tensor({2, 4, 3, 3}, 11);
  const auto outs = moe.experts_forward(f);
  for (std::size_t j = 0; j < 5; ++j) {
    D w({2, 5});
    w.data_mut()[j] = 1.0;
    w.data_mut()[5 + j] = 1.0;
    CHECK(bit_equal(moe.combine(outs, w), outs[j]));
  }

  const std::vector<D> same(5, outs[0]);
  const D w = moe.route(random_tensor({2, 9, 4}, 12));
  CHECK(testutil::max_abs_diff(moe.combine(same, w), outs[0]) <= 1e-15);

  const D mixed = moe.combine(outs, w);
  double worst = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 36; ++i) {
      double acc = 0;
      for (std::size_t n = 0; n < 5; ++n) acc += w[b * 5 + n] * outs[n][b * 36 + i];
      worst = std::max(worst, std::abs(mixed[b * 36 + i] - acc));
    }
  CHECK(worst <= 1e-6);

  const D post = moe.mix(outs, w, NormMode::train);
  const D replay = gelu(moe.norm(mixed, NormMode::train));
  CHECK(testutil::max_abs_diff(post, replay) == 0.0);
  CHECK_THROWS_AS(moe.combine({outs[0], outs[1]}, w), DimensionError);
}

TEST_CASE("the unguided router reads image features only") {
  nn::ParamStore<double> guided_store(13), plain_store(13);
  Dmoe<double> guided(guided_store, "moe", 8, 5, true);
  Dmoe<double> plain(plain_store, "moe", 8, 5, false);
  CHECK(guided_store.contains("moe.cross.q.weight"));
  CHECK_FALSE(plain_store.contains("moe.cross.q.weight"));
  CHECK(guided_store.parameter_count() == dmoe_param_count(8, 5, true));
  CHECK(plain_store.parameter_count() == dmoe_param_count(8, 5, false));

  const D f = random_tensor({2, 8, 3, 3}, 14);
  const D a = plain.cross_attend(f, random_tensor({2, 4, 8}, 15));
  const D b = plain.cross_attend(f, random_tensor({2, 4, 8}, 16));
  CHECK(a.vec() == to_tokens(f).vec());
  CHECK(b.vec() == a.vec());
}

TEST_CASE("routing report") {
  const auto uniform = routing_report({{0.2, 0.2, 0.2, 0.2, 0.2}, {0.2, 0.2, 0.2, 0.2, 0.2}});
  CHECK(uniform.entropy == doctest::Approx(std::log(5.0)).epsilon(1e-15));
  CHECK(routing_report({{1, 0, 0}, {1, 0, 0}}).entropy == 0.0);
  const auto two = routing_report({{1, 0, 0}, {0, 1, 0}});
  CHECK(two.entropy == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(two.usage == std::vector<double>{0.5, 0.5, 0.0});
  CHECK_THROWS_AS(routing_report({}), std::invalid_argument);
  CHECK(routing_csv({"a", "b"}, two) == "image,w_0,w_1,w_2\na,1,0,0\nb,0,1,0\nmean,0.5,0.5,0\nentropy_nats,0.693147181\n");
}

TEST_CASE("the whole module passes grad_check at 1e-5") {
  nn::ParamStore<double> store(20);
  Dmoe<double> moe(store, "moe", 8, 3, true);
  const D f = random_tensor({2, 8, 3, 3}, 21);
  const D prior = random_tensor({2, 4, 8}, 22);
  auto forward = [&](const D& x, const D& p) {
    const D w = moe.route(moe.cross_attend(x, p));
    return moe.mix(moe.experts_forward(x), w, NormMode::train);
  };
  D base;
  {
    NoGradGuard guard;
    base = forward(f, prior);
  }
  const D r = random_tensor(base.shape(), 23);
  auto readout = [&](const D& out) { return sum_all(mul(sub(out, base), r)); };
  CHECK(grad_check([&](const D& x) { return readout(forward(x, prior)); }, f) <= 1e-5);
  CHECK(grad_check([&](const D& p) { return readout(forward(f, p)); }, prior) <= 1e-5);
  CHECK(grad_check_param([&] { return readout(forward(f, prior)); }, moe.gate.weight).max_rel_error <= 1e-5);
}
