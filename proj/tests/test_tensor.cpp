#include <cmath>
#include <numbers>

#include "mdaif/gradcheck.hpp"
#include "test_util.hpp"

using namespace mdaif;
using testutil::check_values;
using testutil::random_tensor;
using D = Tensor<double>;

namespace {

// Gradient of `loss(x)` with respect to a fresh leaf copy of x.
std::vector<double> gradient_of(const std::function<D(const D&)>& loss, const D& x) {
  auto& tape = Tape<double>::active();
  tape.clear();
  D leaf = x.detach();
  leaf.set_requires_grad(true);
  backward(loss(leaf));
  tape.clear();
  return {leaf.grad().begin(), leaf.grad().end()};
}

}  // namespace

TEST_CASE("matmul small products") {
  const D eye({2, 2}, {1, 0, 0, 1});
  const D b({2, 2}, {1, 2, 3, 4});
  check_values(matmul(eye, b), {1, 2, 3, 4});
  check_values(matmul(D({2, 2}, {1, 2, 3, 4}), D({2, 1}, {5, 6})), {17, 39});
  check_values(matmul(D({3, 2}), random_tensor({2, 4}, 1)), std::vector<double>(12, 0.0));
  CHECK_THROWS_AS(matmul(D({2, 3}), D({2, 2})), DimensionError);
}

TEST_CASE("matmul backward accumulates g.b^T and a^T.g") {
  const D a = random_tensor({3, 4}, 2), b = random_tensor({4, 2}, 3), r = random_tensor({3, 2}, 4);
  const auto ga = gradient_of([&](const D& x) { return sum_all(mul(matmul(x, b), r)); }, a);
  const D expect = matmul(r, transpose(b, {1, 0}));
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("conv2d identity, impulse response and stride arithmetic") {
  const D x = random_tensor({1, 2, 4, 4}, 5);
  D id({2, 2, 1, 1}, {1, 0, 0, 1});
  CHECK(testutil::max_abs_diff(conv2d(x, id, 1, 0), x) == 0.0);

  D impulse({1, 1, 5, 5});
  impulse.data_mut()[12] = 1.0;
  const D y = conv2d(impulse, D({1, 1, 3, 3}, 1.0), 1, 1);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const bool inside = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      CHECK(y[r * 5 + c] == (inside ? 1.0 : 0.0));
    }

  CHECK(conv2d(D({1, 1, 4, 4}), D({1, 1, 3, 3}), 2, 1).shape() == Shape{1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(D({1, 2, 4, 4}), D({1, 3, 3, 3}), 1, 1), DimensionError);
}

TEST_CASE("elementwise definitions") {
  check_values(maximum(D({2}, {1, 5}), D({2}, {4, 2})), {4, 5});
  check_values(abs(D({2}, {-2, 3})), {2, 3});
  const D x = random_tensor({3, 3}, 6);
  CHECK(testutil::max_abs_diff(add(x, D({3, 3})), x) == 0.0);
  CHECK(testutil::max_abs_diff(add_scalar(x, 0.0), x) == 0.0);
  CHECK_THROWS_AS(add(D({2, 2}), D({4})), DimensionError);
}

TEST_CASE("maximum sends the gradient to the first operand on ties") {
  const D a({3}, {1, 2, 3}), b({3}, {1, 5, 0});
  auto& tape = Tape<double>::active();
  tape.clear();
  D la = a.detach(), lb = b.detach();
  la.set_requires_grad(true);
  lb.set_requires_grad(true);
  backward(sum_all(maximum(la, lb)));
  check_values(D({3}, std::vector<double>(la.grad().begin(), la.grad().end())), {1, 0, 1});
  check_values(D({3}, std::vector<double>(lb.grad().begin(), lb.grad().end())), {0, 1, 0});
  tape.clear();
}

TEST_CASE("softmax closed forms and stability") {
  check_values(softmax(D({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  check_values(softmax(D({2}, {std::log(2.0), 0.0}), 0), {2.0 / 3, 1.0 / 3}, 1e-15);
  const D big = softmax(D({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  const D r = softmax(random_tensor({4, 3, 7}, 7, -30, 30), 1);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 7; ++i) {
      double s = 0;
      for (std::size_t e = 0; e < 3; ++e) s += r[(o * 3 + e) * 7 + i];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("activations") {
  CHECK(sigmoid(D({1}, {0.0}))[0] == 0.5);
  CHECK(gelu(D({1}, {0.0}))[0] == 0.0);
  CHECK(std::abs(sigmoid(D({1}, {50.0}))[0] - 1.0) <= 1e-9);
  // Exact GELU: x * Phi(x).
  const double x = 0.7;
  CHECK(gelu(D({1}, {x}))[0] == doctest::Approx(x * 0.5 * std::erfc(-x / std::numbers::sqrt2)).epsilon(1e-14));
}

TEST_CASE("layernorm cases") {
  const D ones({2}, 1.0), zeros({2}, 0.0);
  check_values(layernorm(D({2, 2}, {3, 3, -1, -1}), -1, ones, zeros), {0, 0, 0, 0});
  // var = 1, so the eps effect is 1/sqrt(1 + 1e-5).
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  check_values(layernorm(D({2}, {1, 3}), 0, ones, zeros), {-k, k}, 1e-15);
  check_values(layernorm(random_tensor({3, 2}, 8), -1, zeros, D({2}, {0.25, -0.5})),
               {0.25, -0.5, 0.25, -0.5, 0.25, -0.5});
}

TEST_CASE("batchnorm modes") {
  RunningStats<double> stats(1);
  const D g({1}, 1.0), b({1}, 0.0);
  const D x = random_tensor({2, 1, 2, 2}, 9);
  CHECK(testutil::max_abs_diff(batchnorm(x, g, b, stats, NormMode::eval), x) <= 1e-5);

  RunningStats<double> s2(1);
  const D y = batchnorm(D({2, 1, 1, 1}, {-1, 1}), g, b, s2, NormMode::train);
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  check_values(y, {-k, k}, 1e-15);
  // momentum 0.1 towards batch mean 0 and unbiased batch variance 2
  CHECK(s2.mean[0] == doctest::Approx(0.0));
  CHECK(s2.var[0] == doctest::Approx(0.9 + 0.1 * 2.0));

  RunningStats<double> s3(1);
  check_values(batchnorm(D({2, 1, 2, 2}, 0.3), g, b, s3, NormMode::train), std::vector<double>(8, 0.0));
  CHECK_THROWS_AS(batchnorm(D({1, 1, 1, 1}), g, b, s3, NormMode::train), DegenerateBatchError);
}

TEST_CASE("reductions") {
  check_values(mean(D({2}, {2, 4}), 0), {3});
  check_values(sum_all(D({3, 2})), {0});
  const D tok({1, 4});
  D rep({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4});
  check_values(avgpool_global(rep), {1, 2, 3, 4});
}

TEST_CASE("layout ops are exact inverses and adjoints") {
  const D a = random_tensor({2, 3, 4}, 10);
  CHECK(testutil::max_abs_diff(reshape(reshape(a, {6, 4}), {2, 3, 4}), a) == 0.0);
  CHECK(testutil::max_abs_diff(transpose(transpose(a, {2, 0, 1}), {1, 2, 0}), a) == 0.0);
  CHECK(concat<double>({D({1, 2, 2}), D({1, 3, 2})}, 1).shape() == Shape{1, 5, 2});
  CHECK_THROWS_AS(concat<double>({D({1, 2, 2}), D({1, 3, 3})}, 1), DimensionError);

  // <g, op(x)> == <op^T(g), x> with op^T(g) read off the tape.
  auto adjoint = [&](const std::function<D(const D&)>& op) {
    const D out = op(a);
    const D g = random_tensor(out.shape(), 11);
    const auto gx = gradient_of([&](const D& x) { return sum_all(mul(op(x), g)); }, a);
    return std::abs(testutil::dot(out, g) - testutil::dot(D(a.shape(), gx), a));
  };
  CHECK(adjoint([](const D& x) { return reshape(x, {4, 6}); }) <= 1e-6);
  CHECK(adjoint([](const D& x) { return transpose(x, {1, 2, 0}); }) <= 1e-6);
  CHECK(adjoint([](const D& x) { return concat<double>({x, scale(x, 2.0)}, 1); }) <= 1e-6);
  CHECK(adjoint([](const D& x) { return pad_reflect(reshape(x, {1, 2, 3, 4}), 1); }) <= 1e-6);
  CHECK(adjoint([](const D& x) { return upsample_nearest2x(x); }) <= 1e-6);
}

TEST_CASE("broadcast only over listed axes") {
  const D x({2, 3}, {1, 2, 3, 4, 5, 6});
  check_values(broadcast(BinaryOp::mul, x, D({3}, {1, 0, 2}), {1}), {1, 0, 6, 4, 0, 12});
  check_values(broadcast(BinaryOp::add, x, D({2}, {10, 20}), {0}), {11, 12, 13, 24, 25, 26});
  CHECK_THROWS_AS(broadcast(BinaryOp::max, x, D({3}), {1}), DimensionError);
}

TEST_CASE("backward basics") {
  const auto g1 = gradient_of([](const D& x) { return sum_all(x); }, D({3}, {1, 2, 3}));
  check_values(D({3}, g1), {1, 1, 1});
  const auto g2 = gradient_of([](const D& x) { return sum_all(square(x)); }, D({2}, {1, 2}));
  check_values(D({2}, g2), {2, 4});

  auto& tape = Tape<double>::active();
  tape.clear();
  D used({2}, {1, 2}), unused({2}, {3, 4});
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  backward(sum_all(used));
  CHECK(used.has_grad());
  CHECK_FALSE(unused.has_grad());
  CHECK_THROWS_AS(backward(used), DimensionError);
  tape.clear();
}

TEST_CASE("no gradients are recorded under NoGradGuard") {
  auto& tape = Tape<double>::active();
  tape.clear();
  D x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    const D y = sigmoid(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.size() == 0);
  CHECK(sigmoid(x).requires_grad());
  tape.clear();
}

TEST_CASE("grad_check oracles") {
  const D x = random_tensor({12}, 12, -2, 2);
  CHECK(grad_check([](const D& t) { return sum_all(sigmoid(t)); }, x) <= 1e-6);
  const D w = random_tensor({12}, 13);
  CHECK(grad_check([&](const D& t) { return sum_all(mul(t, w)); }, x) <= 1e-9);
  D away = x.detach();
  for (auto& v : away.data_mut()) v = v >= 0 ? v + 0.1 : v - 0.1;
  CHECK(grad_check([](const D& t) { return sum_all(maximum(t, D(t.shape()))); }, away) <= 1e-6);
}

TEST_CASE("differentiable ops pass grad_check at 1e-5") {
  const D x4 = random_tensor({2, 3, 4, 4}, 14);
  const D k = random_tensor({2, 3, 3, 3}, 15);
  const D g1({3}, {1.2, 0.8, 1.1}), b1({3}, {0.1, -0.2, 0.3});
  auto readout = [](const D& out, std::uint64_t seed) { return random_tensor(out.shape(), seed); };
  auto check = [&](const char* name, const std::function<D(const D&)>& op, const D& x) {
    const D base = op(x).detach();
    const D r = readout(base, 99);
    INFO(name);
    CHECK(grad_check([&](const D& t) { return sum_all(mul(sub(op(t), base), r)); }, x) <= 1e-5);
  };
  check("conv2d", [&](const D& t) { return conv2d(t, k, 1, 1); }, x4);
  check("conv2d stride 2", [&](const D& t) { return conv2d(t, k, 2, 1); }, x4);
  check("matmul", [&](const D& t) { return matmul(t, random_tensor({4, 3}, 16)); }, x4);
  check("bmm", [&](const D& t) { return bmm(reshape(t, {6, 4, 4}), random_tensor({6, 4, 2}, 17)); }, x4);
  check("softmax", [](const D& t) { return softmax(t, 2); }, x4);
  check("layernorm", [&](const D& t) { return layernorm(t, 1, g1, b1); }, x4);
  check("sigmoid", [](const D& t) { return sigmoid(t); }, x4);
  check("gelu", [](const D& t) { return gelu(t); }, x4);
  check("square", [](const D& t) { return square(t); }, x4);
  check("mean axis", [](const D& t) { return mean(t, 2); }, x4);
  check("avgpool", [](const D& t) { return avgpool_global(reshape(t, {6, 4, 4})); }, x4);
  check("broadcast mul", [&](const D& t) { return broadcast(BinaryOp::mul, t, g1, {1}); }, x4);
  check("pad_reflect", [](const D& t) { return pad_reflect(t, 2); }, x4);
  check("upsample", [](const D& t) { return upsample_nearest2x(t); }, x4);
  RunningStats<double> stats(3);
  check("batchnorm", [&](const D& t) { return batchnorm(t, g1, b1, stats, NormMode::train); }, x4);
}

TEST_CASE("replaying a program gives bit-identical values and gradients") {
  auto run = [] {
    const D x = random_tensor({2, 3, 6, 6}, 20);
    const D k = random_tensor({4, 3, 3, 3}, 21);
    return gradient_of([&](const D& t) { return sum_all(gelu(conv2d(t, k, 1, 1))); }, x);
  };
  CHECK(run() == run());
}
