#include "mdaif/gradsuite.hpp"

#include <chrono>
#include <functional>
#include <random>

#include "mdaif/dcam.hpp"
#include "mdaif/dmoe.hpp"
#include "mdaif/fusenet.hpp"
#include "mdaif/gradcheck.hpp"
#include "mdaif/losses.hpp"
#include "mdaif/nn.hpp"
#include "mdaif/prior.hpp"
#include "mdaif/seed.hpp"

namespace mdaif {

namespace {

using D = double;
using Fn = std::function<Tensor<D>(const Tensor<D>&)>;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(derive_seed(seed, "gradsuite")) {}

  Tensor<D> random(const Shape& s, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<D> v(shape_numel(s));
    for (auto& x : v) x = u(rng_);
    return Tensor<D>(s, std::move(v));
  }

  // Scalar read-out <f(x) - f(base), R> with a fixed random R. Same gradient
  // as <f(x), R>, but the sum stays near zero, so summation roundoff does not
  // swamp the central difference.
  Fn readout(const Fn& f, const Tensor<D>& base) {
    Tensor<D> ref;
    {
      NoGradGuard no_grad;
      ref = f(base).detach();
    }
    const Tensor<D> r = random(ref.shape());
    return [f, r, ref](const Tensor<D>& x) { return sum_all(mul(sub(f(x), ref), r)); };
  }

  void input(const std::string& name, const Fn& f, const Tensor<D>& x) {
    timed(name, [&] { return grad_check_detailed(f, x, kGradStep); });
  }

  void param(const std::string& name, const std::function<Tensor<D>()>& f, Tensor<D>& p) {
    timed(name, [&] { return grad_check_param(f, p, kGradStep); });
  }

  std::vector<GradSuiteEntry> entries;

 private:
  template <typename Run>
  void timed(const std::string& name, Run run) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckResult r = run();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    entries.push_back({name, r.max_rel_error, r.analytic, r.numeric, s});
  }

  std::mt19937_64 rng_;
};

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Suite s(seed);
  nn::ParamStore<D> store(seed);

  {
    nn::Linear<D> lin(store, "linear", 5, 4);
    const Tensor<D> x = s.random({3, 5});
    auto f = s.readout([&](const Tensor<D>& t) { return lin(t); }, x);
    s.input("linear/input", f, x);
    s.param("linear/weight", [&] { return f(x); }, lin.weight);
    s.param("linear/bias", [&] { return f(x); }, lin.bias);
  }
  {
    nn::Mlp<D> mlp(store, "mlp", {6, 8, 3});
    const Tensor<D> x = s.random({2, 4, 6});
    s.input("mlp/input", s.readout([&](const Tensor<D>& t) { return mlp(t); }, x), x);
  }
  {
    nn::LayerNorm<D> ln(store, "ln", 5);
    ln.gamma = store.adopt("ln.gamma_rand", s.random({5}, 0.5, 1.5));
    ln.beta = store.adopt("ln.beta_rand", s.random({5}));
    const Tensor<D> a = s.random({3, 5});
    s.input("layernorm/last_axis", s.readout([&](const Tensor<D>& t) { return ln(t, -1); }, a), a);
    const Tensor<D> b = s.random({2, 5, 3, 3});
    s.input("layernorm/channel_axis", s.readout([&](const Tensor<D>& t) { return ln(t, 1); }, b), b);
  }
  {
    nn::Conv2d<D> c3(store, "conv3", 3, 4, 3);
    nn::Conv2d<D> c3s(store, "conv3s2", 3, 4, 3, 2);
    nn::Conv2d<D> c1(store, "conv1", 3, 4, 1);
    const Tensor<D> x = s.random({2, 3, 6, 6});
    auto f3 = s.readout([&](const Tensor<D>& t) { return c3(t); }, x);
    auto f3s = s.readout([&](const Tensor<D>& t) { return c3s(t); }, x);
    auto f1 = s.readout([&](const Tensor<D>& t) { return c1(t); }, x);
    s.input("conv3x3/input", f3, x);
    s.param("conv3x3/weight", [&] { return f3(x); }, c3.weight);
    s.input("conv3x3_stride2/input", f3s, x);
    s.param("conv3x3_stride2/weight", [&] { return f3s(x); }, c3s.weight);
    s.input("conv1x1/input", f1, x);
  }
  {
    nn::BatchNorm2d<D> bn(store, "bn", 3);
    const Tensor<D> x = s.random({2, 3, 3, 3});
    auto f = s.readout([&](const Tensor<D>& t) { return bn(t, NormMode::train); }, x);
    s.input("batchnorm_train/input", f, x);
    s.param("batchnorm_train/gamma", [&] { return f(x); }, bn.gamma);
  }
  {
    const Tensor<D> a = s.random({3, 5}, -2, 2);
    s.input("softmax/input", s.readout([](const Tensor<D>& t) { return softmax(t, -1); }, a), a);
    const Tensor<D> b = s.random({4, 5}, -3, 3);
    s.input("gelu/input", s.readout([](const Tensor<D>& t) { return gelu(t); }, b), b);
    const Tensor<D> c = s.random({1, 2, 3, 3});
    s.input("upsample/input", s.readout([](const Tensor<D>& t) { return upsample_nearest2x(t); }, c), c);
    const Tensor<D> d = s.random({1, 1, 4, 4});
    s.input("pad_reflect/input", s.readout([](const Tensor<D>& t) { return pad_reflect(t, 1); }, d), d);
  }
  {
    nn::Attention<D> attn(store, "mha", {8, 2, true, true});
    const Tensor<D> kv = s.random({2, 3, 8});
    const Tensor<D> q = s.random({2, 4, 8});
    auto f = s.readout([&](const Tensor<D>& t) { return attn(t, kv); }, q);
    s.input("attention/query", f, q);
    s.input("attention/key_value", s.readout([&](const Tensor<D>& t) { return attn(q, t); }, kv), kv);
    s.param("attention/q_weight", [&] { return f(q); }, attn.q.weight);
  }
  {
    nn::TransformerBlock<D> block(store, "block", {8, 2, true, true});
    const Tensor<D> x = s.random({2, 5, 8});
    s.input("transformer_block/input", s.readout([&](const Tensor<D>& t) { return block(t); }, x), x);
  }
  {
    prior::PriorNet<D> net(store, "priornet", 12, 8);
    const Tensor<D> raw = s.random({2, 4, 12});
    auto f = s.readout([&](const Tensor<D>& t) { return net(t); }, raw);
    s.input("prior_net/tokens", f, raw);
    s.param("prior_net/attn_v", [&] { return f(raw); }, net.attn.v.weight);
  }
  {
    dcam::Dcam<D> dc(store, "dcam", 8, 3, seed);
    const Tensor<D> prior = s.random({2, 4, 8});
    const Tensor<D> feat = s.random({2, 8, 3, 3});
    s.input("dcam/scores", s.readout([&](const Tensor<D>& p) { return dc.scores(p); }, prior), prior);
    auto mod = s.readout([&](const Tensor<D>& x) { return dc.modulate(x, dc.scores(prior)); }, feat);
    s.input("dcam/modulate_features", mod, feat);
    s.param("dcam/prototypes", [&] { return mod(feat); }, dc.prototypes);
  }
  {
    dmoe::Dmoe<D> moe(store, "dmoe", 16, 3, true);
    const Tensor<D> prior = s.random({2, 4, 16});
    const Tensor<D> feat = s.random({2, 16, 3, 3});
    auto whole = [&](const Tensor<D>& x, const Tensor<D>& p) {
      const Tensor<D> w = moe.route(moe.cross_attend(x, p));
      return moe.mix(moe.experts_forward(x), w, NormMode::train);
    };
    auto f = s.readout([&](const Tensor<D>& x) { return whole(x, prior); }, feat);
    s.input("dmoe/features", f, feat);
    s.input("dmoe/prior", s.readout([&](const Tensor<D>& p) { return whole(feat, p); }, prior), prior);
    auto fw = s.readout([&](const Tensor<D>& x) { return moe.route(moe.cross_attend(x, prior)); }, feat);
    s.input("dmoe/routing", fw, feat);
    s.param("dmoe/gate_weight", [&] { return f(feat); }, moe.gate.weight);
  }
  {
    const Tensor<D> clean = s.random({2, 3, 8, 8}, 0.05, 0.95);
    const Tensor<D> ir = s.random({2, 1, 8, 8}, 0.05, 0.95);
    auto f = [&](const Tensor<D>& fused) { return loss::fusion_loss(fused, clean, ir).l_fusion; };
    s.input("loss/fusion", f, s.random({2, 3, 8, 8}, 0.05, 0.95));
  }
  {
    FuseNetConfig cfg;
    cfg.height = cfg.width = 8;
    cfg.channels = 16;
    cfg.prior_tokens = 4;
    cfg.prior_width = 12;
    cfg.prototypes = 3;
    cfg.experts = 3;
    cfg.init_seed = seed;
    FuseNet<D> net(cfg);
    const Tensor<D> vi = s.random({2, 3, 8, 8}, 0, 1);
    const Tensor<D> ir = s.random({2, 1, 8, 8}, 0, 1);
    const Tensor<D> raw = s.random({2, 4, 12});
    auto fv = s.readout([&](const Tensor<D>& x) { return net.forward(x, ir, raw, NormMode::train); }, vi);
    s.input("fusenet/visible", fv, vi);
    auto fi = s.readout([&](const Tensor<D>& x) { return net.forward(vi, x, raw, NormMode::train); }, ir);
    s.input("fusenet/infrared", fi, ir);
    auto fr = s.readout([&](const Tensor<D>& x) { return net.forward(vi, ir, x, NormMode::train); }, raw);
    s.input("fusenet/prior", fr, raw);
    s.param("fusenet/prototypes", [&] { return fv(vi); }, net.store().at("dcam.prototypes"));
    s.param("fusenet/expert_pointwise", [&] { return fv(vi); }, net.store().at("dmoe.expert1.pointwise.weight"));
    const Tensor<D> z = s.random({2, 16, 2, 2});
    s.input("decoder/features", s.readout([&](const Tensor<D>& x) { return net.decode(x); }, z), z);
  }
  return s.entries;
}

}  // namespace mdaif
