#include <cstring>
#include <fstream>
#include <sstream>

#include "mdaif/train.hpp"
#include "test_util.hpp"

using namespace mdaif;
using testutil::random_tensor;
using D = Tensor<double>;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = preset("toy");
  cfg.model.height = cfg.model.width = 16;
  cfg.model.channels = 8;
  cfg.model.encoder_blocks = 1;
  cfg.train.batch_size = 3;
  cfg.train.steps = 6;
  cfg.train.seed = 4;
  return cfg;
}

struct TinyData {
  Dataset train;
  std::vector<prior::RawPrior> priors;
};

TinyData tiny_data() {
  std::vector<degrade::CleanPair> pairs;
  for (std::uint64_t s = 0; s < 4; ++s) pairs.push_back(degrade::procedural_pair(16, 16, s));
  TinyData d;
  d.train = select_split(degrade::synth_dataset(pairs, 0.75, 2), "train");
  prior::MockProvider mock(0);
  d.priors = extract_priors(mock, d.train, prior::kDefaultPrompt, false);
  return d;
}

void set_grad(D& p, const std::vector<double>& g) {
  p.set_requires_grad(true);
  p.zero_grad();
  std::copy(g.begin(), g.end(), p.grad_mut().begin());
}

template <typename T>
bool same_params(const FuseNet<T>& a, const FuseNet<T>& b) {
  const auto& pa = a.store().params();
  const auto& pb = b.store().params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i].second.vec();
    const auto& y = pb[i].second.vec();
    if (pa[i].first != pb[i].first || x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(0, 100, 5, 1e-3, 0.9) == 0.0);
  CHECK(lr_schedule(2, 100, 5, 1e-3, 0.9) == doctest::Approx(4e-4).epsilon(1e-15));
  CHECK(lr_schedule(5, 100, 5, 1e-3, 0.9) == 1e-3);
  CHECK(lr_schedule(100, 100, 5, 1e-3, 0.9) == 0.0);
  CHECK(lr_schedule(50, 100, 5, 1e-3, 0.9) == doctest::Approx(1e-3 * std::pow(50.0 / 95.0, 0.9)).epsilon(1e-15));
  // Continuous where warmup hands over to the decay.
  CHECK(std::abs(lr_schedule(4, 1000, 5, 1e-3, 0.9) - 1e-3 * 0.8) <= 1e-15);
  CHECK(std::abs(lr_schedule(6, 1000, 5, 1e-3, 0.9) - 1e-3) <= 1e-5);
  double prev = 1.0;
  for (std::size_t s = 5; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 5, 1e-3, 0.9);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(lr_schedule(0, 10, 0, 1e-3, 0.9) == 1e-3);
  CHECK_THROWS_AS(lr_schedule(11, 10, 0, 1e-3, 0.9), std::invalid_argument);

  TrainConfig t;
  CHECK(t.poly_power == 0.9);
  CHECK(t.warmup(500) == 25);
  t.epochs = 2;
  t.batch_size = 8;
  CHECK(t.total_steps(17) == 6);
  t.warmup_steps = 3;
  CHECK(t.warmup(6) == 3);
}

TEST_CASE("Adam update") {
  std::vector<std::pair<std::string, D>> params{{"w", random_tensor({5}, 1)}};
  const std::vector<double> before = params[0].second.vec();
  const std::vector<double> g{0.5, -2.0, 1e-3, 0.0, 3.0};
  AdamState<double> state;
  set_grad(params[0].second, g);
  adam_step(params, state, 0.01, {});
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(params[0].second[i] ==
          doctest::Approx(before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
  CHECK(state.step == 1);

  // Zero gradients decay the moments; from a fresh state they leave the
  // parameters unchanged.
  const std::vector<double> m1 = state.m[0], v1 = state.v[0];
  set_grad(params[0].second, std::vector<double>(5, 0.0));
  adam_step(params, state, 0.01, {});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(state.m[0][i] == doctest::Approx(0.9 * m1[i]).epsilon(1e-15));
    CHECK(state.v[0][i] == doctest::Approx(0.999 * v1[i]).epsilon(1e-15));
  }
  AdamState<double> fresh;
  const std::vector<double> held = params[0].second.vec();
  adam_step(params, fresh, 0.01, {});
  CHECK(params[0].second.vec() == held);

  // Identical inputs give identical trajectories.
  std::vector<std::pair<std::string, D>> a{{"w", random_tensor({5}, 1)}}, b{{"w", random_tensor({5}, 1)}};
  AdamState<double> sa, sb;
  for (int k = 0; k < 3; ++k)
    for (auto* p : {&a, &b}) {
      set_grad((*p)[0].second, random_tensor({5}, 10 + k).vec());
      adam_step(*p, p == &a ? sa : sb, 0.01, {});
    }
  CHECK(a[0].second.vec() == b[0].second.vec());

  std::vector<std::pair<std::string, D>> nograd{{"w", D({2})}};
  AdamState<double> s;
  CHECK_THROWS_AS(adam_step(nograd, s, 0.01, {}), std::invalid_argument);
}

TEST_CASE("experiment config JSON") {
  const ExperimentConfig toy = preset("toy");
  CHECK(toy.train.lr == 1e-3);
  CHECK(toy.train.batch_size == 8);
  CHECK(toy.train.steps == 500);
  const ExperimentConfig paper = preset("paper");
  CHECK(paper.train.lr == 6e-5);
  CHECK(paper.train.batch_size == 15);
  CHECK(paper.train.epochs == 1000);
  CHECK_THROWS_AS(preset("huge"), std::invalid_argument);

  ExperimentConfig cfg = tiny_config();
  cfg.train.warmup_steps = 2;
  cfg.prior.retries = 5;
  cfg.data.severity = "heavy";
  const auto j = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(j)) == j);

  const auto partial = config_from_json(nlohmann::json::parse(R"({"preset": "paper", "train": {"lr": 0.01}})"));
  CHECK(partial.train.lr == 0.01);
  CHECK(partial.train.batch_size == 15);

  for (const char* bad : {R"({"modle": {}})", R"({"train": {"learning_rate": 1}})", R"({"model": {"channels": "8"}})",
                          R"({"prior": {"kind": "remote"}})", R"({"data": {"severity": "extreme"}})",
                          R"({"model": {"channels": 12}})", R"({"train": {"lr": 0}})", R"([1, 2])"})
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(bad)), std::exception);

  testutil::TempDir dir("config");
  std::ofstream(dir.path / "c.json") << j.dump(2);
  CHECK(config_to_json(load_config(dir.path / "c.json")) == j);
  CHECK_THROWS_AS(load_config(dir.path / "missing.json"), std::invalid_argument);
  std::ofstream(dir.path / "broken.json") << "{";
  CHECK_THROWS_AS(load_config(dir.path / "broken.json"), std::invalid_argument);
}

TEST_CASE("training log") {
  CHECK(log_csv_header() == "step,lr,l_inte,l_color,l_fusion\n");
  CHECK(log_csv_row({3, 0.001, 0.25, 0.125, 0.375}) == "3,0.001,0.25,0.125,0.375\n");

  const TinyData d = tiny_data();
  Trainer<float> trainer(tiny_config(), d.train, d.priors);
  std::ostringstream log;
  trainer.run(&log);
  std::istringstream lines(log.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line + "\n" == log_csv_header());
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 6);
  REQUIRE(trainer.history().size() == 6);
  // Six steps round the 5% warmup to zero steps.
  CHECK(trainer.history()[0].lr == 1e-3);
  for (const auto& r : trainer.history()) {
    CHECK(std::isfinite(r.l_fusion));
    CHECK(std::abs(r.l_fusion - (r.l_inte + r.l_color)) <= 1e-6);
  }
  CHECK_THROWS_AS(trainer.step(), std::logic_error);
}

TEST_CASE("resuming from a checkpoint is bitwise identical") {
  const TinyData d = tiny_data();
  const ExperimentConfig cfg = tiny_config();
  testutil::TempDir dir("resume");

  Trainer<float> straight(cfg, d.train, d.priors);
  straight.run();

  Trainer<float> first(cfg, d.train, d.priors);
  for (int k = 0; k < 3; ++k) first.step();
  first.save(dir.path / "half");
  Trainer<float> second(cfg, d.train, d.priors);
  second.load(dir.path / "half");
  CHECK(second.steps_done() == 3);
  second.run();

  CHECK(same_params(straight.model(), second.model()));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(second.history()[k].l_fusion == straight.history()[k + 3].l_fusion);
    CHECK(second.history()[k].lr == straight.history()[k + 3].lr);
  }

  // The saved model reloads with its config and gives the same inference.
  straight.save(dir.path / "final");
  ExperimentConfig loaded_cfg;
  const auto model = load_model<float>(dir.path / "final", &loaded_cfg);
  CHECK(config_to_json(loaded_cfg) == config_to_json(cfg));
  CHECK(same_params(*model, straight.model()));
  const auto a = run_inference(*model, d.train, d.priors, 2);
  const auto b = run_inference(straight.model(), d.train, d.priors, 5);
  REQUIRE(a.fused.size() == d.train.size());
  CHECK(a.weights.size() == d.train.size());
  CHECK(a.scores.size() == d.train.size());
  CHECK(std::abs(a.l_fusion - b.l_fusion) <= 1e-6);
  CHECK(a.l_fusion == a.l_inte + a.l_color);
}

TEST_CASE("inference inputs are checked") {
  const TinyData d = tiny_data();
  FuseNet<float> net(tiny_config().model);
  CHECK_THROWS_AS(run_inference(net, d.train, {}, 2), std::invalid_argument);
  CHECK_THROWS_AS(Trainer<float>(tiny_config(), {}, {}), std::invalid_argument);
}
