#include "mdaif/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "mdaif/degrade.hpp"

namespace mdaif {

using nlohmann::json;

std::size_t TrainConfig::total_steps(std::size_t train_size) const {
  if (epochs == 0) return steps;
  const std::size_t per_epoch = (train_size + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

std::size_t TrainConfig::warmup(std::size_t total) const {
  if (warmup_steps) return std::min(*warmup_steps, total);
  return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total)));
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train.lr must be positive");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  if (epochs == 0 && steps == 0) throw std::invalid_argument("train.steps or train.epochs must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw std::invalid_argument("train.warmup_fraction must lie in [0, 1)");
  if (!(poly_power > 0)) throw std::invalid_argument("train.poly_power must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0))
    throw std::invalid_argument("Adam hyperparameters out of range");
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "toy") return cfg;
  if (name == "paper") {
    cfg.train.lr = 6e-5;
    cfg.train.batch_size = 15;
    cfg.train.epochs = 1000;
    return cfg;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (toy|paper)");
}

namespace {

// Reads the keys of `j` into fields, rejecting any key it does not know.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + " must be a JSON object");
  }
  template <typename V>
  Reader& get(const char* key, V& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<V>();
      } catch (const json::exception&) {
        throw std::invalid_argument(where_ + "." + key + " has the wrong type");
      }
    }
    return *this;
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw std::invalid_argument("unknown config key " + where_ + "." + k);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  std::string preset_name = "toy";
  Reader top(j, "config");
  top.get("preset", preset_name);
  ExperimentConfig cfg = preset(preset_name);

  if (const json* m = top.child("model")) {
    auto& c = cfg.model;
    Reader(*m, "model")
        .get("height", c.height).get("width", c.width).get("channels", c.channels)
        .get("heads", c.heads).get("encoder_blocks", c.encoder_blocks)
        .get("prior_tokens", c.prior_tokens).get("prior_width", c.prior_width)
        .get("prototypes", c.prototypes).get("experts", c.experts)
        .get("use_dcam", c.use_dcam).get("use_dmoe", c.use_dmoe)
        .get("prior_residual", c.prior_residual).get("init_seed", c.init_seed)
        .finish();
  }
  if (const json* t = top.child("train")) {
    auto& c = cfg.train;
    Reader r(*t, "train");
    r.get("lr", c.lr).get("batch_size", c.batch_size).get("steps", c.steps).get("epochs", c.epochs)
        .get("warmup_fraction", c.warmup_fraction).get("poly_power", c.poly_power)
        .get("beta1", c.beta1).get("beta2", c.beta2).get("adam_eps", c.adam_eps)
        .get("seed", c.seed).get("checkpoint_every", c.checkpoint_every);
    if (const json* w = r.child("warmup_steps"); w && !w->is_null()) {
      if (!w->is_number_unsigned()) throw std::invalid_argument("train.warmup_steps must be a non-negative integer");
      c.warmup_steps = w->get<std::size_t>();
    }
    r.finish();
  }
  if (const json* p = top.child("prior")) {
    auto& c = cfg.prior;
    std::string kind = c.kind == prior::ProviderConfig::Kind::mock ? "mock" : "service";
    Reader(*p, "prior")
        .get("kind", kind).get("prompt", c.prompt).get("endpoint", c.endpoint)
        .get("timeout_s", c.timeout_s).get("retries", c.retries)
        .get("fallback_to_mock", c.fallback_to_mock).get("seed", c.seed)
        .finish();
    if (kind == "mock") c.kind = prior::ProviderConfig::Kind::mock;
    else if (kind == "service") c.kind = prior::ProviderConfig::Kind::service;
    else throw std::invalid_argument("prior.kind must be mock or service");
  }
  if (const json* d = top.child("data")) {
    auto& c = cfg.data;
    Reader(*d, "data")
        .get("pairs", c.pairs).get("train_ratio", c.train_ratio).get("severity", c.severity).get("seed", c.seed)
        .finish();
  }
  top.finish();

  cfg.model.validate();
  cfg.train.validate();
  cfg.prior.validate();
  if (cfg.data.pairs == 0) throw std::invalid_argument("data.pairs must be positive");
  if (!(cfg.data.train_ratio >= 0 && cfg.data.train_ratio <= 1)) throw std::invalid_argument("data.train_ratio must lie in [0, 1]");
  degrade::parse_severity(cfg.data.severity);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& p = cfg.prior;
  const auto& d = cfg.data;
  return {
      {"model",
       {{"height", m.height}, {"width", m.width}, {"channels", m.channels}, {"heads", m.heads},
        {"encoder_blocks", m.encoder_blocks}, {"prior_tokens", m.prior_tokens}, {"prior_width", m.prior_width},
        {"prototypes", m.prototypes}, {"experts", m.experts}, {"use_dcam", m.use_dcam},
        {"use_dmoe", m.use_dmoe}, {"prior_residual", m.prior_residual}, {"init_seed", m.init_seed}}},
      {"train",
       {{"lr", t.lr}, {"batch_size", t.batch_size}, {"steps", t.steps}, {"epochs", t.epochs},
        {"warmup_fraction", t.warmup_fraction},
        {"warmup_steps", t.warmup_steps ? json(*t.warmup_steps) : json(nullptr)},
        {"poly_power", t.poly_power}, {"beta1", t.beta1}, {"beta2", t.beta2}, {"adam_eps", t.adam_eps},
        {"seed", t.seed}, {"checkpoint_every", t.checkpoint_every}}},
      {"prior",
       {{"kind", p.kind == prior::ProviderConfig::Kind::mock ? "mock" : "service"}, {"prompt", p.prompt},
        {"endpoint", p.endpoint}, {"timeout_s", p.timeout_s}, {"retries", p.retries},
        {"fallback_to_mock", p.fallback_to_mock}, {"seed", p.seed}}},
      {"data", {{"pairs", d.pairs}, {"train_ratio", d.train_ratio}, {"severity", d.severity}, {"seed", d.seed}}},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mdaif
