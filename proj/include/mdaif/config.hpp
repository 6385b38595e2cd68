#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "mdaif/fusenet.hpp"
#include "mdaif/prior.hpp"

namespace mdaif {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t steps = 500;   // used when epochs == 0
  std::size_t epochs = 0;    // > 0: steps = epochs * ceil(train size / batch)
  double warmup_fraction = 0.05;
  std::optional<std::size_t> warmup_steps;  // overrides warmup_fraction
  double poly_power = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  std::size_t total_steps(std::size_t train_size) const;
  std::size_t warmup(std::size_t total) const;
  void validate() const;
};

struct DataConfig {
  std::size_t pairs = 40;  // clean pairs; each yields one sample per degradation
  double train_ratio = 0.75;
  std::string severity = "medium";
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  FuseNetConfig model;
  TrainConfig train;
  prior::ProviderConfig prior;
  DataConfig data;
};

// "toy": lr 1e-3, batch 8, 500 steps. "paper": lr 6e-5, batch 15, 1000 epochs.
ExperimentConfig preset(const std::string& name);

// Keys are snake_case; unknown keys are rejected. Missing keys keep the
// defaults of the preset named by the optional top-level "preset" key.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mdaif
