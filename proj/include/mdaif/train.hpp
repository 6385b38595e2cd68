#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mdaif/config.hpp"
#include "mdaif/dataset.hpp"
#include "mdaif/fusenet.hpp"
#include "mdaif/prior.hpp"

namespace mdaif {

// Linear warmup from 0 to lr over `warmup` steps, then
// lr * (1 - (step - warmup) / (total - warmup))^power.
double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double lr, double power);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // per parameter, registration order
  std::uint64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Bias-corrected Adam over every parameter; each must hold a gradient.
template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {});

struct StepLog {
  std::size_t step = 0;  // 1-based index of the completed step
  double lr = 0, l_inte = 0, l_color = 0, l_fusion = 0;
};

std::string log_csv_header();
std::string log_csv_row(const StepLog& row);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Priors for every item, in dataset order. The mock provider runs in
// parallel; other providers run serially.
std::vector<prior::RawPrior> extract_priors(prior::Provider& provider, const Dataset& data,
                                            const std::string& prompt, bool parallel);

struct InferenceResult {
  std::vector<ImageBuffer> fused;
  std::vector<std::vector<double>> weights;  // routing w per image
  std::vector<std::vector<double>> scores;   // s_K per image, empty without DCAM
  double l_inte = 0, l_color = 0, l_fusion = 0;  // means over images
};

// Eval-mode forward over `data` in batches; no gradients are recorded.
template <typename T>
InferenceResult run_inference(const FuseNet<T>& model, const Dataset& data,
                              const std::vector<prior::RawPrior>& priors, std::size_t batch_size);

// Owns the model, optimizer state and batch sampler of one training run.
template <typename T>
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, Dataset train_set, std::vector<prior::RawPrior> priors);

  StepLog step();
  // Runs until `total_steps()`; writes log rows to `log` when non-null.
  void run(std::ostream* log = nullptr);

  std::size_t steps_done() const { return static_cast<std::size_t>(adam_.step); }
  std::size_t total_steps() const { return total_; }
  const std::vector<StepLog>& history() const { return history_; }
  FuseNet<T>& model() { return model_; }
  const FuseNet<T>& model() const { return model_; }
  const ExperimentConfig& config() const { return cfg_; }

  // Checkpoint holds parameters, running statistics, Adam moments, the step
  // counter and the batch sampler state.
  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  ExperimentConfig cfg_;
  Dataset data_;
  std::vector<prior::RawPrior> priors_;
  FuseNet<T> model_;
  AdamState<T> adam_;
  std::mt19937_64 sampler_;
  std::size_t total_ = 0, warmup_ = 0;
  std::vector<StepLog> history_;
};

// Loads a model from a checkpoint written by Trainer::save.
template <typename T>
std::unique_ptr<FuseNet<T>> load_model(const std::filesystem::path& dir, ExperimentConfig* cfg_out = nullptr);

}  // namespace mdaif
