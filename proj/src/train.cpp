#include "mdaif/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mdaif/losses.hpp"
#include "mdaif/seed.hpp"
#include "mdaif/tensor_io.hpp"

namespace mdaif {

double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double lr, double power) {
  if (step > total) throw std::invalid_argument("schedule step beyond total");
  if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr * std::pow(1.0 - progress, power);
}

template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state, double lr,
               const AdamHyper& h) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("Adam state does not match the parameters");
  for (const auto& [name, p] : params)
    if (!p.has_grad()) throw std::invalid_argument("parameter " + name + " has no gradient");
  ++state.step;
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2), eps = static_cast<T>(h.eps);
  const T c1 = T(1) - static_cast<T>(std::pow(h.beta1, static_cast<double>(state.step)));
  const T c2 = T(1) - static_cast<T>(std::pow(h.beta2, static_cast<double>(state.step)));
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second;
    auto w = p.data_mut();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / c1, vhat = v[j] / c2;
      w[j] -= rate * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::string log_csv_header() { return "step,lr,l_inte,l_color,l_fusion\n"; }

std::string log_csv_row(const StepLog& r) {
  std::ostringstream out;
  out.precision(9);
  out << r.step << "," << r.lr << "," << r.l_inte << "," << r.l_color << "," << r.l_fusion << "\n";
  return out.str();
}

std::vector<prior::RawPrior> extract_priors(prior::Provider& provider, const Dataset& data,
                                            const std::string& prompt, bool parallel) {
  std::vector<prior::RawPrior> out(data.size());
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = provider.extract(data[i].vi, prompt);
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = provider.extract(data[i].vi, prompt);
  }
  return out;
}

namespace {

template <typename T>
struct Batch {
  Tensor<T> vi, ir, clean, prior;
};

template <typename T>
Batch<T> make_batch(const Dataset& data, const std::vector<prior::RawPrior>& priors,
                    const std::vector<std::size_t>& idx, bool with_prior) {
  std::vector<const ImageBuffer*> vi, ir, clean;
  std::vector<const prior::RawPrior*> pr;
  for (std::size_t i : idx) {
    vi.push_back(&data[i].vi);
    ir.push_back(&data[i].ir);
    clean.push_back(&data[i].clean);
    pr.push_back(&priors[i]);
  }
  Batch<T> b{images_to_tensor<T>(vi), images_to_tensor<T>(ir), images_to_tensor<T>(clean), {}};
  if (with_prior) b.prior = prior::stack_priors<T>(pr);
  return b;
}

template <typename T>
std::vector<double> row(const Tensor<T>& t, std::size_t r) {
  const std::size_t n = t.size(1);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(t[r * n + j]);
  return out;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

}  // namespace

template <typename T>
InferenceResult run_inference(const FuseNet<T>& model, const Dataset& data,
                              const std::vector<prior::RawPrior>& priors, std::size_t batch_size) {
  if (priors.size() != data.size()) throw std::invalid_argument("one prior per image is required");
  NoGradGuard guard;
  InferenceResult r;
  double li = 0, lc = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch<T> b = make_batch<T>(data, priors, idx, model.config().uses_prior());
    ForwardTrace<T> trace;
    const Tensor<T> fused = model.forward(b.vi, b.ir, b.prior, NormMode::eval, &trace);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      r.fused.push_back(tensor_to_image(fused, k));
      r.weights.push_back(row(trace.weights, k));
      if (trace.scores.defined()) r.scores.push_back(row(trace.scores, k));
      // Per-image losses so the mean does not depend on batch composition.
      const auto one = [&](const Tensor<T>& t, std::size_t ch) {
        const std::size_t hw = t.size(2) * t.size(3);
        std::vector<T> v(t.vec().begin() + static_cast<std::ptrdiff_t>(k * ch * hw),
                         t.vec().begin() + static_cast<std::ptrdiff_t>((k + 1) * ch * hw));
        return Tensor<T>({1, ch, t.size(2), t.size(3)}, std::move(v));
      };
      const auto l = loss::fusion_loss(one(fused, 3), one(b.clean, 3), one(b.ir, 1));
      li += static_cast<double>(l.l_inte.item());
      lc += static_cast<double>(l.l_color.item());
    }
  }
  const double n = static_cast<double>(data.size());
  r.l_inte = li / n;
  r.l_color = lc / n;
  r.l_fusion = r.l_inte + r.l_color;
  return r;
}

template <typename T>
Trainer<T>::Trainer(const ExperimentConfig& cfg, Dataset train_set, std::vector<prior::RawPrior> priors)
    : cfg_(cfg), data_(std::move(train_set)), priors_(std::move(priors)), model_(cfg.model),
      sampler_(derive_seed(cfg.train.seed, "batches")) {
  cfg_.train.validate();
  if (data_.empty()) throw std::invalid_argument("training set is empty");
  if (priors_.size() != data_.size()) throw std::invalid_argument("one prior per training image is required");
  total_ = cfg_.train.total_steps(data_.size());
  warmup_ = cfg_.train.warmup(total_);
}

template <typename T>
StepLog Trainer<T>::step() {
  if (steps_done() >= total_) throw std::logic_error("training already finished");
  const std::size_t s = steps_done();
  const double lr = lr_schedule(s, total_, warmup_, cfg_.train.lr, cfg_.train.poly_power);

  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), sampler_);
  order.resize(std::min(cfg_.train.batch_size, order.size()));
  const Batch<T> b = make_batch<T>(data_, priors_, order, model_.config().uses_prior());

  auto& tape = Tape<T>::active();
  tape.clear();
  model_.store().zero_grad();
  const Tensor<T> fused = model_.forward(b.vi, b.ir, b.prior, NormMode::train);
  const auto l = loss::fusion_loss(fused, b.clean, b.ir);
  StepLog log{s + 1, lr, static_cast<double>(l.l_inte.item()), static_cast<double>(l.l_color.item()),
              static_cast<double>(l.l_fusion.item())};
  if (!std::isfinite(log.l_fusion)) {
    tape.clear();
    throw TrainingDiverged("non-finite loss at step " + std::to_string(log.step) + ": l_inte=" +
                           std::to_string(log.l_inte) + " l_color=" + std::to_string(log.l_color));
  }
  tape.backward(l.l_fusion);
  tape.clear();
  adam_step(model_.store().params(), adam_, lr, {cfg_.train.beta1, cfg_.train.beta2, cfg_.train.adam_eps});
  history_.push_back(log);
  return log;
}

template <typename T>
void Trainer<T>::run(std::ostream* log) {
  if (log && steps_done() == 0) *log << log_csv_header();
  while (steps_done() < total_) {
    const StepLog r = step();
    if (log) *log << log_csv_row(r) << std::flush;
  }
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& dir) const {
  io::NamedTensors<T> tensors = io::collect_state(model_.store());
  const auto& params = model_.store().params();
  for (std::size_t i = 0; i < adam_.m.size(); ++i) {
    const Shape& s = params[i].second.shape();
    tensors.emplace_back("adam.m." + params[i].first, Tensor<T>(s, adam_.m[i]));
    tensors.emplace_back("adam.v." + params[i].first, Tensor<T>(s, adam_.v[i]));
  }
  io::CheckpointMeta meta{config_to_json(cfg_), adam_.step, cfg_.train.seed, rng_state(sampler_)};
  io::save_checkpoint(dir, tensors, meta);
}

template <typename T>
void Trainer<T>::load(const std::filesystem::path& dir) {
  const auto ckpt = io::load_checkpoint<T>(dir);
  io::restore_state(model_.store(), ckpt);
  adam_ = {};
  adam_.step = ckpt.meta.step;
  if (adam_.step > 0) {
    for (const auto& [name, p] : model_.store().params()) {
      const Tensor<T>* m = ckpt.find("adam.m." + name);
      const Tensor<T>* v = ckpt.find("adam.v." + name);
      if (!m || !v) throw FormatError("checkpoint lacks optimizer state for " + name);
      if (m->shape() != p.shape() || v->shape() != p.shape())
        throw DimensionError("optimizer state for " + name + " has the wrong shape");
      adam_.m.push_back(m->vec());
      adam_.v.push_back(v->vec());
    }
  }
  std::istringstream s(ckpt.meta.rng_state);
  s >> sampler_;
  if (!s) throw FormatError("checkpoint sampler state is unreadable");
  history_.clear();
}

template <typename T>
std::unique_ptr<FuseNet<T>> load_model(const std::filesystem::path& dir, ExperimentConfig* cfg_out) {
  const auto ckpt = io::load_checkpoint<T>(dir);
  const ExperimentConfig cfg = config_from_json(ckpt.meta.config);
  auto model = std::make_unique<FuseNet<T>>(cfg.model);
  io::restore_state(model->store(), ckpt);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

#define MDAIF_INSTANTIATE_TRAIN(T)                                                                     \
  template struct AdamState<T>;                                                                        \
  template void adam_step<T>(std::vector<std::pair<std::string, Tensor<T>>>&, AdamState<T>&, double, \
                             const AdamHyper&);                                                        \
  template InferenceResult run_inference<T>(const FuseNet<T>&, const Dataset&,                        \
                                            const std::vector<prior::RawPrior>&, std::size_t);         \
  template class Trainer<T>;                                                                           \
  template std::unique_ptr<FuseNet<T>> load_model<T>(const std::filesystem::path&, ExperimentConfig*);

MDAIF_INSTANTIATE_TRAIN(float)
MDAIF_INSTANTIATE_TRAIN(double)

}  // namespace mdaif
