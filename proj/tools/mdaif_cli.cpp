#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "mdaif/config.hpp"
#include "mdaif/dataset.hpp"
#include "mdaif/dcam.hpp"
#include "mdaif/degrade.hpp"
#include "mdaif/dmoe.hpp"
#include "mdaif/gradsuite.hpp"
#include "mdaif/metrics.hpp"
#include "mdaif/seed.hpp"
#include "mdaif/train.hpp"

namespace fs = std::filesystem;
using namespace mdaif;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed for data, init, sampling and prior noise");
  auto* o = cmd->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? preset("toy") : load_config(c.config);
  if (c.seed) {
    cfg.train.seed = cfg.model.init_seed = cfg.data.seed = cfg.prior.seed = *c.seed;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::string> keys(const Dataset& d) {
  std::vector<std::string> k;
  for (const auto& item : d) k.push_back(item.key());
  return k;
}

std::vector<prior::RawPrior> priors_for(const ExperimentConfig& cfg, const Dataset& d) {
  auto provider = prior::make_provider(cfg.prior);
  return extract_priors(*provider, d, cfg.prior.prompt, cfg.prior.kind == prior::ProviderConfig::Kind::mock);
}

int cmd_synth(const Common& c, std::size_t pairs_override, const std::string& severity, double ratio) {
  ExperimentConfig cfg = resolve(c);
  if (pairs_override) cfg.data.pairs = pairs_override;
  if (!severity.empty()) cfg.data.severity = severity;
  if (ratio >= 0) cfg.data.train_ratio = ratio;
  std::vector<degrade::CleanPair> pairs;
  for (std::size_t i = 0; i < cfg.data.pairs; ++i)
    pairs.push_back(degrade::procedural_pair(cfg.model.height, cfg.model.width, derive_seed(cfg.data.seed, "pair", i)));
  const auto samples = degrade::synth_dataset(pairs, cfg.data.train_ratio, cfg.data.seed,
                                              degrade::parse_severity(cfg.data.severity));
  degrade::write_dataset(samples, c.out);
  std::size_t clamped = 0;
  for (const auto& s : samples) clamped += s.params.value("clamped", std::size_t{0});
  std::cout << "wrote " << samples.size() << " samples to " << c.out << " (" << clamped << " clamped values)\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& resume, std::size_t steps) {
  ExperimentConfig cfg = resolve(c);
  if (steps) {
    cfg.train.steps = steps;
    cfg.train.epochs = 0;
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  Dataset train_set = load_dataset(data_dir, "train");
  auto priors = priors_for(cfg, train_set);
  Trainer<float> trainer(cfg, std::move(train_set), std::move(priors));
  std::ofstream log;
  if (!resume.empty()) {
    trainer.load(resume);
    log.open(out / "log.csv", std::ios::app);
  } else {
    log.open(out / "log.csv");
    log << log_csv_header();
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.steps_done() < trainer.total_steps()) {
    log << log_csv_row(trainer.step()) << std::flush;
    const std::size_t s = trainer.steps_done();
    if (cfg.train.checkpoint_every && s % cfg.train.checkpoint_every == 0 && s < trainer.total_steps())
      trainer.save(out / ("checkpoint_step" + std::to_string(s)));
  }
  trainer.save(out / "checkpoint");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Dataset eval_set;
  try {
    eval_set = load_dataset(data_dir, "test");
  } catch (const FormatError&) {
    eval_set = load_dataset(data_dir, "train");
  }
  const auto eval_priors = priors_for(cfg, eval_set);
  const InferenceResult r = run_inference(trainer.model(), eval_set, eval_priors, cfg.train.batch_size);
  const auto names = keys(eval_set);
  const auto routing = dmoe::routing_report(r.weights);
  write_text(out / "routing.csv", dmoe::routing_csv(names, routing));
  if (const auto* dc = trainer.model().dcam()) {
    write_text(out / "dcam_scores.csv", dcam::scores_csv(names, r.scores));
    const Tensor<float>& p = dc->prototypes;
    const Tensor<double> bank(p.shape(), std::vector<double>(p.vec().begin(), p.vec().end()));
    std::vector<double> mean_s(bank.size(0), 0.0);
    for (const auto& s : r.scores)
      for (std::size_t i = 0; i < s.size(); ++i) mean_s[i] += s[i] / static_cast<double>(r.scores.size());
    write_text(out / "dcam_rankings.csv", dcam::rankings_csv(bank, dcam::decompose(mean_s, bank)));
  }
  const nlohmann::json summary = {{"steps", trainer.steps_done()},
                                  {"seconds", secs},
                                  {"eval_l_inte", r.l_inte},
                                  {"eval_l_color", r.l_color},
                                  {"eval_l_fusion", r.l_fusion},
                                  {"routing_entropy_nats", routing.entropy}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_fuse(const Common& c, const std::string& ckpt, const std::string& vi, const std::string& ir,
             const std::string& data_dir, const std::string& split) {
  ExperimentConfig cfg;
  auto model = load_model<float>(ckpt, &cfg);
  if (!c.config.empty() || c.seed) {
    const ExperimentConfig over = resolve(c);
    cfg.prior = over.prior;
  }
  Dataset d;
  if (!data_dir.empty()) {
    d = load_dataset(data_dir, split);
  } else {
    if (vi.empty() || ir.empty()) throw CLI::ValidationError("fuse", "needs --vi and --ir, or --data");
    DatasetItem item;
    item.id = fs::path(vi).stem().string();
    item.vi = read_image(vi);
    item.ir = read_image(ir);
    item.clean = item.vi;
    d.push_back(std::move(item));
  }
  const InferenceResult r = run_inference(*model, d, priors_for(cfg, d), cfg.train.batch_size);
  if (data_dir.empty()) {
    write_image(r.fused[0], c.out);
    std::cout << "wrote " << c.out << "\n";
  } else {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const fs::path dir = fs::path(c.out) / degrade::to_string(d[i].label);
      fs::create_directories(dir);
      write_image(r.fused[i], dir / (d[i].id + ".ppm"));
    }
    std::cout << "wrote " << d.size() << " fused images under " << c.out << "\n";
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& pred, const std::string& ref) {
  std::vector<metrics::MetricRow> rows;
  std::vector<fs::path> cleans;
  for (const auto& e : fs::directory_iterator(ref)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 10 && name.ends_with("_clean.ppm")) cleans.push_back(e.path());
  }
  std::sort(cleans.begin(), cleans.end());
  if (cleans.empty()) throw std::runtime_error("no *_clean.ppm references in " + ref);
  for (const auto& cp : cleans) {
    const std::string file = cp.filename().string();
    const std::string id = file.substr(0, file.size() - 10);
    fs::path fp = fs::path(pred) / (id + ".ppm");
    if (!fs::exists(fp)) fp = fs::path(pred) / (id + "_fused.ppm");
    if (!fs::exists(fp)) throw std::runtime_error("no fused image for " + id + " in " + pred);
    rows.push_back(metrics::evaluate(id, read_image(fp), read_image(cp), read_image(fs::path(ref) / (id + "_ir.pgm"))));
  }
  const auto report = metrics::aggregate(std::move(rows));
  const std::string json = metrics::report_json(report).dump(2) + "\n";
  if (!c.out.empty()) {
    write_text(fs::path(c.out) / "metrics.csv", metrics::report_csv(report));
    write_text(fs::path(c.out) / "metrics.json", json);
  }
  std::cout << json;
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto entries = run_gradient_suite(c.seed.value_or(7));
  bool ok = true;
  double total = 0;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error <= kGradTolerance;
    ok = ok && pass;
    total += e.seconds;
    std::cout << (pass ? "PASS " : "FAIL ") << std::left << std::setw(32) << e.name << " max_rel_err="
              << std::scientific << std::setprecision(3) << e.max_rel_error << " analytic=" << e.analytic
              << " numeric=" << e.numeric << std::defaultfloat << "\n";
  }
  std::cout << entries.size() << " checks in " << std::fixed << std::setprecision(2) << total << " s\n";
  return ok ? 0 : 2;
}

struct Inspection {
  ExperimentConfig cfg;
  std::unique_ptr<FuseNet<float>> model;
  Dataset data;
  InferenceResult result;
};

Inspection inspect(const std::string& ckpt, const std::string& data_dir, const std::string& split) {
  Inspection in;
  in.model = load_model<float>(ckpt, &in.cfg);
  in.data = load_dataset(data_dir, split);
  in.result = run_inference(*in.model, in.data, priors_for(in.cfg, in.data), in.cfg.train.batch_size);
  return in;
}

int cmd_inspect_routing(const Common& c, const std::string& ckpt, const std::string& data_dir, const std::string& split) {
  const Inspection in = inspect(ckpt, data_dir, split);
  const std::string csv = dmoe::routing_csv(keys(in.data), dmoe::routing_report(in.result.weights));
  if (c.out.empty()) std::cout << csv;
  else write_text(c.out, csv);
  return 0;
}

int cmd_inspect_dcam(const Common& c, const std::string& ckpt, const std::string& data_dir, const std::string& split,
                     std::size_t top_n) {
  const Inspection in = inspect(ckpt, data_dir, split);
  const auto* dc = in.model->dcam();
  if (!dc) throw std::runtime_error("checkpoint was trained without DCAM");
  const Tensor<float>& p = dc->prototypes;
  const Tensor<double> bank(p.shape(), std::vector<double>(p.vec().begin(), p.vec().end()));
  std::vector<double> mean_s(bank.size(0), 0.0);
  for (const auto& s : in.result.scores)
    for (std::size_t i = 0; i < s.size(); ++i) mean_s[i] += s[i] / static_cast<double>(in.result.scores.size());
  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  write_text(out / "dcam_scores.csv", dcam::scores_csv(keys(in.data), in.result.scores));
  write_text(out / "dcam_rankings.csv", dcam::rankings_csv(bank, dcam::decompose(mean_s, bank, top_n)));
  std::cout << "wrote " << (out / "dcam_scores.csv").string() << " and " << (out / "dcam_rankings.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdaif: degradation-aware infrared/visible image fusion"};
  app.require_subcommand(1);

  Common synth_c, train_c, fuse_c, eval_c, grad_c, route_c, dcam_c;
  std::size_t pairs = 0, steps = 0, top_n = 10;
  std::string severity, data_dir, resume, ckpt, vi, ir, split = "test", pred, ref;
  double ratio = -1;

  auto* synth = app.add_subcommand("synth", "generate a degraded toy dataset");
  add_common(synth, synth_c, true);
  synth->add_option("--pairs", pairs, "clean pairs (each yields haze, rain and snow samples)");
  synth->add_option("--severity", severity, "light | medium | heavy");
  synth->add_option("--train-ratio", ratio, "fraction of clean pairs in the train split");

  auto* train = app.add_subcommand("train", "train a fusion model");
  add_common(train, train_c, true);
  train->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--resume", resume, "checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  train->add_option("--steps", steps, "override the total step count");

  auto* fuse = app.add_subcommand("fuse", "fuse an image pair or a dataset split");
  add_common(fuse, fuse_c, true);
  fuse->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  fuse->add_option("--vi", vi, "visible PPM")->check(CLI::ExistingFile);
  fuse->add_option("--ir", ir, "infrared PGM")->check(CLI::ExistingFile);
  fuse->add_option("--data", data_dir, "dataset directory (batch mode)")->check(CLI::ExistingDirectory);
  fuse->add_option("--split", split, "dataset split for batch mode");

  auto* eval = app.add_subcommand("eval", "score fused images against references");
  add_common(eval, eval_c, false);
  eval->add_option("--pred", pred, "directory of fused {id}.ppm")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ref", ref, "directory of {id}_clean.ppm and {id}_ir.pgm")->required()->check(CLI::ExistingDirectory);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(grad, grad_c, false);

  auto* route = app.add_subcommand("inspect-routing", "per-image expert weights and usage entropy");
  add_common(route, route_c, false);
  route->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  route->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  route->add_option("--split", split, "dataset split");

  auto* dcam_cmd = app.add_subcommand("inspect-dcam", "prototype scores and channel rankings");
  add_common(dcam_cmd, dcam_c, false);
  dcam_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  dcam_cmd->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  dcam_cmd->add_option("--split", split, "dataset split");
  dcam_cmd->add_option("--top", top_n, "channels listed per prototype");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(synth_c, pairs, severity, ratio);
    if (*train) return cmd_train(train_c, data_dir, resume, steps);
    if (*fuse) return cmd_fuse(fuse_c, ckpt, vi, ir, data_dir, split);
    if (*eval) return cmd_eval(eval_c, pred, ref);
    if (*grad) return cmd_gradcheck(grad_c);
    if (*route) return cmd_inspect_routing(route_c, ckpt, data_dir, split);
    if (*dcam_cmd) return cmd_inspect_dcam(dcam_c, ckpt, data_dir, split, top_n);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
