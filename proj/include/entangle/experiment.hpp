#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "entangle/baselines.hpp"
#include "entangle/estimator.hpp"
#include "entangle/io.hpp"
#include "entangle/metrics.hpp"
#include "entangle/simulator.hpp"
#include "entangle/split.hpp"

namespace entangle {

/// Everything one invocation needs: simulation, training, split, methods.
struct RunConfig {
  SimConfig sim;
  TrainConfig train;
  SplitFractions split;
  std::vector<std::string> methods{"neat"};
  std::filesystem::path out_dir = "out";
  std::size_t repeats = 1;
  std::string dataset;  // train-eval / ablate input; defaults to <out>/dataset.txt
  std::string truth;    // defaults to <out>/truth.txt
  std::vector<double> lambdas{0.0, 0.5, 1.0};
  std::vector<double> betas{0.5};
  bool write_effects = true;

  void validate() const {
    sim.validate();
    train.validate();
    split.validate();
    if (methods.empty()) throw std::invalid_argument("RunConfig: no methods selected");
    for (const auto& m : methods)
      if (m != "neat" && m != "s_learner" && m != "naive")
        throw std::invalid_argument("RunConfig: unknown method '" + m + "'");
    if (repeats == 0) throw std::invalid_argument("RunConfig: repeats must be positive");
  }

  std::string dataset_path() const { return dataset.empty() ? (out_dir / "dataset.txt").string() : dataset; }
  std::string truth_path() const { return truth.empty() ? (out_dir / "truth.txt").string() : truth; }
  std::string results_path() const { return (out_dir / "results.csv").string(); }
};

/// Short stable digest of the settings that determine a result.
inline std::string fingerprint(const RunConfig& c, const std::string& method) {
  std::ostringstream s;
  s << method << '|' << to_string(c.train.variant) << '|' << c.sim.n_units << '|' << c.sim.n_timestamps << '|'
    << c.sim.lambda << '|' << c.sim.beta << '|' << c.sim.seed << '|' << c.train.epochs << '|'
    << c.train.learning_rate << '|' << c.train.seed << '|' << c.split.train << '|' << c.split.validation;
  const std::string str = s.str();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(tag(str)));
  return buf;
}

/// Fits one method on the panel and returns τ̂ for all units at every
/// timestamp. Only the panel and training units are visible here.
inline std::vector<Eigen::VectorXd> estimate(const std::string& method, const PanelDataset& panel,
                                             const UnitSplit& split, const TrainConfig& train,
                                             double t, double t0, TwoStageModel* fitted = nullptr) {
  if (method == "s_learner") return s_learner_effects(panel, split.train, t, t0);
  if (method == "naive") return naive_outcome_regression(panel, split.train, t, t0);
  if (method == "neat") {
    TwoStageModel m = fit_two_stage(panel, split.train, train);
    auto tau = estimate_effects(m, panel, t, t0);
    if (fitted) *fitted = std::move(m);
    return tau;
  }
  throw std::invalid_argument("unknown method '" + method + "'");
}

inline std::string variant_label(const std::string& method, Variant v) {
  return method == "neat" ? to_string(v) : "-";
}

/// Split and training seeds for repeat r of a run seeded with `seed`.
inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) { return seed + r; }

/// Estimates with one method and writes its effects file and checkpoints.
inline std::vector<Eigen::VectorXd> estimate_and_save(const RunConfig& cfg, const std::string& method,
                                                      const PanelDataset& panel, const UnitSplit& split,
                                                      const TrainConfig& train, double t, double t0,
                                                      const std::string& suffix = "") {
  TwoStageModel fitted;
  auto tau_hat = estimate(method, panel, split, train, t, t0, &fitted);
  if (cfg.write_effects) {
    const std::string stem = method + (method == "neat" ? "_" + to_string(train.variant) : "") + "_seed" +
                             std::to_string(train.seed) + suffix;
    io::write_effects_csv((cfg.out_dir / ("effects_" + stem + ".csv")).string(), tau_hat);
    if (method == "neat") {
      dc::save_checkpoint((cfg.out_dir / (stem + ".stage1.ckpt")).string(), fitted.stage1.params);
      dc::save_checkpoint((cfg.out_dir / (stem + ".stage2.ckpt")).string(), fitted.stage2.params);
    }
  }
  return tau_hat;
}

inline EvalReport make_report(const RunConfig& cfg, const std::string& method, std::uint64_t seed,
                              const std::vector<Eigen::VectorXd>& tau_hat,
                              const std::vector<Eigen::VectorXd>& tau_true, const UnitSplit& split) {
  EvalReport r = evaluate(tau_hat, tau_true, split.test);
  r.method = method;
  r.variant = variant_label(method, cfg.train.variant);
  r.seed = seed;
  r.lambda = cfg.sim.lambda;
  r.beta = cfg.sim.beta;
  RunConfig fc = cfg;
  fc.train.seed = seed;
  r.fingerprint = fingerprint(fc, method);
  return r;
}

/// Estimates every selected method on an in-memory panel, then evaluates on
/// the test units.
inline std::vector<EvalReport> run_methods(const RunConfig& cfg, const PanelDataset& panel,
                                           const std::vector<Eigen::VectorXd>& tau_true,
                                           double t, double t0, std::uint64_t seed,
                                           const std::string& suffix = "") {
  const UnitSplit split = make_split(panel.units(), cfg.split, seed);
  TrainConfig train = cfg.train;
  train.seed = seed;
  std::vector<EvalReport> reports;
  for (const auto& method : cfg.methods) {
    const auto tau_hat = estimate_and_save(cfg, method, panel, split, train, t, t0, suffix);
    reports.push_back(make_report(cfg, method, seed, tau_hat, tau_true, split));
  }
  return reports;
}

inline void append_reports(const RunConfig& cfg, const std::vector<EvalReport>& reports) {
  std::vector<std::string> rows;
  for (const auto& r : reports)
    for (auto& row : report_rows(r)) rows.push_back(std::move(row));
  io::append_locked(cfg.results_path(), kResultsHeader, rows);
}

struct SimulateOutput {
  std::string dataset_path;
  std::string truth_path;
};

inline SimulateOutput cmd_simulate(const RunConfig& cfg) {
  cfg.sim.validate();
  const SimulationResult sim = simulate_panel(cfg.sim);
  SimulateOutput out{cfg.dataset_path(), cfg.truth_path()};
  io::write_panel(out.dataset_path, sim.panel);
  io::write_truth(out.truth_path, sim.truth);
  return out;
}

/// Trains and evaluates the selected methods `repeats` times on one dataset.
/// The ground truth is read only after every estimate has been produced.
inline std::vector<EvalReport> cmd_train_eval(const RunConfig& cfg) {
  cfg.validate();
  const PanelDataset panel = io::read_panel(cfg.dataset_path());
  if (!std::filesystem::exists(cfg.truth_path()))
    throw io::IoError("ground truth required for metrics but not found: " + cfg.truth_path());
  std::vector<EvalReport> all;
  struct Pending {
    std::vector<Eigen::VectorXd> tau_hat;
    UnitSplit split;
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Pending> pending;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(cfg.sim.seed, r);
    const UnitSplit split = make_split(panel.units(), cfg.split, seed);
    TrainConfig train = cfg.train;
    train.seed = seed;
    for (const auto& method : cfg.methods)
      pending.push_back({estimate_and_save(cfg, method, panel, split, train, 1.0, 0.0), split, method, seed});
  }

  const GroundTruth truth = io::read_truth(cfg.truth_path());
  if (truth.effects.size() != panel.timestamps())
    throw io::IoError("ground truth timestamp count does not match dataset: " + cfg.truth_path());
  if (panel.treatment_kind == TreatmentKind::Continuous && (truth.t_treated != 1.0 || truth.t_baseline != 0.0))
    throw std::invalid_argument("train-eval: estimates use the contrast (1, 0) but truth stores (" +
                                io::fmt9(truth.t_treated) + ", " + io::fmt9(truth.t_baseline) + ")");
  for (const auto& p : pending) all.push_back(make_report(cfg, p.method, p.seed, p.tau_hat, truth.effects, p.split));
  append_reports(cfg, all);
  return all;
}

/// Runs every variant of the two-stage estimator on one dataset.
inline std::vector<EvalReport> cmd_ablate(const RunConfig& cfg) {
  std::vector<EvalReport> all;
  for (Variant v : {Variant::Full, Variant::NT, Variant::NG, Variant::NH}) {
    RunConfig c = cfg;
    c.methods = {"neat"};
    c.train.variant = v;
    auto r = cmd_train_eval(c);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

/// One simulate + estimate + evaluate cycle per (λ, β, repeat). Each cycle's
/// simulation and training seeds derive from the master seed and repeat index.
inline std::vector<EvalReport> cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.lambdas.empty() || cfg.betas.empty()) throw std::invalid_argument("sweep: empty grid");
  std::vector<EvalReport> all;
  for (double lambda : cfg.lambdas)
    for (double beta : cfg.betas)
      for (std::size_t r = 0; r < cfg.repeats; ++r) {
        RunConfig c = cfg;
        c.sim.lambda = lambda;
        c.sim.beta = beta;
        c.sim.seed = repeat_seed(cfg.sim.seed, r);
        c.sim.validate();
        const SimulationResult sim = simulate_panel(c.sim);
        std::ostringstream suffix;
        suffix << "_lambda" << format_g6(lambda) << "_beta" << format_g6(beta);
        auto reps = run_methods(c, sim.panel, sim.truth.effects, c.sim.t_treated, c.sim.t_baseline,
                                c.sim.seed, suffix.str());
        append_reports(c, reps);
        all.insert(all.end(), reps.begin(), reps.end());
      }
  return all;
}

}  // namespace entangle
