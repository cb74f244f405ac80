#pragma once

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "entangle/experiment.hpp"

// Command-line front end. Every option lives on the top-level app so a flat
// `key = value` config file can set any of them and a flag of the same name
// overrides it; subcommands only select the action.

namespace entangle::cli {

struct CliState {
  RunConfig cfg;
  std::string command;
  double edge_prob = -1.0;
  std::string variant = "Full";
  std::string treatment_kind = "binary";
  std::vector<double> split{0.6, 0.2, 0.2};
  bool no_effects = false;
};

inline void build_app(CLI::App& app, CliState& st) {
  auto& c = st.cfg;
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key = value config file; flags override its values");

  app.add_option("--seed", c.sim.seed, "master seed")->capture_default_str();
  app.add_option("--out", c.out_dir, "output directory")->capture_default_str();
  app.add_option("--lambda", c.sim.lambda, "treatment entanglement weight")->capture_default_str();
  app.add_option("--beta", c.sim.beta, "hidden-confounder strength")->capture_default_str();
  app.add_option("--method", c.methods, "neat, s_learner, naive (repeatable or comma-separated)")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--variant", st.variant, "Full, NT, NG or NH")->capture_default_str();
  app.add_option("--epochs", c.train.epochs, "training epochs per stage")->capture_default_str();
  app.add_option("--lr", c.train.learning_rate, "learning rate")->capture_default_str();

  app.add_option("--units", c.sim.n_units)->capture_default_str();
  app.add_option("--timestamps", c.sim.n_timestamps)->capture_default_str();
  app.add_option("--feature-dim", c.sim.d_x)->capture_default_str();
  app.add_option("--confounder-dim", c.sim.d_u)->capture_default_str();
  app.add_option("--sim-history-dim", c.sim.d_m)->capture_default_str();
  app.add_option("--mu", c.sim.mu)->capture_default_str();
  app.add_option("--lag", c.sim.lag)->capture_default_str();
  app.add_option("--mean-degree", c.sim.mean_degree)->capture_default_str();
  app.add_option("--edge-prob", st.edge_prob, "explicit edge probability (overrides --mean-degree)");
  app.add_option("--treatment-kind", st.treatment_kind, "binary or continuous")->capture_default_str();
  app.add_option("--feature-noise", c.sim.feature_noise_sd)->capture_default_str();
  app.add_option("--treatment-noise", c.sim.treatment_noise_sd)->capture_default_str();
  app.add_option("--outcome-noise", c.sim.outcome_noise_sd)->capture_default_str();
  app.add_option("--t-treated", c.sim.t_treated)->capture_default_str();
  app.add_option("--t-baseline", c.sim.t_baseline)->capture_default_str();

  app.add_option("--mc-samples", c.train.mc_samples)->capture_default_str();
  app.add_option("--hidden", c.train.hidden)->capture_default_str();
  app.add_option("--embedding-dim", c.train.d_z)->capture_default_str();
  app.add_option("--history-dim", c.train.d_m)->capture_default_str();
  app.add_option("--mixture-components", c.train.mixture_components)->capture_default_str();

  app.add_option("--split", st.split, "train,validation,test fractions")->delimiter(',')->expected(3)
      ->capture_default_str();
  app.add_option("--repeats", c.repeats, "seeds per run (seed, seed+1, ...)")->capture_default_str();
  app.add_option("--dataset", c.dataset, "panel file (default <out>/dataset.txt)");
  app.add_option("--truth", c.truth, "ground-truth file (default <out>/truth.txt)");
  app.add_option("--lambdas", c.lambdas, "sweep grid for lambda")->delimiter(',')->capture_default_str();
  app.add_option("--betas", c.betas, "sweep grid for beta")->delimiter(',')->capture_default_str();
  app.add_flag("--no-effects", st.no_effects, "skip per-unit effects files and checkpoints");

  for (const char* name : {"simulate", "train-eval", "sweep", "ablate"}) {
    auto* sub = app.add_subcommand(name);
    sub->callback([&st, n = std::string(name)] { st.command = n; });
  }
  app.get_subcommand("simulate")->description("write a synthetic panel and its ground truth");
  app.get_subcommand("train-eval")->description("fit methods on a panel and append metrics");
  app.get_subcommand("sweep")->description("simulate, fit and evaluate over lambda/beta grids");
  app.get_subcommand("ablate")->description("fit every estimator variant on a panel");
}

/// Copies parsed string-valued options into the typed config.
inline void finalize(CliState& st) {
  auto& c = st.cfg;
  if (st.edge_prob >= 0.0) c.sim.edge_prob = st.edge_prob;
  c.train.variant = parse_variant(st.variant);
  c.sim.treatment_kind = parse_treatment_kind(st.treatment_kind);
  c.split = {st.split.at(0), st.split.at(1), st.split.at(2)};
  c.write_effects = !st.no_effects;
}

inline void print_reports(std::ostream& os, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports)
    os << r.method << ' ' << r.variant << " seed=" << r.seed << " lambda=" << format_g6(r.lambda)
       << " beta=" << format_g6(r.beta) << " sqrt_pehe=" << format_g6(r.average.pehe)
       << " ate_err=" << format_g6(r.average.ate_err) << " [" << r.fingerprint << "]\n";
}

inline int run(CliState& st, std::ostream& os) {
  finalize(st);
  if (st.command == "simulate") {
    const auto out = cmd_simulate(st.cfg);
    os << "wrote " << out.dataset_path << " and " << out.truth_path << '\n';
  } else if (st.command == "train-eval") {
    print_reports(os, cmd_train_eval(st.cfg));
  } else if (st.command == "sweep") {
    print_reports(os, cmd_sweep(st.cfg));
  } else if (st.command == "ablate") {
    print_reports(os, cmd_ablate(st.cfg));
  } else {
    throw std::invalid_argument("no command selected");
  }
  return 0;
}

}  // namespace entangle::cli
