#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entangle/dyngraph.hpp"
#include "entangle/random.hpp"

namespace entangle {

enum class TreatmentKind { Binary, Continuous };

inline std::string to_string(TreatmentKind k) {
  return k == TreatmentKind::Binary ? "binary" : "continuous";
}

inline TreatmentKind parse_treatment_kind(const std::string& s) {
  if (s == "binary") return TreatmentKind::Binary;
  if (s == "continuous") return TreatmentKind::Continuous;
  throw std::invalid_argument("unknown treatment kind '" + s + "'");
}

/// Generative configuration for one synthetic panel.
struct SimConfig {
  std::size_t n_units = 500;
  std::size_t n_timestamps = 4;
  std::size_t d_x = 5;
  std::size_t d_u = 8;
  std::size_t d_t = 1;
  /// Width of the simulated history state M (hidden from the estimator).
  std::size_t d_m = 4;
  double lambda = 0.5;
  double beta = 0.5;
  double mu = 20.0;
  std::size_t lag = 3;
  /// Explicit ER probability; when unset it is derived from mean_degree.
  std::optional<double> edge_prob;
  double mean_degree = 2.0;
  TreatmentKind treatment_kind = TreatmentKind::Binary;
  std::uint64_t seed = 0;

  double feature_noise_sd = 0.1;
  double treatment_noise_sd = 0.01;
  double outcome_noise_sd = 0.1;
  double confounder_noise_sd = 1.0;
  /// Scale of Θ_u entries.
  double theta_u_sd = 0.5;
  /// Scale of Θ_{t,u} entries; 0 removes U from the treatment logit.
  double theta_t_u_sd = 0.5;

  /// Contrast used for the stored potential outcomes Y(t) and Y(t0).
  double t_treated = 1.0;
  double t_baseline = 0.0;

  double effective_edge_prob() const {
    if (edge_prob) return *edge_prob;
    if (n_units < 2) return 0.0;
    return std::min(1.0, mean_degree / static_cast<double>(n_units - 1));
  }

  std::size_t input_dim() const { return d_x + d_m; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SimConfig: " + m); };
    if (n_units == 0) fail("n_units must be positive");
    if (n_timestamps == 0) fail("n_timestamps must be positive");
    if (d_x == 0 || d_u == 0 || d_m == 0) fail("dimensions must be positive");
    if (d_t != 1) fail("only scalar treatments (d_t = 1) are supported");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
    if (!(beta >= 0.0)) fail("beta must be nonnegative");
    if (!(mu >= 0.0)) fail("mu must be nonnegative");
    if (lag == 0) fail("lag must be positive");
    if (n_timestamps > 1 && lag >= n_timestamps) fail("lag must be smaller than n_timestamps");
    const double p = effective_edge_prob();
    if (!(p >= 0.0 && p <= 1.0)) fail("edge_prob must lie in [0, 1]");
    if (feature_noise_sd < 0 || treatment_noise_sd < 0 || outcome_noise_sd < 0 ||
        confounder_noise_sd < 0 || theta_u_sd < 0 || theta_t_u_sd < 0)
      fail("noise scales must be nonnegative");
    if (treatment_kind == TreatmentKind::Binary &&
        !((t_treated == 0.0 || t_treated == 1.0) && (t_baseline == 0.0 || t_baseline == 1.0)))
      fail("binary contrast values must be 0 or 1");
  }
};

/// Coefficients of the generative model, fixed once drawn for a seed.
/// Treatment and outcome coefficients act on the concatenation [X, M].
struct SimParams {
  Eigen::VectorXd theta_t_x;  // d_x + d_m
  Eigen::VectorXd theta_t_u;  // d_u
  Eigen::VectorXd theta_y;    // d_x + d_m
  Eigen::VectorXd theta_0;    // d_x + d_m
  Eigen::VectorXd theta_u;    // d_u
  Eigen::MatrixXd psi;        // d_x × d_u
  Eigen::MatrixXd psi_u;      // d_u × d_m
  // Per-lag history weights, index r-1 for lag r; each maps its source to d_m.
  std::vector<Eigen::MatrixXd> w_u, w_x, w_t, w_y;

  friend bool operator==(const SimParams& a, const SimParams& b) {
    auto eq = [](const std::vector<Eigen::MatrixXd>& x, const std::vector<Eigen::MatrixXd>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i].rows() != y[i].rows() || x[i].cols() != y[i].cols() || x[i] != y[i]) return false;
      return true;
    };
    return a.theta_t_x == b.theta_t_x && a.theta_t_u == b.theta_t_u && a.theta_y == b.theta_y &&
           a.theta_0 == b.theta_0 && a.theta_u == b.theta_u && a.psi == b.psi &&
           a.psi_u == b.psi_u && eq(a.w_u, b.w_u) && eq(a.w_x, b.w_x) && eq(a.w_t, b.w_t) &&
           eq(a.w_y, b.w_y);
  }
};

/// Observational panel {X, A, T, Y} over P timestamps.
struct PanelDataset {
  TreatmentKind treatment_kind = TreatmentKind::Binary;
  std::vector<Eigen::MatrixXd> features;    // P × (N × d_x)
  DynamicGraph graphs;
  std::vector<Eigen::VectorXd> treatments;  // P × N
  std::vector<Eigen::VectorXd> outcomes;    // P × N

  std::size_t timestamps() const { return features.size(); }
  std::size_t units() const { return features.empty() ? 0 : static_cast<std::size_t>(features[0].rows()); }
  std::size_t feature_dim() const { return features.empty() ? 0 : static_cast<std::size_t>(features[0].cols()); }

  void validate() const {
    const auto P = timestamps();
    if (P == 0) throw std::invalid_argument("PanelDataset: empty panel");
    if (graphs.timestamps() != P || treatments.size() != P || outcomes.size() != P)
      throw std::invalid_argument("PanelDataset: timestamp count mismatch across fields");
    const auto N = static_cast<Eigen::Index>(units());
    for (std::size_t p = 0; p < P; ++p) {
      if (features[p].rows() != N || features[p].cols() != features[0].cols() ||
          treatments[p].size() != N || outcomes[p].size() != N || graphs[p].n() != units())
        throw std::invalid_argument("PanelDataset: unit count mismatch at timestamp " +
                                    std::to_string(p));
      if (treatment_kind == TreatmentKind::Binary)
        for (Eigen::Index i = 0; i < N; ++i)
          if (treatments[p](i) != 0.0 && treatments[p](i) != 1.0)
            throw std::invalid_argument("PanelDataset: binary treatment outside {0, 1}");
    }
  }
};

/// Simulator-only quantities; never consumed by estimators.
struct GroundTruth {
  double t_treated = 1.0;
  double t_baseline = 0.0;
  std::vector<Eigen::MatrixXd> confounders;  // P × (N × d_u)
  std::vector<Eigen::VectorXd> y_treated;    // Y(t)
  std::vector<Eigen::VectorXd> y_baseline;   // Y(t0)
  std::vector<Eigen::VectorXd> effects;      // Y(t) - Y(t0)
  std::vector<Eigen::MatrixXd> histories;    // P × (N × d_m)
};

struct SimulationResult {
  PanelDataset panel;
  GroundTruth truth;
  SimParams params;
};

namespace detail {

inline Eigen::VectorXd normal_vector(Eigen::Index n, double mean, double sd, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = draw_normal(rng, mean, sd);
  return v;
}

inline Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c, double mean, double sd,
                                     Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = draw_normal(rng, mean, sd);
  return m;
}

inline Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

template <class M>
M unit_rms(const M& m) {
  const double rms = m.size() ? std::sqrt(m.squaredNorm() / static_cast<double>(m.size())) : 0.0;
  return rms > 0.0 ? M(m / rms) : m;
}

}  // namespace detail

/// Draws every coefficient family. Θ_{t,*} ~ N(0, 0.5²), Θ_y ~ N(0, 0.1²),
/// Θ_0 ~ N(0, 0.05²), W^r ~ N(1 - r/R, (1/R)²); ψ and ψ_u have zero-mean
/// entries with standard deviation 1/√(input width).
inline SimParams draw_parameters(const SimConfig& cfg, Rng& rng) {
  using detail::idx;
  using detail::normal_matrix;
  using detail::normal_vector;
  const auto in = idx(cfg.input_dim());
  const auto du = idx(cfg.d_u);
  const auto dx = idx(cfg.d_x);
  const auto dm = idx(cfg.d_m);

  SimParams p;
  p.theta_t_x = normal_vector(in, 0.0, 0.5, rng);
  p.theta_t_u = normal_vector(du, 0.0, cfg.theta_t_u_sd, rng);
  p.theta_y = normal_vector(in, 0.0, 0.1, rng);
  p.theta_0 = normal_vector(in, 0.0, 0.05, rng);
  p.theta_u = normal_vector(du, 0.0, cfg.theta_u_sd, rng);
  p.psi = normal_matrix(dx, du, 0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_u)), rng);
  p.psi_u = normal_matrix(du, dm, 0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_m)), rng);

  const double R = static_cast<double>(cfg.lag);
  for (std::size_t r = 1; r <= cfg.lag; ++r) {
    const double mean = 1.0 - static_cast<double>(r) / R;
    const double sd = 1.0 / R;
    p.w_u.push_back(normal_matrix(dm, du, mean, sd, rng));
    p.w_x.push_back(normal_matrix(dm, dx, mean, sd, rng));
    p.w_t.push_back(normal_matrix(dm, idx(cfg.d_t), mean, sd, rng));
    p.w_y.push_back(normal_matrix(dm, 1, mean, sd, rng));
  }
  return p;
}

/// U_i ~ N(0, μ I) for the first (or only) timestamp.
inline Eigen::MatrixXd simulate_confounders_static(const SimConfig& cfg, Rng& rng) {
  if (!(cfg.mu >= 0.0)) throw std::invalid_argument("simulate_confounders_static: mu < 0");
  return detail::normal_matrix(detail::idx(cfg.n_units), detail::idx(cfg.d_u), 0.0,
                               std::sqrt(cfg.mu), rng);
}

/// X = ψ(U) + ε_x.
inline Eigen::MatrixXd simulate_features(const Eigen::MatrixXd& confounders,
                                         const SimParams& params, double noise_sd, Rng& rng) {
  if (confounders.cols() != params.psi.cols())
    throw std::invalid_argument("simulate_features: confounder width mismatch");
  Eigen::MatrixXd x = confounders * params.psi.transpose();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += draw_normal(rng, 0.0, noise_sd);
  return x;
}

/// Noise-free treatment logit split into its three contributions.
struct TreatmentLogitTerms {
  Eigen::VectorXd own;         // (1-λ)·Θ_{t,x}ᵀ[X_i, M_i]
  Eigen::VectorXd neighbor;    // λ·mean_j Θ_{t,x}ᵀ[X_j, M_j]
  Eigen::VectorXd confounder;  // Θ_{t,u}ᵀU_i

  Eigen::VectorXd total() const { return own + neighbor + confounder; }
};

inline TreatmentLogitTerms treatment_logit_terms(const GraphSnapshot& g,
                                                 const Eigen::MatrixXd& inputs,
                                                 const Eigen::MatrixXd& confounders,
                                                 const SimParams& params, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("simulate_treatment: lambda must lie in [0, 1]");
  if (inputs.cols() != params.theta_t_x.size() || confounders.cols() != params.theta_t_u.size() ||
      inputs.rows() != confounders.rows() || static_cast<std::size_t>(inputs.rows()) != g.n())
    throw std::invalid_argument("simulate_treatment: dimension mismatch");
  const Eigen::VectorXd score = inputs * params.theta_t_x;
  TreatmentLogitTerms terms;
  terms.own = (1.0 - lambda) * score;
  terms.neighbor = lambda * neighbor_mean(g, score);
  terms.confounder = confounders * params.theta_t_u;
  return terms;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Entangled treatment assignment. Binary kind passes the noisy logit through
/// a sigmoid and samples a Bernoulli; continuous kind returns the logit.
inline Eigen::VectorXd simulate_treatment(const GraphSnapshot& g, const Eigen::MatrixXd& inputs,
                                          const Eigen::MatrixXd& confounders,
                                          const SimParams& params, double lambda,
                                          TreatmentKind kind, double noise_sd, Rng& rng) {
  Eigen::VectorXd logit = treatment_logit_terms(g, inputs, confounders, params, lambda).total();
  for (Eigen::Index i = 0; i < logit.size(); ++i) logit(i) += draw_normal(rng, 0.0, noise_sd);
  if (kind == TreatmentKind::Continuous) return logit;
  Eigen::VectorXd t(logit.size());
  for (Eigen::Index i = 0; i < logit.size(); ++i)
    t(i) = draw_uniform(rng) < sigmoid(logit(i)) ? 1.0 : 0.0;
  return t;
}

struct OutcomeDraw {
  Eigen::VectorXd observed;
  Eigen::VectorXd at_treated;   // Y(t)
  Eigen::VectorXd at_baseline;  // Y(t0)
};

/// Y_i(t) = t·Θ_yᵀX_i + Θ_0ᵀX_i + βΘ_uᵀU_i + ε_y with one ε_y realization per
/// unit shared by every treatment value.
inline OutcomeDraw simulate_outcomes(const Eigen::MatrixXd& inputs,
                                     const Eigen::MatrixXd& confounders,
                                     const Eigen::VectorXd& treatments, const SimParams& params,
                                     double beta, double t_treated, double t_baseline,
                                     double noise_sd, Rng& rng) {
  if (inputs.rows() != treatments.size() || inputs.rows() != confounders.rows() ||
      inputs.cols() != params.theta_y.size() || confounders.cols() != params.theta_u.size())
    throw std::invalid_argument("simulate_outcomes: dimension mismatch");
  const Eigen::VectorXd effect = inputs * params.theta_y;
  Eigen::VectorXd base = inputs * params.theta_0 + beta * (confounders * params.theta_u);
  for (Eigen::Index i = 0; i < base.size(); ++i) base(i) += draw_normal(rng, 0.0, noise_sd);
  OutcomeDraw out;
  out.observed = base + treatments.cwiseProduct(effect);
  out.at_treated = base + t_treated * effect;
  out.at_baseline = base + t_baseline * effect;
  return out;
}

/// Observed quantities at one earlier timestamp.
struct LagFrame {
  const Eigen::MatrixXd* confounders = nullptr;
  const Eigen::MatrixXd* features = nullptr;
  const Eigen::VectorXd* treatments = nullptr;
  const Eigen::VectorXd* outcomes = nullptr;
};

/// M_i^p = Σ_r W_u^r U_i^{p-r} + W_x^r X_i^{p-r} + W_t^r T_i^{p-r} + W_y^r Y_i^{p-r}.
/// `lags[r-1]` holds timestamp p-r; missing lags are zero. Each block is
/// scaled by 1/(source width) so the recurrent chain keeps a stable scale.
inline Eigen::MatrixXd roll_history(std::span<const LagFrame> lags, const SimParams& params,
                                    std::size_t n_units) {
  const auto dm = params.psi_u.cols();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(detail::idx(n_units), dm);
  const std::size_t R = params.w_u.size();
  for (std::size_t r = 1; r <= std::min(R, lags.size()); ++r) {
    const LagFrame& f = lags[r - 1];
    if (f.confounders)
      m += (*f.confounders * params.w_u[r - 1].transpose()) /
           static_cast<double>(f.confounders->cols());
    if (f.features)
      m += (*f.features * params.w_x[r - 1].transpose()) / static_cast<double>(f.features->cols());
    if (f.treatments) m += *f.treatments * params.w_t[r - 1].col(0).transpose();
    if (f.outcomes) m += *f.outcomes * params.w_y[r - 1].col(0).transpose();
  }
  return m;
}

/// U^p = ψ_u(M^p) + ε_u.
inline Eigen::MatrixXd simulate_confounders_dynamic(const Eigen::MatrixXd& history,
                                                    const SimParams& params, double noise_sd,
                                                    Rng& rng) {
  if (history.cols() != params.psi_u.cols())
    throw std::invalid_argument("simulate_confounders_dynamic: history width mismatch");
  Eigen::MatrixXd u = history * params.psi_u.transpose();
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j) u(i, j) += draw_normal(rng, 0.0, noise_sd);
  return u;
}

/// Stream purposes; each (purpose, timestamp) pair owns an independent stream.
namespace streams {
inline constexpr std::uint64_t params = tag("sim.params");
inline constexpr std::uint64_t graph = tag("sim.graph");
inline constexpr std::uint64_t confounder = tag("sim.confounder");
inline constexpr std::uint64_t feature = tag("sim.feature");
inline constexpr std::uint64_t treatment = tag("sim.treatment");
inline constexpr std::uint64_t outcome = tag("sim.outcome");
}  // namespace streams

/// Full dynamic chain: graph → confounders → features → treatment → outcomes,
/// with history M feeding the confounders and concatenated to X for the
/// treatment and outcome equations. P = 1 is the static chain.
inline SimulationResult simulate_panel(const SimConfig& cfg) {
  cfg.validate();
  const std::size_t P = cfg.n_timestamps;
  const std::size_t N = cfg.n_units;

  SimulationResult res;
  Rng param_rng = make_stream(cfg.seed, {streams::params});
  res.params = draw_parameters(cfg, param_rng);
  const SimParams& sp = res.params;

  auto& panel = res.panel;
  auto& truth = res.truth;
  panel.treatment_kind = cfg.treatment_kind;
  truth.t_treated = cfg.t_treated;
  truth.t_baseline = cfg.t_baseline;

  std::vector<GraphSnapshot> snapshots;
  snapshots.reserve(P);
  // History sources rescaled to unit RMS; without this the Y -> M -> U -> Y
  // loop is expansive for large beta and the panel diverges within a few steps.
  std::vector<Eigen::MatrixXd> scaled_u, scaled_x;
  std::vector<Eigen::VectorXd> scaled_t, scaled_y;
  scaled_u.reserve(P);
  scaled_x.reserve(P);
  scaled_t.reserve(P);
  scaled_y.reserve(P);
  for (std::size_t p = 0; p < P; ++p) {
    Rng g_rng = make_stream(cfg.seed, {streams::graph, p});
    snapshots.push_back(generate_er_graph(N, cfg.effective_edge_prob(), g_rng));

    std::vector<LagFrame> lags;
    for (std::size_t r = 1; r <= cfg.lag && r <= p; ++r)
      lags.push_back({&scaled_u[p - r], &scaled_x[p - r], &scaled_t[p - r], &scaled_y[p - r]});
    Eigen::MatrixXd history = roll_history(lags, sp, N);

    Rng u_rng = make_stream(cfg.seed, {streams::confounder, p});
    Eigen::MatrixXd u = p == 0 ? simulate_confounders_static(cfg, u_rng)
                               : simulate_confounders_dynamic(history, sp,
                                                              cfg.confounder_noise_sd, u_rng);

    Rng x_rng = make_stream(cfg.seed, {streams::feature, p});
    Eigen::MatrixXd x = simulate_features(u, sp, cfg.feature_noise_sd, x_rng);

    Eigen::MatrixXd inputs(x.rows(), x.cols() + history.cols());
    inputs << x, history;

    Rng t_rng = make_stream(cfg.seed, {streams::treatment, p});
    Eigen::VectorXd t = simulate_treatment(snapshots.back(), inputs, u, sp, cfg.lambda,
                                           cfg.treatment_kind, cfg.treatment_noise_sd, t_rng);

    Rng y_rng = make_stream(cfg.seed, {streams::outcome, p});
    OutcomeDraw y = simulate_outcomes(inputs, u, t, sp, cfg.beta, cfg.t_treated,
                                      cfg.t_baseline, cfg.outcome_noise_sd, y_rng);

    scaled_u.push_back(detail::unit_rms(u));
    scaled_x.push_back(detail::unit_rms(x));
    scaled_t.push_back(detail::unit_rms(t));
    scaled_y.push_back(detail::unit_rms(y.observed));
    panel.features.push_back(std::move(x));
    panel.treatments.push_back(std::move(t));
    panel.outcomes.push_back(y.observed);
    truth.confounders.push_back(std::move(u));
    truth.histories.push_back(std::move(history));
    truth.effects.push_back(y.at_treated - y.at_baseline);
    truth.y_treated.push_back(std::move(y.at_treated));
    truth.y_baseline.push_back(std::move(y.at_baseline));
  }
  panel.graphs = DynamicGraph(std::move(snapshots));
  return res;
}

}  // namespace entangle
