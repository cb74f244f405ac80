#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entangle/diffcore.hpp"
#include "entangle/dyngraph.hpp"
#include "entangle/random.hpp"
#include "entangle/simulator.hpp"
#include "entangle/split.hpp"

// Two-stage instrumental-variable estimator on dynamic graphs.
//
// Stage 1 learns, jointly, a node encoder Z = Φ([X, M]), a recurrent history
// M^p = GRU(M^{p-1}, [T, Y, Z, X]^{p-1}) and a one-layer GCN treatment model
// over [X, Z] that uses the normalized adjacency as the instrument. Stage 2
// freezes all of that and fits the outcome head H(t, M, X) so that its
// expectation under the stage-1 treatment distribution matches the observed
// outcome. Effects are counterfactual differences of H.

namespace entangle {

namespace dc = diffcore;

enum class Variant { Full, NT, NG, NH };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "Full";
    case Variant::NT: return "NT";
    case Variant::NG: return "NG";
    case Variant::NH: return "NH";
  }
  return "Full";
}

inline Variant parse_variant(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "FULL") return Variant::Full;
  if (s == "NT") return Variant::NT;
  if (s == "NG") return Variant::NG;
  if (s == "NH") return Variant::NH;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 2000;
  double learning_rate = 0.004;
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  std::size_t mc_samples = 32;
  Eigen::Index d_z = 32;
  Eigen::Index d_m = 20;
  Eigen::Index hidden = 32;
  Eigen::Index mixture_components = 3;
  /// Standardize X, Y (and continuous T) with training-unit statistics.
  bool standardize = true;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (mc_samples == 0) throw std::invalid_argument("TrainConfig: mc_samples must be positive");
    if (d_z <= 0 || d_m <= 0 || hidden <= 0 || mixture_components <= 0)
      throw std::invalid_argument("TrainConfig: layer sizes must be positive");
  }
};

/// Column standardization fitted on training units, pooled over timestamps.
struct Standardizer {
  Eigen::RowVectorXd x_mean, x_scale;
  double y_mean = 0.0, y_scale = 1.0;
  double t_mean = 0.0, t_scale = 1.0;  // identity for binary treatments

  Eigen::MatrixXd features(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - x_mean).array().rowwise() / x_scale.array()).matrix();
  }
  Eigen::VectorXd outcome(const Eigen::VectorXd& y) const {
    return ((y.array() - y_mean) / y_scale).matrix();
  }
  Eigen::VectorXd treatment(const Eigen::VectorXd& t) const {
    return ((t.array() - t_mean) / t_scale).matrix();
  }
  double treatment(double t) const { return (t - t_mean) / t_scale; }
};

inline Standardizer fit_standardizer(const PanelDataset& panel, std::span<const std::size_t> units) {
  if (units.empty()) throw std::invalid_argument("fit_standardizer: no training units");
  const auto dx = static_cast<Eigen::Index>(panel.feature_dim());
  const double count = static_cast<double>(units.size() * panel.timestamps());
  Eigen::RowVectorXd sx = Eigen::RowVectorXd::Zero(dx), sxx = Eigen::RowVectorXd::Zero(dx);
  double sy = 0, syy = 0, st = 0, stt = 0;
  for (std::size_t p = 0; p < panel.timestamps(); ++p)
    for (auto i : units) {
      const auto r = static_cast<Eigen::Index>(i);
      const Eigen::RowVectorXd x = panel.features[p].row(r);
      sx += x;
      sxx += x.cwiseProduct(x);
      const double y = panel.outcomes[p](r), t = panel.treatments[p](r);
      sy += y;
      syy += y * y;
      st += t;
      stt += t * t;
    }
  auto sd = [](double s, double ss, double n) {
    const double v = ss / n - (s / n) * (s / n);
    return v > 1e-24 ? std::sqrt(v) : 1.0;
  };
  Standardizer z;
  z.x_mean = sx / count;
  z.x_scale.resize(dx);
  for (Eigen::Index j = 0; j < dx; ++j) z.x_scale(j) = sd(sx(j), sxx(j), count);
  z.y_mean = sy / count;
  z.y_scale = sd(sy, syy, count);
  if (panel.treatment_kind == TreatmentKind::Continuous) {
    z.t_mean = st / count;
    z.t_scale = sd(st, stt, count);
  }
  return z;
}

inline Standardizer identity_standardizer(const PanelDataset& panel) {
  const auto dx = static_cast<Eigen::Index>(panel.feature_dim());
  return {Eigen::RowVectorXd::Zero(dx), Eigen::RowVectorXd::Ones(dx)};
}

/// Per-timestamp inputs after standardization.
struct EstimatorInputs {
  TreatmentKind kind = TreatmentKind::Binary;
  std::vector<Eigen::MatrixXd> features;
  std::vector<Eigen::VectorXd> treatments;
  std::vector<Eigen::VectorXd> outcomes;
  std::vector<NormalizedAdjacency> adjacency;

  std::size_t timestamps() const { return features.size(); }
  Eigen::Index units() const { return features.empty() ? 0 : features[0].rows(); }
};

inline EstimatorInputs prepare_inputs(const PanelDataset& panel, const Standardizer& z) {
  panel.validate();
  EstimatorInputs in;
  in.kind = panel.treatment_kind;
  for (std::size_t p = 0; p < panel.timestamps(); ++p) {
    in.features.push_back(z.features(panel.features[p]));
    in.treatments.push_back(z.treatment(panel.treatments[p]));
    in.outcomes.push_back(z.outcome(panel.outcomes[p]));
    in.adjacency.push_back(normalize_adjacency(panel.graphs[p]));
  }
  return in;
}

/// Encoder Φ, history cell and GCN treatment head.
struct Stage1Model {
  TreatmentKind kind = TreatmentKind::Binary;
  Variant variant = Variant::Full;
  Eigen::Index d_x = 0, d_z = 0, d_m = 0;
  dc::Mlp encoder;
  dc::GruCell history;
  dc::GcnLayer head;
  dc::MixtureHead mixture;
  dc::ParameterSet params;

  Stage1Model() = default;
  Stage1Model(TreatmentKind k, Eigen::Index feature_dim, const TrainConfig& cfg)
      : kind(k), variant(cfg.variant), d_x(feature_dim), d_z(cfg.d_z), d_m(cfg.d_m),
        encoder("encoder", {feature_dim + cfg.d_m, cfg.hidden, cfg.d_z}),
        history("history", 2 + cfg.d_z + feature_dim, cfg.d_m),
        head("treatment", feature_dim + cfg.d_z,
             k == TreatmentKind::Binary ? 2 : 3 * cfg.mixture_components),
        mixture{cfg.mixture_components, 1e-3} {}

  void init(Rng& rng) {
    params = {};
    encoder.init(params, rng);
    history.init(params, rng);
    head.init(params, rng);
  }

  bool uses_history() const { return variant != Variant::NH; }
  bool uses_graph() const { return variant != Variant::NG; }
};

/// Outcome head H(t, M, X) → scalar (standardized outcome units).
struct Stage2Model {
  Eigen::Index d_x = 0, d_m = 0;
  dc::Mlp outcome;
  dc::ParameterSet params;

  Stage2Model() = default;
  Stage2Model(Eigen::Index feature_dim, const TrainConfig& cfg)
      : d_x(feature_dim), d_m(cfg.d_m), outcome("outcome", {1 + cfg.d_m + feature_dim, cfg.hidden, 1}) {}

  void init(Rng& rng) {
    params = {};
    outcome.init(params, rng);
  }

  Eigen::MatrixXd design(double t, const Eigen::MatrixXd& m, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd d(x.rows(), 1 + m.cols() + x.cols());
    d << Eigen::VectorXd::Constant(x.rows(), t), m, x;
    return d;
  }

  Eigen::MatrixXd design(const Eigen::VectorXd& t, const Eigen::MatrixXd& m, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd d(x.rows(), 1 + m.cols() + x.cols());
    d << t, m, x;
    return d;
  }

  Eigen::VectorXd predict(double t, const Eigen::MatrixXd& m, const Eigen::MatrixXd& x) const {
    return outcome.forward(params, design(t, m, x)).col(0);
  }
};

inline Eigen::MatrixXd hstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("hstack: row mismatch");
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

/// Z = Φ([X, M]). Static panels pass M = 0.
inline Eigen::MatrixXd encode_nodes(const Stage1Model& model, const Eigen::MatrixXd& x,
                                    const Eigen::MatrixXd& m) {
  if (x.cols() != model.d_x || m.cols() != model.d_m || x.rows() != m.rows())
    throw std::invalid_argument("encode_nodes: shape mismatch");
  return model.encoder.forward(model.params, hstack(x, m));
}

struct HistoryState {
  Eigen::MatrixXd embedding;
  std::size_t timestamp = 0;
};

inline HistoryState initial_history(const Stage1Model& model, Eigen::Index units) {
  return {Eigen::MatrixXd::Zero(units, model.d_m), 0};
}

/// Observed quantities at the timestamp a history state belongs to.
struct HistoryInputs {
  std::size_t timestamp = 0;
  const Eigen::VectorXd& treatments;
  const Eigen::VectorXd& outcomes;
  const Eigen::MatrixXd& encodings;
  const Eigen::MatrixXd& features;
};

inline Eigen::MatrixXd history_input(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                                     const Eigen::MatrixXd& z, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd in(x.rows(), 2 + z.cols() + x.cols());
  in << t, y, z, x;
  return in;
}

/// One recurrent step from timestamp p-1 to p.
inline HistoryState update_history(const Stage1Model& model, const HistoryState& state,
                                   const HistoryInputs& prev) {
  if (prev.timestamp != state.timestamp)
    throw std::invalid_argument("update_history: inputs belong to timestamp " +
                                std::to_string(prev.timestamp) + " but state is at " +
                                std::to_string(state.timestamp));
  if (!model.uses_history())
    return {Eigen::MatrixXd::Zero(state.embedding.rows(), model.d_m), state.timestamp + 1};
  const Eigen::MatrixXd in = history_input(prev.treatments, prev.outcomes, prev.encodings, prev.features);
  return {model.history.forward(model.params, in, state.embedding), state.timestamp + 1};
}

/// Stage-1 treatment distribution for every unit at one timestamp.
struct TreatmentDistribution {
  TreatmentKind kind = TreatmentKind::Binary;
  Eigen::MatrixXd probabilities;  // N × 2 (binary)
  dc::MixtureParams mixture;      // continuous

  Eigen::Index units() const {
    return kind == TreatmentKind::Binary ? probabilities.rows() : mixture.rows();
  }
};

inline TreatmentDistribution distribution_from_head(const Stage1Model& model, const Eigen::MatrixXd& raw) {
  TreatmentDistribution d;
  d.kind = model.kind;
  if (model.kind == TreatmentKind::Binary)
    d.probabilities = dc::softmax_rows(raw);
  else
    d.mixture = model.mixture.evaluate(raw);
  return d;
}

/// Distribution used in place of the treatment model by the NT variant.
inline TreatmentDistribution random_treatment_distribution(TreatmentKind kind, Eigen::Index units) {
  TreatmentDistribution d;
  d.kind = kind;
  if (kind == TreatmentKind::Binary) {
    d.probabilities = Eigen::MatrixXd::Constant(units, 2, 0.5);
  } else {
    d.mixture.weights = Eigen::MatrixXd::Ones(units, 1);
    d.mixture.means = Eigen::MatrixXd::Zero(units, 1);
    d.mixture.scales = Eigen::MatrixXd::Ones(units, 1);
  }
  return d;
}

/// Raw GCN head output over [X, Z]; NG substitutes the identity for Â.
inline Eigen::MatrixXd treatment_head(const Stage1Model& model, const NormalizedAdjacency& a_hat,
                                      const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                                      dc::GcnCache* cache = nullptr) {
  if (a_hat.n != static_cast<std::size_t>(x.rows()))
    throw std::invalid_argument("predict_treatment: adjacency does not match unit count");
  const Eigen::MatrixXd in = hstack(x, z);
  if (model.uses_graph()) return model.head.forward(model.params, a_hat, in, cache);
  return model.head.forward(model.params, NormalizedAdjacency::identity(a_hat.n), in, cache);
}

inline TreatmentDistribution predict_treatment(const Stage1Model& model,
                                               const NormalizedAdjacency& a_hat,
                                               const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
  if (model.variant == Variant::NT) return random_treatment_distribution(model.kind, x.rows());
  return distribution_from_head(model, treatment_head(model, a_hat, x, z));
}

/// Everything stage 1 produces for one timestamp.
struct Stage1Output {
  Eigen::MatrixXd history;     // M^p
  Eigen::MatrixXd encodings;   // Z^p
  Eigen::MatrixXd head_raw;    // GCN output before softmax / mixture mapping
};

namespace detail {

struct Stage1StepCache {
  bool has_history_step = false;
  dc::GruCache gru;
  dc::MlpCache encoder;
  dc::GcnCache head;
  NormalizedAdjacency identity;  // used by NG
};

inline std::vector<Stage1Output> stage1_forward(const Stage1Model& model, const EstimatorInputs& in,
                                                std::vector<Stage1StepCache>* caches) {
  const std::size_t P = in.timestamps();
  const Eigen::Index N = in.units();
  std::vector<Stage1Output> out(P);
  if (caches) caches->assign(P, {});
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, model.d_m);
  for (std::size_t p = 0; p < P; ++p) {
    Stage1StepCache* c = caches ? &(*caches)[p] : nullptr;
    if (p > 0 && model.uses_history()) {
      const Eigen::MatrixXd hin = history_input(in.treatments[p - 1], in.outcomes[p - 1],
                                                out[p - 1].encodings, in.features[p - 1]);
      m = model.history.forward(model.params, hin, m, c ? &c->gru : nullptr);
      if (c) c->has_history_step = true;
    }
    out[p].history = m;
    out[p].encodings = model.encoder.forward(model.params, hstack(in.features[p], m),
                                             c ? &c->encoder : nullptr);
    const Eigen::MatrixXd head_in = hstack(in.features[p], out[p].encodings);
    if (model.uses_graph()) {
      out[p].head_raw = model.head.forward(model.params, in.adjacency[p], head_in, c ? &c->head : nullptr);
    } else {
      NormalizedAdjacency eye = NormalizedAdjacency::identity(static_cast<std::size_t>(N));
      out[p].head_raw = model.head.forward(model.params, eye, head_in, c ? &c->head : nullptr);
      if (c) c->identity = std::move(eye);
    }
  }
  return out;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& v, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  return out;
}

/// Treatment loss at one timestamp over the given units, with the gradient
/// scattered back to all N rows of the raw head output.
inline dc::LossResult treatment_loss(const Stage1Model& model, const Eigen::MatrixXd& raw,
                                     const Eigen::VectorXd& treatments,
                                     std::span<const std::size_t> units) {
  const Eigen::MatrixXd sub = gather_rows(raw, units);
  dc::LossResult local;
  if (model.kind == TreatmentKind::Binary) {
    std::vector<int> labels(units.size());
    for (std::size_t k = 0; k < units.size(); ++k)
      labels[k] = treatments(static_cast<Eigen::Index>(units[k])) > 0.5 ? 1 : 0;
    local = dc::cross_entropy_loss(sub, labels);
  } else {
    local = dc::gmm_nll(model.mixture, sub, gather(treatments, units));
  }
  dc::LossResult full{local.value, Eigen::MatrixXd::Zero(raw.rows(), raw.cols())};
  for (std::size_t k = 0; k < units.size(); ++k)
    full.grad.row(static_cast<Eigen::Index>(units[k])) = local.grad.row(static_cast<Eigen::Index>(k));
  return full;
}

}  // namespace detail

/// Mean treatment loss over timestamps and its gradient (BPTT through the
/// history cell).
inline std::pair<double, dc::GradientMap> stage1_loss_and_gradient(const Stage1Model& model,
                                                                    const EstimatorInputs& in,
                                                                    std::span<const std::size_t> units) {
  std::vector<detail::Stage1StepCache> caches;
  const auto out = detail::stage1_forward(model, in, &caches);
  const std::size_t P = in.timestamps();
  const Eigen::Index N = in.units();
  const double inv_p = 1.0 / static_cast<double>(P);

  dc::GradientMap grads = model.params.zeros_like();
  double loss = 0.0;
  Eigen::MatrixXd dz_carry = Eigen::MatrixXd::Zero(N, model.d_z);
  Eigen::MatrixXd dm_carry = Eigen::MatrixXd::Zero(N, model.d_m);
  for (std::size_t p = P; p-- > 0;) {
    const auto& c = caches[p];
    dc::LossResult l = detail::treatment_loss(model, out[p].head_raw, in.treatments[p], units);
    loss += l.value * inv_p;
    const NormalizedAdjacency& adj = model.uses_graph() ? in.adjacency[p] : c.identity;
    const Eigen::MatrixXd dhead = model.head.backward(model.params, adj, c.head, l.grad * inv_p, grads);
    const Eigen::MatrixXd dz = dhead.rightCols(model.d_z) + dz_carry;
    const Eigen::MatrixXd denc = model.encoder.backward(model.params, c.encoder, dz, grads);
    const Eigen::MatrixXd dm = denc.rightCols(model.d_m) + dm_carry;
    if (c.has_history_step) {
      const dc::GruGrad g = model.history.backward(model.params, c.gru, dm, grads);
      dz_carry = g.input.middleCols(2, model.d_z);
      dm_carry = g.state;
    } else {
      dz_carry.setZero();
      dm_carry.setZero();
    }
  }
  return {loss, std::move(grads)};
}

struct TrainTrace {
  std::vector<double> losses;
};

/// Fits the treatment model on the training units over all timestamps.
/// NT skips this stage.
inline TrainTrace train_stage1(Stage1Model& model, const EstimatorInputs& in,
                               std::span<const std::size_t> train_units, const TrainConfig& cfg) {
  cfg.validate();
  TrainTrace trace;
  if (model.variant == Variant::NT) return trace;
  if (train_units.empty()) throw std::invalid_argument("train_stage1: no training units");
  dc::AdamOptimizer opt({cfg.learning_rate});
  trace.losses.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto [loss, grads] = stage1_loss_and_gradient(model, in, train_units);
    if (!std::isfinite(loss)) throw dc::DivergenceError("stage 1 loss diverged at epoch " + std::to_string(e));
    trace.losses.push_back(loss);
    opt.step(model.params, grads);
  }
  return trace;
}

/// Frozen stage-1 quantities consumed by stage 2 and effect estimation.
struct Stage1Snapshot {
  std::vector<Eigen::MatrixXd> history;
  std::vector<TreatmentDistribution> treatment;
};

inline Stage1Snapshot stage1_snapshot(const Stage1Model& model, const EstimatorInputs& in) {
  const auto out = detail::stage1_forward(model, in, nullptr);
  Stage1Snapshot s;
  for (std::size_t p = 0; p < in.timestamps(); ++p) {
    s.history.push_back(out[p].history);
    s.treatment.push_back(model.variant == Variant::NT
                              ? random_treatment_distribution(model.kind, in.units())
                              : distribution_from_head(model, out[p].head_raw));
  }
  return s;
}

/// Treatment values and weights over which H is averaged for each unit.
/// Binary: both classes with their probabilities (exact expectation).
/// Continuous: `samples` equally weighted draws from the mixture.
struct ExpectationDesign {
  std::vector<Eigen::VectorXd> values;   // one entry per quadrature point
  std::vector<Eigen::VectorXd> weights;  // same shape; rows sum to 1
};

inline ExpectationDesign expectation_design(const TreatmentDistribution& dist, std::size_t samples,
                                            Rng& rng) {
  ExpectationDesign d;
  const Eigen::Index N = dist.units();
  if (dist.kind == TreatmentKind::Binary) {
    for (int c = 0; c < 2; ++c) {
      d.values.push_back(Eigen::VectorXd::Constant(N, static_cast<double>(c)));
      d.weights.push_back(dist.probabilities.col(c));
    }
    return d;
  }
  const auto& mix = dist.mixture;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t s = 0; s < samples; ++s) {
    Eigen::VectorXd v(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      double r = u(rng), acc = 0.0;
      Eigen::Index k = 0;
      for (; k + 1 < mix.components(); ++k) {
        acc += mix.weights(i, k);
        if (r < acc) break;
      }
      v(i) = mix.means(i, k) + mix.scales(i, k) * g(rng);
    }
    d.values.push_back(std::move(v));
    d.weights.push_back(Eigen::VectorXd::Constant(N, 1.0 / static_cast<double>(samples)));
  }
  return d;
}

/// Ŷ = ∫ H(t, M, X) dF(t): exact two-point sum for binary treatments,
/// Monte-Carlo mean with a seeded stream for continuous ones.
inline Eigen::VectorXd predict_outcome_expectation(const Stage2Model& s2, const TreatmentDistribution& dist,
                                                   const Eigen::MatrixXd& x, const Eigen::MatrixXd& m,
                                                   std::size_t mc_samples, std::uint64_t seed) {
  Rng rng = make_stream(seed, {tag("outcome.expectation")});
  const ExpectationDesign d = expectation_design(dist, mc_samples, rng);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t q = 0; q < d.values.size(); ++q)
    y += d.weights[q].cwiseProduct(s2.outcome.forward(s2.params, s2.design(d.values[q], m, x)).col(0));
  return y;
}

/// Fits H on the training units against the stage-1 expectation. Stage 1 is
/// read through a frozen snapshot and never modified.
inline TrainTrace train_stage2(const Stage1Snapshot& frozen, Stage2Model& s2, const EstimatorInputs& in,
                               std::span<const std::size_t> train_units, const TrainConfig& cfg) {
  cfg.validate();
  if (train_units.empty()) throw std::invalid_argument("train_stage2: no training units");
  const std::size_t P = in.timestamps();

  // Stack (timestamp, unit) rows once; the expectation points are fixed for
  // the whole run.
  const auto rows = static_cast<Eigen::Index>(P * train_units.size());
  Eigen::MatrixXd x(rows, in.features[0].cols()), m(rows, s2.d_m);
  Eigen::VectorXd target(rows);
  std::vector<Eigen::VectorXd> values, weights;
  for (std::size_t p = 0; p < P; ++p) {
    const auto off = static_cast<Eigen::Index>(p * train_units.size());
    const auto n = static_cast<Eigen::Index>(train_units.size());
    x.middleRows(off, n) = detail::gather_rows(in.features[p], train_units);
    m.middleRows(off, n) = detail::gather_rows(frozen.history[p], train_units);
    target.segment(off, n) = detail::gather(in.outcomes[p], train_units);
    Rng rng = make_stream(cfg.seed, {tag("stage2.expectation"), p});
    const ExpectationDesign d = expectation_design(frozen.treatment[p], cfg.mc_samples, rng);
    if (values.empty()) {
      values.assign(d.values.size(), Eigen::VectorXd(rows));
      weights.assign(d.values.size(), Eigen::VectorXd(rows));
    }
    for (std::size_t q = 0; q < d.values.size(); ++q) {
      values[q].segment(off, n) = detail::gather(d.values[q], train_units);
      weights[q].segment(off, n) = detail::gather(d.weights[q], train_units);
    }
  }
  std::vector<Eigen::MatrixXd> designs;
  for (const auto& v : values) designs.push_back(s2.design(v, m, x));

  dc::AdamOptimizer opt({cfg.learning_rate});
  TrainTrace trace;
  trace.losses.reserve(cfg.epochs);
  std::vector<dc::MlpCache> caches(designs.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Eigen::VectorXd yhat = Eigen::VectorXd::Zero(rows);
    std::vector<Eigen::VectorXd> h(designs.size());
    for (std::size_t q = 0; q < designs.size(); ++q) {
      h[q] = s2.outcome.forward(s2.params, designs[q], &caches[q]).col(0);
      yhat += weights[q].cwiseProduct(h[q]);
    }
    const dc::LossResult l = dc::mse_loss(yhat, target);
    if (!std::isfinite(l.value)) throw dc::DivergenceError("stage 2 loss diverged at epoch " + std::to_string(e));
    trace.losses.push_back(l.value);
    dc::GradientMap grads = s2.params.zeros_like();
    for (std::size_t q = 0; q < designs.size(); ++q)
      s2.outcome.backward(s2.params, caches[q], Eigen::MatrixXd(l.grad.col(0).cwiseProduct(weights[q])), grads);
    opt.step(s2.params, grads);
  }
  return trace;
}

/// τ̂ = H(t, M, X) - H(t0, M, X), in the units H was trained in.
inline Eigen::VectorXd estimate_effects(const Stage2Model& s2, const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& m, double t, double t0) {
  return s2.predict(t, m, x) - s2.predict(t0, m, x);
}

/// Fitted pipeline plus the standardization it was trained under.
struct TwoStageModel {
  TrainConfig config;
  Standardizer scaler;
  Stage1Model stage1;
  Stage2Model stage2;
  TrainTrace stage1_trace;
  TrainTrace stage2_trace;
};

inline TwoStageModel fit_two_stage(const PanelDataset& panel, std::span<const std::size_t> train_units,
                                   const TrainConfig& cfg) {
  cfg.validate();
  TwoStageModel model;
  model.config = cfg;
  model.scaler = cfg.standardize ? fit_standardizer(panel, train_units) : identity_standardizer(panel);
  const EstimatorInputs in = prepare_inputs(panel, model.scaler);
  const auto dx = static_cast<Eigen::Index>(panel.feature_dim());

  model.stage1 = Stage1Model(panel.treatment_kind, dx, cfg);
  Rng init1 = make_stream(cfg.seed, {tag("init.stage1")});
  model.stage1.init(init1);
  model.stage1_trace = train_stage1(model.stage1, in, train_units, cfg);

  model.stage2 = Stage2Model(dx, cfg);
  Rng init2 = make_stream(cfg.seed, {tag("init.stage2")});
  model.stage2.init(init2);
  const Stage1Snapshot frozen = stage1_snapshot(model.stage1, in);
  model.stage2_trace = train_stage2(frozen, model.stage2, in, train_units, cfg);
  return model;
}

inline void check_treatment_value(TreatmentKind kind, double t) {
  if (!std::isfinite(t)) throw std::invalid_argument("treatment value must be finite");
  if (kind == TreatmentKind::Binary && t != 0.0 && t != 1.0)
    throw std::invalid_argument("binary treatment value must be 0 or 1");
}

/// Per-timestamp τ̂ for every unit in outcome units. The graph is not read:
/// effects depend only on each unit's features and history.
inline std::vector<Eigen::VectorXd> estimate_effects(const TwoStageModel& model, const PanelDataset& panel,
                                                     double t, double t0) {
  check_treatment_value(panel.treatment_kind, t);
  check_treatment_value(panel.treatment_kind, t0);
  const EstimatorInputs in = prepare_inputs(panel, model.scaler);
  const Stage1Snapshot s = stage1_snapshot(model.stage1, in);
  std::vector<Eigen::VectorXd> out;
  const double ts = model.scaler.treatment(t), t0s = model.scaler.treatment(t0);
  for (std::size_t p = 0; p < in.timestamps(); ++p)
    out.push_back(model.scaler.y_scale * estimate_effects(model.stage2, in.features[p], s.history[p], ts, t0s));
  return out;
}

}  // namespace entangle
