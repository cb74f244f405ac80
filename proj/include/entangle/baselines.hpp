#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entangle/simulator.hpp"

// Reference estimators that treat units as independent and ignore the graph.

namespace entangle {

struct LinearModel {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (x.cols() != coefficients.size()) throw std::invalid_argument("LinearModel: column mismatch");
    return (x * coefficients).array() + intercept;
  }
};

inline constexpr double kRidge = 1e-8;

/// Least squares with an intercept, solved from ridge-damped normal equations.
/// Constant columns are rejected because they are collinear with the intercept.
inline LinearModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) throw std::invalid_argument("fit_linear: one target per row required");
  if (x.rows() < 2) throw std::invalid_argument("fit_linear: at least 2 rows required");
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x.col(j).maxCoeff() == x.col(j).minCoeff())
      throw std::invalid_argument("fit_linear: design column " + std::to_string(j) +
                                  " is constant (value " + std::to_string(x(0, j)) + ")");
  const Eigen::Index k = x.cols() + 1;
  Eigen::MatrixXd d(x.rows(), k);
  d << Eigen::VectorXd::Ones(x.rows()), x;
  Eigen::MatrixXd gram = d.transpose() * d;
  gram.diagonal().array() += kRidge;
  const Eigen::VectorXd beta = gram.ldlt().solve(d.transpose() * y);
  if (!beta.allFinite()) throw std::runtime_error("fit_linear: solution is not finite");
  return {beta.tail(k - 1), beta(0)};
}

inline Eigen::VectorXd residuals(const LinearModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return y - m.predict(x);
}

/// S-learner design [X, t, t·X].
inline Eigen::MatrixXd s_learner_design(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  if (x.rows() != t.size()) throw std::invalid_argument("s_learner_design: row mismatch");
  Eigen::MatrixXd d(x.rows(), 2 * x.cols() + 1);
  d << x, t, x.array().colwise() * t.array();
  return d;
}

inline Eigen::MatrixXd s_learner_design(const Eigen::MatrixXd& x, double t) {
  return s_learner_design(x, Eigen::VectorXd::Constant(x.rows(), t));
}

/// Pools (X, T, Y) of the training units over every timestamp.
struct PooledRows {
  Eigen::MatrixXd features;
  Eigen::VectorXd treatments;
  Eigen::VectorXd outcomes;
};

inline PooledRows pool_rows(const PanelDataset& panel, std::span<const std::size_t> units) {
  panel.validate();
  const auto n = static_cast<Eigen::Index>(units.size());
  const auto P = panel.timestamps();
  PooledRows r{Eigen::MatrixXd(n * static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(panel.feature_dim())),
               Eigen::VectorXd(n * static_cast<Eigen::Index>(P)), Eigen::VectorXd(n * static_cast<Eigen::Index>(P))};
  Eigen::Index row = 0;
  for (std::size_t p = 0; p < P; ++p)
    for (auto i : units) {
      if (i >= panel.units()) throw std::out_of_range("pool_rows: unit index out of range");
      const auto u = static_cast<Eigen::Index>(i);
      r.features.row(row) = panel.features[p].row(u);
      r.treatments(row) = panel.treatments[p](u);
      r.outcomes(row) = panel.outcomes[p](u);
      ++row;
    }
  return r;
}

inline LinearModel s_learner_fit(const Eigen::MatrixXd& x_aug, const Eigen::VectorXd& y) {
  return fit_linear(x_aug, y);
}

inline LinearModel s_learner_fit(const PanelDataset& panel, std::span<const std::size_t> train_units) {
  const PooledRows r = pool_rows(panel, train_units);
  return fit_linear(s_learner_design(r.features, r.treatments), r.outcomes);
}

/// Prediction gap between treatment t and t0 with features held fixed.
inline Eigen::VectorXd s_learner_effect(const LinearModel& m, const Eigen::MatrixXd& x, double t, double t0) {
  return m.predict(s_learner_design(x, t)) - m.predict(s_learner_design(x, t0));
}

/// Separate OLS fits on treated and control rows; τ̂ = μ̂₁(X) − μ̂₀(X) scaled
/// to the queried contrast.
struct ArmModels {
  LinearModel treated;
  LinearModel control;
};

inline ArmModels naive_fit(const PanelDataset& panel, std::span<const std::size_t> train_units) {
  if (panel.treatment_kind != TreatmentKind::Binary)
    throw std::invalid_argument("naive_outcome_regression: requires a binary treatment");
  const PooledRows r = pool_rows(panel, train_units);
  std::vector<Eigen::Index> on, off;
  for (Eigen::Index i = 0; i < r.treatments.size(); ++i) (r.treatments(i) > 0.5 ? on : off).push_back(i);
  if (on.empty()) throw std::invalid_argument("naive_outcome_regression: treated arm is empty");
  if (off.empty()) throw std::invalid_argument("naive_outcome_regression: control arm is empty");
  auto fit_arm = [&](const std::vector<Eigen::Index>& rows) {
    return fit_linear(r.features(rows, Eigen::all), r.outcomes(rows));
  };
  return {fit_arm(on), fit_arm(off)};
}

inline Eigen::VectorXd naive_effect(const ArmModels& m, const Eigen::MatrixXd& x, double t, double t0) {
  if (t == t0) return Eigen::VectorXd::Zero(x.rows());
  auto mu = [&](double v) { return v > 0.5 ? m.treated.predict(x) : m.control.predict(x); };
  return mu(t) - mu(t0);
}

/// Per-timestamp τ̂ for every unit.
inline std::vector<Eigen::VectorXd> naive_outcome_regression(const PanelDataset& panel,
                                                             std::span<const std::size_t> train_units,
                                                             double t = 1.0, double t0 = 0.0) {
  const ArmModels m = naive_fit(panel, train_units);
  std::vector<Eigen::VectorXd> out;
  for (const auto& x : panel.features) out.push_back(naive_effect(m, x, t, t0));
  return out;
}

inline std::vector<Eigen::VectorXd> s_learner_effects(const PanelDataset& panel,
                                                      std::span<const std::size_t> train_units,
                                                      double t = 1.0, double t0 = 0.0) {
  const LinearModel m = s_learner_fit(panel, train_units);
  std::vector<Eigen::VectorXd> out;
  for (const auto& x : panel.features) out.push_back(s_learner_effect(m, x, t, t0));
  return out;
}

}  // namespace entangle
