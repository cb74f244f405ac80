#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "entangle/diffcore/params.hpp"

namespace entangle::diffcore {

/// Loss value plus its gradient w.r.t. the loss input (logits, predictions or
/// raw head outputs).
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

inline Eigen::VectorXd log_sum_exp_rows(const Matrix& x) {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out(i) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

/// Mean negative log-probability of the labelled class under a row softmax.
inline LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw std::invalid_argument("cross_entropy_loss: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy_loss: one label per row required");
  const Eigen::VectorXd lse = log_sum_exp_rows(logits);
  const double n = static_cast<double>(logits.rows());
  LossResult res;
  res.grad = softmax_rows(logits) / n;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= logits.cols()) throw std::invalid_argument("cross_entropy_loss: label out of range");
    res.value += lse(i) - logits(i, c);
    res.grad(i, c) -= 1.0 / n;
  }
  res.value /= n;
  return res;
}

inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  if (pred.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  const double n = static_cast<double>(pred.size());
  const Matrix diff = pred - target;
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

/// Per-row mixture of K univariate Gaussians.
struct MixtureParams {
  Matrix weights;  // N × K, rows on the simplex
  Matrix means;    // N × K
  Matrix scales;   // N × K, strictly positive

  Eigen::Index rows() const { return weights.rows(); }
  Eigen::Index components() const { return weights.cols(); }
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Maps raw head outputs [weight logits | means | raw scales] (N × 3K) to
/// mixture parameters: softmax weights, identity means, softplus scales.
struct MixtureHead {
  Eigen::Index components = 3;
  double min_scale = 1e-3;

  Eigen::Index raw_width() const { return 3 * components; }

  MixtureParams evaluate(const Matrix& raw) const {
    if (raw.cols() != raw_width()) throw std::invalid_argument("MixtureHead: raw width mismatch");
    const Eigen::Index K = components;
    MixtureParams m;
    m.weights = softmax_rows(raw.leftCols(K));
    m.means = raw.middleCols(K, K);
    m.scales = raw.rightCols(K).unaryExpr([this](double v) { return softplus(v) + min_scale; });
    return m;
  }
};

namespace detail {
inline double log_normal_pdf(double y, double mean, double scale) {
  const double z = (y - mean) / scale;
  return -0.5 * z * z - std::log(scale) - 0.5 * std::log(2.0 * std::numbers::pi);
}
}  // namespace detail

/// Mean over rows of -ln Σ_k w_k N(y; μ_k, σ_k²), evaluated with a max-shift.
inline double gmm_nll(const MixtureParams& m, const Eigen::VectorXd& targets) {
  if (targets.size() != m.rows()) throw std::invalid_argument("gmm_nll: one target per row required");
  if (m.rows() == 0) throw std::invalid_argument("gmm_nll: empty batch");
  if ((m.scales.array() <= 0.0).any()) throw std::invalid_argument("gmm_nll: non-positive scale");
  Matrix logs(m.rows(), m.components());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.components(); ++k)
      logs(i, k) = std::log(m.weights(i, k)) +
                   detail::log_normal_pdf(targets(i), m.means(i, k), m.scales(i, k));
  return -log_sum_exp_rows(logs).mean();
}

/// Mixture NLL with gradient w.r.t. the raw head outputs.
inline LossResult gmm_nll(const MixtureHead& head, const Matrix& raw, const Eigen::VectorXd& targets) {
  const MixtureParams m = head.evaluate(raw);
  if (targets.size() != m.rows()) throw std::invalid_argument("gmm_nll: one target per row required");
  if (m.rows() == 0) throw std::invalid_argument("gmm_nll: empty batch");
  const Eigen::Index K = head.components;
  const double n = static_cast<double>(m.rows());
  LossResult res;
  res.grad = Matrix::Zero(raw.rows(), raw.cols());
  Eigen::RowVectorXd logs(K);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < K; ++k)
      logs(k) = std::log(m.weights(i, k)) +
                detail::log_normal_pdf(targets(i), m.means(i, k), m.scales(i, k));
    const double top = logs.maxCoeff();
    const double lse = top + std::log((logs.array() - top).exp().sum());
    res.value -= lse;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double resp = std::exp(logs(k) - lse);
      const double s = m.scales(i, k);
      const double d = targets(i) - m.means(i, k);
      const double dscale = resp * (1.0 / s - d * d / (s * s * s));
      const double raw_s = raw(i, 2 * K + k);
      const double dsoftplus = raw_s >= 0 ? 1.0 / (1.0 + std::exp(-raw_s))
                                          : std::exp(raw_s) / (1.0 + std::exp(raw_s));
      res.grad(i, k) = (m.weights(i, k) - resp) / n;
      res.grad(i, K + k) = -resp * d / (s * s) / n;
      res.grad(i, 2 * K + k) = dscale * dsoftplus / n;
    }
  }
  res.value /= n;
  return res;
}

}  // namespace entangle::diffcore
