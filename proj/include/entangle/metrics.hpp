#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace entangle {

inline void require_same_length(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const char* who) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(who) + ": length mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  if (a.size() == 0) throw std::invalid_argument(std::string(who) + ": empty input");
}

/// Root mean squared error between estimated and true unit effects.
inline double pehe(const Eigen::VectorXd& tau_hat, const Eigen::VectorXd& tau_true) {
  require_same_length(tau_hat, tau_true, "pehe");
  return std::sqrt((tau_hat - tau_true).squaredNorm() / static_cast<double>(tau_hat.size()));
}

/// |mean(τ̂) − mean(τ)|
inline double ate_error(const Eigen::VectorXd& tau_hat, const Eigen::VectorXd& tau_true) {
  require_same_length(tau_hat, tau_true, "ate_error");
  return std::abs(tau_hat.mean() - tau_true.mean());
}

struct TimestampMetrics {
  double pehe = 0.0;
  double ate_err = 0.0;
};

struct EvalReport {
  std::string method;
  std::string variant;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double beta = 0.0;
  std::vector<TimestampMetrics> per_timestamp;
  TimestampMetrics average;
  std::string fingerprint;
};

/// Unweighted time average. Fails loudly if any entry breaks ε_ATE ≤ √PEHE.
inline TimestampMetrics aggregate(std::span<const TimestampMetrics> per_timestamp) {
  if (per_timestamp.empty()) throw std::invalid_argument("aggregate: no timestamps");
  TimestampMetrics avg;
  for (const auto& m : per_timestamp) {
    if (m.ate_err > m.pehe * (1.0 + 1e-12) + 1e-15)
      throw std::logic_error("aggregate: ATE error exceeds PEHE");
    avg.pehe += m.pehe;
    avg.ate_err += m.ate_err;
  }
  avg.pehe /= static_cast<double>(per_timestamp.size());
  avg.ate_err /= static_cast<double>(per_timestamp.size());
  return avg;
}

/// Metrics restricted to `units` at every timestamp, plus their average.
inline EvalReport evaluate(const std::vector<Eigen::VectorXd>& tau_hat, const std::vector<Eigen::VectorXd>& tau_true,
                           std::span<const std::size_t> units) {
  if (tau_hat.size() != tau_true.size()) throw std::invalid_argument("evaluate: timestamp count mismatch");
  if (units.empty()) throw std::invalid_argument("evaluate: no evaluation units");
  EvalReport r;
  for (std::size_t p = 0; p < tau_hat.size(); ++p) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(units.size())), b(a.size());
    for (std::size_t k = 0; k < units.size(); ++k) {
      a(static_cast<Eigen::Index>(k)) = tau_hat[p](static_cast<Eigen::Index>(units[k]));
      b(static_cast<Eigen::Index>(k)) = tau_true[p](static_cast<Eigen::Index>(units[k]));
    }
    r.per_timestamp.push_back({pehe(a, b), ate_error(a, b)});
  }
  r.average = aggregate(r.per_timestamp);
  return r;
}

struct SeedSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single seed
};

inline SeedSummary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  const double n = static_cast<double>(values.size());
  SeedSummary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

inline constexpr const char* kResultsHeader = "method,variant,seed,lambda,beta,timestamp,pehe,ate_err";

inline std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// One row per timestamp followed by the "avg" row.
inline std::vector<std::string> report_rows(const EvalReport& r) {
  const std::string prefix = r.method + "," + r.variant + "," + std::to_string(r.seed) + "," +
                             format_g6(r.lambda) + "," + format_g6(r.beta) + ",";
  std::vector<std::string> rows;
  for (std::size_t p = 0; p < r.per_timestamp.size(); ++p)
    rows.push_back(prefix + std::to_string(p) + "," + format_g6(r.per_timestamp[p].pehe) + "," +
                   format_g6(r.per_timestamp[p].ate_err));
  rows.push_back(prefix + "avg," + format_g6(r.average.pehe) + "," + format_g6(r.average.ate_err));
  return rows;
}

}  // namespace entangle
