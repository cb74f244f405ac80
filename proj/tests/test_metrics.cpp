#include <cmath>

#include <gtest/gtest.h>

#include "entangle/metrics.hpp"
#include "entangle/random.hpp"
#include "test_support.hpp"

using namespace entangle;

TEST(Pehe, HandValues) {
  const Eigen::Vector3d hat(1.0, 0.0, 0.0), truth(0.0, 0.0, 0.0);
  EXPECT_NEAR(pehe(hat, truth), std::sqrt(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(ate_error(hat, truth), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(pehe(truth, truth), 0.0);
}

TEST(Pehe, ScalesHomogeneouslyAndIsSymmetric) {
  Rng rng(1);
  const Eigen::VectorXd a = testing_support::random_matrix(20, 1, rng).col(0);
  const Eigen::VectorXd b = testing_support::random_matrix(20, 1, rng).col(0);
  EXPECT_NEAR(pehe(3.0 * a, 3.0 * b), 3.0 * pehe(a, b), 1e-12);
  EXPECT_NEAR(ate_error(3.0 * a, 3.0 * b), 3.0 * ate_error(a, b), 1e-12);
  EXPECT_DOUBLE_EQ(pehe(a, b), pehe(b, a));
}

TEST(AteError, CancelsAntisymmetricErrors) {
  const Eigen::Vector4d truth(1.0, 2.0, 3.0, 4.0), err(0.5, -0.5, 1.0, -1.0);
  EXPECT_NEAR(ate_error(truth + err, truth), 0.0, 1e-15);
  EXPECT_GT(pehe(truth + err, truth), 0.5);
}

TEST(Metrics, RejectBadShapes) {
  EXPECT_THROW(pehe(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4)), std::invalid_argument);
  EXPECT_THROW(ate_error(Eigen::VectorXd(), Eigen::VectorXd()), std::invalid_argument);
  EXPECT_THROW(aggregate(std::span<const TimestampMetrics>{}), std::invalid_argument);
}

TEST(Metrics, AteNeverExceedsPeheOnRandomPairs) {
  Rng rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 30);
  for (int k = 0; k < 10000; ++k) {
    const int n = len(rng);
    Eigen::VectorXd a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = g(rng);
      b(i) = g(rng) * 3.0;
    }
    ASSERT_LE(ate_error(a, b), pehe(a, b) * (1.0 + 1e-12) + 1e-15);
  }
}

TEST(Aggregate, UnweightedTimeAverage) {
  const std::vector<TimestampMetrics> m{{0.4, 0.1}, {0.6, 0.3}};
  const auto avg = aggregate(m);
  EXPECT_DOUBLE_EQ(avg.pehe, 0.5);
  EXPECT_DOUBLE_EQ(avg.ate_err, 0.2);
  const std::vector<TimestampMetrics> bad{{0.1, 0.2}};
  EXPECT_THROW(aggregate(bad), std::logic_error);
}

TEST(Evaluate, RestrictsToUnits) {
  const std::vector<Eigen::VectorXd> hat{Eigen::Vector3d(1.0, 5.0, 0.0), Eigen::Vector3d(0.0, 9.0, 2.0)};
  const std::vector<Eigen::VectorXd> truth{Eigen::Vector3d(0.0, 0.0, 0.0), Eigen::Vector3d(0.0, 0.0, 0.0)};
  const std::vector<std::size_t> units{0, 2};
  const EvalReport r = evaluate(hat, truth, units);
  ASSERT_EQ(r.per_timestamp.size(), 2u);
  EXPECT_NEAR(r.per_timestamp[0].pehe, std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(r.per_timestamp[1].pehe, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.average.pehe, (std::sqrt(0.5) + std::sqrt(2.0)) / 2.0, 1e-12);
  EXPECT_NEAR(r.per_timestamp[1].ate_err, 1.0, 1e-12);
  EXPECT_THROW(evaluate(hat, truth, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(Summarize, MeanAndSampleSd) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(summarize(std::vector<double>{7.0}).sd, 0.0);
}

TEST(ReportRows, CsvLayout) {
  EvalReport r;
  r.method = "neat";
  r.variant = "Full";
  r.seed = 3;
  r.lambda = 0.5;
  r.beta = 1.0;
  r.per_timestamp = {{0.25, 0.125}, {1.0 / 3.0, 0.1}};
  r.average = aggregate(r.per_timestamp);
  const auto rows = report_rows(r);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "neat,Full,3,0.5,1,0,0.25,0.125");
  EXPECT_EQ(rows[1], "neat,Full,3,0.5,1,1,0.333333,0.1");
  EXPECT_EQ(rows[2], "neat,Full,3,0.5,1,avg,0.291667,0.1125");
  EXPECT_EQ(std::string(kResultsHeader), "method,variant,seed,lambda,beta,timestamp,pehe,ate_err");
}
