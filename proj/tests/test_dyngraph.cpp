#include <cmath>

#include <gtest/gtest.h>

#include "entangle/dyngraph.hpp"
#include "entangle/random.hpp"

using namespace entangle;

namespace {

Eigen::MatrixXd dense_normalized(const GraphSnapshot& g) {
  const auto n = static_cast<Eigen::Index>(g.n());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (const auto& e : g.edges()) {
    a(static_cast<Eigen::Index>(e.u), static_cast<Eigen::Index>(e.v)) = 1.0;
    a(static_cast<Eigen::Index>(e.v), static_cast<Eigen::Index>(e.u)) = 1.0;
  }
  const Eigen::VectorXd d = a.rowwise().sum();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = a(i, j) / std::sqrt(d(i) * d(j));
  return out;
}

}  // namespace

TEST(GraphSnapshot, RejectsInvalidEdges) {
  EXPECT_THROW(GraphSnapshot(3, {{1, 1}}), std::invalid_argument);
  EXPECT_THROW(GraphSnapshot(3, {{0, 3}}), std::invalid_argument);
  EXPECT_THROW(GraphSnapshot(3, {{0, 1}, {1, 0}}), std::invalid_argument);
}

TEST(GraphSnapshot, NormalizesAndIndexesNeighbors) {
  GraphSnapshot g(4, {{2, 0}, {1, 2}, {3, 2}});
  ASSERT_EQ(g.num_edges(), 3u);
  EXPECT_EQ(g.edges()[0], (Edge{0, 2}));
  EXPECT_EQ(g.degree(2), 3u);
  EXPECT_EQ(g.degree(0), 1u);
  const auto nb = g.neighbors(2);
  EXPECT_EQ(nb, (std::vector<std::size_t>{0, 1, 3}));
  const Eigen::MatrixXd a = g.dense_adjacency();
  EXPECT_EQ(a, a.transpose());
  EXPECT_EQ(a.sum(), 6.0);
}

TEST(DynamicGraph, RequiresConstantNodeCount) {
  EXPECT_THROW(DynamicGraph(std::vector<GraphSnapshot>{}), std::invalid_argument);
  EXPECT_THROW(DynamicGraph({GraphSnapshot(3, {}), GraphSnapshot(4, {})}), std::invalid_argument);
  DynamicGraph d({GraphSnapshot(3, {}), GraphSnapshot(3, {{0, 1}})});
  EXPECT_EQ(d.timestamps(), 2u);
  EXPECT_EQ(d.n(), 3u);
}

TEST(ErGraph, ExtremeProbabilities) {
  Rng rng(1);
  EXPECT_EQ(generate_er_graph(4, 1.0, rng).num_edges(), 6u);
  EXPECT_EQ(generate_er_graph(4, 0.0, rng).num_edges(), 0u);
  EXPECT_THROW(generate_er_graph(4, 1.5, rng), std::invalid_argument);
  EXPECT_THROW(generate_er_graph(4, -0.1, rng), std::invalid_argument);
}

TEST(ErGraph, EdgeCountMatchesBinomialMoments) {
  const double pairs = 200.0 * 199.0 / 2.0, p = 0.05;
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng = make_stream(s, {tag("er-test")});
    sum += static_cast<double>(generate_er_graph(200, p, rng).num_edges());
  }
  const double mean = sum / 100.0;
  const double se = std::sqrt(pairs * p * (1 - p) / 100.0);
  EXPECT_NEAR(mean, pairs * p, 3.0 * se);
}

TEST(ErGraph, ReproducibleFromSeed) {
  Rng a(42), b(42);
  EXPECT_EQ(generate_er_graph(50, 0.1, a).edges(), generate_er_graph(50, 0.1, b).edges());
}

TEST(NormalizeAdjacency, HandExamples) {
  EXPECT_TRUE(normalize_adjacency(GraphSnapshot(2, {})).dense().isIdentity(0.0));
  const Eigen::MatrixXd two = normalize_adjacency(GraphSnapshot(2, {{0, 1}})).dense();
  EXPECT_TRUE(two.isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5), 1e-15));
  const Eigen::MatrixXd path = normalize_adjacency(GraphSnapshot(3, {{0, 1}, {1, 2}})).dense();
  EXPECT_NEAR(path(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(path(1, 1), 1.0 / 3.0, 1e-15);
}

TEST(NormalizeAdjacency, MatchesDenseFormulaAndInvariants) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng = make_stream(s, {tag("norm-test")});
    const std::size_t n = 1 + rng() % 10;
    const double p = draw_uniform(rng);
    const GraphSnapshot g = generate_er_graph(n, p, rng);
    const Eigen::MatrixXd got = normalize_adjacency(g).dense();
    EXPECT_LE((got - dense_normalized(g)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(got, got.transpose());
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      EXPECT_GT(got(r, r), 0.0);
      EXPECT_LE(got.row(r).sum(), std::sqrt(static_cast<double>(g.degree(i)) + 1.0) + 1e-12);
      EXPECT_GE(got.row(r).minCoeff(), 0.0);
      EXPECT_LE(got.row(r).maxCoeff(), 1.0);
    }
  }
}

TEST(NeighborMean, HandExamples) {
  GraphSnapshot g(4, {{0, 1}, {0, 2}});
  Eigen::MatrixXd v(4, 2);
  v << 9, 9, 1, 0, 3, 2, 7, 7;
  const Eigen::MatrixXd m = neighbor_mean(g, v);
  EXPECT_EQ(m.row(0), Eigen::RowVector2d(2, 1));
  EXPECT_EQ(m.row(3), Eigen::RowVector2d(0, 0));
  EXPECT_THROW(neighbor_mean(g, Eigen::MatrixXd::Zero(3, 2)), std::invalid_argument);

  Rng rng(3);
  const GraphSnapshot k = generate_er_graph(5, 1.0, rng);
  EXPECT_TRUE(neighbor_mean(k, Eigen::MatrixXd::Constant(5, 3, 2.5)).isApprox(Eigen::MatrixXd::Constant(5, 3, 2.5)));
}

TEST(NeighborMean, IsLinear) {
  Rng rng(11);
  const GraphSnapshot g = generate_er_graph(30, 0.1, rng);
  const Eigen::MatrixXd v = Eigen::MatrixXd::Random(30, 3), w = Eigen::MatrixXd::Random(30, 3);
  const Eigen::MatrixXd lhs = neighbor_mean(g, 2.0 * v - 0.5 * w);
  const Eigen::MatrixXd rhs = 2.0 * neighbor_mean(g, v) - 0.5 * neighbor_mean(g, w);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}
