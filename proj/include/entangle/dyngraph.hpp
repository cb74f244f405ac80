#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "entangle/random.hpp"

namespace entangle {

/// Undirected edge stored with u < v.
struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// One timestamp of the dynamic graph: n nodes plus a sorted, duplicate-free
/// edge list. A CSR neighbor index is built at construction.
class GraphSnapshot {
 public:
  GraphSnapshot() = default;

  GraphSnapshot(std::size_t n, std::vector<Edge> edges) : n_(n) {
    if (n == 0) throw std::invalid_argument("GraphSnapshot: n must be >= 1");
    for (auto& e : edges) {
      if (e.u == e.v)
        throw std::invalid_argument("GraphSnapshot: self-loop at node " +
                                    std::to_string(e.u));
      if (e.u >= n || e.v >= n)
        throw std::invalid_argument("GraphSnapshot: edge index out of range");
      if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw std::invalid_argument("GraphSnapshot: duplicate edge");
    edges_ = std::move(edges);
    build_index();
  }

  std::size_t n() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  /// Neighbors of i in ascending order.
  std::vector<std::size_t> neighbors(std::size_t i) const {
    return {adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
            adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1])};
  }

  template <class Fn>
  void for_each_neighbor(std::size_t i, Fn&& fn) const {
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) fn(adjacency_[k]);
  }

  Eigen::MatrixXd dense_adjacency() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_),
                                              static_cast<Eigen::Index>(n_));
    for (const auto& e : edges_) {
      a(static_cast<Eigen::Index>(e.u), static_cast<Eigen::Index>(e.v)) = 1.0;
      a(static_cast<Eigen::Index>(e.v), static_cast<Eigen::Index>(e.u)) = 1.0;
    }
    return a;
  }

 private:
  void build_index() {
    offsets_.assign(n_ + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < n_; ++i) offsets_[i + 1] += offsets_[i];
    adjacency_.assign(offsets_[n_], 0);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges_) {
      adjacency_[fill[e.u]++] = e.v;
      adjacency_[fill[e.v]++] = e.u;
    }
    // edges_ is sorted by (u, v); sort each row so neighbors() is ordered.
    for (std::size_t i = 0; i < n_; ++i)
      std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
  }

  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> adjacency_;
};

/// Sequence of snapshots sharing a node count.
class DynamicGraph {
 public:
  DynamicGraph() = default;

  explicit DynamicGraph(std::vector<GraphSnapshot> snapshots)
      : snapshots_(std::move(snapshots)) {
    if (snapshots_.empty())
      throw std::invalid_argument("DynamicGraph: needs at least one snapshot");
    for (const auto& s : snapshots_)
      if (s.n() != snapshots_.front().n())
        throw std::invalid_argument("DynamicGraph: node count differs across timestamps");
  }

  std::size_t timestamps() const { return snapshots_.size(); }
  std::size_t n() const { return snapshots_.empty() ? 0 : snapshots_.front().n(); }
  const GraphSnapshot& operator[](std::size_t p) const { return snapshots_.at(p); }
  const std::vector<GraphSnapshot>& snapshots() const { return snapshots_; }

 private:
  std::vector<GraphSnapshot> snapshots_;
};

/// D̃^{-1/2}(A+I)D̃^{-1/2}, stored sparse (row-major).
struct NormalizedAdjacency {
  using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  std::size_t n = 0;
  Sparse entries;

  static NormalizedAdjacency identity(std::size_t n) {
    NormalizedAdjacency out;
    out.n = n;
    out.entries.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    out.entries.setIdentity();
    return out;
  }

  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(entries); }

  /// Â · x for an n-row dense block.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.rows()) != n)
      throw std::invalid_argument("NormalizedAdjacency::apply: row count mismatch");
    return entries * x;
  }
};

/// G(n, p): every unordered pair is included independently with probability p.
inline GraphSnapshot generate_er_graph(std::size_t n, double edge_prob, Rng& rng) {
  if (n == 0) throw std::invalid_argument("generate_er_graph: n must be >= 1");
  if (!(edge_prob >= 0.0 && edge_prob <= 1.0))
    throw std::invalid_argument("generate_er_graph: edge_prob must lie in [0, 1]");
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(edge_prob * static_cast<double>(n) *
                                         static_cast<double>(n - 1) / 2.0) + 16);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng) < edge_prob) edges.push_back({u, v});
  return GraphSnapshot(n, std::move(edges));
}

inline NormalizedAdjacency normalize_adjacency(const GraphSnapshot& g) {
  const std::size_t n = g.n();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i)
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)) + 1.0);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n + 2 * g.num_edges());
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    triplets.emplace_back(ii, ii, inv_sqrt[i] * inv_sqrt[i]);
  }
  for (const auto& e : g.edges()) {
    const double w = inv_sqrt[e.u] * inv_sqrt[e.v];
    const auto u = static_cast<Eigen::Index>(e.u);
    const auto v = static_cast<Eigen::Index>(e.v);
    triplets.emplace_back(u, v, w);
    triplets.emplace_back(v, u, w);
  }
  NormalizedAdjacency out;
  out.n = n;
  out.entries.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  out.entries.setFromTriplets(triplets.begin(), triplets.end());
  out.entries.makeCompressed();
  return out;
}

/// Row i is the mean of `values` over i's neighbors; isolated nodes get a
/// zero row.
inline Eigen::MatrixXd neighbor_mean(const GraphSnapshot& g, const Eigen::MatrixXd& values) {
  if (static_cast<std::size_t>(values.rows()) != g.n())
    throw std::invalid_argument("neighbor_mean: values must have one row per node");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(values.rows(), values.cols());
  for (std::size_t i = 0; i < g.n(); ++i) {
    const auto deg = g.degree(i);
    if (deg == 0) continue;
    const auto row = static_cast<Eigen::Index>(i);
    g.for_each_neighbor(i, [&](std::size_t j) {
      out.row(row) += values.row(static_cast<Eigen::Index>(j));
    });
    out.row(row) /= static_cast<double>(deg);
  }
  return out;
}

}  // namespace entangle
