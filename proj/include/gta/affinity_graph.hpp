#pragma once

// Sparse nonnegative kNN affinity graph, w_ij = max(0, f_i . f_j).

#include "gta/model_state.hpp"

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace gta {

struct Edge {
  Index col;
  double weight;

  bool operator==(const Edge&) const = default;
};

struct AffinityGraph {
  std::vector<std::vector<Edge>> neighbors;  // sorted by column
  Index num_nodes = 0;
  Index knn = 0;

  /// Graph on n nodes with no edges.
  static AffinityGraph empty(Index n) {
    AffinityGraph g;
    g.neighbors.resize(static_cast<std::size_t>(n));
    g.num_nodes = n;
    return g;
  }

  const std::vector<Edge>& row(Index i) const { return neighbors[static_cast<std::size_t>(i)]; }

  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& r : neighbors) n += r.size();
    return n;
  }

  double weight(Index i, Index j) const {
    const auto& r = row(i);
    auto it = std::lower_bound(r.begin(), r.end(), j,
                               [](const Edge& e, Index c) { return e.col < c; });
    return (it != r.end() && it->col == j) ? it->weight : 0.0;
  }

  Matrix dense() const {
    Matrix w = Matrix::Zero(num_nodes, num_nodes);
    for (Index i = 0; i < num_nodes; ++i)
      for (const Edge& e : row(i)) w(i, e.col) = e.weight;
    return w;
  }
};

struct GraphOptions {
  Index knn = 3;
  bool include_self_loops = false;
};

/// Keeps, for every row, the knn largest inner products (self excluded, ties
/// to the lower index), clamps at zero and symmetrizes by union.
inline AffinityGraph build_graph(const FeatureMatrix& features, const GraphOptions& opt) {
  const Index n = features.size();
  if (n < 2) throw Error("affinity graph needs at least 2 images, got " + std::to_string(n));
  if (opt.knn < 1 || opt.knn >= n)
    throw Error("knn must be in [1, N), got " + std::to_string(opt.knn) + " with N = " +
                std::to_string(n));

  const Matrix& f = features.data;
  std::vector<std::vector<Index>> chosen(static_cast<std::size_t>(n));
  std::vector<Index> order(static_cast<std::size_t>(n - 1));
  Vector sims(n);
  for (Index i = 0; i < n; ++i) {
    sims.noalias() = f * f.row(i).transpose();
    std::size_t k = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) order[k++] = j;
    std::partial_sort(order.begin(), order.begin() + opt.knn, order.end(), [&](Index a, Index b) {
      return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
    });
    chosen[static_cast<std::size_t>(i)].assign(order.begin(), order.begin() + opt.knn);
  }

  AffinityGraph g = AffinityGraph::empty(n);
  g.knn = opt.knn;
  auto add = [&](Index i, Index j) {
    const double w = std::max(0.0, f.row(i).dot(f.row(j)));
    g.neighbors[static_cast<std::size_t>(i)].push_back({j, w});
  };
  for (Index i = 0; i < n; ++i)
    for (Index j : chosen[static_cast<std::size_t>(i)]) {
      add(i, j);
      add(j, i);
    }
  if (opt.include_self_loops)
    for (Index i = 0; i < n; ++i) add(i, i);

  for (auto& r : g.neighbors) {
    std::sort(r.begin(), r.end(), [](const Edge& a, const Edge& b) { return a.col < b.col; });
    r.erase(std::unique(r.begin(), r.end(), [](const Edge& a, const Edge& b) { return a.col == b.col; }),
            r.end());
  }
  // f_i.f_j and f_j.f_i can differ in the last bit; pin both directions to the lower-row value.
  for (Index i = 0; i < n; ++i)
    for (Edge& e : g.neighbors[static_cast<std::size_t>(i)])
      if (e.col < i) {
        const auto& back = g.row(e.col);
        e.weight = std::lower_bound(back.begin(), back.end(), i,
                                    [](const Edge& x, Index c) { return x.col < c; })
                       ->weight;
      }
  return g;
}

inline AffinityGraph build_graph(const FeatureMatrix& features, Index knn) {
  return build_graph(features, GraphOptions{knn, false});
}

}  // namespace gta
