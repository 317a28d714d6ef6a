#include "gta/affinity_graph.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

namespace gta {
namespace {

double naive_dot(const Matrix& f, Index i, Index j) {
  double s = 0.0;
  for (Index d = 0; d < f.cols(); ++d) s += f(i, d) * f(j, d);
  return s;
}

// Per-row top-k by a full sort of all other rows.
std::set<std::pair<Index, Index>> brute_force_edges(const Matrix& f, Index knn) {
  std::set<std::pair<Index, Index>> edges;
  for (Index i = 0; i < f.rows(); ++i) {
    std::vector<std::pair<double, Index>> cand;
    for (Index j = 0; j < f.rows(); ++j)
      if (j != i) cand.push_back({-naive_dot(f, i, j), j});
    std::sort(cand.begin(), cand.end());
    for (Index k = 0; k < knn; ++k) {
      edges.insert({i, cand[k].second});
      edges.insert({cand[k].second, i});
    }
  }
  return edges;
}

std::set<std::pair<Index, Index>> edge_set(const AffinityGraph& g) {
  std::set<std::pair<Index, Index>> edges;
  for (Index i = 0; i < g.num_nodes; ++i)
    for (const Edge& e : g.row(i)) edges.insert({i, e.col});
  return edges;
}

TEST(AffinityGraph, IdenticalVectorsGetUnitWeight) {
  FeatureMatrix f{(Matrix(2, 2) << 1, 0, 1, 0).finished(), {"a", "b"}};
  const AffinityGraph g = build_graph(f, 1);
  EXPECT_EQ(g.num_edges(), 2u);
  EXPECT_EQ(g.weight(0, 1), 1.0);
  EXPECT_EQ(g.weight(1, 0), 1.0);
}

TEST(AffinityGraph, NegativeSimilarityClampedToZero) {
  FeatureMatrix f{(Matrix(2, 2) << 1, 0, -1, 0).finished(), {"a", "b"}};
  const AffinityGraph g = build_graph(f, 1);
  ASSERT_EQ(g.row(0).size(), 1u);
  EXPECT_EQ(g.row(0)[0].weight, 0.0);
}

TEST(AffinityGraph, MatchesBruteForceTopK) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = trial == 0 ? 4 : 5 + trial;
    const Index knn = trial == 0 ? 2 : 1 + trial % 4;
    const FeatureMatrix f = testing::random_features(rng, n, 6);
    const AffinityGraph g = build_graph(f, knn);
    EXPECT_EQ(edge_set(g), brute_force_edges(f.data, knn)) << "trial " << trial;
    for (Index i = 0; i < n; ++i)
      for (const Edge& e : g.row(i))
        EXPECT_NEAR(e.weight, std::max(0.0, naive_dot(f.data, i, e.col)), 1e-15);
  }
}

TEST(AffinityGraph, TiesGoToLowerIndex) {
  // Rows 1, 2, 3 are identical, so row 0 sees a three-way tie.
  FeatureMatrix f{(Matrix(4, 2) << 1, 0, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8).finished(), {"a", "b", "c", "d"}};
  const AffinityGraph g = build_graph(f, 1);
  EXPECT_GT(g.weight(0, 1), 0.0);
  EXPECT_EQ(g.weight(0, 2), 0.0);
  EXPECT_EQ(g.weight(0, 3), 0.0);
}

TEST(AffinityGraph, FullNeighborhoodReproducesDenseMatrix) {
  std::mt19937_64 rng(6);
  const FeatureMatrix f = testing::random_features(rng, 25, 8);
  const AffinityGraph g = build_graph(f, f.size() - 1);
  const Matrix w = g.dense();
  for (Index i = 0; i < f.size(); ++i) {
    EXPECT_EQ(g.row(i).size(), static_cast<std::size_t>(f.size() - 1));
    for (Index j = 0; j < f.size(); ++j) {
      const double expected = i == j ? 0.0 : std::max(0.0, naive_dot(f.data, i, j));
      EXPECT_NEAR(w(i, j), expected, 1e-15);
    }
  }
}

TEST(AffinityGraph, SymmetricAndBoundedWeights) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMatrix f = testing::random_features(rng, 40, 5);
    const AffinityGraph g = build_graph(f, GraphOptions{3, trial % 2 == 0});
    for (Index i = 0; i < g.num_nodes; ++i)
      for (const Edge& e : g.row(i)) {
        EXPECT_EQ(e.weight, g.weight(e.col, i));
        EXPECT_GE(e.weight, 0.0);
        EXPECT_LE(e.weight, 1.0 + 1e-12);
      }
  }
}

TEST(AffinityGraph, SelfLoopsOnlyWhenRequested) {
  std::mt19937_64 rng(8);
  const FeatureMatrix f = testing::random_features(rng, 10, 4);
  EXPECT_EQ(build_graph(f, 2).weight(3, 3), 0.0);
  EXPECT_NEAR(build_graph(f, GraphOptions{2, true}).weight(3, 3), 1.0, 1e-12);
}

TEST(AffinityGraph, RejectsBadNeighborCounts) {
  std::mt19937_64 rng(9);
  const FeatureMatrix f = testing::random_features(rng, 5, 3);
  EXPECT_THROW(build_graph(f, 0), Error);
  EXPECT_THROW(build_graph(f, 5), Error);
  EXPECT_THROW(build_graph(testing::random_features(rng, 1, 3), 1), Error);
}

}  // namespace
}  // namespace gta
