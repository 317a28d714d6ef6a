#pragma once

// Confused image/class-pair mining over z and greedy selection of the pairs
// worth sending to the LLM.

#include "gta/model_state.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <utility>
#include <vector>

namespace gta {

inline constexpr double kDefaultAlpha = 0.1;
inline constexpr double kLargeDatasetAlpha = 0.05;
inline constexpr double kDefaultCoverage = 0.05;

/// Unordered class pair stored with the smaller index first.
struct ClassPair {
  int lo = 0;
  int hi = 0;

  static ClassPair of(int a, int b) { return a < b ? ClassPair{a, b} : ClassPair{b, a}; }
  auto operator<=>(const ClassPair&) const = default;
};

struct ConfusionEntry {
  Index image = 0;
  ClassPair pair;
  double margin = 0.0;  // top-1 minus top-2 probability

  bool operator==(const ConfusionEntry&) const = default;
};

struct ConfusionReport {
  std::vector<ConfusionEntry> entries;
  std::map<ClassPair, int> pair_counts;
  std::vector<ClassPair> selected_pairs;
  double alpha = kDefaultAlpha;
  double coverage_fraction = kDefaultCoverage;

  bool operator==(const ConfusionReport&) const = default;
};

/// Indices of the two largest entries of a row; ties go to the lower index.
inline std::pair<Index, Index> top_two(const Matrix& z, Index row) {
  Index first = 0, second = 1;
  if (z(row, 1) > z(row, 0)) std::swap(first, second);
  for (Index j = 2; j < z.cols(); ++j) {
    const double v = z(row, j);
    if (v > z(row, first)) {
      second = first;
      first = j;
    } else if (v > z(row, second)) {
      second = j;
    }
  }
  return {first, second};
}

inline ConfusionReport mine(const Matrix& z, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must be in (0, 1)");
  if (z.cols() < 2) throw Error("confusion mining needs at least 2 classes");
  ConfusionReport report;
  report.alpha = alpha;
  for (Index i = 0; i < z.rows(); ++i) {
    const auto [first, second] = top_two(z, i);
    const double margin = z(i, first) - z(i, second);
    if (margin > alpha) continue;
    const ClassPair pair = ClassPair::of(static_cast<int>(first), static_cast<int>(second));
    report.entries.push_back({i, pair, margin});
    ++report.pair_counts[pair];
  }
  return report;
}

inline ConfusionReport mine(const Assignments& z, double alpha) { return mine(z.z, alpha); }

/// Takes pairs in descending count order (ties lexicographic), skipping pairs
/// already queried, until the taken pairs cover `coverage_fraction` of all
/// entries.
inline std::vector<ClassPair> select_pairs(const ConfusionReport& report, double coverage_fraction,
                                           const std::set<ClassPair>& already_queried = {}) {
  if (!(coverage_fraction > 0.0 && coverage_fraction <= 1.0))
    throw Error("coverage fraction must be in (0, 1]");
  std::vector<std::pair<ClassPair, int>> ranked(report.pair_counts.begin(),
                                                report.pair_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const double target = coverage_fraction * static_cast<double>(report.entries.size());
  std::vector<ClassPair> taken;
  double covered = 0.0;
  for (const auto& [pair, count] : ranked) {
    if (covered >= target) break;
    if (already_queried.contains(pair)) continue;
    taken.push_back(pair);
    covered += count;
  }
  return taken;
}

}  // namespace gta
