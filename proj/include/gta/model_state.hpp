#pragma once

// Core numeric domain types shared by the engine: image features, the
// per-class attribute bank, soft assignments, Gaussian mixture state and the
// text prior. All matrices are row-major doubles.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gta {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kUnitNormTolerance = 1e-4;
inline constexpr double kSimplexTolerance = 1e-6;
inline constexpr double kSigmaFloor = 1e-8;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureMatrix {
  Matrix data;                   // row i = f_i
  std::vector<std::string> ids;  // one per row

  Index size() const { return data.rows(); }
  Index dim() const { return data.cols(); }
};

enum class Origin {
  kPrompt,   // the class prompt, e.g. "a photo of a rose."
  kStatic,   // bootstrap attribute
  kDynamic,  // generated from a confused class pair
};

inline std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kPrompt: return "prompt";
    case Origin::kStatic: return "static";
    case Origin::kDynamic: return "dynamic";
  }
  return "static";
}

inline Origin origin_from_string(std::string_view s) {
  if (s == "prompt") return Origin::kPrompt;
  if (s == "static") return Origin::kStatic;
  if (s == "dynamic") return Origin::kDynamic;
  throw Error("unknown attribute origin '" + std::string(s) + "'");
}

/// Trims and collapses internal whitespace runs to a single space.
inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

/// Case-insensitive dedup key used when merging generated attributes.
inline std::string dedup_key(std::string_view text) {
  std::string key = normalize_whitespace(text);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return key;
}

struct Attribute {
  std::string text;
  Vector embedding;  // unit norm, may be empty before embedding
  Origin origin = Origin::kStatic;
  int iteration_added = 0;

  bool operator==(const Attribute& o) const {
    return text == o.text && origin == o.origin && iteration_added == o.iteration_added &&
           embedding.size() == o.embedding.size() && embedding == o.embedding;
  }
};

struct AttributeBank {
  std::vector<std::string> classes;
  std::vector<std::vector<Attribute>> attrs;  // attrs[j] = attributes of class j

  Index num_classes() const { return static_cast<Index>(classes.size()); }

  bool contains(Index cls, std::string_view text) const {
    const std::string key = dedup_key(text);
    const auto& list = attrs.at(static_cast<std::size_t>(cls));
    return std::any_of(list.begin(), list.end(),
                       [&](const Attribute& a) { return dedup_key(a.text) == key; });
  }

  /// Appends unless an equivalent text already exists; returns whether it was added.
  bool add(Index cls, Attribute attr) {
    if (contains(cls, attr.text)) return false;
    attrs.at(static_cast<std::size_t>(cls)).push_back(std::move(attr));
    return true;
  }

  bool operator==(const AttributeBank&) const = default;
};

struct Assignments {
  Matrix z;                                     // N x M, rows on the simplex
  std::vector<std::optional<int>> clamp_labels;  // per row; set => row is one-hot and fixed

  Index size() const { return z.rows(); }
  bool clamped(Index i) const {
    return !clamp_labels.empty() && clamp_labels[static_cast<std::size_t>(i)].has_value();
  }
  Index num_clamped() const {
    return static_cast<Index>(std::count_if(clamp_labels.begin(), clamp_labels.end(),
                                            [](const auto& l) { return l.has_value(); }));
  }

  bool operator==(const Assignments& o) const {
    return z.rows() == o.z.rows() && z.cols() == o.z.cols() && z == o.z &&
           clamp_labels == o.clamp_labels;
  }
};

using ClampLabels = std::vector<std::optional<int>>;

/// Wraps z with clamps; clamped rows are overwritten with their one-hot vector.
inline Assignments make_assignments(Matrix z, ClampLabels clamps = {}) {
  if (!clamps.empty() && static_cast<Index>(clamps.size()) != z.rows())
    throw Error("clamp vector size does not match the number of rows");
  for (Index i = 0; i < static_cast<Index>(clamps.size()); ++i) {
    const auto& label = clamps[static_cast<std::size_t>(i)];
    if (!label) continue;
    if (*label < 0 || *label >= z.cols())
      throw Error("clamp label " + std::to_string(*label) + " out of range");
    z.row(i).setZero();
    z(i, *label) = 1.0;
  }
  return Assignments{std::move(z), std::move(clamps)};
}

struct GmmState {
  Matrix mu;            // M x D
  Vector sigma2;        // D, shared diagonal variance
  Matrix class_sigma2;  // M x D when per-class covariance is enabled, otherwise empty

  bool per_class() const { return class_sigma2.size() > 0; }
};

struct TextPrior {
  Matrix y_hat;  // row-wise softmax of s_bar
  Matrix s_bar;  // temperature-scaled mean similarities
};

inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// --- validation -------------------------------------------------------------

struct Violation {
  std::string what;
  Index row = -1;
  Index col = -1;
};

using Violations = std::vector<Violation>;

namespace detail {

inline std::string num(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

inline void check_finite(const Matrix& m, std::string_view name, Violations& out) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j)))
        out.push_back({std::string(name) + " entry (" + std::to_string(i) + ", " +
                           std::to_string(j) + ") is not finite",
                       i, j});
}

inline void check_simplex_rows(const Matrix& m, Violations& out, bool strictly_positive) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (v < 0.0 || (strictly_positive && v <= 0.0))
        out.push_back({"row " + std::to_string(i) + " entry " + std::to_string(j) + " value " +
                           num(v) + (strictly_positive ? " not positive" : " negative"),
                       i, j});
    }
    const double sum = m.row(i).sum();
    if (!(std::abs(sum - 1.0) <= kSimplexTolerance))
      out.push_back({"row " + std::to_string(i) + " sum " + num(sum), i, -1});
  }
}

}  // namespace detail

inline Violations validate(const FeatureMatrix& f) {
  Violations out;
  if (f.size() < 1 || f.dim() < 1) out.push_back({"empty feature matrix"});
  if (!f.ids.empty() && static_cast<Index>(f.ids.size()) != f.size())
    out.push_back({"id count " + std::to_string(f.ids.size()) + " != rows " +
                   std::to_string(f.size())});
  detail::check_finite(f.data, "feature", out);
  for (Index i = 0; i < f.size(); ++i) {
    const double n = f.data.row(i).norm();
    if (!(std::abs(n - 1.0) <= kUnitNormTolerance))
      out.push_back({"row " + std::to_string(i) + " norm " + detail::num(n) + " ≠ 1", i});
  }
  return out;
}

inline Violations validate(const AttributeBank& bank) {
  Violations out;
  if (bank.attrs.size() != bank.classes.size())
    out.push_back({"attribute lists (" + std::to_string(bank.attrs.size()) + ") != classes (" +
                   std::to_string(bank.classes.size()) + ")"});
  const std::size_t m = std::min(bank.attrs.size(), bank.classes.size());
  for (std::size_t j = 0; j < m; ++j) {
    const auto& list = bank.attrs[j];
    const Index row = static_cast<Index>(j);
    if (list.empty()) out.push_back({"class " + std::to_string(j) + " has no attributes", row});
    std::vector<std::string> seen;
    for (std::size_t k = 0; k < list.size(); ++k) {
      const Index col = static_cast<Index>(k);
      std::string key = normalize_whitespace(list[k].text);
      if (std::find(seen.begin(), seen.end(), key) != seen.end())
        out.push_back({"class " + std::to_string(j) + " duplicate attribute '" + key + "'", row,
                       col});
      seen.push_back(std::move(key));
      const double n = list[k].embedding.norm();
      if (list[k].embedding.size() == 0)
        out.push_back({"class " + std::to_string(j) + " attribute " + std::to_string(k) +
                           " has no embedding",
                       row, col});
      else if (!(std::abs(n - 1.0) <= kUnitNormTolerance))
        out.push_back({"class " + std::to_string(j) + " attribute " + std::to_string(k) +
                           " norm " + detail::num(n) + " ≠ 1",
                       row, col});
    }
  }
  return out;
}

inline Violations validate(const Assignments& a) {
  Violations out;
  detail::check_finite(a.z, "z", out);
  detail::check_simplex_rows(a.z, out, false);
  if (!a.clamp_labels.empty() && static_cast<Index>(a.clamp_labels.size()) != a.z.rows())
    out.push_back({"clamp vector size mismatch"});
  for (Index i = 0; i < static_cast<Index>(a.clamp_labels.size()) && i < a.z.rows(); ++i) {
    const auto& label = a.clamp_labels[static_cast<std::size_t>(i)];
    if (!label) continue;
    if (*label < 0 || *label >= a.z.cols()) {
      out.push_back({"row " + std::to_string(i) + " clamp label out of range", i});
      continue;
    }
    for (Index j = 0; j < a.z.cols(); ++j)
      if (a.z(i, j) != (j == *label ? 1.0 : 0.0)) {
        out.push_back({"row " + std::to_string(i) + " clamped but not one-hot", i, j});
        break;
      }
  }
  return out;
}

inline Violations validate(const GmmState& g, double sigma_floor = kSigmaFloor) {
  Violations out;
  detail::check_finite(g.mu, "mu", out);
  if (g.sigma2.size() != g.mu.cols()) out.push_back({"sigma2 size != feature dimension"});
  for (Index d = 0; d < g.sigma2.size(); ++d)
    if (!(g.sigma2[d] >= sigma_floor))
      out.push_back({"sigma2[" + std::to_string(d) + "] = " + detail::num(g.sigma2[d]) +
                         " below floor",
                     -1, d});
  if (g.per_class()) {
    detail::check_finite(g.class_sigma2, "class sigma2", out);
    for (Index j = 0; j < g.class_sigma2.rows(); ++j)
      for (Index d = 0; d < g.class_sigma2.cols(); ++d)
        if (!(g.class_sigma2(j, d) >= sigma_floor))
          out.push_back({"class sigma2 below floor", j, d});
  }
  return out;
}

inline Violations validate(const TextPrior& p) {
  Violations out;
  detail::check_finite(p.s_bar, "s_bar", out);
  detail::check_finite(p.y_hat, "y_hat", out);
  detail::check_simplex_rows(p.y_hat, out, true);
  return out;
}

}  // namespace gta
