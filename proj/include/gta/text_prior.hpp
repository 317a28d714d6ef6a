#pragma once

// Attribute-averaged text prior: s_bar[i][j] = mean_k f_i . phi(a_jk) / tau,
// y_hat = rowwise softmax(s_bar).

#include "gta/model_state.hpp"

#include <cmath>
#include <vector>

namespace gta {

inline constexpr double kDefaultTemperature = 0.01;

/// Numerically stable softmax of every row.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

/// Running per-class similarity sums, so appending one attribute costs O(N.D).
class SimilarityCache {
 public:
  SimilarityCache(const FeatureMatrix& features, const AttributeBank& bank)
      : features_(&features),
        sums_(Matrix::Zero(features.size(), bank.num_classes())),
        counts_(static_cast<std::size_t>(bank.num_classes()), 0) {
    for (Index j = 0; j < bank.num_classes(); ++j) {
      const auto& list = bank.attrs[static_cast<std::size_t>(j)];
      if (list.empty()) throw Error("class " + std::to_string(j) + " has no attributes");
      Vector class_sum = Vector::Zero(features.dim());
      for (const Attribute& a : list) {
        if (a.embedding.size() != features.dim())
          throw Error("attribute '" + a.text + "' has embedding dimension " +
                      std::to_string(a.embedding.size()) + ", expected " +
                      std::to_string(features.dim()));
        class_sum += a.embedding;
      }
      sums_.col(j).noalias() = features.data * class_sum;
      counts_[static_cast<std::size_t>(j)] = static_cast<int>(list.size());
    }
  }

  void append(Index cls, const Vector& embedding) {
    sums_.col(cls).noalias() += features_->data * embedding;
    ++counts_[static_cast<std::size_t>(cls)];
  }

  Matrix s_bar(double temperature) const {
    Matrix out = sums_;
    for (Index j = 0; j < out.cols(); ++j)
      out.col(j) /= static_cast<double>(counts_[static_cast<std::size_t>(j)]) * temperature;
    return out;
  }

 private:
  const FeatureMatrix* features_;
  Matrix sums_;  // N x M, sum_k f_i . phi(a_jk)
  std::vector<int> counts_;
};

inline Matrix mean_similarity(const FeatureMatrix& features, const AttributeBank& bank,
                              double temperature = kDefaultTemperature) {
  return SimilarityCache(features, bank).s_bar(temperature);
}

inline TextPrior text_predictions(Matrix s_bar) {
  Matrix y = softmax_rows(s_bar);
  return TextPrior{std::move(y), std::move(s_bar)};
}

inline TextPrior text_prior(const FeatureMatrix& features, const AttributeBank& bank,
                            double temperature = kDefaultTemperature) {
  return text_predictions(mean_similarity(features, bank, temperature));
}

}  // namespace gta
