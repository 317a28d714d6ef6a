#pragma once

#include "gta/model_state.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gta {

/// Maps texts to unit-norm rows of a D-column matrix.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Matrix embed(const std::vector<std::string>& texts) = 0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Test-only embedder: the text hash seeds a pseudo-random unit vector.
/// Deterministic across runs and platforms; carries no semantics.
class MockEmbedder final : public TextEmbedder {
 public:
  explicit MockEmbedder(Index dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  Vector embed_one(std::string_view text) const {
    std::mt19937_64 rng(fnv1a64(text) ^ seed_);
    Vector v(dim_);
    for (Index d = 0; d < dim_; ++d) {
      // top 53 bits -> [0, 1), shifted to [-1, 1)
      v[d] = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }
    const double n = v.norm();
    if (n == 0.0) v[0] = 1.0;
    else v /= n;
    return v;
  }

  Matrix embed(const std::vector<std::string>& texts) override {
    Matrix out(static_cast<Index>(texts.size()), dim_);
    for (std::size_t k = 0; k < texts.size(); ++k)
      out.row(static_cast<Index>(k)) = embed_one(texts[k]).transpose();
    return out;
  }

 private:
  Index dim_;
  std::uint64_t seed_;
};

}  // namespace gta
