#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gta {

struct ScoredImage {
  std::string id;
  double score = 0.0;  // z[i][j] for the class the image was selected for

  bool operator==(const ScoredImage&) const = default;
};

/// Pseudo-labeled fine-tuning request: the top-k images of every class with
/// that class's attribute texts. Few-shot labeled images ride along.
struct AdaptJob {
  std::vector<std::string> classes;
  std::vector<std::vector<ScoredImage>> images;         // per class, score descending
  std::vector<std::vector<std::string>> attributes;     // per class
  std::vector<std::vector<std::string>> fewshot_ids;    // per class, labeled images
  std::string kind = "pseudo-label";                    // or "seen-classes"
  int iteration = 0;
  int steps = 1;
  std::uint64_t seed = 0;

  bool operator==(const AdaptJob&) const = default;
};

}  // namespace gta
