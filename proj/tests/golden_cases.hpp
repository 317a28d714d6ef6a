#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gta::testing {

struct StaticCase {
  std::string class_name;
  std::string domain;
  std::string golden;
};

struct PairwiseCase {
  std::string class1;
  std::vector<std::string> attrs1;
  std::string class2;
  std::vector<std::string> attrs2;
  std::string golden;
};

inline const std::vector<StaticCase>& static_cases() {
  static const std::vector<StaticCase> cases{
      {"Baird's Sparrow", "birds", "static_bairds_sparrow.txt"},
      {"rose", "flowers", "static_rose.txt"},
      {"Boeing 737-800", "aircraft", "static_boeing.txt"},
  };
  return cases;
}

inline const std::vector<PairwiseCase>& pairwise_cases() {
  static const std::vector<PairwiseCase> cases{
      {"Western Gull", {"bird with pink legs", "bird with dark grey back"}, "California Gull",
       {"bird with yellow-green legs"}, "pairwise_gulls.txt"},
      {"rose", {"flowers with thorny stems"}, "tulip",
       {"flowers with cup-shaped petals", "flowers with smooth stems"}, "pairwise_rose_tulip.txt"},
      {"Boeing 737-800", {"aircraft with split scimitar winglets", "aircraft with two engines"},
       "Airbus A320", {"aircraft with sharklets"}, "pairwise_boeing_airbus.txt"},
  };
  return cases;
}

inline std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(GTA_GOLDEN_DIR) + "/" + name, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gta::testing
