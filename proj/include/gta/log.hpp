#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace gta::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::kInfo};
  return level;
}

inline void set_level(Level l) { threshold().store(l); }

inline void write(Level l, const std::string& msg) {
  if (l < threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* kTags[] = {"DEBUG", "INFO", "WARN", "ERROR", ""};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[gta " << kTags[static_cast<int>(l)] << "] " << msg << '\n';
}

class Line {
 public:
  explicit Line(Level l) : level_(l) {}
  ~Line() { write(level_, os_.str()); }
  template <typename T>
  Line& operator<<(const T& v) {
    os_ << v;
    return *this;
  }

 private:
  Level level_;
  std::ostringstream os_;
};

inline Line debug() { return Line(Level::kDebug); }
inline Line info() { return Line(Level::kInfo); }
inline Line warn() { return Line(Level::kWarn); }
inline Line error() { return Line(Level::kError); }

}  // namespace gta::log
