#pragma once

#include <cstdio>
#include <string>

namespace sepcor::log {

enum class Level { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };

inline Level& threshold() {
  static Level level = Level::kWarning;
  return level;
}

inline void emit(Level level, const std::string& message) {
  if (level < threshold()) return;
  const char* tag = "info";
  switch (level) {
    case Level::kDebug: tag = "debug"; break;
    case Level::kInfo: tag = "info"; break;
    case Level::kWarning: tag = "warning"; break;
    case Level::kError: tag = "error"; break;
    case Level::kOff: return;
  }
  std::fprintf(stderr, "sepcor: %s: %s\n", tag, message.c_str());
}

inline void warn(const std::string& message) { emit(Level::kWarning, message); }
inline void info(const std::string& message) { emit(Level::kInfo, message); }

}  // namespace sepcor::log
