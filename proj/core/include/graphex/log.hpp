#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace graphex::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

Level threshold();
void set_threshold(Level level);

void emit(Level level, std::string_view message);

template <typename... Args>
void info(const Args&... args) {
  if (threshold() > Level::kInfo) return;
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kInfo, os.str());
}

template <typename... Args>
void warn(const Args&... args) {
  if (threshold() > Level::kWarn) return;
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kWarn, os.str());
}

template <typename... Args>
void debug(const Args&... args) {
  if (threshold() > Level::kDebug) return;
  std::ostringstream os;
  (os << ... << args);
  emit(Level::kDebug, os.str());
}

}  // namespace graphex::log
