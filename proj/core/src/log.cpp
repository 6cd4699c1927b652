#include "graphex/log.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>

namespace graphex::log {
namespace {

Level initial_level() {
  const char* env = std::getenv("GRAPHEX_LOG");
  if (env == nullptr) return Level::kInfo;
  const std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "warn") return Level::kWarn;
  if (v == "error") return Level::kError;
  if (v == "off") return Level::kOff;
  return Level::kInfo;
}

std::atomic<Level>& level_ref() {
  static std::atomic<Level> level{initial_level()};
  return level;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level threshold() { return level_ref().load(); }

void set_threshold(Level level) { level_ref().store(level); }

void emit(Level level, std::string_view message) {
  static constexpr std::string_view kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(sink_mutex());
  std::clog << "[" << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace graphex::log
