#include "drp/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace drp {

LogLevel log_threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DRP_LOG_LEVEL");
    if (env == nullptr) return LogLevel::warn;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "warn") == 0) return LogLevel::warn;
    if (std::strcmp(env, "info") == 0) return LogLevel::info;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

void log_message(LogLevel level, const std::string& msg) {
  if (level > log_threshold()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[drp %s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

}  // namespace drp
