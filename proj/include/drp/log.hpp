#pragma once

#include <string>

namespace drp {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Threshold parsed once from the DRP_LOG_LEVEL environment variable
/// (error|warn|info|debug); defaults to warn.
LogLevel log_threshold();

void log_message(LogLevel level, const std::string& msg);

inline void log_warn(const std::string& m) { log_message(LogLevel::warn, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::info, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::debug, m); }

}  // namespace drp
