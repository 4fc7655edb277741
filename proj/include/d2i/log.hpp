#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace d2i {

enum class LogLevel { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

/// Verbosity comes from the D2I_LOG_LEVEL environment variable
/// (quiet|error|warn|info|debug); default info.
inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("D2I_LOG_LEVEL");
    if (!env) return LogLevel::Info;
    std::string s(env);
    if (s == "quiet") return LogLevel::Quiet;
    if (s == "error") return LogLevel::Error;
    if (s == "warn") return LogLevel::Warn;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
  if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  log_at(LogLevel::Info, "info", fmt, args...);
}

template <typename... Args>
void log_warn(const char* fmt, Args... args) {
  log_at(LogLevel::Warn, "warn", fmt, args...);
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  log_at(LogLevel::Debug, "debug", fmt, args...);
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
  log_at(LogLevel::Error, "error", fmt, args...);
}

}  // namespace d2i
