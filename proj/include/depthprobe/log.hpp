#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace depthprobe::log {

enum class Level : int { error = 0, info = 1, debug = 2 };

// Level comes from DEPTHPROBE_LOG (error|info|debug), read once. Default: info.
inline Level threshold() {
  static const Level lvl = [] {
    const char* env = std::getenv("DEPTHPROBE_LOG");
    if (env == nullptr) return Level::info;
    if (std::strcmp(env, "error") == 0) return Level::error;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    return Level::info;
  }();
  return lvl;
}

inline void emit(Level lvl, const char* tag, const std::string& msg) {
  if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void error(const std::string& msg) { emit(Level::error, "error", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

}  // namespace depthprobe::log
