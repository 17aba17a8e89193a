#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

// Minimal stderr logger gated by the FBEE_LOG environment variable
// (quiet | info | debug). Defaults to quiet. Log output never goes to the
// artifact files, so artifacts stay byte-reproducible.

namespace fbee::log {

enum class Level { Quiet = 0, Info = 1, Debug = 2 };

inline Level level() {
  static const Level cached = [] {
    const char* env = std::getenv("FBEE_LOG");
    if (env == nullptr) return Level::Quiet;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    if (std::strcmp(env, "info") == 0) return Level::Info;
    return Level::Quiet;
  }();
  return cached;
}

template <typename... Args>
void info(const char* fmt, Args... args) {
  if (level() >= Level::Info) {
    std::fprintf(stderr, "[fbee] ");
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

template <typename... Args>
void debug(const char* fmt, Args... args) {
  if (level() >= Level::Debug) {
    std::fprintf(stderr, "[fbee:debug] ");
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

}  // namespace fbee::log
