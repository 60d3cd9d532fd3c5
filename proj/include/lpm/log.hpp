#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace lpm::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warn};
  return level;
}

inline void set_level(Level l) { threshold().store(l); }

template <typename... Args>
void write(Level l, std::string_view tag, const Args&... args) {
  if (l < threshold().load()) return;
  static std::mutex mu;
  std::ostringstream os;
  static constexpr const char* names[] = {"debug", "info", "warn", "error"};
  os << '[' << names[static_cast<int>(l)] << "] " << tag << ": ";
  (os << ... << args);
  os << '\n';
  std::lock_guard lock(mu);
  std::clog << os.str();
}

template <typename... Args> void debug(std::string_view tag, const Args&... a) { write(Level::debug, tag, a...); }
template <typename... Args> void info(std::string_view tag, const Args&... a) { write(Level::info, tag, a...); }
template <typename... Args> void warn(std::string_view tag, const Args&... a) { write(Level::warn, tag, a...); }
template <typename... Args> void error(std::string_view tag, const Args&... a) { write(Level::error, tag, a...); }

}  // namespace lpm::log
