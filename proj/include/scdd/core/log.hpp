#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace scdd::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

inline Level& level() {
  static Level l = Level::info;
  return l;
}

template <class... Args>
void info(const Args&... args) {
  if (level() < Level::info) return;
  std::ostringstream os;
  (os << ... << args);
  std::clog << "[scdd] " << os.str() << '\n';
}

template <class... Args>
void debug(const Args&... args) {
  if (level() < Level::debug) return;
  std::ostringstream os;
  (os << ... << args);
  std::clog << "[scdd:debug] " << os.str() << '\n';
}

}  // namespace scdd::log
