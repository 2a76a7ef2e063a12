#pragma once

#include <charconv>
#include <string>

namespace probembed {

/// Shortest decimal text that reads back to the same double.
inline std::string fmt(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace probembed
