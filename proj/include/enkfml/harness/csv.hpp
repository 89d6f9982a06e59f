#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace enkfml::harness {

/// Locale-independent, round-trippable rendering used by every CSV writer.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace enkfml::harness
