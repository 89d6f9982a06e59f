#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "enkfml/errors.hpp"

namespace enkfml::harness {

/// y = c * N^(-alpha), fitted by least squares on (log N, log y).
struct PowerLawFit {
  double alpha = 0.0;
  double alpha_stderr = 0.0;
  double prefactor = 0.0;
  double r_squared = 1.0;
};

inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw InvalidInput("fit_power_law: need at least 3 points");
  const double n = double(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0))
      throw InvalidInput("fit_power_law: values must be positive");
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx, dy = std::log(y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw InvalidInput("fit_power_law: abscissae must not all coincide");
  const double slope = sxy / sxx;
  double ssr = 0.0;
  for (const auto& [x, y] : points) {
    const double r = std::log(y) - (my + slope * (std::log(x) - mx));
    ssr += r * r;
  }
  PowerLawFit fit;
  fit.alpha = -slope;
  fit.alpha_stderr = std::sqrt(ssr / (n - 2.0) / sxx);
  fit.prefactor = std::exp(my - slope * mx);
  fit.r_squared = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  return fit;
}

/// Minimizer of a sampled curve v(zeta): the parabola vertex in log(zeta)
/// through the best sample and its neighbours, clamped to that bracket. Falls
/// back to the best sample at the edges of the grid. Points must be sorted
/// by zeta.
inline double refine_log_minimum(const std::vector<std::pair<double, double>>& samples) {
  if (samples.empty()) throw InvalidInput("refine_log_minimum: no samples");
  std::size_t b = 0;
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].second < samples[b].second) b = i;
  if (b == 0 || b + 1 == samples.size()) return samples[b].first;
  const double x0 = std::log(samples[b - 1].first), x1 = std::log(samples[b].first),
               x2 = std::log(samples[b + 1].first);
  const double y0 = samples[b - 1].second, y1 = samples[b].second, y2 = samples[b + 1].second;
  const double d0 = (y1 - y0) / (x1 - x0), d1 = (y2 - y1) / (x2 - x1);
  const double curv = (d1 - d0) / (x2 - x0);
  if (!(curv > 0.0)) return samples[b].first;
  const double vertex = 0.5 * (x0 + x1) - d0 / (2.0 * curv);
  return std::exp(std::clamp(vertex, x0, x2));
}

}  // namespace enkfml::harness
