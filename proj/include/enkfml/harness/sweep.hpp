#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "enkfml/harness/config.hpp"
#include "enkfml/harness/csv.hpp"
#include "enkfml/harness/experiment.hpp"
#include "enkfml/harness/pool.hpp"

namespace enkfml::harness {

/// Mean and sample standard deviation over the non-divergent seeds of one
/// grid point.
struct PointSummary {
  GridPoint point{};
  double rmse_mean = std::numeric_limits<double>::quiet_NaN();
  double rmse_std = std::numeric_limits<double>::quiet_NaN();
  int n_runs = 0;
  int n_diverged = 0;
  double mean_iterations = std::numeric_limits<double>::quiet_NaN();
};

struct SweepResult {
  std::vector<RunResult> runs;  // grid point major, then repeat
  std::vector<PointSummary> points;
  std::optional<std::size_t> best;  // lowest mean among points with no divergence

  const PointSummary* best_point() const { return best ? &points[*best] : nullptr; }
};

inline PointSummary summarize(const GridPoint& p, const std::vector<RunResult>& runs) {
  PointSummary s;
  s.point = p;
  s.n_runs = static_cast<int>(runs.size());
  std::vector<double> ok;
  double iters = 0.0;
  for (const auto& r : runs) {
    if (r.diverged) {
      ++s.n_diverged;
    } else {
      ok.push_back(r.rmse);
      iters += r.mean_iterations;
    }
  }
  if (!ok.empty()) {
    double sum = 0.0;
    for (double v : ok) sum += v;
    s.rmse_mean = sum / double(ok.size());
    s.mean_iterations = iters / double(ok.size());
    if (ok.size() > 1) {
      double ss = 0.0;
      for (double v : ok) ss += (v - s.rmse_mean) * (v - s.rmse_mean);
      s.rmse_std = std::sqrt(ss / double(ok.size() - 1));
    } else {
      s.rmse_std = 0.0;
    }
  }
  return s;
}

inline std::optional<std::size_t> best_index(const std::vector<PointSummary>& points) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (p.n_diverged > 0 || std::isnan(p.rmse_mean)) continue;
    if (!best || p.rmse_mean < points[*best].rmse_mean) best = i;
  }
  return best;
}

/// All grid points x repeats; results come back in canonical order
/// regardless of which worker finished first.
inline SweepResult sweep(const ExperimentConfig& cfg, unsigned workers = 0) {
  cfg.validate();
  const auto grid = cfg.grid();
  const auto reps = static_cast<std::size_t>(cfg.n_repeats);
  SweepResult out;
  out.runs.resize(grid.size() * reps);
  parallel_for(out.runs.size(), workers ? workers : worker_count(), [&](std::size_t i) {
    const auto& p = grid[i / reps];
    out.runs[i] = run_experiment(cfg, p, run_seed(cfg.base_seed, int(i % reps)));
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const std::vector<RunResult> slice(out.runs.begin() + g * reps,
                                       out.runs.begin() + (g + 1) * reps);
    out.points.push_back(summarize(grid[g], slice));
  }
  out.best = best_index(out.points);
  return out;
}

/// One row per (grid point, seed).
inline void write_runs_csv(const SweepResult& s, std::ostream& os) {
  os << "seed,inflation,half_length,zeta,rmse_mean,diverged\n";
  for (const auto& r : s.runs)
    os << r.seed << ',' << fmt(r.point.inflation) << ',' << fmt(r.point.half_length) << ','
       << fmt(r.point.zeta) << ',' << fmt(r.rmse) << ',' << (r.diverged ? 1 : 0) << '\n';
}

inline void write_summary_csv(const SweepResult& s, std::ostream& os) {
  os << "inflation,half_length,zeta,rmse_mean,rmse_std,n_runs,n_diverged,mean_iterations,best\n";
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const auto& p = s.points[i];
    os << fmt(p.point.inflation) << ',' << fmt(p.point.half_length) << ','
       << fmt(p.point.zeta) << ',' << fmt(p.rmse_mean) << ',' << fmt(p.rmse_std) << ','
       << p.n_runs << ',' << p.n_diverged << ',' << fmt(p.mean_iterations) << ','
       << (s.best && *s.best == i ? 1 : 0) << '\n';
  }
}

/// Per-cycle diagnostics; iterative runs add iteration columns.
inline void write_diagnostics_csv(const std::vector<CycleDiagnostics>& d, bool iterative,
                                  std::ostream& os) {
  os << "cycle,forecast_rmse,analysis_rmse,inflation";
  if (iterative) os << ",iterations,converged";
  os << '\n';
  for (const auto& c : d) {
    os << c.cycle << ',' << fmt(c.forecast_rmse) << ',' << fmt(c.analysis_rmse) << ','
       << fmt(c.inflation);
    if (iterative) os << ',' << c.iterations << ',' << (c.converged ? 1 : 0);
    os << '\n';
  }
}

}  // namespace enkfml::harness
