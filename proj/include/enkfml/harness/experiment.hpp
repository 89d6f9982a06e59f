#pragma once

// Single seeded twin experiment: truth run, synthetic observations, initial
// ensemble and the cycled filter, reduced to a time-averaged analysis RMSE.
//
// Random streams under the run seed s (see derive_seed):
//   1: truth initial condition      2, k: observation noise of cycle k
//   3: initial ensemble             4, k: observed-site subset of cycle k

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "enkfml/dynamics.hpp"
#include "enkfml/ensemble.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/filters_global.hpp"
#include "enkfml/filters_iterative.hpp"
#include "enkfml/filters_local.hpp"
#include "enkfml/harness/config.hpp"
#include "enkfml/random.hpp"
#include "enkfml/surrogate.hpp"

namespace enkfml::harness {

/// Seed of repetition `repeat` under `base_seed`.
inline std::uint64_t run_seed(std::uint64_t base_seed, int repeat) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(repeat));
}

/// Propagates [x] (or [x; u]) with the truth ODE over one update interval.
template <class Flow>
class TruthPropagator {
 public:
  TruthPropagator(Flow flow, Index dim, double dt, int substeps)
      : flow_(std::move(flow)), stepper_(dim), x_(dim), dt_(dt), substeps_(substeps) {}

  bool operator()(Eigen::Ref<VectorXd> z) {
    x_ = z;
    for (int s = 0; s < substeps_; ++s)
      if (!stepper_.step(flow_, x_, dt_)) return false;
    z = x_;
    return true;
  }

 private:
  Flow flow_;
  dynamics::Rk4Stepper stepper_;
  VectorXd x_;
  double dt_;
  int substeps_;
};

struct RunOptions {
  bool record_diagnostics = false;
};

struct RunResult {
  std::uint64_t seed = 0;
  GridPoint point{};
  double rmse = std::numeric_limits<double>::quiet_NaN();  // mean over cycles > burn-in
  bool diverged = false;
  std::string failure;            // reason when diverged
  std::int64_t cycles_completed = 0;
  double mean_iterations = 1.0;
  double final_inflation = 1.0;
  VectorXd final_params;          // ensemble-mean parameters at the end
  std::vector<CycleDiagnostics> diagnostics;
};

namespace detail {

/// Initial parameter guess: the exact L96 coefficients for L96 truth, the
/// single-scale L96 coefficients with the two-scale forcing for L05III.
inline VectorXd parameter_guess(const ExperimentConfig& cfg,
                                const surrogate::StencilBasis& basis) {
  const double forcing = cfg.model == ModelKind::kL96 ? cfg.l96.forcing : cfg.l05.forcing;
  if (basis.stencil_radius() < 2) return VectorXd::Zero(basis.n_params());
  return surrogate::true_l96_params(basis, forcing).coefficients();
}

inline RingGeometry filter_geometry(const ExperimentConfig& cfg, Index dim) {
  const Index nx = cfg.nx();
  if (dim == nx) return RingGeometry::ring(nx);
  // Two-scale state: fine variable m sits at coarse coordinate m / (Nu / Nx).
  RingGeometry g;
  g.period = double(nx);
  g.positions.resize(dim);
  const double ratio = double(dim - nx) / double(nx);
  for (Index i = 0; i < nx; ++i) g.positions(i) = double(i);
  for (Index m = 0; m < dim - nx; ++m) g.positions(nx + m) = double(m) / ratio;
  return g;
}

template <class Prop>
RunResult cycle_filter(const ExperimentConfig& cfg, const GridPoint& point,
                       std::uint64_t seed, const RunOptions& opt, Ensemble ens, Prop& prop,
                       VectorXd truth_state) {
  RunResult res;
  res.seed = seed;
  res.point = point;
  const Index nx = cfg.nx();
  const Index ny = cfg.n_obs();
  const bool full_obs = ny == nx;

  std::optional<Localizer> loc;
  if (cfg.filter == FilterKind::kLensrfMl || cfg.filter == FilterKind::kLetkfMl)
    loc.emplace(filter_geometry(cfg, ens.nx()), point.half_length);
  const LocalAnalysisConfig local_cfg{point.half_length, point.zeta, point.inflation,
                                      cfg.cl_form};
  GlobalAnalysisConfig global_cfg;
  global_cfg.scheme = cfg.scheme;
  global_cfg.inflation = point.inflation;
  global_cfg.adaptive = cfg.adaptive_inflation;
  const ModelErrorPerturbations xq =
      ModelErrorPerturbations::scaled_identity(ens.nx(), cfg.model_error_std);
  double inflation = cfg.adaptive_inflation ? 1.0 : point.inflation;

  const int stride = surrogate::substeps_for(cfg.update_interval, cfg.truth_dt());
  dynamics::Rk4Stepper stepper(truth_state.size());
  auto advance_truth = [&]() {
    if (cfg.model == ModelKind::kL96) {
      stepper.integrate(dynamics::make_flow(cfg.l96), truth_state, cfg.l96.dt, stride);
    } else {
      stepper.integrate(dynamics::make_flow(cfg.l05), truth_state, cfg.l05.dt, stride);
    }
  };

  const ObservationOperator full_op = ObservationOperator::full(nx);
  double sum = 0.0;
  double iterations = 0.0;
  std::int64_t counted = 0;
  std::int64_t k = 1;
  try {
    for (; k <= cfg.n_cycles; ++k) {
      advance_truth();
      const VectorXd truth_x = truth_state.head(nx);
      ObservationOperator op = full_op;
      if (!full_obs) {
        Rng subset_rng = make_rng(seed, 4, static_cast<std::uint64_t>(k));
        op = ObservationOperator::random_subset(nx, ny, subset_rng);
      }
      Rng obs_rng = make_rng(seed, 2, static_cast<std::uint64_t>(k));
      const ObservationBatch obs = observe(truth_x, op, cfg.obs_error_std, obs_rng, k);

      CycleOutput out;
      switch (cfg.filter) {
        case FilterKind::kEnkfMl:
        case FilterKind::kReferenceKnownModel:
          out = enkfml_cycle(ens, obs, prop, global_cfg, inflation, &truth_x, k);
          break;
        case FilterKind::kLensrfMl:
          out = lenkfml_cycle(ens, obs, prop, *loc, local_cfg, &truth_x, k);
          break;
        case FilterKind::kLetkfMl:
          out = letkfml_cycle(ens, obs, prop, *loc, local_cfg, &truth_x, k);
          break;
        case FilterKind::kIenkfMl:
          out = ienkfml_cycle(ens, obs, xq, cfg.gauss_newton, prop, point.inflation, &truth_x, k);
          break;
      }
      ens = std::move(out.ensemble);
      inflation = out.diagnostics.inflation;
      const double r = out.diagnostics.analysis_rmse;
      if (opt.record_diagnostics) res.diagnostics.push_back(out.diagnostics);
      if (!std::isfinite(r) || r > cfg.abort_rmse) {
        res.diverged = true;
        res.failure = "analysis RMSE exceeded abort threshold at cycle " + std::to_string(k);
        break;
      }
      if (k > cfg.burn_in_cycles) {
        sum += r;
        iterations += out.diagnostics.iterations;
        ++counted;
      }
    }
  } catch (const AnalysisFailure& e) {
    res.diverged = true;
    res.failure = e.what();
  } catch (const NumericalDivergence& e) {
    res.diverged = true;
    res.failure = e.what();
  } catch (const DegenerateEnsemble& e) {
    res.diverged = true;
    res.failure = e.what();
  }
  res.cycles_completed = res.diverged ? k - 1 : cfg.n_cycles;
  res.final_inflation = inflation;
  if (ens.np() > 0) res.final_params = ens.mean().tail(ens.np());
  if (counted > 0) {
    res.rmse = sum / double(counted);
    res.mean_iterations = iterations / double(counted);
  }
  if (!res.diverged && !(res.rmse <= cfg.divergence_rmse)) {
    res.diverged = true;
    res.failure = "time-averaged RMSE above divergence threshold";
  }
  return res;
}

}  // namespace detail

/// Runs one seeded experiment at one grid point. Filter divergence is
/// reported in the result, not thrown; configuration errors are thrown.
inline RunResult run_experiment(const ExperimentConfig& cfg, const GridPoint& point,
                                std::uint64_t seed, const RunOptions& opt = {}) {
  cfg.validate();
  const Index nx = cfg.nx();

  VectorXd truth_state;
  {
    Rng rng = make_rng(seed, 1);
    dynamics::Rk4Stepper stepper(0);
    if (cfg.model == ModelKind::kL96) {
      truth_state = dynamics::detail::default_initial_condition(cfg.l96, rng);
      stepper.resize(truth_state.size());
      stepper.integrate(dynamics::make_flow(cfg.l96), truth_state, cfg.l96.dt,
                        cfg.truth_spinup_steps);
    } else {
      truth_state = dynamics::detail::default_initial_condition(cfg.l05, rng);
      stepper.resize(truth_state.size());
      stepper.integrate(dynamics::make_flow(cfg.l05), truth_state, cfg.l05.dt,
                        cfg.truth_spinup_steps);
    }
  }

  Rng init_rng = make_rng(seed, 3);
  const Index ne = cfg.ensemble_size;
  const int truth_substeps = surrogate::substeps_for(cfg.update_interval, cfg.truth_dt());

  if (cfg.uses_known_model()) {
    const Index dim = truth_state.size();
    Ensemble ens(dim, 0, ne);
    VectorXd spread = VectorXd::Constant(dim, cfg.state_spread_std);
    if (dim > nx) spread.tail(dim - nx) /= cfg.l05.space_scale_ratio;
    for (Index i = 0; i < ne; ++i)
      ens.matrix().col(i) =
          truth_state + spread.cwiseProduct(standard_normal(dim, init_rng));
    if (cfg.model == ModelKind::kL96) {
      TruthPropagator prop(dynamics::make_flow(cfg.l96), dim, cfg.l96.dt, truth_substeps);
      return detail::cycle_filter(cfg, point, seed, opt, std::move(ens), prop, truth_state);
    }
    TruthPropagator prop(dynamics::make_flow(cfg.l05), dim, cfg.l05.dt, truth_substeps);
    return detail::cycle_filter(cfg, point, seed, opt, std::move(ens), prop, truth_state);
  }

  const surrogate::StencilBasis basis = surrogate::build_basis(cfg.stencil_radius);
  InitPrior prior;
  prior.param_mean_offset_std = cfg.sigma_a;
  prior.param_spread_std = cfg.sigma_a;
  prior.state_spread_std = cfg.state_spread_std;
  Ensemble ens = init_ensemble(prior, detail::parameter_guess(cfg, basis),
                               truth_state.head(nx), ne, init_rng);
  surrogate::SurrogatePropagator prop(basis, nx, cfg.surrogate_dt,
                                      surrogate::substeps_for(cfg.update_interval,
                                                              cfg.surrogate_dt));
  return detail::cycle_filter(cfg, point, seed, opt, std::move(ens), prop, truth_state);
}

}  // namespace enkfml::harness
