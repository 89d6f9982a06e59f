#pragma once

// Global (unlocalized) augmented-state filters. Both analyses act on the full
// z = [x; p] anomalies; parameters are only updated through their sample
// cross-covariance with the observed state.

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <vector>
#include <string>

#include "enkfml/ensemble.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/linalg.hpp"
#include "enkfml/surrogate.hpp"

namespace enkfml {

/// Callable advancing one augmented member z = [x; p] in place across an
/// update interval; returns false if the member diverged.
template <class P>
concept Propagator = requires(P p, Eigen::Ref<VectorXd> z) {
  { p(z) } -> std::convertible_to<bool>;
};

enum class TransformScheme { kRightTransform, kLeftTransform };

struct GlobalAnalysisConfig {
  TransformScheme scheme = TransformScheme::kRightTransform;
  double inflation = 1.0;
  bool adaptive = false;
  AdaptiveInflationSettings adaptive_settings{};
};

struct CycleDiagnostics {
  std::int64_t cycle = 0;
  double forecast_rmse = std::numeric_limits<double>::quiet_NaN();
  double analysis_rmse = std::numeric_limits<double>::quiet_NaN();
  double inflation = 1.0;
  int iterations = 1;
  bool converged = true;
};

struct CycleOutput {
  Ensemble ensemble;
  CycleDiagnostics diagnostics;
};

namespace detail {

/// -1 / (1 + m + sqrt(1 + m)) = ((1 + m)^{-1/2} - 1) / m, stable at m = 0.
inline double inv_sqrt_increment(double m) {
  return -1.0 / (1.0 + m + std::sqrt(1.0 + m));
}

inline void check_finite(const MatrixXd& m, std::int64_t cycle, const char* what) {
  if (!m.allFinite()) throw AnalysisFailure(std::string(what) + " produced non-finite values", cycle);
}

inline double rmse_head(const VectorXd& mean_state, const VectorXd* truth) {
  if (truth == nullptr) return std::numeric_limits<double>::quiet_NaN();
  return rmse(mean_state.head(truth->size()), *truth);
}

}  // namespace detail

/// Right-transform (ETKF) analysis of the augmented ensemble:
///   w = (I + YᵀR⁻¹Y)⁻¹ YᵀR⁻¹ d,   X^a = X (I + YᵀR⁻¹Y)^{-1/2},
/// with Y = H X_x and the symmetric square root.
inline Ensemble etkf_analysis(const Ensemble& e, const ObservationBatch& obs,
                              std::int64_t cycle = -1) {
  obs.validate(e.nx());
  const EnsembleStats s = ensemble_stats(e);
  const Index ne = e.size();
  const double inv_r = 1.0 / (obs.obs_error_std * obs.obs_error_std);
  const MatrixXd y = obs.op.select_rows(s.state_anomalies());
  const VectorXd d = obs.values - obs.op.apply(s.state_mean());

  const MatrixXd a = MatrixXd::Identity(ne, ne) + inv_r * y.transpose() * y;
  const linalg::SymmetricEigen eig(a);
  const VectorXd rhs = inv_r * (y.transpose() * d);
  const VectorXd w = eig.vectors * (eig.values.cwiseInverse().asDiagonal() *
                                    (eig.vectors.transpose() * rhs));
  const MatrixXd t = eig.apply([](double v) { return 1.0 / std::sqrt(v); });

  const VectorXd mean = s.mean + s.anomalies * w;
  const MatrixXd anomalies = s.anomalies * t;
  detail::check_finite(anomalies, cycle, "ETKF transform");
  detail::check_finite(mean, cycle, "ETKF mean update");
  return ensemble_from_stats(mean, anomalies, e.nx());
}

/// Left-transform (EnSRF) analysis with the raw sample covariance
/// B = X Xᵀ and Θ = [H 0]:
///   z̄^a = z̄ + BΘᵀ(R + ΘBΘᵀ)⁻¹ d,   X^a = (I + BΘᵀR⁻¹Θ)^{-1/2} X.
/// The Nz x Nz square root is evaluated through the Ny x Ny matrix
/// ΘBΘᵀ/σ² = YYᵀ/σ² using f(I + AC) = I + A g(CA) C.
inline Ensemble ensrf_analysis(const Ensemble& e, const ObservationBatch& obs,
                               std::int64_t cycle = -1) {
  obs.validate(e.nx());
  const EnsembleStats s = ensemble_stats(e);
  const double inv_r = 1.0 / (obs.obs_error_std * obs.obs_error_std);
  const MatrixXd y = obs.op.select_rows(s.state_anomalies());
  const VectorXd d = obs.values - obs.op.apply(s.state_mean());

  const MatrixXd b_theta = s.anomalies * y.transpose();  // B Θᵀ, Nz x Ny
  const linalg::SymmetricEigen eig(inv_r * y * y.transpose());
  const VectorXd gain_diag = (1.0 + eig.values.array()).inverse();
  const VectorXd sqrt_diag = eig.values.unaryExpr(&detail::inv_sqrt_increment);
  const MatrixXd& u = eig.vectors;

  const VectorXd mean =
      s.mean + inv_r * b_theta * (u * (gain_diag.asDiagonal() * (u.transpose() * d)));
  const MatrixXd anomalies =
      s.anomalies + inv_r * b_theta * (u * sqrt_diag.asDiagonal() * (u.transpose() * y));
  detail::check_finite(anomalies, cycle, "EnSRF transform");
  detail::check_finite(mean, cycle, "EnSRF mean update");
  return ensemble_from_stats(mean, anomalies, e.nx());
}

inline Ensemble global_analysis(const Ensemble& e, const ObservationBatch& obs,
                                TransformScheme scheme, std::int64_t cycle = -1) {
  return scheme == TransformScheme::kRightTransform ? etkf_analysis(e, obs, cycle)
                                                    : ensrf_analysis(e, obs, cycle);
}

/// Advances every member with `prop`. Diverged members abort with their
/// indices listed in the AnalysisFailure.
template <Propagator P>
Ensemble forecast_ensemble(const Ensemble& e, P& prop, std::int64_t cycle = -1) {
  Ensemble out = e;
  std::vector<std::int64_t> diverged;
  for (Index i = 0; i < out.size(); ++i) {
    Eigen::Ref<VectorXd> z = out.matrix().col(i);
    if (!prop(z) || !z.allFinite()) diverged.push_back(i);
  }
  if (!diverged.empty()) {
    const std::string what =
        std::to_string(diverged.size()) + " member(s) diverged during the forecast";
    throw AnalysisFailure(what, cycle, std::move(diverged));
  }
  return out;
}

/// Forecast with the surrogate resolvent built from each member's own
/// parameters; the parameter block is carried over unchanged.
inline Ensemble enkfml_forecast(const Ensemble& e,
                                const surrogate::SurrogateModel& model,
                                std::int64_t cycle = -1) {
  if (e.np() != model.basis.n_params())
    throw InvalidDimension("enkfml_forecast: parameter block does not match basis");
  surrogate::SurrogatePropagator prop(model.basis, e.nx(), model.integration_dt,
                                      model.substeps_per_update);
  return forecast_ensemble(e, prop, cycle);
}

/// forecast -> inflation -> analysis. With `cfg.adaptive`, the factor is
/// re-estimated from the innovation starting at `prev_inflation`; otherwise
/// cfg.inflation is used. RMSEs are filled in when `truth` is given (compared
/// against the leading truth->size() state entries).
template <Propagator P>
CycleOutput enkfml_cycle(const Ensemble& e, const ObservationBatch& obs, P& prop,
                         const GlobalAnalysisConfig& cfg, double prev_inflation = 1.0,
                         const VectorXd* truth = nullptr, std::int64_t cycle = 0) {
  CycleOutput out;
  out.diagnostics.cycle = cycle;
  Ensemble forecast = forecast_ensemble(e, prop, cycle);
  const VectorXd forecast_mean = forecast.mean();
  out.diagnostics.forecast_rmse = detail::rmse_head(forecast_mean.head(e.nx()), truth);

  double factor = cfg.inflation;
  if (cfg.adaptive) {
    const EnsembleStats s = ensemble_stats(forecast);
    const VectorXd d = obs.values - obs.op.apply(s.state_mean());
    factor = adaptive_inflation_update(s, d, obs.op, obs.obs_error_std,
                                       prev_inflation, cfg.adaptive_settings);
  }
  out.diagnostics.inflation = factor;
  forecast = apply_inflation(forecast, factor);
  out.ensemble = global_analysis(forecast, obs, cfg.scheme, cycle);
  out.diagnostics.analysis_rmse =
      detail::rmse_head(out.ensemble.mean().head(e.nx()), truth);
  return out;
}

inline CycleOutput enkfml_cycle(const Ensemble& e, const ObservationBatch& obs,
                                const surrogate::SurrogateModel& model,
                                const GlobalAnalysisConfig& cfg,
                                double prev_inflation = 1.0,
                                const VectorXd* truth = nullptr,
                                std::int64_t cycle = 0) {
  surrogate::SurrogatePropagator prop(model.basis, e.nx(), model.integration_dt,
                                      model.substeps_per_update);
  return enkfml_cycle(e, obs, prop, cfg, prev_inflation, truth, cycle);
}

}  // namespace enkfml
