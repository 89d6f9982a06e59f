#pragma once

// Localized augmented filters with global parameters. The state block is
// updated by a localized analysis (covariance localization or LETKF domain
// localization); parameters follow by regression on the state increment,
// with the state/parameter cross-covariance tapered by zeta.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "enkfml/ensemble.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/filters_global.hpp"
#include "enkfml/linalg.hpp"

namespace enkfml {

/// Gaspari-Cohn fifth-order piecewise rational correlation with half-length
/// c (support 2c). An infinite half-length gives 1 everywhere.
inline double gaspari_cohn(double r, double c) {
  if (r < 0.0) throw InvalidInput("gaspari_cohn: negative distance");
  if (!(c > 0.0)) throw InvalidInput("gaspari_cohn: half-length must be positive");
  const double z = r / c;  // 0 when c is infinite
  if (z >= 2.0) return 0.0;
  if (z <= 1.0) {
    return ((((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z) + 1.0;
  }
  return (((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0) -
         2.0 / (3.0 * z);
}

/// Positions of state entries on a periodic line; distance is
/// min(|a - b|, period - |a - b|).
struct RingGeometry {
  VectorXd positions;
  double period = 0.0;

  /// Sites 0..n-1 on a ring of length n.
  static RingGeometry ring(Index n) {
    return RingGeometry{VectorXd::LinSpaced(n, 0.0, double(n - 1)), double(n)};
  }

  Index size() const { return positions.size(); }

  double distance(double a, double b) const {
    const double raw = std::fmod(std::abs(a - b), period);
    return std::min(raw, period - raw);
  }
  double distance_between(Index i, Index j) const {
    return distance(positions(i), positions(j));
  }
};

/// Nx x Nx Gaspari-Cohn weights over the geometry; the implicit parameter
/// blocks are C_pp = 1 and C_px = zeta.
inline MatrixXd state_localization(const RingGeometry& geom, double half_length) {
  const Index n = geom.size();
  MatrixXd c(n, n);
  for (Index j = 0; j < n; ++j) {
    c(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i)
      c(i, j) = c(j, i) = gaspari_cohn(geom.distance_between(i, j), half_length);
  }
  return c;
}

/// C_xy (Nx x Ny) and C_yy (Ny x Ny) for pointwise observations.
struct ObsSpaceLocalization {
  MatrixXd c_xy;
  MatrixXd c_yy;
};

inline ObsSpaceLocalization obs_space_localization(const RingGeometry& geom,
                                                   const ObservationOperator& op,
                                                   double half_length) {
  const Index nx = geom.size();
  const Index ny = op.size();
  ObsSpaceLocalization loc{MatrixXd(nx, ny), MatrixXd(ny, ny)};
  for (Index k = 0; k < ny; ++k) {
    const double pk = geom.positions(op.observed_indices[std::size_t(k)]);
    for (Index i = 0; i < nx; ++i)
      loc.c_xy(i, k) = gaspari_cohn(geom.distance(geom.positions(i), pk), half_length);
    for (Index l = 0; l < ny; ++l)
      loc.c_yy(l, k) = gaspari_cohn(
          geom.distance(geom.positions(op.observed_indices[std::size_t(l)]), pk),
          half_length);
  }
  return loc;
}

namespace detail {

struct StateStats {
  VectorXd mean;
  MatrixXd anomalies;  // normalized by 1/sqrt(Ne-1)
};

inline StateStats state_stats(const MatrixXd& ex) {
  if (ex.cols() < 2) throw DegenerateEnsemble("need at least 2 members");
  StateStats s;
  s.mean = ex.rowwise().mean();
  s.anomalies = (ex.colwise() - s.mean) / std::sqrt(double(ex.cols() - 1));
  s.anomalies.colwise() -= s.anomalies.rowwise().mean();
  return s;
}

inline MatrixXd members_from(const VectorXd& mean, const MatrixXd& anomalies) {
  return (anomalies * std::sqrt(double(anomalies.cols() - 1))).colwise() + mean;
}

}  // namespace detail

/// Covariance-localized square-root update of the state block, in state
/// space. With B = C_xx ∘ (X Xᵀ) and Ω = HᵀR⁻¹H = D²:
///   x̄^a = x̄ + (I + BΩ)⁻¹ B HᵀR⁻¹ d,   X^a = (I + BΩ)^{-1/2} X,
/// both evaluated from the Nx x Nx symmetric matrix D B D.
inline MatrixXd lensrf_state_update(const MatrixXd& ex, const ObservationBatch& obs,
                                    const MatrixXd& c_xx, std::int64_t cycle = -1) {
  const Index nx = ex.rows();
  obs.validate(nx);
  if (c_xx.rows() != nx || c_xx.cols() != nx)
    throw InvalidDimension("lensrf_state_update: C_xx has the wrong size");
  const auto s = detail::state_stats(ex);
  const double inv_sigma = 1.0 / obs.obs_error_std;

  VectorXd dvec = VectorXd::Zero(nx);  // diagonal of Ω^{1/2}
  VectorXd r = VectorXd::Zero(nx);     // HᵀR⁻¹ d
  const VectorXd d = obs.values - obs.op.apply(s.mean);
  for (Index k = 0; k < obs.size(); ++k) {
    const Index i = obs.op.observed_indices[std::size_t(k)];
    dvec(i) = inv_sigma;
    r(i) = d(k) * inv_sigma * inv_sigma;
  }

  const MatrixXd b = c_xx.cwiseProduct(s.anomalies * s.anomalies.transpose());
  const MatrixXd dbd = dvec.asDiagonal() * b * dvec.asDiagonal();
  const linalg::SymmetricEigen eig(dbd);
  const MatrixXd bd = b * dvec.asDiagonal();  // B D
  const MatrixXd& v = eig.vectors;

  // (I + BΩ)⁻¹ = I + BD V diag(-1/(1+μ)) Vᵀ D
  const VectorXd br = b * r;
  const VectorXd inv_diag = -(1.0 + eig.values.array()).inverse();
  const VectorXd mean =
      s.mean + br + bd * (v * (inv_diag.asDiagonal() * (v.transpose() * (dvec.asDiagonal() * br))));

  // (I + BΩ)^{-1/2} = I + BD V diag(g(μ)) Vᵀ D
  const VectorXd g = eig.values.unaryExpr(&detail::inv_sqrt_increment);
  const MatrixXd anomalies =
      s.anomalies + bd * (v * (g.asDiagonal() * (v.transpose() * (dvec.asDiagonal() * s.anomalies))));
  detail::check_finite(anomalies, cycle, "LEnSRF state update");
  detail::check_finite(mean, cycle, "LEnSRF mean update");
  return detail::members_from(mean, anomalies);
}

/// The same posterior computed in observation space:
///   x̄^a = x̄ + B_xy (R + B_yy)⁻¹ d,
///   X^a = X - B_xy (R + B_yy + R(I + R⁻¹B_yy)^{1/2})⁻¹ Y,
/// with B_xy = C_xy ∘ (X Yᵀ) and B_yy = C_yy ∘ (Y Yᵀ).
inline MatrixXd lensrf_obs_space_update(const MatrixXd& ex, const ObservationBatch& obs,
                                        const MatrixXd& c_xy, const MatrixXd& c_yy,
                                        std::int64_t cycle = -1) {
  const Index nx = ex.rows();
  obs.validate(nx);
  const Index ny = obs.size();
  if (c_xy.rows() != nx || c_xy.cols() != ny || c_yy.rows() != ny || c_yy.cols() != ny)
    throw InvalidDimension("lensrf_obs_space_update: localization blocks have the wrong size");
  const auto s = detail::state_stats(ex);
  const double var = obs.obs_error_std * obs.obs_error_std;
  const MatrixXd y = obs.op.select_rows(s.anomalies);
  const VectorXd d = obs.values - obs.op.apply(s.mean);

  const MatrixXd b_xy = c_xy.cwiseProduct(s.anomalies * y.transpose());
  const MatrixXd b_yy = c_yy.cwiseProduct(y * y.transpose());
  const linalg::SymmetricEigen eig(b_yy / var);
  const MatrixXd& u = eig.vectors;

  const VectorXd gain_diag = (1.0 + eig.values.array()).inverse();
  const VectorXd mean = s.mean + b_xy * (u * (gain_diag.asDiagonal() * (u.transpose() * d))) / var;
  const VectorXd g = eig.values.unaryExpr(&detail::inv_sqrt_increment);
  const MatrixXd anomalies = s.anomalies + b_xy * (u * (g.asDiagonal() * (u.transpose() * y))) / var;
  detail::check_finite(anomalies, cycle, "LEnSRF observation-space update");
  detail::check_finite(mean, cycle, "LEnSRF observation-space mean update");
  return detail::members_from(mean, anomalies);
}

/// E_p^a = E_p^f + B_px B_xx⁻¹ (E_x^a - E_x^f) with B_xx = C_xx ∘ (X_x X_xᵀ)
/// and B_px = zeta X_p X_xᵀ, computed as a solve of B_xx Δ = E_x^a - E_x^f
/// followed by E_p^f + zeta X_p (X_xᵀ Δ).
inline MatrixXd parameter_regression_update_cl(const MatrixXd& ep, const MatrixXd& ex_before,
                                               const MatrixXd& ex_after,
                                               const MatrixXd& c_xx, double zeta) {
  if (ep.cols() != ex_before.cols() || ex_after.rows() != ex_before.rows() ||
      ex_after.cols() != ex_before.cols())
    throw InvalidDimension("parameter_regression_update_cl: block sizes disagree");
  if (zeta == 0.0 || ep.rows() == 0) return ep;
  const auto sx = detail::state_stats(ex_before);
  const auto sp = detail::state_stats(ep);
  const MatrixXd b_xx = c_xx.cwiseProduct(sx.anomalies * sx.anomalies.transpose());
  const MatrixXd delta = linalg::spd_solve(b_xx, ex_after - ex_before);
  return ep + zeta * (sp.anomalies * (sx.anomalies.transpose() * delta));
}

/// Local ETKF: every state site gets its own weights from the observations
/// within 2 * half_length, with R⁻¹ tapered by Gaspari-Cohn. Sites are
/// independent; `site_order` only changes the processing order.
inline MatrixXd letkf_local_update(const MatrixXd& ex, const ObservationBatch& obs,
                                   double half_length, const RingGeometry& geom,
                                   std::span<const Index> site_order = {},
                                   std::int64_t cycle = -1) {
  const Index nx = ex.rows();
  const Index ne = ex.cols();
  obs.validate(nx);
  if (geom.size() != nx) throw InvalidDimension("letkf_local_update: geometry size mismatch");
  const auto s = detail::state_stats(ex);
  const double inv_r = 1.0 / (obs.obs_error_std * obs.obs_error_std);
  const MatrixXd y = obs.op.select_rows(s.anomalies);
  const VectorXd d = obs.values - obs.op.apply(s.mean);
  const double scale = std::sqrt(double(ne - 1));

  std::vector<Index> order(site_order.begin(), site_order.end());
  if (order.empty()) {
    order.resize(std::size_t(nx));
    std::iota(order.begin(), order.end(), Index{0});
  }

  MatrixXd out = ex;
  std::vector<Index> local;
  std::vector<double> weight;
  for (const Index i : order) {
    local.clear();
    weight.clear();
    for (Index k = 0; k < obs.size(); ++k) {
      const double dist =
          geom.distance_between(i, obs.op.observed_indices[std::size_t(k)]);
      const double rho = gaspari_cohn(dist, half_length);
      if (rho > 0.0) {
        local.push_back(k);
        weight.push_back(rho * inv_r);
      }
    }
    if (local.empty()) continue;
    const Index nl = Index(local.size());
    MatrixXd yl(nl, ne);
    VectorXd dl(nl);
    VectorXd wl(nl);
    for (Index k = 0; k < nl; ++k) {
      yl.row(k) = y.row(local[std::size_t(k)]);
      dl(k) = d(local[std::size_t(k)]);
      wl(k) = weight[std::size_t(k)];
    }
    const MatrixXd a = MatrixXd::Identity(ne, ne) + yl.transpose() * wl.asDiagonal() * yl;
    const linalg::SymmetricEigen eig(a);
    const VectorXd rhs = yl.transpose() * wl.cwiseProduct(dl);
    const VectorXd w = eig.vectors * (eig.values.cwiseInverse().asDiagonal() *
                                      (eig.vectors.transpose() * rhs));
    const MatrixXd t = eig.apply([](double v) { return 1.0 / std::sqrt(v); });
    const auto xi = s.anomalies.row(i);
    out.row(i) = (scale * (xi * t)).array() + (s.mean(i) + xi.dot(w));
  }
  detail::check_finite(out, cycle, "LETKF update");
  return out;
}

inline MatrixXd letkf_local_update(const MatrixXd& ex, const ObservationBatch& obs,
                                   double half_length) {
  return letkf_local_update(ex, obs, half_length, RingGeometry::ring(ex.rows()));
}

/// E_p^a = E_p^f + zeta X_p (X_x)^+ (E_x^a - E_x^f), with the pseudo-inverse
/// applied as a minimum-norm least-squares solve. Requires the null space of
/// X_x to be spanned by the ones vector (rank Ne - 1).
inline MatrixXd parameter_regression_update_dl(const MatrixXd& ep, const MatrixXd& xx_f,
                                               const MatrixXd& ex_increment, double zeta) {
  if (ep.cols() != xx_f.cols() || ex_increment.rows() != xx_f.rows() ||
      ex_increment.cols() != xx_f.cols())
    throw InvalidDimension("parameter_regression_update_dl: block sizes disagree");
  if (zeta == 0.0 || ep.rows() == 0) return ep;
  const Index ne = xx_f.cols();
  const auto ls = linalg::min_norm_solve(xx_f, ex_increment);
  if (ls.rank != ne - 1)
    throw AnalysisFailure("parameter_regression_update_dl: state anomalies have rank " +
                          std::to_string(ls.rank) + ", expected Ne - 1 = " +
                          std::to_string(ne - 1));
  const auto sp = detail::state_stats(ep);
  return ep + zeta * (sp.anomalies * ls.solution);
}

/// Necessary bound zeta < sqrt(lambda_min / Nx) for the localization matrix
/// with C_pp = 1, C_px = zeta to stay positive semi-definite.
inline double tapering_bound(double lambda_min, Index nx) {
  if (!(lambda_min > 0.0))
    throw InvalidInput("tapering_bound: smallest eigenvalue must be positive");
  if (nx < 1) throw InvalidInput("tapering_bound: Nx must be positive");
  return std::sqrt(lambda_min / double(nx));
}

// ---------------------------------------------------------------------------
// Cycles

enum class ClForm { kDirect, kObsSpace };

struct LocalAnalysisConfig {
  double half_length = 18.0;
  double zeta = 0.025;
  double inflation = 1.0;
  ClForm form = ClForm::kDirect;
};

/// Precomputed localization for a fixed state geometry.
struct Localizer {
  RingGeometry geometry;
  double half_length = 0.0;
  MatrixXd c_xx;

  Localizer(RingGeometry geom, double c)
      : geometry(std::move(geom)), half_length(c), c_xx(state_localization(geometry, c)) {}
};

/// LEnSRF-ML: forecast -> inflation -> CL state update -> CL parameter
/// regression.
template <Propagator P>
CycleOutput lenkfml_cycle(const Ensemble& e, const ObservationBatch& obs, P& prop,
                          const Localizer& loc, const LocalAnalysisConfig& cfg,
                          const VectorXd* truth = nullptr, std::int64_t cycle = 0) {
  CycleOutput out;
  out.diagnostics.cycle = cycle;
  out.diagnostics.inflation = cfg.inflation;
  Ensemble f = apply_inflation(forecast_ensemble(e, prop, cycle), cfg.inflation);
  out.diagnostics.forecast_rmse = detail::rmse_head(f.mean().head(f.nx()), truth);

  const MatrixXd ex_f = f.state_block();
  MatrixXd ex_a;
  if (cfg.form == ClForm::kDirect) {
    ex_a = lensrf_state_update(ex_f, obs, loc.c_xx, cycle);
  } else {
    const auto ol = obs_space_localization(loc.geometry, obs.op, loc.half_length);
    ex_a = lensrf_obs_space_update(ex_f, obs, ol.c_xy, ol.c_yy, cycle);
  }
  if (f.np() > 0)
    f.param_block() = parameter_regression_update_cl(f.param_block(), ex_f, ex_a, loc.c_xx, cfg.zeta);
  f.state_block() = ex_a;
  out.ensemble = std::move(f);
  out.diagnostics.analysis_rmse = detail::rmse_head(out.ensemble.mean().head(out.ensemble.nx()), truth);
  return out;
}

/// LETKF-ML: forecast -> inflation -> LETKF state update -> DL parameter
/// regression.
template <Propagator P>
CycleOutput letkfml_cycle(const Ensemble& e, const ObservationBatch& obs, P& prop,
                          const Localizer& loc, const LocalAnalysisConfig& cfg,
                          const VectorXd* truth = nullptr, std::int64_t cycle = 0) {
  CycleOutput out;
  out.diagnostics.cycle = cycle;
  out.diagnostics.inflation = cfg.inflation;
  Ensemble f = apply_inflation(forecast_ensemble(e, prop, cycle), cfg.inflation);
  out.diagnostics.forecast_rmse = detail::rmse_head(f.mean().head(f.nx()), truth);

  const MatrixXd ex_f = f.state_block();
  const MatrixXd ex_a =
      letkf_local_update(ex_f, obs, loc.half_length, loc.geometry, {}, cycle);
  if (f.np() > 0) {
    const auto sx = detail::state_stats(ex_f);
    f.param_block() = parameter_regression_update_dl(f.param_block(), sx.anomalies,
                                                     ex_a - ex_f, cfg.zeta);
  }
  f.state_block() = ex_a;
  out.ensemble = std::move(f);
  out.diagnostics.analysis_rmse = detail::rmse_head(out.ensemble.mean().head(out.ensemble.nx()), truth);
  return out;
}

}  // namespace enkfml
