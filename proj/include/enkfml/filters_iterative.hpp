#pragma once

// Iterative augmented filter over a lag-one window [t0, t1]. The analysis
// minimizes, over w = [w_z; w_q],
//   J(w) = 1/2 |y1 - H(x1)|²_{R⁻¹} + 1/2 |w|²,
//   z0 = z̄0 + X0 w_z,   x1 = F(z0) + X_q w_q,   p1 = p0,
// by Gauss-Newton with ensemble-space sensitivities estimated from an
// ε-scaled bundle propagated through the nonlinear model.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "enkfml/ensemble.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/filters_global.hpp"
#include "enkfml/linalg.hpp"

namespace enkfml {

/// Additive model-error square root X_q (Nx x Nq), Q = X_q X_qᵀ.
struct ModelErrorPerturbations {
  MatrixXd anomalies;
  double model_error_std = 0.0;

  Index size() const { return anomalies.cols(); }

  /// X_q = sigma_q I (Nq = Nx). sigma_q = 0 yields the empty (Nq = 0) set.
  static ModelErrorPerturbations scaled_identity(Index nx, double sigma_q) {
    if (sigma_q < 0.0) throw InvalidInput("model error std must be non-negative");
    ModelErrorPerturbations m;
    m.model_error_std = sigma_q;
    m.anomalies = sigma_q > 0.0 ? MatrixXd(sigma_q * MatrixXd::Identity(nx, nx))
                                : MatrixXd(nx, 0);
    return m;
  }
};

struct GaussNewtonConfig {
  int max_iterations = 10;
  double weight_tolerance = 1e-3;
  double finite_difference_scale = 1e-4;
  bool record_hessians = false;

  void validate() const {
    if (max_iterations < 1 || !(weight_tolerance > 0.0) || !(finite_difference_scale > 0.0))
      throw InvalidInput("Gauss-Newton settings must be positive");
  }
};

struct WeightVector {
  VectorXd w_z;
  VectorXd w_q;
};

struct IterativeAnalysis {
  Ensemble ensemble;  // posterior at t1
  VectorXd forecast_mean;  // propagated prior mean at t1 (first iteration)
  WeightVector weights;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;  // J at each linearization point
  MatrixXd hessian;                  // at the last linearization
  std::vector<MatrixXd> hessians;    // per iteration when recorded
};

namespace detail {

/// Ne x (Ne-1) orthonormal columns orthogonal to the ones vector.
inline MatrixXd centered_basis(Index ne) {
  MatrixXd ones = MatrixXd::Ones(ne, 1);
  Eigen::HouseholderQR<MatrixXd> qr(ones);
  const MatrixXd q = qr.householderQ();
  return q.rightCols(ne - 1);
}

}  // namespace detail

template <Propagator P>
IterativeAnalysis ienkfml_analysis(const Ensemble& e0, const ObservationBatch& obs1,
                                   const ModelErrorPerturbations& xq,
                                   const GaussNewtonConfig& cfg, P& prop,
                                   std::int64_t cycle = -1) {
  cfg.validate();
  const Index nx = e0.nx();
  const Index nz = e0.nz();
  const Index ne = e0.size();
  const Index nq = xq.size();
  obs1.validate(nx);
  if (nq > 0 && xq.anomalies.rows() != nx)
    throw InvalidDimension("ienkfml_analysis: model error perturbations have the wrong size");

  const EnsembleStats s0 = ensemble_stats(e0);
  const double inv_r = 1.0 / (obs1.obs_error_std * obs1.obs_error_std);
  const double eps = cfg.finite_difference_scale;
  const double scale = std::sqrt(double(ne - 1));
  const MatrixXd yq = nq > 0 ? obs1.op.select_rows(xq.anomalies) : MatrixXd(obs1.size(), 0);

  IterativeAnalysis out;
  VectorXd w = VectorXd::Zero(ne + nq);
  VectorXd w_lin;   // iterate of the last linearization
  VectorXd mean1;   // propagated bundle mean there
  MatrixXd x1;      // propagated sensitivities there (Nz x Ne)
  MatrixXd bundle(nz, ne);

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const VectorXd z0 = s0.mean + s0.anomalies * w.head(ne);
    bundle = (eps * scale * s0.anomalies).colwise() + z0;
    std::vector<std::int64_t> diverged;
    for (Index i = 0; i < ne; ++i) {
      Eigen::Ref<VectorXd> col = bundle.col(i);
      if (!prop(col) || !col.allFinite()) diverged.push_back(i);
    }
    if (!diverged.empty())
      throw AnalysisFailure("iterative analysis: propagation diverged", cycle,
                            std::move(diverged));
    mean1 = bundle.rowwise().mean();
    x1 = (bundle.colwise() - mean1) / (eps * scale);
    // Parameters persist; keep them free of rounding from the bundle.
    mean1.tail(nz - nx) = z0.tail(nz - nx);
    x1.bottomRows(nz - nx) = s0.anomalies.bottomRows(nz - nx);
    if (it == 1) out.forecast_mean = mean1;

    VectorXd state1 = mean1.head(nx);
    if (nq > 0) state1 += xq.anomalies * w.tail(nq);
    const VectorXd innov = obs1.values - obs1.op.apply(state1);

    MatrixXd y(obs1.size(), ne + nq);
    y.leftCols(ne) = obs1.op.select_rows(x1.topRows(nx));
    if (nq > 0) y.rightCols(nq) = yq;

    out.cost_history.push_back(0.5 * inv_r * innov.squaredNorm() + 0.5 * w.squaredNorm());
    const VectorXd grad = w - inv_r * (y.transpose() * innov);
    out.hessian = MatrixXd::Identity(ne + nq, ne + nq) + inv_r * y.transpose() * y;
    if (cfg.record_hessians) out.hessians.push_back(out.hessian);

    Eigen::LLT<MatrixXd> llt(out.hessian);
    const VectorXd dw = llt.solve(grad);
    if (!dw.allFinite()) throw AnalysisFailure("iterative analysis: non-finite step", cycle);
    w_lin = w;
    w -= dw;
    out.iterations = it;
    if (dw.norm() < cfg.weight_tolerance) {
      out.converged = true;
      break;
    }
  }

  // Posterior at t1 from the last linearization.
  VectorXd mean = mean1 + x1 * (w.head(ne) - w_lin.head(ne));
  if (nq > 0) mean.head(nx) += xq.anomalies * w.tail(nq);

  const linalg::SymmetricEigen eig(out.hessian);
  const MatrixXd t = eig.apply([](double v) { return 1.0 / std::sqrt(v); });
  MatrixXd combined(nz, ne + nq);
  combined.leftCols(ne) = x1;
  if (nq > 0) {
    combined.rightCols(nq).setZero();
    combined.rightCols(nq).topRows(nx) = xq.anomalies;
  }
  MatrixXd anomalies = combined * t;
  if (nq > 0) {
    // Keep the leading Ne - 1 directions and spread them over Ne centered
    // members.
    Eigen::JacobiSVD<MatrixXd> svd(anomalies, Eigen::ComputeThinU);
    const Index k = std::min<Index>(ne - 1, svd.singularValues().size());
    anomalies = svd.matrixU().leftCols(k) * svd.singularValues().head(k).asDiagonal() *
                detail::centered_basis(ne).leftCols(k).transpose();
  }
  detail::check_finite(anomalies, cycle, "iterative analysis");
  out.weights = WeightVector{w.head(ne), w.tail(nq)};
  out.ensemble = ensemble_from_stats(mean, anomalies, nx);
  return out;
}

/// Inflates the t0 ensemble, runs the iterative analysis and hands over the
/// t1 posterior as the next prior.
template <Propagator P>
CycleOutput ienkfml_cycle(const Ensemble& e, const ObservationBatch& obs,
                          const ModelErrorPerturbations& xq, const GaussNewtonConfig& cfg,
                          P& prop, double inflation = 1.0, const VectorXd* truth = nullptr,
                          std::int64_t cycle = 0) {
  const Ensemble prior = apply_inflation(e, inflation);
  IterativeAnalysis a = ienkfml_analysis(prior, obs, xq, cfg, prop, cycle);
  CycleOutput out;
  out.diagnostics.cycle = cycle;
  out.diagnostics.inflation = inflation;
  out.diagnostics.iterations = a.iterations;
  out.diagnostics.converged = a.converged;
  out.diagnostics.forecast_rmse = detail::rmse_head(a.forecast_mean.head(e.nx()), truth);
  out.ensemble = std::move(a.ensemble);
  out.diagnostics.analysis_rmse = detail::rmse_head(out.ensemble.mean().head(e.nx()), truth);
  return out;
}

}  // namespace enkfml
