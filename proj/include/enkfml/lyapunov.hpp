#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>

#include "enkfml/dynamics.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/random.hpp"
#include "enkfml/surrogate.hpp"

namespace enkfml {

struct LyapunovOptions {
  std::int64_t transient_steps = 1000;
  int qr_interval = 10;
  double fd_scale = 1e-6;
  std::uint64_t seed = 12345;  // initial tangent frame
};

/// Benettin estimate of the leading `n_exponents` Lyapunov exponents of the
/// ODE dx/dt = flow(x), integrated with RK4 of step `dt` for `n_steps` steps
/// after a transient. The tangent system is integrated jointly with the state;
/// Jacobian-vector products come from central differences on the flow.
/// Returns the exponents in descending order.
template <dynamics::TendencyMap F>
Eigen::VectorXd lyapunov_spectrum(F&& flow, Eigen::VectorXd x, double dt,
                                  std::int64_t n_steps,
                                  Eigen::Index n_exponents,
                                  const LyapunovOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const Eigen::Index n = x.size();
  if (n_exponents < 1 || n_exponents > n)
    throw InvalidInput("lyapunov_spectrum: need 1 <= n_exponents <= dim");
  if (!(dt > 0.0) || n_steps < 1 || opt.qr_interval < 1)
    throw InvalidInput("lyapunov_spectrum: bad integration settings");

  dynamics::Rk4Stepper stepper(n);
  stepper.integrate(flow, x, dt, opt.transient_steps);

  Rng rng(opt.seed);
  MatrixXd frame(n, n_exponents);
  for (Eigen::Index j = 0; j < n_exponents; ++j)
    frame.col(j) = standard_normal(n, rng);
  {
    Eigen::HouseholderQR<MatrixXd> qr(frame);
    frame = qr.householderQ() * MatrixXd::Identity(n, n_exponents);
  }

  VectorXd fp(n), fm(n), xp(n), xm(n);
  auto tangent = [&](const VectorXd& at, const MatrixXd& v, MatrixXd& out) {
    const double scale = std::max(1.0, at.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double norm = v.col(j).norm();
      if (norm == 0.0) {
        out.col(j).setZero();
        continue;
      }
      const double h = opt.fd_scale * scale / norm;
      xp = at + h * v.col(j);
      xm = at - h * v.col(j);
      flow(xp, fp);
      flow(xm, fm);
      out.col(j) = (fp - fm) / (2.0 * h);
    }
  };

  VectorXd k1(n), k2(n), k3(n), k4(n), xs(n);
  MatrixXd K1(n, n_exponents), K2(n, n_exponents), K3(n, n_exponents),
      K4(n, n_exponents), Vs(n, n_exponents);
  VectorXd log_growth = VectorXd::Zero(n_exponents);

  auto orthonormalize = [&]() {
    Eigen::HouseholderQR<MatrixXd> qr(frame);
    const MatrixXd r = qr.matrixQR().topRows(n_exponents)
                           .triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n_exponents; ++j)
      log_growth(j) += std::log(std::abs(r(j, j)));
    frame = qr.householderQ() * MatrixXd::Identity(n, n_exponents);
  };

  for (std::int64_t s = 1; s <= n_steps; ++s) {
    flow(x, k1);
    tangent(x, frame, K1);
    xs = x + 0.5 * dt * k1;
    Vs = frame + 0.5 * dt * K1;
    flow(xs, k2);
    tangent(xs, Vs, K2);
    xs = x + 0.5 * dt * k2;
    Vs = frame + 0.5 * dt * K2;
    flow(xs, k3);
    tangent(xs, Vs, K3);
    xs = x + dt * k3;
    Vs = frame + dt * K3;
    flow(xs, k4);
    tangent(xs, Vs, K4);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    frame += (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
    if (!x.allFinite() || !frame.allFinite())
      throw NumericalDivergence("lyapunov_spectrum diverged", s);
    if (s % opt.qr_interval == 0 || s == n_steps) orthonormalize();
  }

  VectorXd exponents = log_growth / (static_cast<double>(n_steps) * dt);
  std::sort(exponents.data(), exponents.data() + exponents.size(),
            std::greater<>());
  return exponents;
}

/// Tendency of the surrogate extended with persistent parameters:
/// z = [x; p], dz/dt = [surrogate_flow(p, x); 0].
class AugmentedSurrogateFlow {
 public:
  AugmentedSurrogateFlow(const surrogate::StencilBasis& basis,
                         Eigen::Index n_sites)
      : flow_(basis, n_sites), np_(basis.n_params()) {}

  void operator()(const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
    const Eigen::Index nx = flow_.n_sites();
    dz.resize(z.size());
    flow_.set_params(z.tail(np_));
    flow_.evaluate(z.head(nx), dz.head(nx));
    dz.tail(np_).setZero();
  }

 private:
  surrogate::SurrogateFlow flow_;
  Eigen::Index np_;
};

}  // namespace enkfml
