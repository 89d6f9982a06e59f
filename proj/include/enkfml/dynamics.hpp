#pragma once

// Truth models (Lorenz-96 and the two-scale Lorenz-05III) and the fixed-step
// RK4 integrator shared by the truth runs and the surrogate resolvent.

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "enkfml/errors.hpp"
#include "enkfml/random.hpp"

namespace enkfml::dynamics {

using Eigen::Index;
using Vector = Eigen::VectorXd;

/// A tendency map writes dx/dt at `x` into `dx` (already sized).
template <class F>
concept TendencyMap = requires(F f, const Vector& x, Vector& dx) { f(x, dx); };

struct L96Config {
  int n_sites = 40;
  double forcing = 8.0;
  double dt = 0.05;

  void validate() const {
    if (n_sites < 4)
      throw InvalidDimension("L96 needs at least 4 sites, got " +
                             std::to_string(n_sites));
    if (!(dt > 0.0)) throw InvalidInput("L96 time step must be positive");
  }
  Index state_size() const { return n_sites; }
};

struct L05Config {
  int n_coarse = 36;
  int n_fine = 360;
  double forcing = 10.0;
  double time_scale_ratio = 10.0;   // c
  double space_scale_ratio = 10.0;  // b
  double coupling = 1.0;            // h
  double dt = 0.005;

  void validate() const {
    if (n_coarse < 4)
      throw InvalidDimension("L05III needs at least 4 coarse sites");
    if (n_fine != 10 * n_coarse)
      throw InvalidDimension("L05III requires n_fine == 10 * n_coarse, got " +
                             std::to_string(n_fine) + " vs " +
                             std::to_string(n_coarse));
    if (!(dt > 0.0)) throw InvalidInput("L05III time step must be positive");
  }
  Index state_size() const { return n_coarse + n_fine; }
};

// ---------------------------------------------------------------------------
// Lorenz-96

inline void l96_flow(const Vector& x, double forcing, Vector& dx) {
  const Index n = x.size();
  if (n < 4)
    throw InvalidDimension("l96_flow: dimension " + std::to_string(n) +
                           " < 4");
  dx.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Index ip1 = (i + 1) % n;
    const Index im1 = (i + n - 1) % n;
    const Index im2 = (i + n - 2) % n;
    dx(i) = (x(ip1) - x(im2)) * x(im1) - x(i) + forcing;
  }
}

inline Vector l96_flow(const Vector& x, double forcing) {
  Vector dx(x.size());
  l96_flow(x, forcing, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Lorenz-05III (two-scale). The slow bracket is psi+_n(v) = v_{n-1}(v_{n+1} -
// v_{n-2}) - v_n, the fast one psi-_m(v) = v_{m+1}(v_{m-1} - v_{m+2}) - v_m,
// evaluated on b*u.

struct L05Tendency {
  Vector dx;
  Vector du;
};

inline void l05iii_flow(const Eigen::Ref<const Vector>& x,
                        const Eigen::Ref<const Vector>& u, const L05Config& cfg,
                        Eigen::Ref<Vector> dx, Eigen::Ref<Vector> du) {
  const Index nx = cfg.n_coarse;
  const Index nu = cfg.n_fine;
  if (x.size() != nx || u.size() != nu || dx.size() != nx || du.size() != nu)
    throw InvalidDimension("l05iii_flow: dimensions do not match config");
  const double c = cfg.time_scale_ratio;
  const double b = cfg.space_scale_ratio;
  const double hcb = cfg.coupling * c / b;

  for (Index n = 0; n < nx; ++n) {
    const Index np1 = (n + 1) % nx;
    const Index nm1 = (n + nx - 1) % nx;
    const Index nm2 = (n + nx - 2) % nx;
    double fast_sum = 0.0;
    for (Index k = 0; k < 10; ++k) fast_sum += u(k + 10 * n);
    dx(n) = x(nm1) * (x(np1) - x(nm2)) - x(n) + cfg.forcing - hcb * fast_sum;
  }
  // (c/b) psi-_m(b u) = c b u_{m+1}(u_{m-1} - u_{m+2}) - c u_m
  for (Index m = 0; m < nu; ++m) {
    const Index mp1 = (m + 1) % nu;
    const Index mp2 = (m + 2) % nu;
    const Index mm1 = (m + nu - 1) % nu;
    du(m) = c * b * u(mp1) * (u(mm1) - u(mp2)) - c * u(m) + hcb * x(m / 10);
  }
}

inline L05Tendency l05iii_flow(const Vector& x, const Vector& u,
                               const L05Config& cfg) {
  L05Tendency t{Vector(cfg.n_coarse), Vector(cfg.n_fine)};
  if (x.size() != cfg.n_coarse || u.size() != cfg.n_fine)
    throw InvalidDimension("l05iii_flow: dimensions do not match config");
  l05iii_flow(x, u, cfg, t.dx, t.du);
  return t;
}

/// Tendency maps over the concatenated state vector of each truth model.
struct L96Flow {
  double forcing;
  void operator()(const Vector& x, Vector& dx) const { l96_flow(x, forcing, dx); }
};

struct L05Flow {
  L05Config cfg;
  void operator()(const Vector& z, Vector& dz) const {
    dz.resize(z.size());
    l05iii_flow(z.head(cfg.n_coarse), z.tail(cfg.n_fine), cfg,
                dz.head(cfg.n_coarse), dz.tail(cfg.n_fine));
  }
};

inline L96Flow make_flow(const L96Config& cfg) { return L96Flow{cfg.forcing}; }
inline L05Flow make_flow(const L05Config& cfg) { return L05Flow{cfg}; }

// ---------------------------------------------------------------------------
// RK4

/// Classical fourth-order Runge-Kutta stepper with reusable stage buffers.
class Rk4Stepper {
 public:
  explicit Rk4Stepper(Index n = 0) { resize(n); }

  void resize(Index n) {
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    tmp_.resize(n);
  }

  /// Advances `x` in place by one step. Returns false if the result is not
  /// finite (x is left holding the non-finite values).
  template <TendencyMap F>
  bool step(F&& flow, Vector& x, double dt) {
    if (k1_.size() != x.size()) resize(x.size());
    flow(x, k1_);
    tmp_ = x + (0.5 * dt) * k1_;
    flow(tmp_, k2_);
    tmp_ = x + (0.5 * dt) * k2_;
    flow(tmp_, k3_);
    tmp_ = x + dt * k3_;
    flow(tmp_, k4_);
    x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    return x.allFinite();
  }

  /// `n_steps` steps; throws NumericalDivergence with the failing step index.
  template <TendencyMap F>
  void integrate(F&& flow, Vector& x, double dt, std::int64_t n_steps) {
    for (std::int64_t s = 0; s < n_steps; ++s)
      if (!step(flow, x, dt))
        throw NumericalDivergence("RK4 produced non-finite values", s);
  }

 private:
  Vector k1_, k2_, k3_, k4_, tmp_;
};

template <TendencyMap F>
Vector rk4_step(F&& flow, const Vector& state, double dt) {
  if (!(dt > 0.0)) throw InvalidInput("rk4_step: dt must be positive");
  Rk4Stepper stepper(state.size());
  Vector x = state;
  if (!stepper.step(flow, x, dt))
    throw NumericalDivergence("RK4 produced non-finite values", 0);
  return x;
}

// ---------------------------------------------------------------------------
// Truth trajectories

struct Trajectory {
  std::vector<Vector> states;
  double dt = 0.0;  // time between stored states
  double t0 = 0.0;
  Index n_slow = 0;  // leading "x" block; the rest are fast "u" variables

  std::size_t size() const { return states.size(); }
  double time(std::size_t i) const { return t0 + dt * static_cast<double>(i); }
};

namespace detail {

inline Vector default_initial_condition(const L96Config& cfg, Rng& rng) {
  return Vector::Constant(cfg.n_sites, cfg.forcing) +
         1e-3 * standard_normal(cfg.n_sites, rng);
}

inline Vector default_initial_condition(const L05Config& cfg, Rng& rng) {
  Vector z(cfg.state_size());
  z.head(cfg.n_coarse) = Vector::Constant(cfg.n_coarse, cfg.forcing) +
                         1e-3 * standard_normal(cfg.n_coarse, rng);
  z.tail(cfg.n_fine) = 1e-3 * standard_normal(cfg.n_fine, rng);
  return z;
}

inline Index slow_size(const L96Config& cfg) { return cfg.n_sites; }
inline Index slow_size(const L05Config& cfg) { return cfg.n_coarse; }

}  // namespace detail

/// Runs the truth model. Starts from `x0` when given, else from F*1 plus
/// Gaussian noise of std 1e-3 drawn from `seed`; discards `spinup_steps`
/// integration steps, then records n_steps + 1 states spaced `stride` steps
/// apart.
template <class Config>
Trajectory generate_truth(const Config& cfg, const std::optional<Vector>& x0,
                          std::int64_t n_steps, std::int64_t spinup_steps,
                          std::uint64_t seed, std::int64_t stride = 1) {
  cfg.validate();
  if (n_steps < 1) throw InvalidInput("generate_truth: n_steps must be >= 1");
  if (spinup_steps < 0 || stride < 1)
    throw InvalidInput("generate_truth: bad spinup or stride");
  Rng rng(seed);
  Vector x = x0 ? *x0 : detail::default_initial_condition(cfg, rng);
  if (x.size() != cfg.state_size())
    throw InvalidDimension("generate_truth: initial condition has wrong size");

  auto flow = make_flow(cfg);
  Rk4Stepper stepper(x.size());
  stepper.integrate(flow, x, cfg.dt, spinup_steps);

  Trajectory traj;
  traj.dt = cfg.dt * static_cast<double>(stride);
  traj.n_slow = detail::slow_size(cfg);
  traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.states.push_back(x);
  for (std::int64_t k = 0; k < n_steps; ++k) {
    for (std::int64_t s = 0; s < stride; ++s)
      if (!stepper.step(flow, x, cfg.dt))
        throw NumericalDivergence("truth run diverged",
                                  spinup_steps + k * stride + s);
    traj.states.push_back(x);
  }
  return traj;
}

/// CSV with columns t, x_0.., u_0.. (u columns only for two-scale runs).
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  const Index dim = traj.states.empty() ? 0 : traj.states.front().size();
  const Index n_slow = traj.n_slow > 0 ? traj.n_slow : dim;
  os << "t";
  for (Index i = 0; i < n_slow; ++i) os << ",x_" << i;
  for (Index i = n_slow; i < dim; ++i) os << ",u_" << (i - n_slow);
  os << '\n';
  char buf[64];
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.10g", traj.time(k));
    os << buf;
    for (Index i = 0; i < dim; ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", traj.states[k](i));
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace enkfml::dynamics
