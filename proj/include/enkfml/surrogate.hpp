#pragma once

// Local, homogeneous monomial surrogate of a one-dimensional periodic ODE:
//   dx_n/dt = sum_m p_m * monomial_m(x_{n-L}, ..., x_{n+L})
// with the same coefficients at every site.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "enkfml/dynamics.hpp"
#include "enkfml/errors.hpp"

namespace enkfml::surrogate {

using Eigen::Index;
using Vector = Eigen::VectorXd;

/// Offset multiset of size 0 (constant), 1 (x_{n+first}) or 2
/// (x_{n+first} * x_{n+second}, first <= second).
struct Monomial {
  int order = 0;
  int first = 0;
  int second = 0;

  friend bool operator==(const Monomial&, const Monomial&) = default;

  std::string descriptor() const {
    switch (order) {
      case 0: return "const";
      case 1: return "lin(" + std::to_string(first) + ")";
      default:
        return "bil(" + std::to_string(first) + "," + std::to_string(second) +
               ")";
    }
  }

  static Monomial parse(const std::string& text) {
    Monomial m;
    int a = 0, b = 0;
    char tail = 0;
    if (text == "const") return m;
    if (std::sscanf(text.c_str(), "lin(%d%c", &a, &tail) == 2 && tail == ')')
      return Monomial{1, a, a};
    if (std::sscanf(text.c_str(), "bil(%d,%d%c", &a, &b, &tail) == 3 &&
        tail == ')' && a <= b)
      return Monomial{2, a, b};
    throw InvalidInput("unknown monomial descriptor '" + text + "'");
  }
};

/// Canonical dictionary for stencil radius L: the constant, the 2L+1 linear
/// terms by ascending offset, then bilinear pairs (i, j), -L <= i <= j <= L,
/// j - i <= L, in lexicographic order.
class StencilBasis {
 public:
  StencilBasis() = default;

  explicit StencilBasis(int stencil_radius) : radius_(stencil_radius) {
    if (stencil_radius < 0)
      throw InvalidInput("stencil radius must be non-negative");
    monomials_.push_back(Monomial{});
    for (int i = -radius_; i <= radius_; ++i)
      monomials_.push_back(Monomial{1, i, i});
    for (int i = -radius_; i <= radius_; ++i)
      for (int j = i; j <= std::min(radius_, i + radius_); ++j)
        monomials_.push_back(Monomial{2, i, j});
  }

  int stencil_radius() const { return radius_; }
  int stencil_width() const { return 2 * radius_ + 1; }
  Index n_params() const { return static_cast<Index>(monomials_.size()); }
  const std::vector<Monomial>& monomials() const { return monomials_; }

  /// Index of `m` in the dictionary, or -1.
  Index index_of(const Monomial& m) const {
    auto it = std::find(monomials_.begin(), monomials_.end(), m);
    return it == monomials_.end() ? -1 : it - monomials_.begin();
  }

  /// Closed form of the dictionary size.
  static Index count(int L) {
    return 1 + (2 * L + 1) + (L + 1) * (2 * L + 1) - L * (L + 1) / 2;
  }

  friend bool operator==(const StencilBasis& a, const StencilBasis& b) {
    return a.radius_ == b.radius_;
  }

 private:
  int radius_ = 0;
  std::vector<Monomial> monomials_;
};

inline StencilBasis build_basis(int stencil_radius) {
  return StencilBasis(stencil_radius);
}

/// Coefficients aligned with a StencilBasis.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(const StencilBasis& basis, Vector coefficients)
      : coefficients_(std::move(coefficients)) {
    if (coefficients_.size() != basis.n_params())
      throw InvalidDimension("parameter vector has " +
                             std::to_string(coefficients_.size()) +
                             " entries, basis has " +
                             std::to_string(basis.n_params()));
    if (!coefficients_.allFinite())
      throw InvalidInput("parameter vector has non-finite entries");
  }
  static ParamVector zeros(const StencilBasis& basis) {
    return ParamVector(basis, Vector::Zero(basis.n_params()));
  }

  const Vector& coefficients() const { return coefficients_; }
  Index size() const { return coefficients_.size(); }
  double operator[](Index i) const { return coefficients_(i); }

 private:
  Vector coefficients_;
};

/// Reusable evaluator of the surrogate tendency for a fixed state size.
/// Not thread-safe (holds a halo buffer); use one instance per thread.
class SurrogateFlow {
 public:
  SurrogateFlow(const StencilBasis& basis, Index n_sites)
      : basis_(basis), n_(n_sites), padded_(n_sites + 2 * basis.stencil_radius()),
        params_(Vector::Zero(basis.n_params())) {
    if (n_sites < basis.stencil_width())
      throw InvalidDimension("surrogate: " + std::to_string(n_sites) +
                             " sites is less than the stencil width " +
                             std::to_string(basis.stencil_width()));
  }

  void set_params(const Eigen::Ref<const Vector>& p) {
    if (p.size() != basis_.n_params())
      throw InvalidDimension("surrogate: parameter size mismatch");
    params_ = p;
  }
  const Vector& params() const { return params_; }
  Index n_sites() const { return n_; }

  void operator()(const Vector& x, Vector& dx) { evaluate(x, dx); }

  void evaluate(const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dx) {
    if (x.size() != n_ || dx.size() != n_)
      throw InvalidDimension("surrogate: state size mismatch");
    const int L = basis_.stencil_radius();
    for (Index k = 0; k < padded_.size(); ++k)
      padded_(k) = x(((k - L) % n_ + n_) % n_);
    const auto& monos = basis_.monomials();
    dx.setConstant(params_(0));
    for (std::size_t m = 1; m < monos.size(); ++m) {
      const double p = params_(static_cast<Index>(m));
      const auto& mono = monos[m];
      auto a = padded_.segment(L + mono.first, n_).array();
      if (mono.order == 1) {
        dx.array() += p * a;
      } else {
        dx.array() += p * a * padded_.segment(L + mono.second, n_).array();
      }
    }
  }

 private:
  StencilBasis basis_;
  Index n_;
  Vector padded_;
  Vector params_;
};

inline Vector surrogate_flow(const ParamVector& p, const Vector& x,
                             const StencilBasis& basis) {
  SurrogateFlow flow(basis, x.size());
  flow.set_params(p.coefficients());
  Vector dx(x.size());
  flow.evaluate(x, dx);
  return dx;
}

/// Exact embedding of L96 in the dictionary: F, -x_n, x_{n-1}x_{n+1},
/// -x_{n-2}x_{n-1}.
inline ParamVector true_l96_params(const StencilBasis& basis, double forcing) {
  if (basis.stencil_radius() < 2)
    throw RepresentationInfeasible(
        "L96 needs a stencil radius of at least 2, got " +
        std::to_string(basis.stencil_radius()));
  Vector p = Vector::Zero(basis.n_params());
  p(basis.index_of(Monomial{0, 0, 0})) = forcing;
  p(basis.index_of(Monomial{1, 0, 0})) = -1.0;
  p(basis.index_of(Monomial{2, -1, 1})) = 1.0;
  p(basis.index_of(Monomial{2, -2, -1})) = -1.0;
  return ParamVector(basis, std::move(p));
}

struct SurrogateModel {
  StencilBasis basis;
  ParamVector params;
  double integration_dt = 0.05;
  int substeps_per_update = 1;

  double update_interval() const { return integration_dt * substeps_per_update; }
  void validate() const {
    if (!(integration_dt > 0.0) || substeps_per_update < 1)
      throw InvalidInput("surrogate model: bad integration step");
    if (params.size() != basis.n_params())
      throw InvalidDimension("surrogate model: parameter size mismatch");
  }
};

/// Number of integration substeps realizing `interval` with step `dt`.
inline int substeps_for(double interval, double dt) {
  const double ratio = interval / dt;
  const long n = std::lround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio)
    throw InvalidInput("interval " + std::to_string(interval) +
                       " is not an integer multiple of dt " +
                       std::to_string(dt));
  return static_cast<int>(n);
}

/// Maps a state across one update interval with the surrogate ODE.
inline Vector resolvent(const SurrogateModel& model, const Vector& x) {
  model.validate();
  SurrogateFlow flow(model.basis, x.size());
  flow.set_params(model.params.coefficients());
  Vector y = x;
  dynamics::Rk4Stepper stepper(x.size());
  stepper.integrate(flow, y, model.integration_dt, model.substeps_per_update);
  return y;
}

/// Advances augmented members z = [x; p]: x by the resolvent built from the
/// member's own p, p by persistence. Returns false on non-finite output.
class SurrogatePropagator {
 public:
  SurrogatePropagator(const StencilBasis& basis, Index n_sites,
                      double integration_dt, int substeps)
      : flow_(basis, n_sites),
        stepper_(n_sites),
        x_(n_sites),
        n_params_(basis.n_params()),
        dt_(integration_dt),
        substeps_(substeps) {}

  SurrogatePropagator(const SurrogateModel& model, Index n_sites)
      : SurrogatePropagator(model.basis, n_sites, model.integration_dt,
                            model.substeps_per_update) {}

  Index state_size() const { return x_.size(); }
  Index param_size() const { return n_params_; }

  bool operator()(Eigen::Ref<Vector> z) {
    const Index nx = x_.size();
    flow_.set_params(z.tail(n_params_));
    x_ = z.head(nx);
    for (int s = 0; s < substeps_; ++s)
      if (!stepper_.step(flow_, x_, dt_)) return false;
    z.head(nx) = x_;
    return true;
  }

 private:
  SurrogateFlow flow_;
  dynamics::Rk4Stepper stepper_;
  Vector x_;
  Index n_params_;
  double dt_;
  int substeps_;
};

// ---------------------------------------------------------------------------
// CSV import/export: header "monomial,coefficient", one row per coefficient.

inline void write_params_csv(const StencilBasis& basis, const ParamVector& p,
                             std::ostream& os) {
  os << "monomial,coefficient\n";
  char buf[64];
  for (Index m = 0; m < basis.n_params(); ++m) {
    std::snprintf(buf, sizeof buf, "%.17g", p[m]);
    os << '"' << basis.monomials()[static_cast<std::size_t>(m)].descriptor()
       << "\"," << buf << '\n';
  }
}

/// Reads coefficients keyed by descriptor; monomials absent from the file
/// are zero. Descriptors outside the basis are an error.
inline ParamVector read_params_csv(std::istream& is, const StencilBasis& basis) {
  Vector p = Vector::Zero(basis.n_params());
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("monomial", 0) == 0) continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw InvalidInput("malformed parameter row: " + line);
    std::string desc = line.substr(0, comma);
    desc.erase(std::remove(desc.begin(), desc.end(), '"'), desc.end());
    const Index idx = basis.index_of(Monomial::parse(desc));
    if (idx < 0)
      throw InvalidInput("monomial " + desc + " is not in the basis");
    p(idx) = std::stod(line.substr(comma + 1));
  }
  return ParamVector(basis, std::move(p));
}

}  // namespace enkfml::surrogate
