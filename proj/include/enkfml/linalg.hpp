#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "enkfml/errors.hpp"

#ifdef ENKFML_USE_LAPACKE
#include <lapacke.h>
#endif

namespace enkfml::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Eigendecomposition of a symmetric matrix (lower triangle is read),
/// eigenvalues ascending. With ENKFML_USE_LAPACKE, matrices of order 64 and
/// up go through LAPACK's divide-and-conquer dsyevd, which is several times
/// faster on the clustered spectra of localized covariances.
struct SymmetricEigen {
  VectorXd values;
  MatrixXd vectors;

  explicit SymmetricEigen(const MatrixXd& a) {
#ifdef ENKFML_USE_LAPACKE
    if (a.rows() >= 64) {
      lapack_decompose(a);
      return;
    }
#endif
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    if (es.info() != Eigen::Success)
      throw AnalysisFailure("symmetric eigendecomposition failed");
    values = es.eigenvalues();
    vectors = es.eigenvectors();
  }

  /// V f(Λ) Vᵀ
  template <class F>
  MatrixXd apply(F&& f) const {
    VectorXd fv = values.unaryExpr(f);
    return vectors * fv.asDiagonal() * vectors.transpose();
  }

 private:
#ifdef ENKFML_USE_LAPACKE
  void lapack_decompose(const MatrixXd& a) {
    const auto n = static_cast<lapack_int>(a.rows());
    vectors = a;
    values.resize(n);
    const lapack_int info =
        LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, vectors.data(), n, values.data());
    if (info != 0)
      throw AnalysisFailure("symmetric eigendecomposition failed (dsyevd info " +
                            std::to_string(info) + ")");
  }
#endif
};

/// Solves S X = rhs for a symmetric positive-definite S. If the Cholesky
/// factorization fails, retries once with 1e-9 * trace(S)/n added to the
/// diagonal.
inline MatrixXd spd_solve(const MatrixXd& s, const MatrixXd& rhs) {
  Eigen::LLT<MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) {
    MatrixXd x = llt.solve(rhs);
    if (x.allFinite()) return x;
  }
  const Index n = s.rows();
  const double jitter = 1e-9 * s.trace() / static_cast<double>(n);
  MatrixXd shifted = s;
  shifted.diagonal().array() += jitter;
  Eigen::LLT<MatrixXd> retry(shifted);
  if (retry.info() != Eigen::Success)
    throw AnalysisFailure("linear solve failed: matrix is not positive definite");
  MatrixXd x = retry.solve(rhs);
  if (!x.allFinite()) throw AnalysisFailure("linear solve produced non-finite values");
  return x;
}

/// Minimum-norm least-squares solution of A X = B with its numerical rank.
struct LeastSquares {
  MatrixXd solution;
  Index rank = 0;
};

inline LeastSquares min_norm_solve(const MatrixXd& a, const MatrixXd& b,
                                   double rel_tol = 1e-10) {
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod;
  cod.setThreshold(rel_tol);
  cod.compute(a);
  LeastSquares out;
  out.rank = cod.rank();
  out.solution = cod.solve(b);
  return out;
}

}  // namespace enkfml::linalg
