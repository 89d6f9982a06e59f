#pragma once

// Augmented ensembles, observations, inflation and scores.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "enkfml/errors.hpp"
#include "enkfml/random.hpp"

namespace enkfml {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// z = [x; p]
struct AugmentedState {
  VectorXd state;
  VectorXd params;

  Index nz() const { return state.size() + params.size(); }
  VectorXd concatenated() const {
    VectorXd z(nz());
    z << state, params;
    return z;
  }
};

/// Ne augmented members stored column-wise in an Nz x Ne matrix; rows
/// [0, nx) are the state block E_x and the remaining rows the parameter block
/// E_p.
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(MatrixXd members, Index nx) : data_(std::move(members)), nx_(nx) {
    if (nx_ < 0 || nx_ > data_.rows())
      throw InvalidDimension("ensemble: state size exceeds member size");
  }
  Ensemble(Index nx, Index np, Index ne) : data_(MatrixXd::Zero(nx + np, ne)), nx_(nx) {}

  Index nx() const { return nx_; }
  Index np() const { return data_.rows() - nx_; }
  Index nz() const { return data_.rows(); }
  Index size() const { return data_.cols(); }

  MatrixXd& matrix() { return data_; }
  const MatrixXd& matrix() const { return data_; }

  auto state_block() { return data_.topRows(nx_); }
  auto state_block() const { return data_.topRows(nx_); }
  auto param_block() { return data_.bottomRows(np()); }
  auto param_block() const { return data_.bottomRows(np()); }

  AugmentedState member(Index i) const {
    return AugmentedState{data_.col(i).head(nx_), data_.col(i).tail(np())};
  }
  void set_member(Index i, const AugmentedState& z) {
    if (z.state.size() != nx_ || z.params.size() != np())
      throw InvalidDimension("ensemble: member dimension mismatch");
    data_.col(i) << z.state, z.params;
  }

  VectorXd mean() const { return data_.rowwise().mean(); }

 private:
  MatrixXd data_;
  Index nx_ = 0;
};

/// Mean and anomalies normalized by 1/sqrt(Ne-1), so X Xᵀ is the unbiased
/// sample covariance.
struct EnsembleStats {
  VectorXd mean;
  MatrixXd anomalies;
  Index nx = 0;

  Index size() const { return anomalies.cols(); }
  auto state_anomalies() const { return anomalies.topRows(nx); }
  auto param_anomalies() const { return anomalies.bottomRows(anomalies.rows() - nx); }
  auto state_mean() const { return mean.head(nx); }
  auto param_mean() const { return mean.tail(mean.size() - nx); }
};

inline EnsembleStats ensemble_stats(const Ensemble& e) {
  const Index ne = e.size();
  if (ne < 2)
    throw DegenerateEnsemble("ensemble statistics need at least 2 members, got " +
                             std::to_string(ne));
  EnsembleStats s;
  s.nx = e.nx();
  s.mean = e.mean();
  s.anomalies = (e.matrix().colwise() - s.mean) / std::sqrt(double(ne - 1));
  // Remove the rounding residue so that X 1 = 0 holds to working precision.
  s.anomalies.colwise() -= s.anomalies.rowwise().mean();
  return s;
}

/// Members mean + sqrt(Ne-1) X.
inline Ensemble ensemble_from_stats(const VectorXd& mean, const MatrixXd& anomalies,
                                    Index nx) {
  const double scale = std::sqrt(double(anomalies.cols() - 1));
  MatrixXd members = (anomalies * scale).colwise() + mean;
  return Ensemble(std::move(members), nx);
}

/// Scales the augmented anomalies about the mean by `factor`.
inline Ensemble apply_inflation(const Ensemble& e, double factor) {
  if (!(factor >= 1.0))
    throw InvalidInflation("inflation factor must be >= 1, got " +
                           std::to_string(factor));
  if (factor == 1.0) return e;
  const VectorXd mean = e.mean();
  MatrixXd members = ((e.matrix().colwise() - mean) * factor).colwise() + mean;
  return Ensemble(std::move(members), e.nx());
}

// ---------------------------------------------------------------------------
// Observations

/// Pointwise observation of selected state sites. The augmented operator
/// [H 0] never reads the parameter block.
struct ObservationOperator {
  std::vector<Index> observed_indices;

  static ObservationOperator full(Index nx) {
    ObservationOperator op;
    op.observed_indices.resize(static_cast<std::size_t>(nx));
    std::iota(op.observed_indices.begin(), op.observed_indices.end(), Index{0});
    return op;
  }

  /// `ny` distinct sites drawn uniformly, sorted.
  static ObservationOperator random_subset(Index nx, Index ny, Rng& rng) {
    if (ny < 1 || ny > nx)
      throw InvalidInput("random_subset: need 1 <= ny <= nx");
    std::vector<Index> all(static_cast<std::size_t>(nx));
    std::iota(all.begin(), all.end(), Index{0});
    // Partial Fisher-Yates: only the first ny positions are drawn.
    for (Index i = 0; i < ny; ++i) {
      std::uniform_int_distribution<Index> pick(i, nx - 1);
      std::swap(all[static_cast<std::size_t>(i)],
                all[static_cast<std::size_t>(pick(rng))]);
    }
    ObservationOperator op;
    op.observed_indices.assign(all.begin(), all.begin() + ny);
    std::sort(op.observed_indices.begin(), op.observed_indices.end());
    return op;
  }

  Index size() const { return static_cast<Index>(observed_indices.size()); }

  void validate(Index nx) const {
    if (observed_indices.empty())
      throw InvalidInput("observation operator selects no sites");
    for (std::size_t k = 0; k < observed_indices.size(); ++k) {
      const Index i = observed_indices[k];
      if (i < 0 || i >= nx)
        throw InvalidDimension("observed index " + std::to_string(i) +
                               " outside [0, " + std::to_string(nx) + ")");
      if (k > 0 && i <= observed_indices[k - 1])
        throw InvalidInput("observed indices must be strictly increasing");
    }
  }

  template <class Derived>
  VectorXd apply(const Eigen::MatrixBase<Derived>& x) const {
    VectorXd y(size());
    for (Index k = 0; k < size(); ++k) y(k) = x(observed_indices[std::size_t(k)]);
    return y;
  }

  /// Rows of a state-space matrix picked by the operator.
  template <class Derived>
  MatrixXd select_rows(const Eigen::MatrixBase<Derived>& m) const {
    MatrixXd out(size(), m.cols());
    for (Index k = 0; k < size(); ++k) out.row(k) = m.row(observed_indices[std::size_t(k)]);
    return out;
  }

  MatrixXd matrix(Index nx) const {
    MatrixXd h = MatrixXd::Zero(size(), nx);
    for (Index k = 0; k < size(); ++k) h(k, observed_indices[std::size_t(k)]) = 1.0;
    return h;
  }
};

/// y with R = obs_error_std^2 I.
struct ObservationBatch {
  VectorXd values;
  ObservationOperator op;
  double obs_error_std = 1.0;
  std::int64_t time_index = 0;

  Index size() const { return values.size(); }
  void validate(Index nx) const {
    op.validate(nx);
    if (values.size() != op.size())
      throw InvalidDimension("observation values do not match the operator");
    if (!(obs_error_std > 0.0))
      throw InvalidInput("observation error std must be positive");
  }
};

/// y = H x_true + eps, eps ~ N(0, sigma^2 I). sigma = 0 gives exact values.
inline ObservationBatch observe(const VectorXd& truth_state,
                                const ObservationOperator& op, double sigma,
                                Rng& rng, std::int64_t time_index = 0) {
  op.validate(truth_state.size());
  ObservationBatch batch;
  batch.op = op;
  batch.obs_error_std = sigma;
  batch.time_index = time_index;
  batch.values = op.apply(truth_state);
  if (sigma > 0.0) batch.values += sigma * standard_normal(op.size(), rng);
  return batch;
}

/// CSV rows "cycle,index,value".
inline void write_observation_log(const std::vector<ObservationBatch>& batches,
                                  std::ostream& os) {
  os << "cycle,index,value\n";
  char buf[64];
  for (const auto& b : batches)
    for (Index k = 0; k < b.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", b.values(k));
      os << b.time_index << ',' << b.op.observed_indices[std::size_t(k)] << ','
         << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Scores and inflation

inline double rmse(const VectorXd& estimate, const VectorXd& truth) {
  if (estimate.size() != truth.size())
    throw InvalidDimension("rmse: length mismatch (" +
                           std::to_string(estimate.size()) + " vs " +
                           std::to_string(truth.size()) + ")");
  if (estimate.size() == 0) return 0.0;
  return std::sqrt((estimate - truth).squaredNorm() / double(estimate.size()));
}

struct AdaptiveInflationSettings {
  double smoothing = 0.03;  // kappa
  double min_factor = 1.0;
  double max_factor = 1.5;
};

/// Innovation-consistency estimate of the inflation factor:
///   alpha = max(1, (dᵀd - Ny sigma^2) / tr(H B_xx Hᵀ)),
///   factor = clip((1 - kappa) prev + kappa sqrt(alpha)).
/// Returns `prev_factor` unchanged when the forecast spread is zero.
inline double adaptive_inflation_update(const EnsembleStats& stats,
                                        const VectorXd& innovation,
                                        const ObservationOperator& op,
                                        double sigma, double prev_factor,
                                        const AdaptiveInflationSettings& s = {}) {
  const MatrixXd y = op.select_rows(stats.state_anomalies());
  const double spread = y.squaredNorm();
  if (!(spread > 0.0)) return prev_factor;
  const double ny = double(innovation.size());
  const double alpha =
      std::max(1.0, (innovation.squaredNorm() - ny * sigma * sigma) / spread);
  const double factor =
      (1.0 - s.smoothing) * prev_factor + s.smoothing * std::sqrt(alpha);
  return std::clamp(factor, s.min_factor, s.max_factor);
}

// ---------------------------------------------------------------------------
// Initialization

struct InitPrior {
  double param_mean_offset_std = 0.2;  // sigma_a
  double param_spread_std = 0.2;
  double state_spread_std = 1.0;

  void validate() const {
    if (param_mean_offset_std < 0.0 || param_spread_std < 0.0 ||
        !(state_spread_std >= 0.0))
      throw InvalidInput("init prior: standard deviations must be non-negative");
  }
};

/// Parameter mean = guess + N(0, sigma_a^2); members' parameters = that mean
/// + N(0, spread^2); members' states = truth sample + N(0, state_spread^2).
inline Ensemble init_ensemble(const InitPrior& prior, const VectorXd& guess_params,
                              const VectorXd& truth_state_sample, Index ne,
                              Rng& rng) {
  prior.validate();
  if (ne < 2) throw DegenerateEnsemble("init_ensemble: need at least 2 members");
  const Index nx = truth_state_sample.size();
  const Index np = guess_params.size();
  const VectorXd param_mean =
      guess_params + prior.param_mean_offset_std * standard_normal(np, rng);
  Ensemble e(nx, np, ne);
  for (Index i = 0; i < ne; ++i) {
    e.matrix().col(i).head(nx) =
        truth_state_sample + prior.state_spread_std * standard_normal(nx, rng);
    e.matrix().col(i).tail(np) =
        param_mean + prior.param_spread_std * standard_normal(np, rng);
  }
  return e;
}

}  // namespace enkfml
