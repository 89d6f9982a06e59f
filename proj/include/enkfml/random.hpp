#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace enkfml {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream `stream`, item `index`, under `base`. Every random draw in
/// an experiment is keyed this way, so a given (base, stream, index) triple
/// always reproduces the same numbers regardless of what else was drawn.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) + index);
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

inline Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace enkfml
