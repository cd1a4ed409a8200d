#pragma once

// Counter-based random streams.  A stream is identified by a key path such as
// (seed, purpose, replicate, area); the generator is SplitMix64 run over a
// counter, so any stream can be reproduced without touching any other and
// results do not depend on how work is split across threads.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace logsae {

/// Purposes that partition the key space.
enum class Stream : std::uint64_t {
  Population = 1,
  Assignment = 2,
  Bootstrap = 3,
  BootstrapSeed = 4,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t key = splitmix64(seed);
  for (const std::uint64_t part : path) key = splitmix64(key ^ splitmix64(part + 0x632be59bd9b4e019ULL));
  return key;
}

/// UniformRandomBitGenerator over a keyed counter.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  explicit KeyedRng(std::uint64_t key) noexcept : key_(key) {}
  KeyedRng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept : key_(derive_key(seed, path)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard-normal vector of length n.
inline Eigen::VectorXd standard_normal(KeyedRng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k) out[k] = normal(rng);
  return out;
}

/// A factor F with F F' = cov for a symmetric PSD matrix.  Tiny negative
/// eigenvalues from rounding are clipped to zero.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  if (cov.size() == 0) return cov;
  if (cov.rows() == 1) return Eigen::MatrixXd::Constant(1, 1, std::sqrt(std::max(0.0, cov(0, 0))));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal();
}

}  // namespace logsae
