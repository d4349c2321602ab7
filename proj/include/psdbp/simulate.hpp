#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "psdbp/offspring.hpp"
#include "psdbp/qprocess.hpp"
#include "psdbp/rng.hpp"

namespace psdbp {

// Generation sizes Z_0..Z_n.
using Trajectory = std::vector<long>;

// Trajectory plus, for each generation 0..n-1, the number of parents with
// exactly k offspring: counts[t][k] = Z_t(k). The identities
// sum_k counts[t][k] = Z_t and sum_k k*counts[t][k] = Z_{t+1} hold exactly.
struct TreeSample {
  Trajectory z;
  std::vector<std::map<long, long>> counts;
};

// Draws offspring counts; caches one inverse cdf per distinct population
// size. Not thread-safe: use one instance per worker.
class OffspringSampler {
 public:
  explicit OffspringSampler(OffspringSpec spec);

  long draw(long z, Rng& rng);
  long next_generation(long z, Rng& rng);
  long next_generation_counted(long z, Rng& rng, std::map<long, long>& counts);

 private:
  const std::vector<double>& cdf(long z);

  OffspringSpec spec_;
  std::unordered_map<long, std::vector<double>> cdf_cache_;
};

Trajectory simulate(const OffspringSpec& spec, long z0, long n,
                    std::uint64_t seed);
TreeSample simulate_tree(const OffspringSpec& spec, long z0, long n,
                         std::uint64_t seed);

// P(Z_s > 0 | Z_0 = i). The first overload iterates the offspring pgf and
// requires a constant-mean family; the kernel overload works for any spec on
// the truncated state space.
double survival_probability(const OffspringSpec& spec, long i, long s);
double survival_probability(const TruncatedKernel& kernel, long i, long s);

// One trajectory targeting (Z_0..Z_n | Z_n > 0, Z_0 = z0) by multilevel
// splitting: blocks of s generations with s the largest integer such that
// 2 P(Z_s > 0 | z0) >= 1 (floor 1, cap n); extinct runs restart from scratch;
// survivors are duplicated at block ends; the returned trajectory is drawn
// uniformly among the survivors at the horizon. Survival probabilities come
// from the kernel when given, from pgf iteration for constant-mean specs,
// and from a seeded pilot batch otherwise.
//
// A single-block run (s >= n) is a plain rejection sample, exact for the
// conditional law. Multi-block runs carry a small selection bias: the uniform
// pick over-weights ancestries with below-average survival odds, worth a few
// percent in total variation at deep-subcritical small starts (geometric
// m=0.8 from z0=1: about 0.04 by generation 4). HybridSampler carries a
// certified error bound instead.
//
// Throws NumericError when the run blows its work budget (endless restarts)
// or its memory budget (the cloud doubles per block once states climb into
// high-survival territory; long horizons from small starts are the usual
// trigger, and the hybrid sampler is the right tool there).
Trajectory simulate_conditioned_splitting(const OffspringSpec& spec, long z0,
                                          long n, std::uint64_t seed,
                                          const TruncatedKernel* kernel = nullptr);

// Hybrid conditioned sampler: the first n-k steps follow the Q-process, the
// last k steps the time-inhomogeneous conditioned chain computed from
// survival vectors. The total-variation error of the scheme is d(k)
// (0 when k = n, where the whole path is drawn from the conditioned chain).
// Holds references: kernel and triple must outlive the sampler.
class HybridSampler {
 public:
  HybridSampler(const TruncatedKernel& kernel, const SpectralTriple& triple,
                long k);

  // Requires 1 <= z0 <= zmax and n >= k. Thread-safe.
  Trajectory sample(long z0, long n, std::uint64_t seed) const;

  long k() const { return k_; }
  // TV bound for horizons n > k; exact (0) when n == k.
  double error_bound(long n) const { return n == k_ ? 0.0 : dk_; }

 private:
  const TruncatedKernel* kernel_;
  long k_;
  double dk_;
  std::vector<std::vector<double>> qcdf_;  // Q-process row cdfs
  std::vector<std::vector<double>> surv_;  // survival vectors 0..k
};

struct HybridResult {
  Trajectory path;
  double error_bound = 0.0;
  long k = 0;
};

HybridResult simulate_conditioned_hybrid(const TruncatedKernel& kernel,
                                         const SpectralTriple& triple, long z0,
                                         long n, long k, std::uint64_t seed);

// Convenience overload: builds an adaptive kernel internally (heavy; prefer
// the kernel overload or HybridSampler when sampling repeatedly).
// k = 0 picks the smallest k with d(k) < 1e-6 (capped at n).
HybridResult simulate_conditioned_hybrid(const OffspringSpec& spec, long z0,
                                         long n, long k, std::uint64_t seed);

}  // namespace psdbp
