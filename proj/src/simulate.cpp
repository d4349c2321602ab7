#include "psdbp/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace psdbp {

OffspringSampler::OffspringSampler(OffspringSpec spec) : spec_(std::move(spec)) {}

const std::vector<double>& OffspringSampler::cdf(long z) {
  const long key = spec_.size_dependent() ? z : 1;
  auto it = cdf_cache_.find(key);
  if (it != cdf_cache_.end()) return it->second;
  std::vector<double> c = spec_.pmf(key);
  double run = 0.0;
  for (double& x : c) {
    run += x;
    x = run;
  }
  c.back() = std::max(c.back(), 1.0);  // absorb the cut tail into the last atom
  return cdf_cache_.emplace(key, std::move(c)).first->second;
}

long OffspringSampler::draw(long z, Rng& rng) {
  return static_cast<long>(rng.categorical(cdf(z)));
}

long OffspringSampler::next_generation(long z, Rng& rng) {
  if (z <= 0) return 0;
  const std::vector<double>& c = cdf(z);
  long total = 0;
  for (long i = 0; i < z; ++i) {
    total += static_cast<long>(rng.categorical(c));
  }
  return total;
}

long OffspringSampler::next_generation_counted(long z, Rng& rng,
                                               std::map<long, long>& counts) {
  if (z <= 0) return 0;
  const std::vector<double>& c = cdf(z);
  long total = 0;
  for (long i = 0; i < z; ++i) {
    long k = static_cast<long>(rng.categorical(c));
    ++counts[k];
    total += k;
  }
  return total;
}

Trajectory simulate(const OffspringSpec& spec, long z0, long n,
                    std::uint64_t seed) {
  if (z0 < 1) throw ConfigError("z0 must be >= 1");
  if (n < 0) throw ConfigError("horizon must be >= 0");
  Trajectory path;
  path.reserve(static_cast<std::size_t>(n) + 1);
  path.push_back(z0);
  Rng rng(seed);
  OffspringSampler sampler(spec);
  long z = z0;
  for (long t = 0; t < n; ++t) {
    z = sampler.next_generation(z, rng);
    path.push_back(z);
  }
  return path;
}

TreeSample simulate_tree(const OffspringSpec& spec, long z0, long n,
                         std::uint64_t seed) {
  if (z0 < 1) throw ConfigError("z0 must be >= 1");
  if (n < 0) throw ConfigError("horizon must be >= 0");
  TreeSample tree;
  tree.z.reserve(static_cast<std::size_t>(n) + 1);
  tree.z.push_back(z0);
  tree.counts.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  OffspringSampler sampler(spec);
  long z = z0;
  for (long t = 0; t < n; ++t) {
    z = sampler.next_generation_counted(z, rng,
                                        tree.counts[static_cast<std::size_t>(t)]);
    tree.z.push_back(z);
  }
  return tree;
}

double survival_probability(const OffspringSpec& spec, long i, long s) {
  if (i < 0 || s < 0) throw ConfigError("survival probability needs i, s >= 0");
  if (spec.size_dependent()) {
    throw ConfigError(
        "pgf iteration needs a constant-mean family; "
        "use the kernel overload for size-dependent specs");
  }
  if (i == 0) return 0.0;
  if (s == 0) return 1.0;
  const std::vector<double> p = spec.pmf(1);
  double q = 0.0;  // P(Z_t = 0 | Z_0 = 1)
  for (long t = 0; t < s; ++t) {
    // f(q) by Horner from the top of the truncated pmf.
    double f = 0.0;
    for (std::size_t k = p.size(); k-- > 0;) f = f * q + p[k];
    q = f;
  }
  return 1.0 - std::pow(q, static_cast<double>(i));
}

double survival_probability(const TruncatedKernel& kernel, long i, long s) {
  if (i < 0 || s < 0) throw ConfigError("survival probability needs i, s >= 0");
  if (i == 0) return 0.0;
  if (i > kernel.zmax()) throw ConfigError("i exceeds the kernel truncation");
  if (s == 0) return 1.0;
  std::vector<double> w(static_cast<std::size_t>(kernel.zmax()), 1.0);
  for (long t = 0; t < s; ++t) w = kernel.apply(w);
  return w[static_cast<std::size_t>(i - 1)];
}

namespace {

// P(Z_s > 0 | z0) for all s = 1..n from one pilot batch.
std::vector<double> pilot_survival(const OffspringSpec& spec, long z0, long n,
                                   std::uint64_t seed, long runs) {
  std::vector<long> alive(static_cast<std::size_t>(n) + 1, 0);
  OffspringSampler sampler(spec);
  for (long r = 0; r < runs; ++r) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(r)));
    long z = z0;
    for (long t = 1; t <= n; ++t) {
      z = sampler.next_generation(z, rng);
      if (z > 0) {
        ++alive[static_cast<std::size_t>(t)];
      } else {
        break;
      }
    }
  }
  std::vector<double> p(static_cast<std::size_t>(n) + 1, 0.0);
  for (long t = 1; t <= n; ++t) {
    p[static_cast<std::size_t>(t)] =
        static_cast<double>(alive[static_cast<std::size_t>(t)]) /
        static_cast<double>(runs);
  }
  return p;
}

long splitting_block_length(const OffspringSpec& spec, long z0, long n,
                            const TruncatedKernel* kernel,
                            std::uint64_t pilot_seed) {
  long s = 1;
  if (kernel != nullptr && z0 <= kernel->zmax()) {
    std::vector<double> w(static_cast<std::size_t>(kernel->zmax()), 1.0);
    for (long t = 1; t <= n; ++t) {
      w = kernel->apply(w);
      if (2.0 * w[static_cast<std::size_t>(z0 - 1)] >= 1.0) s = t;
      else break;
    }
  } else if (!spec.size_dependent()) {
    for (long t = 1; t <= n; ++t) {
      if (2.0 * survival_probability(spec, z0, t) >= 1.0) s = t;
      else break;
    }
  } else {
    std::vector<double> p = pilot_survival(spec, z0, n, pilot_seed, 4096);
    for (long t = 1; t <= n; ++t) {
      if (2.0 * p[static_cast<std::size_t>(t)] >= 1.0) s = t;
      else break;
    }
  }
  return std::min(std::max<long>(s, 1), std::max<long>(n, 1));
}

}  // namespace

Trajectory simulate_conditioned_splitting(const OffspringSpec& spec, long z0,
                                          long n, std::uint64_t seed,
                                          const TruncatedKernel* kernel) {
  if (z0 < 1) throw ConfigError("conditioned simulation needs z0 >= 1");
  if (n < 0) throw ConfigError("horizon must be >= 0");
  if (n == 0) return Trajectory{z0};

  Rng rng(substream_seed(seed, 0));
  const long s = splitting_block_length(spec, z0, n, kernel,
                                        substream_seed(seed, 1));
  OffspringSampler sampler(spec);

  // Particle budgets: a run that exceeds the work total is almost surely
  // stuck (macro process subcritical, endless restarts); one that exceeds the
  // live-cell total is exploding (macro process supercritical, the cloud
  // doubles per block and duplication copies whole histories without adding
  // work). Fail loudly either way.
  constexpr long kWorkCap = 200'000'000;
  constexpr long kCellCap = 16'000'000;
  long work = 0;

  std::vector<Trajectory> particles;
  while (true) {
    particles.assign(1, Trajectory{z0});
    long t = 0;
    bool dead_run = false;
    while (t < n) {
      const long block_end = std::min(t + s, n);
      if (static_cast<long>(particles.size()) * (block_end + 1) > kCellCap) {
        throw NumericError("splitting particle cloud exceeded its memory budget");
      }
      for (Trajectory& p : particles) {
        long z = p.back();
        for (long g = t; g < block_end; ++g) {
          z = sampler.next_generation(z, rng);
          p.push_back(z);
        }
      }
      work += static_cast<long>(particles.size()) * (block_end - t);
      if (work > kWorkCap) {
        throw NumericError("splitting exceeded its particle work budget");
      }
      std::vector<Trajectory> survivors;
      survivors.reserve(particles.size());
      for (Trajectory& p : particles) {
        if (p.back() > 0) survivors.push_back(std::move(p));
      }
      if (survivors.empty()) {
        dead_run = true;
        break;
      }
      t = block_end;
      if (t == n) {
        particles = std::move(survivors);
        break;
      }
      // Duplicate every survivor; the two copies share the history and
      // evolve independently from here.
      particles.clear();
      particles.reserve(2 * survivors.size());
      for (Trajectory& p : survivors) {
        particles.push_back(p);
        particles.push_back(std::move(p));
      }
    }
    if (!dead_run) break;
  }

  const std::size_t pick = static_cast<std::size_t>(
      rng.uniform() * static_cast<double>(particles.size()));
  return particles[std::min(pick, particles.size() - 1)];
}

HybridSampler::HybridSampler(const TruncatedKernel& kernel,
                             const SpectralTriple& triple, long k)
    : kernel_(&kernel), k_(k) {
  if (k < 1) throw ConfigError("hybrid sampler needs k >= 1");
  QTransitions qt = q_transitions(kernel, triple);
  qcdf_.resize(qt.rows.size());
  for (std::size_t i = 0; i < qt.rows.size(); ++i) {
    std::vector<double>& c = qt.rows[i];
    double run = 0.0;
    for (double& x : c) {
      run += x;
      x = run;
    }
    c.back() = std::max(c.back(), 1.0);
    qcdf_[i] = std::move(c);
  }
  surv_ = survival_vectors(kernel, k);
  dk_ = coupling_error(kernel, triple, k);
}

Trajectory HybridSampler::sample(long z0, long n, std::uint64_t seed) const {
  if (z0 < 1 || z0 > kernel_->zmax()) {
    throw ConfigError("z0 must lie in 1..zmax");
  }
  if (n < k_) throw ConfigError("hybrid sampler needs horizon n >= k");
  Trajectory path;
  path.reserve(static_cast<std::size_t>(n) + 1);
  path.push_back(z0);
  Rng rng(seed);
  long state = z0;
  for (long l = 0; l < n - k_; ++l) {
    state = static_cast<long>(rng.categorical(
                qcdf_[static_cast<std::size_t>(state - 1)])) + 1;
    path.push_back(state);
  }
  for (long l = n - k_; l < n; ++l) {
    const long t = n - l;  // remaining steps, >= 1
    std::vector<double> row = conditioned_row(*kernel_, state, t, surv_);
    double run = 0.0;
    for (double& x : row) {
      run += x;
      x = run;
    }
    row.back() = std::max(row.back(), 1.0);
    state = static_cast<long>(rng.categorical(row)) + 1;
    path.push_back(state);
  }
  return path;
}

HybridResult simulate_conditioned_hybrid(const TruncatedKernel& kernel,
                                         const SpectralTriple& triple, long z0,
                                         long n, long k, std::uint64_t seed) {
  if (n < 1) {
    if (n == 0 && z0 >= 1) return HybridResult{Trajectory{z0}, 0.0, 0};
    throw ConfigError("hybrid simulation needs horizon n >= 0 and z0 >= 1");
  }
  if (k < 1 || k > n) throw ConfigError("hybrid simulation needs 1 <= k <= n");
  HybridSampler sampler(kernel, triple, k);
  return HybridResult{sampler.sample(z0, n, seed), sampler.error_bound(n), k};
}

HybridResult simulate_conditioned_hybrid(const OffspringSpec& spec, long z0,
                                         long n, long k, std::uint64_t seed) {
  KernelBundle b = build_adaptive(spec, z0);
  if (k == 0) {
    k = std::min<long>(n, default_hybrid_k(b.kernel, b.triple));
  }
  return simulate_conditioned_hybrid(b.kernel, b.triple, z0, n, k, seed);
}

}  // namespace psdbp
