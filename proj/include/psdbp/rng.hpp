#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace psdbp {

// splitmix64 step; used to derive independent substream seeds from a master
// seed. Stable by construction, so seeded runs are bit-reproducible.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for substream `index` of a master seed. Trajectory i of a replicated
// experiment always sees the same stream regardless of thread schedule.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  splitmix64(s);
  return splitmix64(s);
}

// Thin wrapper around std::mt19937_64. The engine itself is fully specified
// by the standard; uniform doubles are derived with a fixed bit recipe rather
// than std::uniform_real_distribution (whose algorithm is
// implementation-defined and would break bit-reproducibility).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0, 1): 53 random mantissa bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Index into a cumulative distribution (non-decreasing, back() ~ 1).
  // Returns the smallest k with u < cdf[k].
  std::size_t categorical(const std::vector<double>& cdf) {
    double u = uniform();
    std::size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (u < cdf[mid]) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    return lo;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace psdbp
