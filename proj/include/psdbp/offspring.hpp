#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "psdbp/errors.hpp"

namespace psdbp {

// Mean of the offspring law as a function of the current population size z.
// Constant mean gives a Galton-Watson process; ricker / beverton_holt give
// population-size-dependent processes attracted to the carrying capacity K.
struct MeanModel {
  enum class Kind { constant, ricker, beverton_holt };

  Kind kind = Kind::constant;
  double m = 1.0;  // constant mean
  double r = 1.0;  // ricker growth factor
  double K = 1.0;  // carrying capacity

  static MeanModel constant(double m);
  static MeanModel ricker(double r, double K);
  static MeanModel beverton_holt(double K);

  bool is_constant() const { return kind == Kind::constant; }

  // m(z) for population size z >= 1.
  double operator()(double z) const;

  std::string name() const;
};

enum class Family {
  geometric,         // geometric on {0,1,...} with mean m(z)
  poisson,           // Poisson with mean m(z)
  two_point_binary,  // binary splitting: p2 = m(z)/2, p0 = 1 - p2
  two_bernoulli,     // 2 * Bernoulli(m/2), constant mean only
  explicit_pmf,      // user-supplied fixed pmf
};

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Offspring law xi(z) for each population size z, together with the moment
// functions the estimators need. Immutable and cheap to copy; pmf() is a pure
// function of (spec, z) so instances can be shared across threads.
class OffspringSpec {
 public:
  static constexpr double kDefaultTailCutoff = 1e-14;

  static OffspringSpec geometric(MeanModel mm,
                                 double tail_cutoff = kDefaultTailCutoff);
  static OffspringSpec poisson(MeanModel mm,
                               double tail_cutoff = kDefaultTailCutoff);
  // Validates m(z) < 2 for z = 1..reachability_bound and fails fast.
  static OffspringSpec two_point_binary(MeanModel mm,
                                        long reachability_bound = 1024);
  static OffspringSpec two_bernoulli(double m);
  // allow_degenerate lifts the p0 > 0, p0 + p1 < 1 requirement (test use).
  static OffspringSpec explicit_pmf(std::vector<double> p,
                                    bool allow_degenerate = false);

  Family family() const { return family_; }
  const MeanModel& mean_model() const { return mean_model_; }
  double tail_cutoff() const { return tail_cutoff_; }
  long reachability_bound() const { return reachability_bound_; }
  bool degenerate_allowed() const { return allow_degenerate_; }
  const std::vector<double>& explicit_probabilities() const { return explicit_; }

  // True if the offspring law varies with the population size.
  bool size_dependent() const { return !mean_model_.is_constant(); }

  // m(z) = E(xi(z)).
  double mean(long z) const;

  // sigma^2(z) = V(xi(z)).
  double variance(long z) const;

  // p_k(z) for k = 0..len-1; the dropped tail carries mass <= tail_cutoff.
  // The override exists for moment summation, which needs tighter tails than
  // sampling does.
  std::vector<double> pmf(long z) const;
  std::vector<double> pmf(long z, double tail_cutoff) const;

  // Size-biased law: P[SB = k] = k p_k / m(z), k >= 1 (entry 0 is zero).
  std::vector<double> size_biased_pmf(long z) const;
  std::vector<double> size_biased_pmf(long z, double tail_cutoff) const;

  // (a, b) with V(xi)/m = a m + b when the family satisfies that relation
  // identically; nullopt for explicit_pmf.
  std::optional<std::pair<double, double>> ab_constants() const;

 private:
  OffspringSpec() = default;

  Family family_ = Family::geometric;
  MeanModel mean_model_;
  double tail_cutoff_ = kDefaultTailCutoff;
  long reachability_bound_ = 1024;
  bool allow_degenerate_ = false;
  std::vector<double> explicit_;  // explicit_pmf only
};

}  // namespace psdbp
