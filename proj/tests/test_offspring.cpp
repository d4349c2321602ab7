#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "psdbp/offspring.hpp"
#include "support/oracles.hpp"

using namespace psdbp;

namespace {

double pmf_mean(const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += static_cast<double>(k) * p[k];
  return s;
}

double pmf_sum(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  return s;
}

double pmf_moment(const std::vector<double>& p, int order) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    s += std::pow(static_cast<double>(k), order) * p[k];
  }
  return s;
}

}  // namespace

TEST_CASE("mean models") {
  MeanModel ricker = MeanModel::ricker(1.2, 30.0);
  CHECK(std::abs(ricker(28.0) - 1.0122) < 5e-5);
  CHECK(std::abs(ricker(8.0) - 1.1431) < 5e-5);
  CHECK(MeanModel::beverton_holt(100.0)(100.0) == 1.0);
  CHECK(MeanModel::constant(0.8)(17.0) == 0.8);

  CHECK_THROWS_AS(MeanModel::constant(0.0), SpecError);
  CHECK_THROWS_AS(MeanModel::ricker(-1.0, 30.0), SpecError);
  CHECK_THROWS_AS(MeanModel::beverton_holt(0.0), SpecError);
}

TEST_CASE("family variances") {
  CHECK(OffspringSpec::geometric(MeanModel::constant(0.8)).variance(1) ==
        doctest::Approx(1.44).epsilon(1e-12));
  CHECK(OffspringSpec::poisson(MeanModel::constant(0.9)).variance(5) ==
        doctest::Approx(0.9).epsilon(1e-12));
  // binary splitting with m(z) = 1: E xi^2 - m^2 = 2 - 1
  CHECK(OffspringSpec::two_point_binary(MeanModel::constant(1.0)).variance(3) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pmf values") {
  auto binary = OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0));
  CHECK(std::abs(binary.pmf(28)[2] - 0.5061) < 5e-5);  // m(28)/2
  CHECK(binary.pmf(28)[1] == 0.0);
  CHECK(binary.pmf(28)[0] + binary.pmf(28)[2] == doctest::Approx(1.0));

  auto geom = OffspringSpec::geometric(MeanModel::constant(0.8));
  CHECK(std::abs(geom.pmf(1)[0] - 1.0 / 1.8) < 1e-12);

  SUBCASE("normalization within tail cutoff") {
    for (const auto& spec :
         {OffspringSpec::geometric(MeanModel::constant(0.8)),
          OffspringSpec::poisson(MeanModel::constant(0.9)),
          OffspringSpec::geometric(MeanModel::ricker(1.2, 30.0)),
          OffspringSpec::poisson(MeanModel::beverton_holt(50.0))}) {
      for (long z : {1L, 7L, 30L, 100L}) {
        double total = pmf_sum(spec.pmf(z));
        CHECK(total <= 1.0 + 1e-15);
        CHECK(total >= 1.0 - spec.tail_cutoff() - 1e-15);
      }
    }
  }

  SUBCASE("tighter cutoff override extends the support") {
    auto loose = geom.pmf(1);
    auto tight = geom.pmf(1, 1e-20);
    CHECK(tight.size() > loose.size());
    CHECK(pmf_sum(tight) >= 1.0 - 1e-20);
  }
}

TEST_CASE("pmf mean matches mean() on a probe grid") {
  for (const auto& spec :
       {OffspringSpec::geometric(MeanModel::constant(0.5)),
        OffspringSpec::poisson(MeanModel::constant(1.3)),
        OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0)),
        OffspringSpec::two_bernoulli(0.7),
        OffspringSpec::geometric(MeanModel::beverton_holt(40.0)),
        OffspringSpec::explicit_pmf({0.3, 0.2, 0.1, 0.4})}) {
    for (long z : {1L, 2L, 5L, 13L, 40L, 90L}) {
      CHECK(pmf_mean(spec.pmf(z)) == doctest::Approx(spec.mean(z)).epsilon(1e-10));
      // second-moment route to the variance
      double var = pmf_moment(spec.pmf(z), 2) - spec.mean(z) * spec.mean(z);
      CHECK(var == doctest::Approx(spec.variance(z)).epsilon(1e-9));
    }
  }
}

TEST_CASE("size-biased transforms") {
  SUBCASE("poisson: SB = 1 + xi in law") {
    auto spec = OffspringSpec::poisson(MeanModel::constant(0.9));
    auto p = spec.pmf(1);
    auto sb = spec.size_biased_pmf(1);
    for (std::size_t k = 1; k < sb.size(); ++k) {
      CHECK(sb[k] == doctest::Approx(p[k - 1]).epsilon(1e-10));
    }
  }
  SUBCASE("geometric: SB = 1 + xi + xi' in law") {
    auto spec = OffspringSpec::geometric(MeanModel::constant(0.8));
    auto p = spec.pmf(1);
    auto sum2 = oracle::convolve(p, p);
    auto sb = spec.size_biased_pmf(1);
    for (std::size_t k = 1; k < sb.size(); ++k) {
      CHECK(sb[k] == doctest::Approx(sum2[k - 1]).epsilon(1e-8));
    }
  }
  SUBCASE("two_bernoulli: point mass at 2") {
    auto sb = OffspringSpec::two_bernoulli(0.6).size_biased_pmf(1);
    CHECK(sb[2] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sb[0] == 0.0);
    CHECK(sb[1] == 0.0);
  }
  SUBCASE("mean identity E[SB] = E(xi^2)/m") {
    for (const auto& spec :
         {OffspringSpec::geometric(MeanModel::constant(0.8)),
          OffspringSpec::poisson(MeanModel::constant(1.1)),
          OffspringSpec::two_bernoulli(0.5),
          OffspringSpec::explicit_pmf({0.4, 0.1, 0.2, 0.3})}) {
      double ex2 = pmf_moment(spec.pmf(1), 2);
      CHECK(pmf_mean(spec.size_biased_pmf(1)) ==
            doctest::Approx(ex2 / spec.mean(1)).epsilon(1e-10));
    }
  }
  SUBCASE("size-dependent families are rejected") {
    auto spec = OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0));
    CHECK_THROWS_AS(spec.size_biased_pmf(5), SpecError);
  }
}

TEST_CASE("(a, b) constants") {
  auto pair_of = [](const OffspringSpec& s) { return *s.ab_constants(); };
  CHECK(pair_of(OffspringSpec::geometric(MeanModel::constant(0.5))) ==
        std::pair<double, double>(1.0, 1.0));
  CHECK(pair_of(OffspringSpec::poisson(MeanModel::constant(0.5))) ==
        std::pair<double, double>(0.0, 1.0));
  CHECK(pair_of(OffspringSpec::two_bernoulli(0.5)) ==
        std::pair<double, double>(-1.0, 2.0));
  CHECK_FALSE(OffspringSpec::explicit_pmf({0.5, 0.2, 0.3}).ab_constants());

  SUBCASE("V/m = a m + b identically over the mean grid") {
    for (double m : {0.1, 0.25, 0.4, 0.55, 0.7, 0.8, 0.95}) {
      for (const auto& spec : {OffspringSpec::geometric(MeanModel::constant(m)),
                               OffspringSpec::poisson(MeanModel::constant(m)),
                               OffspringSpec::two_bernoulli(m)}) {
        auto [a, b] = *spec.ab_constants();
        CHECK(std::abs(spec.variance(1) / m - (a * m + b)) < 1e-12);
      }
    }
  }
}

TEST_CASE("constructor validation") {
  // ricker(3, 30) has m(z) > 2 for small z: must fail fast
  CHECK_THROWS_AS(OffspringSpec::two_point_binary(MeanModel::ricker(3.0, 30.0)),
                  SpecError);
  // bound excludes the violating states: constructible
  CHECK_NOTHROW(OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0)));
  CHECK_THROWS_AS(OffspringSpec::two_bernoulli(2.0), SpecError);
  CHECK_THROWS_AS(OffspringSpec::two_bernoulli(0.0), SpecError);

  // explicit pmfs must be normalized and allow both death and growth
  CHECK_THROWS_AS(OffspringSpec::explicit_pmf({0.5, 0.4}), SpecError);
  CHECK_THROWS_AS(OffspringSpec::explicit_pmf({0.0, 0.5, 0.5}), SpecError);
  CHECK_THROWS_AS(OffspringSpec::explicit_pmf({0.6, 0.4}), SpecError);
  CHECK_NOTHROW(OffspringSpec::explicit_pmf({0.5, 0.2, 0.3}));
  // degenerate laws allowed only when asked for (test use)
  CHECK_THROWS_AS(OffspringSpec::explicit_pmf({0.0, 1.0}), SpecError);
  CHECK_NOTHROW(OffspringSpec::explicit_pmf({0.0, 1.0}, true));
}
