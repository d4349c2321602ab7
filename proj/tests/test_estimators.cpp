#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "psdbp/estimators.hpp"
#include "psdbp/io.hpp"
#include "psdbp/stats.hpp"
#include "support/oracles.hpp"

using namespace psdbp;

namespace {

const OffspringSpec kGeom08 = OffspringSpec::geometric(MeanModel::constant(0.8));

}  // namespace

TEST_CASE("state-wise mean MLE") {
  SUBCASE("worked example") {
    EstimateReport rep = mle_m_z({1, 2, 1, 3}, 1);
    CHECK(rep.value == 2.5);
    CHECK(rep.sample_size == 2);
    CHECK(rep.target == TargetKind::q_process_analogue);
    CHECK_FALSE(rep.variance.has_value());
  }
  SUBCASE("degenerate lineage estimates mean one") {
    CHECK(mle_m_z({4, 4, 4, 4}, 4).value == 1.0);
  }
  SUBCASE("unvisited state is undefined, not zero") {
    CHECK_THROWS_AS(mle_m_z({1, 2, 1, 3}, 5), UndefinedEstimatorError);
    // the final state is a child, never a parent
    CHECK_THROWS_AS(mle_m_z({1, 2, 1, 3}, 3), UndefinedEstimatorError);
    CHECK_THROWS_AS(mle_m_z({7}, 7), ConfigError);
    CHECK_THROWS_AS(mle_m_z({1, 2}, 0), ConfigError);
  }
  SUBCASE("states outside the conditioned support carry no variance") {
    // two_bernoulli children come in pairs, so odd states are transient and
    // u_z = 0 there: the value is reported, the normal limit is not.
    auto two = OffspringSpec::two_bernoulli(0.9);
    TruncatedKernel k = TruncatedKernel::build(two, 32);
    SpectralTriple t = spectral(k);
    EstimateReport rep = mle_m_z({1, 2, 2, 4}, 1, k, t);
    CHECK(rep.value == 2.0);
    CHECK_FALSE(rep.variance.has_value());
    CHECK(rep.diagnostics.count("transient_state") == 1);
    CHECK(rep.diagnostics.at("u_z") == 0.0);
    CHECK_THROWS_AS(confidence_interval(rep), UndefinedEstimatorError);

    EstimateReport even = mle_m_z({2, 2, 2, 4}, 2, k, t);
    CHECK(even.variance.has_value());
  }
}

TEST_CASE("classical GW mean MLE") {
  CHECK(mle_m_gw({1, 2, 4}).value == 2.0);
  CHECK(mle_m_gw({5, 0}).value == 0.0);
  CHECK(mle_m_gw({5, 0}).sample_size == 1);
  CHECK_THROWS_AS(mle_m_gw({0, 0}), UndefinedEstimatorError);
}

TEST_CASE("offspring law MLE from family trees") {
  SUBCASE("single visit worked example") {
    TreeSample tree;
    tree.z = {2, 2};
    tree.counts = {{{0, 1}, {2, 1}}};
    PkEstimate est = mle_pk_all(tree, 2);
    CHECK(est.visits == 1);
    CHECK(est.p.at(0) == 0.5);
    CHECK(est.p.at(2) == 0.5);
    CHECK(mle_pk(tree, 2, 0).value == 0.5);
    CHECK(mle_pk(tree, 2, 7).value == 0.0);
    CHECK_THROWS_AS(mle_pk_all(tree, 3), UndefinedEstimatorError);
  }
  SUBCASE("estimates sum to one and reproduce the mean MLE") {
    TreeSample tree = simulate_tree(kGeom08, 10, 60, 2024);
    long z = tree.z[0];
    PkEstimate est = mle_pk_all(tree, z);
    double total = 0.0, mean = 0.0;
    for (const auto& [k, p] : est.p) {
      total += p;
      mean += static_cast<double>(k) * p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(mean == doctest::Approx(mle_m_z(tree.z, z).value).epsilon(1e-12));
  }
  SUBCASE("poisson law recovered from many visits") {
    const OffspringSpec spec = OffspringSpec::poisson(MeanModel::constant(0.9));
    TreeSample pooled;
    const long visits = 10'000;
    for (long r = 0; r < visits; ++r) {
      TreeSample one = simulate_tree(spec, 20, 1, 40'000 + static_cast<std::uint64_t>(r));
      pooled.z.push_back(20);
      pooled.counts.push_back(one.counts[0]);
    }
    pooled.z.push_back(pooled.z.back());
    PkEstimate est = mle_pk_all(pooled, 20);
    CHECK(est.visits == visits);
    const auto truth = spec.pmf(20);
    double worst = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
      auto it = est.p.find(static_cast<long>(k));
      double hat = it == est.p.end() ? 0.0 : it->second;
      worst = std::max(worst, std::abs(hat - truth[k]));
    }
    CHECK(worst < 0.01);
  }
}

TEST_CASE("binary splitting plug-ins") {
  BinarySplitPlugins mid = binary_split_plugins(1.0);
  CHECK(mid.p0 == 0.5);
  CHECK(mid.p2 == 0.5);
  CHECK(mid.sigma2 == 0.0);
  CHECK_FALSE(mid.out_of_range);

  BinarySplitPlugins dead = binary_split_plugins(0.0);
  CHECK(dead.p0 == 1.0);
  CHECK(dead.p2 == 0.0);
  CHECK_FALSE(dead.out_of_range);

  CHECK(binary_split_plugins(2.5).out_of_range);
  CHECK(binary_split_plugins(-0.1).out_of_range);

  auto spec = OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0));
  Trajectory path = simulate(spec, 30, 50, 5);
  BinarySplitPlugins fit = binary_split_plugins(path, 30);
  CHECK(fit.m_hat == mle_m_z(path, 30).value);
  CHECK(fit.p2 == fit.m_hat / 2.0);
  CHECK(fit.p0 + fit.p2 == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("geometric-weight estimator m_tilde") {
  SUBCASE("worked example with (a, b) = (1, 1)") {
    EstimateReport rep = c_estimator_tilde({1, 2, 1}, 1.0, 1.0);
    CHECK(rep.value == 0.2);
    CHECK(rep.sample_size == 2);
    CHECK(rep.target == TargetKind::true_parameter);
  }
  SUBCASE("spec overload pulls (a, b) from the family") {
    Trajectory path{1, 2, 1};
    EstimateReport rep = c_estimator_tilde(path, kGeom08);
    CHECK(rep.value == 0.2);
    REQUIRE(rep.variance.has_value());
    // plug-in at the estimate: nu_tilde2(0.2) / n
    auto at_hat = immigration_constants(
        OffspringSpec::geometric(MeanModel::constant(0.2)));
    CHECK(*rep.variance ==
          doctest::Approx(*at_hat.nu_tilde2 / 2.0).epsilon(1e-12));
    REQUIRE(rep.ci.has_value());
    CHECK(rep.ci->first < 0.2);
    CHECK(rep.ci->second > 0.2);

    EstimateReport at_truth =
        c_estimator_tilde(path, kGeom08, VarianceAt::truth);
    auto truth = immigration_constants(kGeom08);
    CHECK(*at_truth.variance ==
          doctest::Approx(*truth.nu_tilde2 / 2.0).epsilon(1e-12));
  }
  SUBCASE("out-of-range plug-in omits the variance") {
    // value (12-1)/(1+1) = 5.5 > 1: no subcritical family matches it
    EstimateReport rep = c_estimator_tilde({1, 12}, kGeom08);
    CHECK(rep.value == 5.5);
    CHECK_FALSE(rep.variance.has_value());
    CHECK(rep.diagnostics.count("out_of_range") == 1);
    CHECK_THROWS_AS(confidence_interval(rep), UndefinedEstimatorError);
  }
  SUBCASE("families without (a, b) are rejected") {
    CHECK_THROWS_AS(
        c_estimator_tilde({1, 2, 1}, OffspringSpec::explicit_pmf({0.5, 0.2, 0.3})),
        SpecError);
  }
}

TEST_CASE("family-free estimator m_bar") {
  SUBCASE("worked example lands out of range and is flagged, not clamped") {
    CBarEstimate est = c_estimator_bar({2, 3, 1, 2});
    CHECK(est.m.value == -0.5);
    CHECK(est.m.diagnostics.at("z_bar") == 2.0);
    CHECK(est.sigma2.value == -1.5);
    CHECK(est.m.diagnostics.count("out_of_range") == 1);
    CHECK(est.sigma2.diagnostics.count("out_of_range") == 1);
    CHECK_FALSE(est.m.variance.has_value());
  }
  SUBCASE("constant trajectory is undefined") {
    CHECK_THROWS_AS(c_estimator_bar({3, 3, 3}), UndefinedEstimatorError);
  }
  SUBCASE("sigma2 companion never carries an interval") {
    Trajectory path = simulate_conditioned_hybrid(kGeom08, 1, 400, 40, 8).path;
    CBarEstimate est = c_estimator_bar(path, kGeom08);
    CHECK_FALSE(est.sigma2.variance.has_value());
    CHECK_FALSE(est.sigma2.ci.has_value());
    if (est.m.value > 0.0 && est.m.value < 1.0) {
      CHECK(est.m.variance.has_value());
      CHECK(est.m.diagnostics.count("B2") == 1);
    }
  }
}

TEST_CASE("confidence intervals") {
  auto [lo, hi] = confidence_interval(1.0, 4.0 / 400.0, 0.95);
  CHECK((hi - lo) / 2.0 == doctest::Approx(0.1959964).epsilon(1e-5));
  CHECK((hi + lo) / 2.0 == doctest::Approx(1.0).epsilon(1e-12));

  auto [dl, dh] = confidence_interval(0.3, 0.0, 0.95);
  CHECK(dl == 0.3);
  CHECK(dh == 0.3);

  CHECK_THROWS_AS(confidence_interval(0.0, -1.0, 0.95), NumericError);
  CHECK_THROWS_AS(confidence_interval(0.0, 1.0, 1.5), ConfigError);
}

TEST_CASE("immigration constants") {
  SUBCASE("geometric m = 0.8") {
    ImmigrationConstants c = immigration_constants(kGeom08);
    CHECK(c.lambda == doctest::Approx(1.6).epsilon(1e-12));
    CHECK(c.mu == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(c.m_pi == doctest::Approx(9.0).epsilon(1e-12));
    CHECK(c.c2 == doctest::Approx(14.4).epsilon(1e-10));
    CHECK(c.B2 == doctest::Approx(1094.4).epsilon(1e-9));
    REQUIRE(c.nu_tilde2.has_value());
    CHECK(*c.nu_tilde2 == doctest::Approx(0.144).epsilon(1e-10));
    CHECK(c.nu_bar2 == doctest::Approx(0.684).epsilon(1e-9));
  }
  SUBCASE("poisson m = 0.5") {
    ImmigrationConstants c =
        immigration_constants(OffspringSpec::poisson(MeanModel::constant(0.5)));
    CHECK(c.lambda == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c.mu == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.c2 == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(c.B2 == doctest::Approx(52.0 / 21.0).epsilon(1e-9));
    CHECK(*c.nu_tilde2 == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(c.nu_bar2 == doctest::Approx(29.25 / 21.0).epsilon(1e-9));
  }
  SUBCASE("two-point binary m = 0.5") {
    ImmigrationConstants c =
        immigration_constants(OffspringSpec::two_bernoulli(0.5));
    CHECK(c.lambda == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.mu == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(c.m_pi == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(c.c2 == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(c.B2 == doctest::Approx(87.0 / 14.0).epsilon(1e-10));
    CHECK(*c.nu_tilde2 == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(c.nu_bar2 == doctest::Approx(87.0 / 56.0).epsilon(1e-10));
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(immigration_constants(
                        OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0))),
                    ConfigError);
    CHECK_THROWS_AS(immigration_constants(
                        OffspringSpec::geometric(MeanModel::constant(1.2))),
                    SpecError);
  }
}

TEST_CASE("c2 agrees across its three closed forms") {
  // (1) the library value, (2) the size-biased definition with independently
  // summed moments, (3) the (a, b) form.
  auto third_moment = [](const OffspringSpec& spec) {
    auto p = spec.pmf(1, 1e-20);
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      s += static_cast<double>(k) * static_cast<double>(k) *
           static_cast<double>(k) * p[k];
    }
    return s;
  };
  std::vector<OffspringSpec> specs;
  for (double m : {0.5, 0.8}) {
    specs.push_back(OffspringSpec::geometric(MeanModel::constant(m)));
  }
  for (double m : {0.5, 0.9}) {
    specs.push_back(OffspringSpec::poisson(MeanModel::constant(m)));
  }
  for (double m : {0.3, 0.9}) {
    specs.push_back(OffspringSpec::two_bernoulli(m));
  }
  for (const OffspringSpec& spec : specs) {
    const double m = spec.mean(1);
    const double V = spec.variance(1);
    const double e3 = third_moment(spec);
    const double lambda = V / m + m - 1.0;
    // definition: V(SB) + V mu with E[SB] = V/m + m, E[SB^2] = E xi^3 / m
    const double def = e3 / m - (V / m + m) * (V / m + m) +
                       V * lambda / (1.0 - m);
    auto [a, b] = *spec.ab_constants();
    const double amb = a * m + b;
    const double ab_form = e3 / m + m * amb * amb / (1.0 - m) - m * amb -
                           ((a + 1.0) * m + b) * ((a + 1.0) * m + b);
    const double lib = immigration_constants(spec).c2;
    CHECK(lib == doctest::Approx(def).epsilon(1e-10));
    CHECK(lib == doctest::Approx(ab_form).epsilon(1e-10));
  }
}

TEST_CASE("with_mean rebuilds the family at a new mean") {
  OffspringSpec g = with_mean(kGeom08, 0.6);
  CHECK(g.family() == Family::geometric);
  CHECK(g.mean(1) == doctest::Approx(0.6).epsilon(1e-15));
  OffspringSpec b = with_mean(OffspringSpec::two_bernoulli(0.5), 0.7);
  CHECK(b.variance(1) == doctest::Approx(0.7 * 1.3).epsilon(1e-12));
  CHECK_THROWS_AS(with_mean(OffspringSpec::explicit_pmf({0.5, 0.2, 0.3}), 0.5),
                  SpecError);
}

TEST_CASE("estimators on conditioned trajectories") {
  TruncatedKernel kernel = TruncatedKernel::build(kGeom08, 128);
  SpectralTriple triple = spectral(kernel);
  HybridSampler sampler(kernel, triple, 40);

  SUBCASE("kernel overload fills Q-process asymptotics") {
    Trajectory path = sampler.sample(1, 500, 31);
    long best = 1, best_visits = 0;
    for (long z = 1; z <= 30; ++z) {
      long visits = 0;
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (path[i] == z) ++visits;
      }
      if (visits > best_visits) {
        best = z;
        best_visits = visits;
      }
    }
    EstimateReport rep = mle_m_z(path, best, kernel, triple);
    REQUIRE(rep.variance.has_value());
    const double expected =
        sigma2_up(kernel, triple, best) /
        (500.0 * triple.u[static_cast<std::size_t>(best - 1)] *
         triple.v[static_cast<std::size_t>(best - 1)]);
    CHECK(*rep.variance == doctest::Approx(expected).epsilon(1e-12));
    CHECK(rep.diagnostics.at("m_up") ==
          doctest::Approx(m_up(kernel, triple, best)).epsilon(1e-12));
    REQUIRE(rep.ci.has_value());
    const double half = normal_quantile(0.975) * std::sqrt(*rep.variance);
    CHECK(rep.ci->second - rep.value == doctest::Approx(half).epsilon(1e-10));

    Trajectory outside{300, 10, 300, 12};
    CHECK_THROWS_AS(mle_m_z(outside, 300, kernel, triple), ConfigError);
  }

  SUBCASE("quadratic and regression statistics nearly coincide") {
    // They share a numerator up to a boundary term of order 1/n.
    for (std::uint64_t seed : {101, 202, 303}) {
      Trajectory path = sampler.sample(1, 1000, seed);
      CBarEstimate est = c_estimator_bar(path, kGeom08);
      CHECK(std::abs(est.m.value - oracle::mbar_prime(path)) < 0.01);
      CHECK(std::abs(est.m.value - 0.8) < 0.1);
      // empirical variance of the parents approaches c2 / (1 - m^2) = 40;
      // at n=1000 the autocorrelated path leaves a per-run spread around 7
      long n = static_cast<long>(path.size()) - 1;
      double zbar = est.m.diagnostics.at("z_bar");
      double den = 0.0;
      for (long i = 1; i <= n; ++i) {
        double dev = static_cast<double>(path[i - 1]) - zbar;
        den += dev * dev;
      }
      CHECK(std::abs(den / static_cast<double>(n) - 40.0) < 12.0);
    }
  }
}

TEST_CASE("report serialization") {
  EstimateReport rep = mle_m_z({1, 2, 1, 3}, 1);
  rep.variance = 0.01;
  rep.ci = confidence_interval(rep.value, 0.01, 0.95);
  json j = report_to_json(rep);
  CHECK(j.at("estimator") == "mle_m_z");
  CHECK(j.at("value") == 2.5);
  CHECK(j.at("target") == "q_process_analogue");
  CHECK(j.at("variance") == 0.01);
  CHECK(j.at("ci").size() == 2);
  CHECK(j.at("sample_size") == 2);
  CHECK(j.at("diagnostics").at("visits") == 2.0);

  EstimateReport bare = mle_m_gw({1, 2, 4});
  json jb = report_to_json(bare);
  CHECK(jb.at("variance").is_null());
  CHECK(jb.at("ci").is_null());
}
