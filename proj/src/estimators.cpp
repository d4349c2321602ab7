#include "psdbp/estimators.hpp"

#include <cmath>
#include <string>

#include "psdbp/errors.hpp"
#include "psdbp/stats.hpp"

namespace psdbp {

namespace {

// Number of observed transitions; estimators index parents i-1 and children i.
long transitions(const Trajectory& path) {
  if (path.size() < 2) {
    throw ConfigError("estimators need a trajectory with at least one transition");
  }
  return static_cast<long>(path.size()) - 1;
}

void attach_ci(EstimateReport& rep, double level) {
  rep.ci_level = level;
  if (rep.variance) {
    rep.ci = confidence_interval(rep.value, *rep.variance, level);
  }
}

// Variance plug-in target: the estimated mean when it is usable, the spec's
// own mean otherwise. nullopt means the plug-in is out of range and the
// variance must be omitted.
std::optional<ImmigrationConstants> plugin_constants(const OffspringSpec& spec,
                                                     double m_hat,
                                                     VarianceAt at) {
  if (at == VarianceAt::truth) return immigration_constants(spec);
  if (!(m_hat > 0.0) || !(m_hat < 1.0)) return std::nullopt;
  return immigration_constants(with_mean(spec, m_hat));
}

}  // namespace

std::string target_kind_name(TargetKind kind) {
  return kind == TargetKind::true_parameter ? "true_parameter"
                                            : "q_process_analogue";
}

std::pair<double, double> confidence_interval(double value, double variance,
                                              double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ConfigError("confidence level must lie in (0, 1)");
  }
  if (!(variance >= 0.0)) {
    throw NumericError("confidence interval needs a non-negative variance");
  }
  double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(variance);
  return {value - half, value + half};
}

std::pair<double, double> confidence_interval(const EstimateReport& report,
                                              double level) {
  if (!report.variance) {
    throw UndefinedEstimatorError("estimate has no asymptotic variance");
  }
  return confidence_interval(report.value, *report.variance, level);
}

EstimateReport mle_m_z(const Trajectory& path, long z) {
  if (z < 1) throw ConfigError("state z must be >= 1");
  long n = transitions(path);
  long visits = 0;
  long long children = 0;
  for (long i = 1; i <= n; ++i) {
    if (path[i - 1] == z) {
      ++visits;
      children += path[i];
    }
  }
  if (visits == 0) {
    throw UndefinedEstimatorError("state z=" + std::to_string(z) +
                                  " never visited before the horizon");
  }
  EstimateReport rep;
  rep.estimator = "mle_m_z";
  rep.target = TargetKind::q_process_analogue;
  rep.value = static_cast<double>(children) /
              (static_cast<double>(z) * static_cast<double>(visits));
  rep.sample_size = visits;
  rep.diagnostics["visits"] = static_cast<double>(visits);
  rep.diagnostics["n"] = static_cast<double>(n);
  rep.diagnostics["z"] = static_cast<double>(z);
  return rep;
}

EstimateReport mle_m_z(const Trajectory& path, long z,
                       const TruncatedKernel& kernel,
                       const SpectralTriple& triple, double ci_level) {
  EstimateReport rep = mle_m_z(path, z);
  if (z > kernel.zmax()) {
    throw ConfigError("state z exceeds the kernel truncation");
  }
  long n = transitions(path);
  double uz = triple.u[static_cast<std::size_t>(z - 1)];
  double vz = triple.v[static_cast<std::size_t>(z - 1)];
  double s2 = sigma2_up(kernel, triple, z);
  if (uz * vz > 0.0) {
    rep.variance = s2 / (static_cast<double>(n) * uz * vz);
  } else {
    // u_z = 0: z is transient under the conditioned chain (e.g. odd states of
    // a two-point family), visited o(n) times, so the normal limit is empty.
    rep.diagnostics["transient_state"] = 1.0;
  }
  rep.diagnostics["m_up"] = m_up(kernel, triple, z);
  rep.diagnostics["sigma2_up"] = s2;
  rep.diagnostics["u_z"] = uz;
  rep.diagnostics["v_z"] = vz;
  attach_ci(rep, ci_level);
  return rep;
}

EstimateReport mle_m_gw(const Trajectory& path) {
  long n = transitions(path);
  long long num = 0;
  long long den = 0;
  for (long i = 1; i <= n; ++i) {
    num += path[i];
    den += path[i - 1];
  }
  if (den == 0) {
    throw UndefinedEstimatorError("no ancestors observed: sum Z_{i-1} = 0");
  }
  EstimateReport rep;
  rep.estimator = "mle_m_gw";
  rep.target = TargetKind::q_process_analogue;
  rep.value = static_cast<double>(num) / static_cast<double>(den);
  rep.sample_size = n;
  return rep;
}

EstimateReport mle_pk(const TreeSample& tree, long z, long k) {
  if (z < 1) throw ConfigError("state z must be >= 1");
  if (k < 0) throw ConfigError("offspring count k must be >= 0");
  if (tree.counts.size() + 1 != tree.z.size()) {
    throw ConfigError("tree sample needs one tally map per transition");
  }
  long visits = 0;
  long long tally = 0;
  for (std::size_t i = 0; i < tree.counts.size(); ++i) {
    if (tree.z[i] != z) continue;
    ++visits;
    auto it = tree.counts[i].find(k);
    if (it != tree.counts[i].end()) tally += it->second;
  }
  if (visits == 0) {
    throw UndefinedEstimatorError("state z=" + std::to_string(z) +
                                  " never visited before the horizon");
  }
  EstimateReport rep;
  rep.estimator = "mle_pk";
  rep.target = TargetKind::q_process_analogue;
  rep.value = static_cast<double>(tally) /
              (static_cast<double>(visits) * static_cast<double>(z));
  rep.sample_size = visits;
  rep.diagnostics["visits"] = static_cast<double>(visits);
  rep.diagnostics["k"] = static_cast<double>(k);
  return rep;
}

PkEstimate mle_pk_all(const TreeSample& tree, long z) {
  if (z < 1) throw ConfigError("state z must be >= 1");
  if (tree.counts.size() + 1 != tree.z.size()) {
    throw ConfigError("tree sample needs one tally map per transition");
  }
  std::map<long, long long> tallies;
  long visits = 0;
  for (std::size_t i = 0; i < tree.counts.size(); ++i) {
    if (tree.z[i] != z) continue;
    ++visits;
    for (const auto& [k, c] : tree.counts[i]) tallies[k] += c;
  }
  if (visits == 0) {
    throw UndefinedEstimatorError("state z=" + std::to_string(z) +
                                  " never visited before the horizon");
  }
  PkEstimate out;
  out.visits = visits;
  double denom = static_cast<double>(visits) * static_cast<double>(z);
  for (const auto& [k, c] : tallies) out.p[k] = static_cast<double>(c) / denom;
  return out;
}

BinarySplitPlugins binary_split_plugins(double m_hat) {
  BinarySplitPlugins out;
  out.m_hat = m_hat;
  out.p0 = 1.0 - m_hat / 2.0;
  out.p2 = m_hat / 2.0;
  out.sigma2 = 2.0 * m_hat * (1.0 - m_hat);
  out.out_of_range = !(m_hat >= 0.0 && m_hat <= 2.0);
  return out;
}

BinarySplitPlugins binary_split_plugins(const Trajectory& path, long z) {
  return binary_split_plugins(mle_m_z(path, z).value);
}

EstimateReport c_estimator_tilde(const Trajectory& path, double a, double b) {
  if (!(a + b > 0.0)) {
    throw SpecError("c_estimator_tilde requires a + b > 0");
  }
  long n = transitions(path);
  double num = 0.0;
  double den = 0.0;
  for (long i = 1; i <= n; ++i) {
    num += static_cast<double>(path[i]) - b;
    den += static_cast<double>(path[i - 1]) + a;
  }
  if (den == 0.0) {
    throw UndefinedEstimatorError("zero denominator: sum (Z_{i-1} + a) = 0");
  }
  EstimateReport rep;
  rep.estimator = "c_estimator_tilde";
  rep.target = TargetKind::true_parameter;
  rep.value = num / den;
  rep.sample_size = n;
  rep.diagnostics["a"] = a;
  rep.diagnostics["b"] = b;
  return rep;
}

EstimateReport c_estimator_tilde(const Trajectory& path,
                                 const OffspringSpec& spec, VarianceAt at,
                                 double ci_level) {
  auto ab = spec.ab_constants();
  if (!ab) {
    throw SpecError("family has no (a, b) constants for c_estimator_tilde");
  }
  auto [a, b] = *ab;
  EstimateReport rep = c_estimator_tilde(path, a, b);
  auto constants = plugin_constants(spec, rep.value, at);
  if (constants) {
    // nu_tilde2 is present whenever (a, b) exist, which they do here.
    rep.variance = *constants->nu_tilde2 / static_cast<double>(rep.sample_size);
    rep.diagnostics["c2"] = constants->c2;
    rep.diagnostics["nu_tilde2"] = *constants->nu_tilde2;
    attach_ci(rep, ci_level);
  } else {
    rep.diagnostics["out_of_range"] = 1.0;
  }
  return rep;
}

CBarEstimate c_estimator_bar(const Trajectory& path) {
  long n = transitions(path);
  double z_bar = 0.0;
  for (long i = 1; i <= n; ++i) z_bar += static_cast<double>(path[i - 1]);
  z_bar /= static_cast<double>(n);
  double num = 0.0;
  double den = 0.0;
  for (long i = 1; i <= n; ++i) {
    double step = static_cast<double>(path[i] - path[i - 1]);
    double dev = static_cast<double>(path[i - 1]) - z_bar;
    num += step * step;
    den += dev * dev;
  }
  if (den == 0.0) {
    throw UndefinedEstimatorError(
        "constant trajectory: sum (Z_{i-1} - Zbar)^2 = 0");
  }
  double m_bar = 1.0 - 0.5 * num / den;
  double sigma2_bar = m_bar * (1.0 - m_bar) * z_bar;
  bool out = !(m_bar > 0.0 && m_bar < 1.0);

  CBarEstimate est;
  est.m.estimator = "c_estimator_bar_m";
  est.m.target = TargetKind::true_parameter;
  est.m.value = m_bar;
  est.m.sample_size = n;
  est.m.diagnostics["z_bar"] = z_bar;
  est.sigma2.estimator = "c_estimator_bar_sigma2";
  est.sigma2.target = TargetKind::true_parameter;
  est.sigma2.value = sigma2_bar;
  est.sigma2.sample_size = n;
  est.sigma2.diagnostics["z_bar"] = z_bar;
  if (out) {
    est.m.diagnostics["out_of_range"] = 1.0;
    est.sigma2.diagnostics["out_of_range"] = 1.0;
  }
  return est;
}

CBarEstimate c_estimator_bar(const Trajectory& path, const OffspringSpec& spec,
                             VarianceAt at, double ci_level) {
  CBarEstimate est = c_estimator_bar(path);
  auto constants = plugin_constants(spec, est.m.value, at);
  if (constants) {
    est.m.variance = constants->nu_bar2 / static_cast<double>(est.m.sample_size);
    est.m.diagnostics["c2"] = constants->c2;
    est.m.diagnostics["B2"] = constants->B2;
    est.m.diagnostics["nu_bar2"] = constants->nu_bar2;
    attach_ci(est.m, ci_level);
  } else if (at == VarianceAt::estimate) {
    est.m.diagnostics["out_of_range"] = 1.0;
  }
  // No interval for sigma2_bar: its asymptotic normality is an open question.
  return est;
}

ImmigrationConstants immigration_constants(const OffspringSpec& spec) {
  if (spec.size_dependent()) {
    throw ConfigError("immigration constants require a constant-mean family");
  }
  double m = spec.mean(1);
  if (!(m < 1.0)) {
    throw SpecError("immigration constants require subcritical m < 1");
  }
  double var = spec.variance(1);
  if (!(var > 0.0)) {
    throw SpecError("immigration constants require a non-degenerate law");
  }

  // Third moments by direct summation; the variance formulas are sensitive
  // enough that the sampling tail cutoff is too loose here.
  double cutoff = std::min(spec.tail_cutoff(), 1e-20);
  std::vector<double> p = spec.pmf(1, cutoff);
  std::vector<double> q = spec.size_biased_pmf(1, cutoff);

  double lambda = var / m + m - 1.0;
  double mu = lambda / (1.0 - m);

  double xi_c3 = 0.0;        // E[(xi - m)^3]
  for (std::size_t k = 0; k < p.size(); ++k) {
    double c = static_cast<double>(k) - m;
    xi_c3 += c * c * c * p[k];
  }
  double sb_mean = 0.0;      // E[SB - 1]
  double sb_var = 0.0;       // V(SB - 1)
  double sb_c3 = 0.0;        // E[(SB - 1 - lambda)^3]
  for (std::size_t k = 1; k < q.size(); ++k) {
    sb_mean += (static_cast<double>(k) - 1.0) * q[k];
  }
  for (std::size_t k = 1; k < q.size(); ++k) {
    double c = static_cast<double>(k) - 1.0 - sb_mean;
    sb_var += c * c * q[k];
    double cl = static_cast<double>(k) - 1.0 - lambda;
    sb_c3 += cl * cl * cl * q[k];
  }

  ImmigrationConstants out;
  out.m = m;
  out.lambda = lambda;
  out.mu = mu;
  out.m_pi = mu + 1.0;
  out.c2 = sb_var + var * mu;
  double c2 = out.c2;
  if (!(c2 > 0.0)) throw NumericError("degenerate c^2 in immigration constants");
  double one_m2 = 1.0 - m * m;
  double one_m3 = 1.0 - m * m * m;
  out.B2 = c2 * c2 / one_m2 +
           var / one_m3 *
               (sb_c3 + mu * xi_c3 + 3.0 * m * var * c2 / one_m2);
  if (auto ab = spec.ab_constants(); ab && ab->first + ab->second > 0.0) {
    double apb = ab->first + ab->second;
    out.nu_tilde2 = c2 * (1.0 - m) * (1.0 - m) / (apb * apb);
  }
  out.nu_bar2 = out.B2 * one_m2 * one_m2 / (c2 * c2);
  return out;
}

OffspringSpec with_mean(const OffspringSpec& spec, double m) {
  switch (spec.family()) {
    case Family::geometric:
      return OffspringSpec::geometric(MeanModel::constant(m),
                                      spec.tail_cutoff());
    case Family::poisson:
      return OffspringSpec::poisson(MeanModel::constant(m),
                                    spec.tail_cutoff());
    case Family::two_point_binary:
    case Family::two_bernoulli:
      return OffspringSpec::two_bernoulli(m);
    case Family::explicit_pmf:
      throw SpecError("cannot rebuild an explicit pmf at a new mean");
  }
  throw SpecError("unknown family");
}

}  // namespace psdbp
