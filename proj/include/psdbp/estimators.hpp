#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "psdbp/offspring.hpp"
#include "psdbp/qprocess.hpp"
#include "psdbp/simulate.hpp"

namespace psdbp {

// What the estimator converges to on survival-conditioned data: the true
// offspring parameter, or its Q-process analogue (e.g. m_up(z) instead of
// m(z)).
enum class TargetKind { true_parameter, q_process_analogue };

std::string target_kind_name(TargetKind kind);

// Point estimate with optional asymptotic variance (of the estimator itself,
// i.e. already divided by the sample length) and normal confidence interval.
// Out-of-range values are reported raw with diagnostics["out_of_range"] = 1,
// never clamped; variance plug-ins are then omitted.
struct EstimateReport {
  std::string estimator;
  double value = 0.0;
  TargetKind target = TargetKind::true_parameter;
  std::optional<double> variance;
  std::optional<std::pair<double, double>> ci;
  double ci_level = 0.95;
  long sample_size = 0;  // j_n(z) for state-wise estimators, n otherwise
  std::map<std::string, double> diagnostics;
};

std::pair<double, double> confidence_interval(double value, double variance,
                                              double level = 0.95);
// Throws UndefinedEstimatorError when the report has no variance.
std::pair<double, double> confidence_interval(const EstimateReport& report,
                                              double level = 0.95);

// State-wise mean MLE: sum of Z_i over visits to z, divided by z * visits.
// Throws UndefinedEstimatorError when z is never visited before the horizon.
EstimateReport mle_m_z(const Trajectory& path, long z);

// Same, with the Q-process asymptotics filled in: variance
// sigma2_up(z) / (n u_z v_z) and a normal CI.
EstimateReport mle_m_z(const Trajectory& path, long z,
                       const TruncatedKernel& kernel,
                       const SpectralTriple& triple, double ci_level = 0.95);

// Classical GW mean MLE sum Z_i / sum Z_{i-1}.
EstimateReport mle_m_gw(const Trajectory& path);

// Full-tree offspring law estimate at state z:
// p_k(z) = sum over visits of Z_i(k) / (visits * z).
EstimateReport mle_pk(const TreeSample& tree, long z, long k);
// All observed k at once; the values sum to one exactly.
struct PkEstimate {
  std::map<long, double> p;
  long visits = 0;
};
PkEstimate mle_pk_all(const TreeSample& tree, long z);

// Binary-splitting plug-ins from the state-wise mean MLE:
// p0 = 1 - m/2, p2 = m/2, sigma2 = 2 m (1 - m).
struct BinarySplitPlugins {
  double m_hat = 0.0;
  double p0 = 0.0;
  double p2 = 0.0;
  double sigma2 = 0.0;
  bool out_of_range = false;  // m outside [0, 2]
};
BinarySplitPlugins binary_split_plugins(const Trajectory& path, long z);
BinarySplitPlugins binary_split_plugins(double m_hat);

// Whether variance plug-ins are evaluated at the estimated mean (rebuilding
// the family at that mean) or at the spec's true parameters.
enum class VarianceAt { estimate, truth };

// C-consistent estimator sum (Z_i - b) / sum (Z_{i-1} + a). The bare overload
// reports the value only; the spec-aware overload derives (a, b) from the
// family and adds variance nu_tilde2 / n plus a CI when the plug-in mean lies
// in (0, 1).
EstimateReport c_estimator_tilde(const Trajectory& path, double a, double b);
EstimateReport c_estimator_tilde(const Trajectory& path,
                                 const OffspringSpec& spec,
                                 VarianceAt at = VarianceAt::estimate,
                                 double ci_level = 0.95);

// Family-free C-consistent estimator
// m = 1 - (1/2) sum (Z_i - Z_{i-1})^2 / sum (Z_{i-1} - Zbar)^2
// and its variance companion sigma2 = m (1 - m) Zbar. Out-of-range values
// (m outside (0,1)) are flagged, never clamped.
struct CBarEstimate {
  EstimateReport m;
  EstimateReport sigma2;
};
CBarEstimate c_estimator_bar(const Trajectory& path);
CBarEstimate c_estimator_bar(const Trajectory& path, const OffspringSpec& spec,
                             VarianceAt at = VarianceAt::estimate,
                             double ci_level = 0.95);

// Constants of the immigration representation of the Q-process of a
// subcritical constant-mean spec (offspring xi, immigration SB(xi) - 1):
// lambda = V/m + m - 1, mu = lambda/(1-m), m_pi = mu + 1, plus the CLT
// constants c2, B2 and the estimator variances nu_tilde2 (needs (a, b)) and
// nu_bar2.
struct ImmigrationConstants {
  double m = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double m_pi = 0.0;
  double c2 = 0.0;
  double B2 = 0.0;
  std::optional<double> nu_tilde2;
  double nu_bar2 = 0.0;
};
ImmigrationConstants immigration_constants(const OffspringSpec& spec);

// Rebuild the same family with constant mean m (variance plug-ins).
OffspringSpec with_mean(const OffspringSpec& spec, double m);

}  // namespace psdbp
