#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psdbp/io.hpp"
#include "psdbp/offspring.hpp"
#include "psdbp/qprocess.hpp"
#include "psdbp/simulate.hpp"

namespace psdbp {

enum class ConditioningMethod { none, splitting, hybrid };

std::string conditioning_method_name(ConditioningMethod m);
ConditioningMethod conditioning_method_from_name(const std::string& name);

struct Conditioning {
  ConditioningMethod method = ConditioningMethod::none;
  long k = 0;                  // hybrid switch point; 0 = auto, clamped to n
  double target_error = 1e-6;  // d(k) target for the auto choice
};

enum class ExperimentKind {
  simulate,
  estimate,
  spectrum,
  gap_profile,
  histogram_mz,
  gw_drift,
  estimator_comparison,
  coupling_error_table,
};

std::string experiment_kind_name(ExperimentKind k);
ExperimentKind experiment_kind_from_name(const std::string& name);

// One config drives one experiment run; from_json validates and rejects
// unknown fields. Outputs are a per-replication CSV plus summary.json, and
// are byte-identical across reruns with the same config and seed.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;
  OffspringSpec spec = OffspringSpec::geometric(MeanModel::constant(0.5));
  long z0 = 1;
  long horizon = 100;
  long replications = 1;
  Conditioning conditioning;
  std::vector<long> states;    // states for per-state estimators / echoes
  std::vector<long> horizons;  // horizon grid (gw_drift, estimator_comparison)
  long kmax = 500;             // d(k) curve length (coupling_error_table)
  long zmax = 0;               // kernel truncation; 0 = adaptive
  int threads = 0;             // worker pool size; 0 = all cores
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool tree = false;           // also emit family-tree tallies (simulate)
  double ci_level = 0.95;

  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
};

struct ExperimentResult {
  json summary;                    // contents of summary.json
  std::vector<std::string> files;  // files written, summary.json first
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Per-state rows behind the gap_profile kind: the Q-process mean shift
// m_up(z) - m(z) against the stationary weight u_z v_z.
struct GapRow {
  long z = 0;
  double m = 0.0;
  double m_up = 0.0;
  double gap = 0.0;
  double uv = 0.0;
};
std::vector<GapRow> gap_rows(const OffspringSpec& spec,
                             const TruncatedKernel& kernel,
                             const SpectralTriple& triple);

// fn(i) for i = 0..count-1 on a worker pool. Callers index results by i, so
// outputs do not depend on the thread count; the first exception rethrows.
void parallel_for(long count, int threads,
                  const std::function<void(long)>& fn);

}  // namespace psdbp
