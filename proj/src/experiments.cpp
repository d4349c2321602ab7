#include "psdbp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "psdbp/errors.hpp"
#include "psdbp/estimators.hpp"
#include "psdbp/rng.hpp"
#include "psdbp/stats.hpp"

namespace psdbp {

namespace {

namespace fs = std::filesystem;

std::string cell(const std::optional<double>& x) {
  return x ? format_double(*x) : std::string();
}

std::ofstream open_csv(const fs::path& path, const std::string& header,
                       std::vector<std::string>& files) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << header << "\n";
  files.push_back(path.string());
  return out;
}

double quasi_stationary_tail(const SpectralTriple& triple, long zmax) {
  double tail = 0.0;
  for (std::size_t j = static_cast<std::size_t>(0.8 * static_cast<double>(zmax));
       j < triple.u.size(); ++j) {
    tail += triple.u[j];
  }
  return tail;
}

KernelBundle make_bundle(const ExperimentConfig& cfg) {
  if (cfg.zmax > 0) {
    if (cfg.z0 > cfg.zmax) {
      throw ConfigError("z0 exceeds the configured zmax");
    }
    TruncatedKernel kernel = TruncatedKernel::build(cfg.spec, cfg.zmax);
    SpectralTriple triple = spectral(kernel);
    double tail = quasi_stationary_tail(triple, cfg.zmax);
    return KernelBundle{cfg.zmax, std::move(kernel), std::move(triple), tail};
  }
  return build_adaptive(cfg.spec, cfg.z0);
}

bool needs_bundle(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::spectrum:
    case ExperimentKind::gap_profile:
    case ExperimentKind::histogram_mz:
    case ExperimentKind::coupling_error_table:
      return true;
    default:
      break;
  }
  if (cfg.conditioning.method == ConditioningMethod::hybrid) return true;
  if (cfg.conditioning.method == ConditioningMethod::splitting &&
      cfg.spec.size_dependent()) {
    return true;  // exact block survival instead of a pilot batch
  }
  if (cfg.kind == ExperimentKind::estimate && !cfg.states.empty()) return true;
  return false;
}

long resolve_hybrid_k(const ExperimentConfig& cfg, const KernelBundle& bundle,
                      long n) {
  long k = cfg.conditioning.k;
  if (k == 0) {
    k = default_hybrid_k(bundle.kernel, bundle.triple,
                         cfg.conditioning.target_error);
  }
  return std::min(k, n);
}

Trajectory draw_path(const ExperimentConfig& cfg, const KernelBundle* bundle,
                     const HybridSampler* hybrid, long n, std::uint64_t seed) {
  if (n == 0) return Trajectory{cfg.z0};
  switch (cfg.conditioning.method) {
    case ConditioningMethod::none:
      return simulate(cfg.spec, cfg.z0, n, seed);
    case ConditioningMethod::splitting:
      return simulate_conditioned_splitting(cfg.spec, cfg.z0, n, seed,
                                            bundle ? &bundle->kernel : nullptr);
    case ConditioningMethod::hybrid:
      return hybrid->sample(cfg.z0, n, seed);
  }
  throw ConfigError("unknown conditioning method");
}

json spectral_echo(const KernelBundle& bundle) {
  json j;
  j["zmax"] = bundle.zmax;
  j["rho"] = bundle.triple.rho;
  j["residual"] = bundle.triple.residual;
  j["iterations"] = bundle.triple.iterations;
  j["tail_weight"] = bundle.tail_weight;
  return j;
}

json base_summary(const ExperimentConfig& cfg) {
  json j;
  j["kind"] = experiment_kind_name(cfg.kind);
  j["config"] = cfg.to_json();
  return j;
}

// Horizon grid: explicit list (sorted, deduplicated) or the final horizon.
std::vector<long> horizon_grid(const ExperimentConfig& cfg) {
  std::vector<long> grid = cfg.horizons;
  if (grid.empty()) grid.push_back(cfg.horizon);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

ExperimentResult run_simulate(const ExperimentConfig& cfg) {
  std::optional<KernelBundle> bundle;
  if (needs_bundle(cfg)) bundle = make_bundle(cfg);
  std::optional<HybridSampler> hybrid;
  long hybrid_k = 0;
  if (cfg.conditioning.method == ConditioningMethod::hybrid) {
    hybrid_k = resolve_hybrid_k(cfg, *bundle, cfg.horizon);
    hybrid.emplace(bundle->kernel, bundle->triple, hybrid_k);
  }

  long R = cfg.replications;
  std::vector<Trajectory> paths(static_cast<std::size_t>(R));
  std::vector<TreeSample> trees;
  if (cfg.tree) trees.resize(static_cast<std::size_t>(R));
  parallel_for(R, cfg.threads, [&](long r) {
    std::uint64_t s = substream_seed(cfg.seed, static_cast<std::uint64_t>(r));
    if (cfg.tree) {
      trees[static_cast<std::size_t>(r)] =
          simulate_tree(cfg.spec, cfg.z0, cfg.horizon, s);
      paths[static_cast<std::size_t>(r)] = trees[static_cast<std::size_t>(r)].z;
    } else {
      paths[static_cast<std::size_t>(r)] =
          draw_path(cfg, bundle ? &*bundle : nullptr,
                    hybrid ? &*hybrid : nullptr, cfg.horizon, s);
    }
  });

  ExperimentResult result;
  std::ofstream csv = open_csv(fs::path(cfg.out_dir) / "trajectories.csv",
                               "trajectory_id,generation,population",
                               result.files);
  long survived = 0;
  double final_sum = 0.0;
  for (long r = 0; r < R; ++r) {
    const Trajectory& path = paths[static_cast<std::size_t>(r)];
    for (std::size_t g = 0; g < path.size(); ++g) {
      csv << r << "," << g << "," << path[g] << "\n";
    }
    if (path.back() > 0) ++survived;
    final_sum += static_cast<double>(path.back());
  }
  if (cfg.tree) {
    std::ofstream tcsv = open_csv(fs::path(cfg.out_dir) / "tree.csv",
                                  "trajectory_id,generation,k,count",
                                  result.files);
    for (long r = 0; r < R; ++r) {
      const TreeSample& tree = trees[static_cast<std::size_t>(r)];
      for (std::size_t g = 0; g < tree.counts.size(); ++g) {
        for (const auto& [k, c] : tree.counts[g]) {
          tcsv << r << "," << g << "," << k << "," << c << "\n";
        }
      }
    }
  }

  json summary = base_summary(cfg);
  summary["survived"] = survived;
  summary["mean_final_population"] = final_sum / static_cast<double>(R);
  if (bundle) summary["spectral"] = spectral_echo(*bundle);
  if (hybrid) {
    summary["hybrid_k"] = hybrid_k;
    summary["error_bound"] = hybrid->error_bound(cfg.horizon);
  }
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_estimate(const ExperimentConfig& cfg) {
  std::optional<KernelBundle> bundle;
  if (needs_bundle(cfg)) bundle = make_bundle(cfg);
  std::optional<HybridSampler> hybrid;
  long hybrid_k = 0;
  if (cfg.conditioning.method == ConditioningMethod::hybrid) {
    hybrid_k = resolve_hybrid_k(cfg, *bundle, cfg.horizon);
    hybrid.emplace(bundle->kernel, bundle->triple, hybrid_k);
  }

  bool constant = !cfg.spec.size_dependent();
  bool has_ab = cfg.spec.ab_constants().has_value();
  bool binary = cfg.spec.family() == Family::two_point_binary ||
                cfg.spec.family() == Family::two_bernoulli;

  struct Row {
    std::string estimator;
    std::optional<long> z;
    std::optional<double> value;
    std::optional<double> variance;
    std::optional<double> ci_lo, ci_hi;
    long sample_size = 0;
    bool out_of_range = false;
    bool defined = true;
  };
  long R = cfg.replications;
  std::vector<std::vector<Row>> rows(static_cast<std::size_t>(R));

  parallel_for(R, cfg.threads, [&](long r) {
    std::uint64_t s = substream_seed(cfg.seed, static_cast<std::uint64_t>(r));
    Trajectory path = draw_path(cfg, bundle ? &*bundle : nullptr,
                                hybrid ? &*hybrid : nullptr, cfg.horizon, s);
    auto& out = rows[static_cast<std::size_t>(r)];
    auto push = [&out](const std::string& name, std::optional<long> z,
                       const EstimateReport& rep) {
      Row row;
      row.estimator = name;
      row.z = z;
      row.value = rep.value;
      row.variance = rep.variance;
      if (rep.ci) {
        row.ci_lo = rep.ci->first;
        row.ci_hi = rep.ci->second;
      }
      row.sample_size = rep.sample_size;
      row.out_of_range = rep.diagnostics.count("out_of_range") > 0;
      out.push_back(row);
    };
    auto push_undefined = [&out](const std::string& name,
                                 std::optional<long> z) {
      Row row;
      row.estimator = name;
      row.z = z;
      row.defined = false;
      out.push_back(row);
    };

    push("mle_m_gw", std::nullopt, mle_m_gw(path));
    for (long z : cfg.states) {
      try {
        EstimateReport rep =
            (bundle && z <= bundle->zmax)
                ? mle_m_z(path, z, bundle->kernel, bundle->triple, cfg.ci_level)
                : mle_m_z(path, z);
        push("mle_m_z", z, rep);
        if (binary) {
          BinarySplitPlugins plug = binary_split_plugins(rep.value);
          Row row;
          row.z = z;
          row.sample_size = rep.sample_size;
          row.out_of_range = plug.out_of_range;
          row.estimator = "binary_p0";
          row.value = plug.p0;
          out.push_back(row);
          row.estimator = "binary_p2";
          row.value = plug.p2;
          out.push_back(row);
          row.estimator = "binary_sigma2";
          row.value = plug.sigma2;
          out.push_back(row);
        }
      } catch (const UndefinedEstimatorError&) {
        push_undefined("mle_m_z", z);
      }
    }
    if (constant && has_ab) {
      push("c_tilde", std::nullopt,
           c_estimator_tilde(path, cfg.spec, VarianceAt::estimate,
                             cfg.ci_level));
      try {
        CBarEstimate bar = c_estimator_bar(path, cfg.spec,
                                           VarianceAt::estimate, cfg.ci_level);
        push("c_bar_m", std::nullopt, bar.m);
        push("c_bar_sigma2", std::nullopt, bar.sigma2);
      } catch (const UndefinedEstimatorError&) {
        push_undefined("c_bar_m", std::nullopt);
      }
    }
  });

  ExperimentResult result;
  std::ofstream csv = open_csv(
      fs::path(cfg.out_dir) / "estimates.csv",
      "trajectory_id,estimator,z,value,variance,ci_lo,ci_hi,sample_size,"
      "out_of_range",
      result.files);
  struct Agg {
    std::vector<double> values;
    long undefined = 0;
  };
  std::map<std::string, Agg> agg;
  for (long r = 0; r < R; ++r) {
    for (const Row& row : rows[static_cast<std::size_t>(r)]) {
      std::string key =
          row.z ? row.estimator + "@" + std::to_string(*row.z) : row.estimator;
      if (!row.defined) {
        ++agg[key].undefined;
        csv << r << "," << row.estimator << ","
            << (row.z ? std::to_string(*row.z) : "") << ",,,,,0,\n";
        continue;
      }
      agg[key].values.push_back(*row.value);
      csv << r << "," << row.estimator << ","
          << (row.z ? std::to_string(*row.z) : "") << "," << cell(row.value)
          << "," << cell(row.variance) << "," << cell(row.ci_lo) << ","
          << cell(row.ci_hi) << "," << row.sample_size << ","
          << (row.out_of_range ? "1" : "") << "\n";
    }
  }

  json summary = base_summary(cfg);
  json per = json::object();
  for (const auto& [key, a] : agg) {
    json e;
    e["count"] = a.values.size();
    e["undefined"] = a.undefined;
    if (!a.values.empty()) {
      e["mean"] = mean_of(a.values);
      e["sd"] = std::sqrt(variance_of(a.values));
    }
    per[key] = e;
  }
  summary["estimators"] = per;
  if (bundle) summary["spectral"] = spectral_echo(*bundle);
  if (hybrid) {
    summary["hybrid_k"] = hybrid_k;
    summary["error_bound"] = hybrid->error_bound(cfg.horizon);
  }
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_spectrum(const ExperimentConfig& cfg) {
  KernelBundle bundle = make_bundle(cfg);
  ExperimentResult result;
  std::ofstream csv =
      open_csv(fs::path(cfg.out_dir) / "spectrum.csv",
               "z,m,m_up,sigma2_up,u,v,uv", result.files);
  std::vector<double> pi = stationary_law(bundle.triple);
  for (long z = 1; z <= bundle.zmax; ++z) {
    csv << z << "," << format_double(cfg.spec.mean(z)) << ","
        << format_double(m_up(bundle.kernel, bundle.triple, z)) << ","
        << format_double(sigma2_up(bundle.kernel, bundle.triple, z)) << ","
        << format_double(bundle.triple.u[static_cast<std::size_t>(z - 1)])
        << ","
        << format_double(bundle.triple.v[static_cast<std::size_t>(z - 1)])
        << "," << format_double(pi[static_cast<std::size_t>(z - 1)]) << "\n";
  }

  json summary = base_summary(cfg);
  summary["spectral"] = spectral_echo(bundle);
  summary["coupling_limit"] = coupling_limit(bundle.triple);
  json states = json::array();
  for (long z : cfg.states) {
    if (z > bundle.zmax) continue;
    json e;
    e["z"] = z;
    e["m"] = cfg.spec.mean(z);
    e["m_up"] = m_up(bundle.kernel, bundle.triple, z);
    e["sigma2_up"] = sigma2_up(bundle.kernel, bundle.triple, z);
    e["uv"] = bundle.triple.u[static_cast<std::size_t>(z - 1)] *
              bundle.triple.v[static_cast<std::size_t>(z - 1)];
    states.push_back(e);
  }
  summary["states"] = states;
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_gap_profile(const ExperimentConfig& cfg) {
  KernelBundle bundle = make_bundle(cfg);
  std::vector<GapRow> rows = gap_rows(cfg.spec, bundle.kernel, bundle.triple);
  ExperimentResult result;
  std::ofstream csv = open_csv(fs::path(cfg.out_dir) / "gap_profile.csv",
                               "z,m,m_up,gap,uv", result.files);
  for (const GapRow& row : rows) {
    csv << row.z << "," << format_double(row.m) << ","
        << format_double(row.m_up) << "," << format_double(row.gap) << ","
        << format_double(row.uv) << "\n";
  }
  json summary = base_summary(cfg);
  summary["spectral"] = spectral_echo(bundle);
  json states = json::array();
  for (long z : cfg.states) {
    if (z < 1 || z > bundle.zmax) continue;
    const GapRow& row = rows[static_cast<std::size_t>(z - 1)];
    json e;
    e["z"] = z;
    e["gap"] = row.gap;
    e["uv"] = row.uv;
    states.push_back(e);
  }
  summary["states"] = states;
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_histogram_mz(const ExperimentConfig& cfg) {
  if (cfg.states.empty()) {
    throw ConfigError("histogram_mz needs at least one entry in \"states\"");
  }
  KernelBundle bundle = make_bundle(cfg);
  for (long z : cfg.states) {
    if (z < 1 || z > bundle.zmax) {
      throw ConfigError("state z=" + std::to_string(z) +
                        " is outside the truncated kernel");
    }
  }
  std::optional<HybridSampler> hybrid;
  long hybrid_k = 0;
  if (cfg.conditioning.method == ConditioningMethod::hybrid) {
    hybrid_k = resolve_hybrid_k(cfg, bundle, cfg.horizon);
    hybrid.emplace(bundle.kernel, bundle.triple, hybrid_k);
  }

  long n = cfg.horizon;
  std::size_t S = cfg.states.size();
  struct Target {
    double m_up = 0.0;
    double sigma2_up = 0.0;
    double uv = 0.0;
    double scale = 0.0;  // sqrt(n u v / sigma2_up)
  };
  std::vector<Target> targets(S);
  for (std::size_t si = 0; si < S; ++si) {
    long z = cfg.states[si];
    Target& t = targets[si];
    t.m_up = m_up(bundle.kernel, bundle.triple, z);
    t.sigma2_up = sigma2_up(bundle.kernel, bundle.triple, z);
    t.uv = bundle.triple.u[static_cast<std::size_t>(z - 1)] *
           bundle.triple.v[static_cast<std::size_t>(z - 1)];
    t.scale = std::sqrt(static_cast<double>(n) * t.uv / t.sigma2_up);
  }

  struct Obs {
    double m_hat = 0.0;
    double standardized = 0.0;
    long visits = 0;
    bool defined = false;
  };
  long R = cfg.replications;
  std::vector<Obs> obs(static_cast<std::size_t>(R) * S);
  parallel_for(R, cfg.threads, [&](long r) {
    std::uint64_t s = substream_seed(cfg.seed, static_cast<std::uint64_t>(r));
    Trajectory path =
        draw_path(cfg, &bundle, hybrid ? &*hybrid : nullptr, n, s);
    for (std::size_t si = 0; si < S; ++si) {
      Obs& o = obs[static_cast<std::size_t>(r) * S + si];
      try {
        EstimateReport rep = mle_m_z(path, cfg.states[si]);
        o.m_hat = rep.value;
        o.visits = rep.sample_size;
        o.standardized = targets[si].scale * (rep.value - targets[si].m_up);
        o.defined = true;
      } catch (const UndefinedEstimatorError&) {
        o.defined = false;
      }
    }
  });

  ExperimentResult result;
  std::ofstream csv =
      open_csv(fs::path(cfg.out_dir) / "histogram.csv",
               "trajectory_id,z,visits,m_hat,standardized", result.files);
  for (long r = 0; r < R; ++r) {
    for (std::size_t si = 0; si < S; ++si) {
      const Obs& o = obs[static_cast<std::size_t>(r) * S + si];
      csv << r << "," << cfg.states[si] << "," << o.visits << ",";
      if (o.defined) {
        csv << format_double(o.m_hat) << "," << format_double(o.standardized);
      } else {
        csv << ",";
      }
      csv << "\n";
    }
  }

  json summary = base_summary(cfg);
  summary["spectral"] = spectral_echo(bundle);
  if (hybrid) {
    summary["hybrid_k"] = hybrid_k;
    summary["error_bound"] = hybrid->error_bound(n);
  }
  json states = json::array();
  for (std::size_t si = 0; si < S; ++si) {
    std::vector<double> vals;
    std::vector<double> std_vals;
    long undefined = 0;
    for (long r = 0; r < R; ++r) {
      const Obs& o = obs[static_cast<std::size_t>(r) * S + si];
      if (!o.defined) {
        ++undefined;
        continue;
      }
      vals.push_back(o.m_hat);
      std_vals.push_back(o.standardized);
    }
    json e;
    long z = cfg.states[si];
    e["z"] = z;
    e["m"] = cfg.spec.mean(z);
    e["m_up"] = targets[si].m_up;
    e["sigma2_up"] = targets[si].sigma2_up;
    e["uv"] = targets[si].uv;
    e["count"] = vals.size();
    e["undefined"] = undefined;
    if (!vals.empty()) {
      e["mean_m_hat"] = mean_of(vals);
      KsResult ks = ks_test_normal(std_vals);
      e["ks_statistic"] = ks.statistic;
      e["ks_p_value"] = ks.p_value;
    }
    states.push_back(e);
  }
  summary["states"] = states;
  json corr = json::array();
  for (std::size_t a = 0; a < S; ++a) {
    for (std::size_t b = a + 1; b < S; ++b) {
      std::vector<double> xa, xb;
      for (long r = 0; r < R; ++r) {
        const Obs& oa = obs[static_cast<std::size_t>(r) * S + a];
        const Obs& ob = obs[static_cast<std::size_t>(r) * S + b];
        if (!oa.defined || !ob.defined) continue;
        xa.push_back(oa.standardized);
        xb.push_back(ob.standardized);
      }
      if (xa.size() < 2) continue;
      json e;
      e["z1"] = cfg.states[a];
      e["z2"] = cfg.states[b];
      e["corr"] = correlation_of(xa, xb);
      e["pairs"] = xa.size();
      corr.push_back(e);
    }
  }
  summary["correlations"] = corr;
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_gw_drift(const ExperimentConfig& cfg) {
  std::optional<KernelBundle> bundle;
  if (needs_bundle(cfg)) bundle = make_bundle(cfg);
  std::vector<long> grid = horizon_grid(cfg);
  long auto_k = 0;
  if (cfg.conditioning.method == ConditioningMethod::hybrid &&
      cfg.conditioning.k == 0) {
    auto_k = default_hybrid_k(bundle->kernel, bundle->triple,
                              cfg.conditioning.target_error);
  }
  std::vector<std::optional<HybridSampler>> samplers(grid.size());
  if (cfg.conditioning.method == ConditioningMethod::hybrid) {
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      long k = cfg.conditioning.k > 0 ? cfg.conditioning.k : auto_k;
      samplers[gi].emplace(bundle->kernel, bundle->triple,
                           std::min(k, grid[gi]));
    }
  }

  long R = cfg.replications;
  long count = static_cast<long>(grid.size()) * R;
  std::vector<double> m_hat(static_cast<std::size_t>(count));
  parallel_for(count, cfg.threads, [&](long i) {
    std::size_t gi = static_cast<std::size_t>(i / R);
    std::uint64_t s = substream_seed(cfg.seed, static_cast<std::uint64_t>(i));
    Trajectory path = draw_path(cfg, bundle ? &*bundle : nullptr,
                                samplers[gi] ? &*samplers[gi] : nullptr,
                                grid[gi], s);
    m_hat[static_cast<std::size_t>(i)] = mle_m_gw(path).value;
  });

  ExperimentResult result;
  std::ofstream csv = open_csv(fs::path(cfg.out_dir) / "drift.csv",
                               "n,trajectory_id,m_hat", result.files);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    for (long r = 0; r < R; ++r) {
      csv << grid[gi] << "," << r << ","
          << format_double(m_hat[gi * static_cast<std::size_t>(R) +
                                 static_cast<std::size_t>(r)])
          << "\n";
    }
  }

  json summary = base_summary(cfg);
  if (bundle) summary["spectral"] = spectral_echo(*bundle);
  json per = json::array();
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<double> vals(
        m_hat.begin() + static_cast<long>(gi) * R,
        m_hat.begin() + static_cast<long>(gi + 1) * R);
    json e;
    e["n"] = grid[gi];
    e["mean_m_hat"] = mean_of(vals);
    e["sd"] = std::sqrt(variance_of(vals));
    per.push_back(e);
  }
  summary["per_horizon"] = per;
  summary["final_mean_m_hat"] = per.back()["mean_m_hat"];
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_estimator_comparison(const ExperimentConfig& cfg) {
  if (cfg.spec.size_dependent()) {
    throw ConfigError("estimator_comparison requires a constant-mean family");
  }
  auto ab = cfg.spec.ab_constants();
  if (!ab) {
    throw ConfigError(
        "estimator_comparison requires a family with (a, b) constants");
  }
  double a = ab->first;
  double b = ab->second;
  double m_true = cfg.spec.mean(1);
  double sigma2_true = cfg.spec.variance(1);

  std::optional<KernelBundle> bundle;
  if (needs_bundle(cfg)) bundle = make_bundle(cfg);
  std::vector<long> grid = horizon_grid(cfg);
  long auto_k = 0;
  if (cfg.conditioning.method == ConditioningMethod::hybrid &&
      cfg.conditioning.k == 0) {
    auto_k = default_hybrid_k(bundle->kernel, bundle->triple,
                              cfg.conditioning.target_error);
  }
  std::vector<std::optional<HybridSampler>> samplers(grid.size());
  if (cfg.conditioning.method == ConditioningMethod::hybrid) {
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      long k = cfg.conditioning.k > 0 ? cfg.conditioning.k : auto_k;
      samplers[gi].emplace(bundle->kernel, bundle->triple,
                           std::min(k, grid[gi]));
    }
  }

  struct Obs {
    double m_hat = 0.0;
    double m_tilde = 0.0;
    double m_bar = 0.0;
    double sigma2_bar = 0.0;
    bool bar_defined = false;
    bool bar_out_of_range = false;
  };
  long R = cfg.replications;
  long count = static_cast<long>(grid.size()) * R;
  std::vector<Obs> obs(static_cast<std::size_t>(count));
  parallel_for(count, cfg.threads, [&](long i) {
    std::size_t gi = static_cast<std::size_t>(i / R);
    std::uint64_t s = substream_seed(cfg.seed, static_cast<std::uint64_t>(i));
    Trajectory path = draw_path(cfg, bundle ? &*bundle : nullptr,
                                samplers[gi] ? &*samplers[gi] : nullptr,
                                grid[gi], s);
    Obs& o = obs[static_cast<std::size_t>(i)];
    o.m_hat = mle_m_gw(path).value;
    o.m_tilde = c_estimator_tilde(path, a, b).value;
    try {
      CBarEstimate bar = c_estimator_bar(path);
      o.m_bar = bar.m.value;
      o.sigma2_bar = bar.sigma2.value;
      o.bar_defined = true;
      o.bar_out_of_range = bar.m.diagnostics.count("out_of_range") > 0;
    } catch (const UndefinedEstimatorError&) {
      o.bar_defined = false;
    }
  });

  ExperimentResult result;
  std::ofstream csv = open_csv(
      fs::path(cfg.out_dir) / "comparison.csv",
      "n,trajectory_id,m_hat,m_tilde,m_bar,sigma2_bar,m_bar_out_of_range",
      result.files);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    for (long r = 0; r < R; ++r) {
      const Obs& o = obs[gi * static_cast<std::size_t>(R) +
                         static_cast<std::size_t>(r)];
      csv << grid[gi] << "," << r << "," << format_double(o.m_hat) << ","
          << format_double(o.m_tilde) << ",";
      if (o.bar_defined) {
        csv << format_double(o.m_bar) << "," << format_double(o.sigma2_bar)
            << "," << (o.bar_out_of_range ? "1" : "");
      } else {
        csv << ",,";
      }
      csv << "\n";
    }
  }

  json summary = base_summary(cfg);
  summary["true_m"] = m_true;
  summary["true_sigma2"] = sigma2_true;
  if (bundle) summary["spectral"] = spectral_echo(*bundle);
  json per = json::array();
  auto mse = [](const std::vector<double>& xs, double target) {
    double s = 0.0;
    for (double x : xs) s += (x - target) * (x - target);
    return s / static_cast<double>(xs.size());
  };
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<double> hat, tilde, bar, s2;
    long undefined = 0;
    for (long r = 0; r < R; ++r) {
      const Obs& o = obs[gi * static_cast<std::size_t>(R) +
                         static_cast<std::size_t>(r)];
      hat.push_back(o.m_hat);
      tilde.push_back(o.m_tilde);
      if (o.bar_defined) {
        bar.push_back(o.m_bar);
        s2.push_back(o.sigma2_bar);
      } else {
        ++undefined;
      }
    }
    json e;
    e["n"] = grid[gi];
    e["mean_m_hat"] = mean_of(hat);
    e["mean_m_tilde"] = mean_of(tilde);
    e["mse_m_hat"] = mse(hat, m_true);
    e["mse_m_tilde"] = mse(tilde, m_true);
    e["bar_undefined"] = undefined;
    if (!bar.empty()) {
      e["mean_m_bar"] = mean_of(bar);
      e["mse_m_bar"] = mse(bar, m_true);
      e["mean_sigma2_bar"] = mean_of(s2);
    }
    per.push_back(e);
  }
  summary["per_horizon"] = per;
  result.summary = std::move(summary);
  return result;
}

ExperimentResult run_coupling_error_table(const ExperimentConfig& cfg) {
  KernelBundle bundle = make_bundle(cfg);
  std::vector<double> curve =
      coupling_error_curve(bundle.kernel, bundle.triple, cfg.kmax);
  ExperimentResult result;
  std::ofstream csv = open_csv(fs::path(cfg.out_dir) / "coupling.csv", "k,d",
                               result.files);
  for (std::size_t k = 0; k < curve.size(); ++k) {
    csv << k << "," << format_double(curve[k]) << "\n";
  }

  json summary = base_summary(cfg);
  summary["spectral"] = spectral_echo(bundle);
  summary["coupling_limit"] = coupling_limit(bundle.triple);
  summary["d_final"] = curve.back();
  json default_k = nullptr;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve[k] < cfg.conditioning.target_error) {
      default_k = k;
      break;
    }
  }
  summary["default_k"] = default_k;
  result.summary = std::move(summary);
  return result;
}

}  // namespace

std::string conditioning_method_name(ConditioningMethod m) {
  switch (m) {
    case ConditioningMethod::none:
      return "none";
    case ConditioningMethod::splitting:
      return "splitting";
    case ConditioningMethod::hybrid:
      return "hybrid";
  }
  return "none";
}

ConditioningMethod conditioning_method_from_name(const std::string& name) {
  if (name == "none") return ConditioningMethod::none;
  if (name == "splitting") return ConditioningMethod::splitting;
  if (name == "hybrid") return ConditioningMethod::hybrid;
  throw ConfigError("unknown conditioning method: " + name);
}

std::string experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::simulate:
      return "simulate";
    case ExperimentKind::estimate:
      return "estimate";
    case ExperimentKind::spectrum:
      return "spectrum";
    case ExperimentKind::gap_profile:
      return "gap_profile";
    case ExperimentKind::histogram_mz:
      return "histogram_mz";
    case ExperimentKind::gw_drift:
      return "gw_drift";
    case ExperimentKind::estimator_comparison:
      return "estimator_comparison";
    case ExperimentKind::coupling_error_table:
      return "coupling_error_table";
  }
  return "simulate";
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "simulate") return ExperimentKind::simulate;
  if (name == "estimate") return ExperimentKind::estimate;
  if (name == "spectrum") return ExperimentKind::spectrum;
  if (name == "gap_profile") return ExperimentKind::gap_profile;
  if (name == "histogram_mz") return ExperimentKind::histogram_mz;
  if (name == "gw_drift") return ExperimentKind::gw_drift;
  if (name == "estimator_comparison") return ExperimentKind::estimator_comparison;
  if (name == "coupling_error_table") return ExperimentKind::coupling_error_table;
  throw ConfigError("unknown experiment kind: " + name);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::set<std::string> known = {
      "kind",  "spec",     "z0",      "horizon", "replications",
      "conditioning", "states", "horizons", "kmax", "zmax",
      "threads", "seed", "out_dir", "tree", "ci_level"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("unknown config field: " + item.key());
    }
  }
  ExperimentConfig c;
  if (!j.contains("kind")) throw ConfigError("config needs a \"kind\" field");
  c.kind = experiment_kind_from_name(j.at("kind").get<std::string>());
  if (!j.contains("spec")) throw ConfigError("config needs a \"spec\" field");
  c.spec = spec_from_json(j.at("spec"));
  c.z0 = j.value("z0", 1L);
  c.horizon = j.value("horizon", 100L);
  c.replications = j.value("replications", 1L);
  if (j.contains("conditioning")) {
    const json& jc = j.at("conditioning");
    static const std::set<std::string> cknown = {"method", "k", "target_error"};
    for (const auto& item : jc.items()) {
      if (!cknown.count(item.key())) {
        throw ConfigError("unknown conditioning field: " + item.key());
      }
    }
    if (!jc.contains("method")) {
      throw ConfigError("conditioning needs a \"method\" field");
    }
    c.conditioning.method =
        conditioning_method_from_name(jc.at("method").get<std::string>());
    c.conditioning.k = jc.value("k", 0L);
    c.conditioning.target_error = jc.value("target_error", 1e-6);
  }
  c.states = j.value("states", std::vector<long>{});
  c.horizons = j.value("horizons", std::vector<long>{});
  c.kmax = j.value("kmax", 500L);
  c.zmax = j.value("zmax", 0L);
  c.threads = j.value("threads", 0);
  c.seed = j.value("seed", static_cast<std::uint64_t>(1));
  c.out_dir = j.value("out_dir", std::string("out"));
  c.tree = j.value("tree", false);
  c.ci_level = j.value("ci_level", 0.95);
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["kind"] = experiment_kind_name(kind);
  j["spec"] = spec_to_json(spec);
  j["z0"] = z0;
  j["horizon"] = horizon;
  j["replications"] = replications;
  json jc;
  jc["method"] = conditioning_method_name(conditioning.method);
  jc["k"] = conditioning.k;
  jc["target_error"] = conditioning.target_error;
  j["conditioning"] = jc;
  j["states"] = states;
  j["horizons"] = horizons;
  j["kmax"] = kmax;
  j["zmax"] = zmax;
  j["threads"] = threads;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["tree"] = tree;
  j["ci_level"] = ci_level;
  return j;
}

void ExperimentConfig::validate() const {
  if (z0 < 1) throw ConfigError("z0 must be >= 1");
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (conditioning.k < 0) throw ConfigError("conditioning.k must be >= 0");
  if (!(conditioning.target_error > 0.0)) {
    throw ConfigError("conditioning.target_error must be > 0");
  }
  if (kmax < 0) throw ConfigError("kmax must be >= 0");
  if (zmax < 0) throw ConfigError("zmax must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (!(ci_level > 0.0 && ci_level < 1.0)) {
    throw ConfigError("ci_level must lie in (0, 1)");
  }
  for (long z : states) {
    if (z < 1) throw ConfigError("states entries must be >= 1");
  }
  for (long n : horizons) {
    if (n < 1) throw ConfigError("horizons entries must be >= 1");
  }
  switch (kind) {
    case ExperimentKind::estimate:
    case ExperimentKind::histogram_mz:
    case ExperimentKind::gw_drift:
    case ExperimentKind::estimator_comparison:
      if (horizon < 1 && horizons.empty()) {
        throw ConfigError("estimation experiments need horizon >= 1");
      }
      break;
    default:
      break;
  }
  if (tree) {
    if (kind != ExperimentKind::simulate) {
      throw ConfigError("tree output is only available for kind \"simulate\"");
    }
    if (conditioning.method != ConditioningMethod::none) {
      throw ConfigError("tree samples are unconditioned; use method \"none\"");
    }
  }
}

std::vector<GapRow> gap_rows(const OffspringSpec& spec,
                             const TruncatedKernel& kernel,
                             const SpectralTriple& triple) {
  std::vector<double> pi = stationary_law(triple);
  std::vector<GapRow> rows;
  rows.reserve(static_cast<std::size_t>(kernel.zmax()));
  for (long z = 1; z <= kernel.zmax(); ++z) {
    GapRow row;
    row.z = z;
    row.m = spec.mean(z);
    row.m_up = m_up(kernel, triple, z);
    row.gap = row.m_up - row.m;
    row.uv = pi[static_cast<std::size_t>(z - 1)];
    rows.push_back(row);
  }
  return rows;
}

void parallel_for(long count, int threads,
                  const std::function<void(long)>& fn) {
  if (count <= 0) return;
  long t = threads;
  if (t <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    t = hw ? static_cast<long>(hw) : 1;
  }
  t = std::min(t, count);
  if (t <= 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::exception_ptr error;
  auto work = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      long i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  for (long i = 0; i < t; ++i) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  ExperimentResult result;
  switch (config.kind) {
    case ExperimentKind::simulate:
      result = run_simulate(config);
      break;
    case ExperimentKind::estimate:
      result = run_estimate(config);
      break;
    case ExperimentKind::spectrum:
      result = run_spectrum(config);
      break;
    case ExperimentKind::gap_profile:
      result = run_gap_profile(config);
      break;
    case ExperimentKind::histogram_mz:
      result = run_histogram_mz(config);
      break;
    case ExperimentKind::gw_drift:
      result = run_gw_drift(config);
      break;
    case ExperimentKind::estimator_comparison:
      result = run_estimator_comparison(config);
      break;
    case ExperimentKind::coupling_error_table:
      result = run_coupling_error_table(config);
      break;
  }
  std::string summary_path =
      (fs::path(config.out_dir) / "summary.json").string();
  write_json_file(summary_path, result.summary);
  result.files.insert(result.files.begin(), summary_path);
  return result;
}

}  // namespace psdbp
