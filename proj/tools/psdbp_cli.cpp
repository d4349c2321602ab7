#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psdbp/errors.hpp"
#include "psdbp/experiments.hpp"

namespace {

using namespace psdbp;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<long> zmax;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "master seed (overrides config)");
  cmd->add_option("--out", ov.out, "output directory (overrides config)");
  cmd->add_option("--threads", ov.threads,
                  "worker pool size; 0 = all cores (overrides config)");
  cmd->add_option("--zmax", ov.zmax,
                  "kernel truncation; 0 = adaptive (overrides config)");
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.out) cfg.out_dir = *ov.out;
  if (ov.threads) cfg.threads = *ov.threads;
  if (ov.zmax) cfg.zmax = *ov.zmax;
  cfg.validate();
}

// Each subcommand accepts a family of experiment kinds; the first one is the
// default when the config has no "kind" field.
ExperimentConfig load_config(const std::string& path,
                             std::vector<ExperimentKind> allowed) {
  json j = load_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  if (!j.contains("kind")) j["kind"] = experiment_kind_name(allowed.front());
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  for (ExperimentKind k : allowed) {
    if (cfg.kind == k) return cfg;
  }
  throw ConfigError("config kind \"" + experiment_kind_name(cfg.kind) +
                    "\" does not belong to this subcommand");
}

int run_and_report(const ExperimentConfig& cfg) {
  ExperimentResult result = run_experiment(cfg);
  for (const std::string& f : result.files) std::cout << "wrote " << f << "\n";
  return 0;
}

ExperimentConfig preset(const std::string& figure) {
  ExperimentConfig cfg;
  cfg.seed = 20260815;
  cfg.conditioning.method = ConditioningMethod::hybrid;
  cfg.out_dir = "out/" + figure;
  OffspringSpec ricker =
      OffspringSpec::two_point_binary(MeanModel::ricker(1.2, 30.0));
  OffspringSpec geom08 = OffspringSpec::geometric(MeanModel::constant(0.8));
  OffspringSpec geom09 = OffspringSpec::geometric(MeanModel::constant(0.9));
  if (figure == "fig2" || figure == "fig4") {
    cfg.kind = ExperimentKind::histogram_mz;
    cfg.spec = ricker;
    cfg.z0 = 30;
    cfg.horizon = 2000;
    cfg.replications = 500;
    cfg.states = {figure == "fig2" ? 28L : 8L};
    return cfg;
  }
  if (figure == "fig3") {
    cfg.kind = ExperimentKind::gap_profile;
    cfg.spec = ricker;
    cfg.z0 = 30;
    cfg.conditioning.method = ConditioningMethod::none;
    cfg.states = {8, 28};
    return cfg;
  }
  if (figure == "fig5") {
    cfg.kind = ExperimentKind::gw_drift;
    cfg.spec = geom09;
    cfg.z0 = 100;
    cfg.horizon = 1000;
    cfg.horizons = {10, 25, 50, 100, 200, 400, 700, 1000};
    cfg.replications = 100;
    return cfg;
  }
  if (figure == "fig6") {
    cfg.kind = ExperimentKind::estimator_comparison;
    cfg.spec = geom08;
    cfg.z0 = 100;
    cfg.horizon = 1000;
    cfg.horizons = {50, 100, 200, 400, 700, 1000};
    cfg.replications = 200;
    return cfg;
  }
  if (figure == "fig7") {
    cfg.kind = ExperimentKind::estimator_comparison;
    cfg.spec = geom08;
    cfg.z0 = 100;
    cfg.horizon = 100;
    cfg.horizons = {10, 20, 30, 40, 60, 80, 100};
    cfg.replications = 500;
    cfg.conditioning.k = 100;  // k >= n on the whole grid: exact conditioning
    return cfg;
  }
  throw ConfigError("unknown figure \"" + figure +
                    "\" (expected fig2..fig7)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"branching processes conditioned on survival: simulation, "
               "Q-process spectra, and estimator experiments"};
  app.require_subcommand(1);

  std::function<int()> action;

  struct Sub {
    const char* name;
    const char* help;
    std::vector<ExperimentKind> kinds;
  };
  const std::vector<Sub> subs = {
      {"simulate", "simulate trajectories (optionally conditioned on survival)",
       {ExperimentKind::simulate}},
      {"estimate",
       "run estimators over replicated trajectories "
       "(kinds: estimate, histogram_mz, gw_drift, estimator_comparison)",
       {ExperimentKind::estimate, ExperimentKind::histogram_mz,
        ExperimentKind::gw_drift, ExperimentKind::estimator_comparison}},
      {"spectrum",
       "quasi-stationary spectrum of the truncated kernel "
       "(kinds: spectrum, gap_profile)",
       {ExperimentKind::spectrum, ExperimentKind::gap_profile}},
      {"coupling-error", "total-variation error table d(k) of the Q-process "
                         "approximation",
       {ExperimentKind::coupling_error_table}},
  };
  // Stable storage: CLI11 keeps pointers to the flag targets.
  std::vector<std::unique_ptr<std::string>> config_paths;
  std::vector<std::unique_ptr<Overrides>> override_blocks;
  for (const Sub& sub : subs) {
    CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
    config_paths.push_back(std::make_unique<std::string>());
    override_blocks.push_back(std::make_unique<Overrides>());
    std::string* path = config_paths.back().get();
    Overrides* ov = override_blocks.back().get();
    cmd->add_option("--config", *path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    add_override_flags(cmd, *ov);
    std::vector<ExperimentKind> kinds = sub.kinds;
    cmd->callback([&action, path, ov, kinds] {
      action = [path, ov, kinds] {
        ExperimentConfig cfg = load_config(*path, kinds);
        apply_overrides(cfg, *ov);
        return run_and_report(cfg);
      };
    });
  }

  CLI::App* rep = app.add_subcommand(
      "reproduce", "run a desk-scale preset of one of the figures fig2..fig7");
  std::string figure;
  auto rep_ov = std::make_unique<Overrides>();
  rep->add_option("figure", figure, "figure name (fig2..fig7)")->required();
  add_override_flags(rep, *rep_ov);
  Overrides* rep_ov_ptr = rep_ov.get();
  rep->callback([&action, &figure, rep_ov_ptr] {
    action = [&figure, rep_ov_ptr] {
      ExperimentConfig cfg = preset(figure);
      apply_overrides(cfg, *rep_ov_ptr);
      return run_and_report(cfg);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return action ? action() : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
