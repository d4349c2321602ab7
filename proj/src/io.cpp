#include "psdbp/io.hpp"

#include <cstdio>
#include <fstream>

#include "psdbp/errors.hpp"

namespace psdbp {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  // Prefer the shorter form when it already round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, x);
    double back = 0.0;
    std::sscanf(probe, "%lf", &back);
    if (back == x) return probe;
  }
  return buf;
}

json mean_model_to_json(const MeanModel& mm) {
  json j;
  j["kind"] = mm.name();
  switch (mm.kind) {
    case MeanModel::Kind::constant:
      j["m"] = mm.m;
      break;
    case MeanModel::Kind::ricker:
      j["r"] = mm.r;
      j["K"] = mm.K;
      break;
    case MeanModel::Kind::beverton_holt:
      j["K"] = mm.K;
      break;
  }
  return j;
}

MeanModel mean_model_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) {
    throw ConfigError("mean_model needs a \"kind\" field");
  }
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    if (!j.contains("m")) throw ConfigError("constant mean_model needs \"m\"");
    return MeanModel::constant(j.at("m").get<double>());
  }
  if (kind == "ricker") {
    if (!j.contains("r") || !j.contains("K")) {
      throw ConfigError("ricker mean_model needs \"r\" and \"K\"");
    }
    return MeanModel::ricker(j.at("r").get<double>(), j.at("K").get<double>());
  }
  if (kind == "beverton_holt") {
    if (!j.contains("K")) throw ConfigError("beverton_holt mean_model needs \"K\"");
    return MeanModel::beverton_holt(j.at("K").get<double>());
  }
  throw ConfigError("unknown mean_model kind: " + kind);
}

json spec_to_json(const OffspringSpec& spec) {
  json j;
  j["family"] = family_name(spec.family());
  switch (spec.family()) {
    case Family::geometric:
    case Family::poisson:
      j["mean_model"] = mean_model_to_json(spec.mean_model());
      j["tail_cutoff"] = spec.tail_cutoff();
      break;
    case Family::two_point_binary:
      j["mean_model"] = mean_model_to_json(spec.mean_model());
      j["reachability_bound"] = spec.reachability_bound();
      break;
    case Family::two_bernoulli:
      j["mean_model"] = mean_model_to_json(spec.mean_model());
      break;
    case Family::explicit_pmf:
      j["p"] = spec.explicit_probabilities();
      break;
  }
  return j;
}

OffspringSpec spec_from_json(const json& j) {
  if (!j.is_object() || !j.contains("family")) {
    throw ConfigError("spec needs a \"family\" field");
  }
  Family family = family_from_name(j.at("family").get<std::string>());
  auto mean_model = [&]() {
    if (!j.contains("mean_model")) {
      throw ConfigError("spec needs a \"mean_model\" field");
    }
    return mean_model_from_json(j.at("mean_model"));
  };
  switch (family) {
    case Family::geometric:
      return OffspringSpec::geometric(
          mean_model(),
          j.value("tail_cutoff", OffspringSpec::kDefaultTailCutoff));
    case Family::poisson:
      return OffspringSpec::poisson(
          mean_model(),
          j.value("tail_cutoff", OffspringSpec::kDefaultTailCutoff));
    case Family::two_point_binary:
      return OffspringSpec::two_point_binary(
          mean_model(), j.value("reachability_bound", 1024L));
    case Family::two_bernoulli: {
      MeanModel mm = mean_model();
      if (!mm.is_constant()) {
        throw ConfigError("two_bernoulli needs a constant mean_model");
      }
      return OffspringSpec::two_bernoulli(mm.m);
    }
    case Family::explicit_pmf: {
      if (!j.contains("p")) throw ConfigError("explicit_pmf needs a \"p\" array");
      return OffspringSpec::explicit_pmf(
          j.at("p").get<std::vector<double>>());
    }
  }
  throw ConfigError("unknown family");
}

json report_to_json(const EstimateReport& rep) {
  json j;
  j["estimator"] = rep.estimator;
  j["value"] = rep.value;
  j["target"] = target_kind_name(rep.target);
  if (rep.variance) {
    j["variance"] = *rep.variance;
    j["ci_level"] = rep.ci_level;
  } else {
    j["variance"] = nullptr;
  }
  if (rep.ci) {
    j["ci"] = json::array({rep.ci->first, rep.ci->second});
  } else {
    j["ci"] = nullptr;
  }
  j["sample_size"] = rep.sample_size;
  json diag = json::object();
  for (const auto& [k, v] : rep.diagnostics) diag[k] = v;
  j["diagnostics"] = diag;
  return j;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace psdbp
