#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "psdbp/errors.hpp"
#include "psdbp/estimators.hpp"
#include "psdbp/experiments.hpp"
#include "psdbp/io.hpp"
#include "psdbp/offspring.hpp"
#include "psdbp/qprocess.hpp"
#include "psdbp/simulate.hpp"

namespace py = pybind11;
using namespace psdbp;

PYBIND11_MODULE(_psdbp, m) {
  m.doc() = "branching processes conditioned on survival";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<SpecError>(m, "SpecError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<UndefinedEstimatorError>(m, "UndefinedEstimatorError",
                                                  base.ptr());

  py::class_<MeanModel>(m, "MeanModel")
      .def_static("constant", &MeanModel::constant, py::arg("m"))
      .def_static("ricker", &MeanModel::ricker, py::arg("r"), py::arg("K"))
      .def_static("beverton_holt", &MeanModel::beverton_holt, py::arg("K"))
      .def("__call__", &MeanModel::operator(), py::arg("z"))
      .def_property_readonly("name", &MeanModel::name);

  py::class_<OffspringSpec>(m, "OffspringSpec")
      .def_static("geometric", &OffspringSpec::geometric, py::arg("mean_model"),
                  py::arg("tail_cutoff") = OffspringSpec::kDefaultTailCutoff)
      .def_static("poisson", &OffspringSpec::poisson, py::arg("mean_model"),
                  py::arg("tail_cutoff") = OffspringSpec::kDefaultTailCutoff)
      .def_static("two_point_binary", &OffspringSpec::two_point_binary,
                  py::arg("mean_model"), py::arg("reachability_bound") = 1024)
      .def_static("two_bernoulli", &OffspringSpec::two_bernoulli, py::arg("m"))
      .def_static("explicit_pmf", &OffspringSpec::explicit_pmf, py::arg("p"),
                  py::arg("allow_degenerate") = false)
      .def_property_readonly(
          "family", [](const OffspringSpec& s) { return family_name(s.family()); })
      .def_property_readonly("size_dependent", &OffspringSpec::size_dependent)
      .def("mean", &OffspringSpec::mean, py::arg("z"))
      .def("variance", &OffspringSpec::variance, py::arg("z"))
      .def("pmf", py::overload_cast<long>(&OffspringSpec::pmf, py::const_),
           py::arg("z"))
      .def("size_biased_pmf",
           py::overload_cast<long>(&OffspringSpec::size_biased_pmf, py::const_),
           py::arg("z"))
      .def("ab_constants", &OffspringSpec::ab_constants);

  py::class_<TreeSample>(m, "TreeSample")
      .def_readonly("z", &TreeSample::z)
      .def_readonly("counts", &TreeSample::counts);

  m.def("simulate", &simulate, py::arg("spec"), py::arg("z0"), py::arg("n"),
        py::arg("seed"));
  m.def("simulate_tree", &simulate_tree, py::arg("spec"), py::arg("z0"),
        py::arg("n"), py::arg("seed"));
  m.def("simulate_conditioned_splitting", &simulate_conditioned_splitting,
        py::arg("spec"), py::arg("z0"), py::arg("n"), py::arg("seed"),
        py::arg("kernel") = nullptr);
  m.def(
      "survival_probability",
      [](const OffspringSpec& spec, long i, long s) {
        return survival_probability(spec, i, s);
      },
      py::arg("spec"), py::arg("i"), py::arg("s"));

  py::class_<TruncatedKernel>(m, "TruncatedKernel")
      .def_static("build", &TruncatedKernel::build, py::arg("spec"),
                  py::arg("zmax"))
      .def_static("from_rows", &TruncatedKernel::from_rows, py::arg("rows"))
      .def_property_readonly("zmax", &TruncatedKernel::zmax)
      .def("entry", &TruncatedKernel::entry, py::arg("i"), py::arg("j"))
      .def("absorb", &TruncatedKernel::absorb, py::arg("i"))
      .def("truncated_mass", &TruncatedKernel::truncated_mass, py::arg("i"))
      .def("dump", [](const TruncatedKernel& k) {
        std::ostringstream os;
        k.dump(os);
        return os.str();
      });

  py::class_<SpectralTriple>(m, "SpectralTriple")
      .def_readonly("rho", &SpectralTriple::rho)
      .def_readonly("u", &SpectralTriple::u)
      .def_readonly("v", &SpectralTriple::v)
      .def_readonly("residual", &SpectralTriple::residual)
      .def_readonly("iterations", &SpectralTriple::iterations);

  m.def("spectral", &spectral, py::arg("kernel"), py::arg("tol") = 1e-12,
        py::arg("max_iters") = 1'000'000);
  m.def("stationary_law", &stationary_law, py::arg("triple"));
  m.def("m_up", &m_up, py::arg("kernel"), py::arg("triple"), py::arg("z"));
  m.def("sigma2_up", &sigma2_up, py::arg("kernel"), py::arg("triple"),
        py::arg("z"));
  m.def("coupling_error_curve", &coupling_error_curve, py::arg("kernel"),
        py::arg("triple"), py::arg("kmax"), py::arg("tail_pad") = 400);
  m.def("coupling_error", &coupling_error, py::arg("kernel"), py::arg("triple"),
        py::arg("k"));
  m.def("coupling_limit", &coupling_limit, py::arg("triple"));
  m.def("default_hybrid_k", &default_hybrid_k, py::arg("kernel"),
        py::arg("triple"), py::arg("target") = 1e-6, py::arg("kmax") = 4096);

  py::class_<KernelBundle>(m, "KernelBundle")
      .def_readonly("zmax", &KernelBundle::zmax)
      .def_readonly("kernel", &KernelBundle::kernel)
      .def_readonly("triple", &KernelBundle::triple)
      .def_readonly("tail_weight", &KernelBundle::tail_weight);

  m.def("build_adaptive", &build_adaptive, py::arg("spec"), py::arg("z0"),
        py::arg("zmax_start") = 0, py::arg("tail_weight") = 1e-8,
        py::arg("tol") = 1e-12);

  py::class_<HybridSampler>(m, "HybridSampler")
      .def(py::init<const TruncatedKernel&, const SpectralTriple&, long>(),
           py::arg("kernel"), py::arg("triple"), py::arg("k"),
           py::keep_alive<1, 2>(), py::keep_alive<1, 3>())
      .def("sample", &HybridSampler::sample, py::arg("z0"), py::arg("n"),
           py::arg("seed"))
      .def_property_readonly("k", &HybridSampler::k)
      .def("error_bound", &HybridSampler::error_bound, py::arg("n"));

  py::class_<HybridResult>(m, "HybridResult")
      .def_readonly("path", &HybridResult::path)
      .def_readonly("error_bound", &HybridResult::error_bound)
      .def_readonly("k", &HybridResult::k);

  m.def("simulate_conditioned_hybrid",
        py::overload_cast<const TruncatedKernel&, const SpectralTriple&, long,
                          long, long, std::uint64_t>(
            &simulate_conditioned_hybrid),
        py::arg("kernel"), py::arg("triple"), py::arg("z0"), py::arg("n"),
        py::arg("k"), py::arg("seed"));
  m.def("simulate_conditioned_hybrid",
        py::overload_cast<const OffspringSpec&, long, long, long,
                          std::uint64_t>(&simulate_conditioned_hybrid),
        py::arg("spec"), py::arg("z0"), py::arg("n"), py::arg("k"),
        py::arg("seed"));

  py::class_<EstimateReport>(m, "EstimateReport")
      .def_readonly("estimator", &EstimateReport::estimator)
      .def_readonly("value", &EstimateReport::value)
      .def_property_readonly(
          "target",
          [](const EstimateReport& r) { return target_kind_name(r.target); })
      .def_readonly("variance", &EstimateReport::variance)
      .def_readonly("ci", &EstimateReport::ci)
      .def_readonly("ci_level", &EstimateReport::ci_level)
      .def_readonly("sample_size", &EstimateReport::sample_size)
      .def_readonly("diagnostics", &EstimateReport::diagnostics);

  py::enum_<VarianceAt>(m, "VarianceAt")
      .value("estimate", VarianceAt::estimate)
      .value("truth", VarianceAt::truth);

  m.def("mle_m_z",
        py::overload_cast<const Trajectory&, long>(&mle_m_z), py::arg("path"),
        py::arg("z"));
  m.def("mle_m_z",
        py::overload_cast<const Trajectory&, long, const TruncatedKernel&,
                          const SpectralTriple&, double>(&mle_m_z),
        py::arg("path"), py::arg("z"), py::arg("kernel"), py::arg("triple"),
        py::arg("ci_level") = 0.95);
  m.def("mle_m_gw", &mle_m_gw, py::arg("path"));
  m.def("mle_pk", &mle_pk, py::arg("tree"), py::arg("z"), py::arg("k"));

  py::class_<PkEstimate>(m, "PkEstimate")
      .def_readonly("p", &PkEstimate::p)
      .def_readonly("visits", &PkEstimate::visits);
  m.def("mle_pk_all", &mle_pk_all, py::arg("tree"), py::arg("z"));

  py::class_<BinarySplitPlugins>(m, "BinarySplitPlugins")
      .def_readonly("m_hat", &BinarySplitPlugins::m_hat)
      .def_readonly("p0", &BinarySplitPlugins::p0)
      .def_readonly("p2", &BinarySplitPlugins::p2)
      .def_readonly("sigma2", &BinarySplitPlugins::sigma2)
      .def_readonly("out_of_range", &BinarySplitPlugins::out_of_range);
  m.def("binary_split_plugins",
        py::overload_cast<const Trajectory&, long>(&binary_split_plugins),
        py::arg("path"), py::arg("z"));
  m.def("binary_split_plugins",
        py::overload_cast<double>(&binary_split_plugins), py::arg("m_hat"));

  m.def("c_estimator_tilde",
        py::overload_cast<const Trajectory&, double, double>(
            &c_estimator_tilde),
        py::arg("path"), py::arg("a"), py::arg("b"));
  m.def("c_estimator_tilde",
        py::overload_cast<const Trajectory&, const OffspringSpec&, VarianceAt,
                          double>(&c_estimator_tilde),
        py::arg("path"), py::arg("spec"),
        py::arg("at") = VarianceAt::estimate, py::arg("ci_level") = 0.95);

  py::class_<CBarEstimate>(m, "CBarEstimate")
      .def_readonly("m", &CBarEstimate::m)
      .def_readonly("sigma2", &CBarEstimate::sigma2);
  m.def("c_estimator_bar",
        py::overload_cast<const Trajectory&>(&c_estimator_bar),
        py::arg("path"));
  m.def("c_estimator_bar",
        py::overload_cast<const Trajectory&, const OffspringSpec&, VarianceAt,
                          double>(&c_estimator_bar),
        py::arg("path"), py::arg("spec"),
        py::arg("at") = VarianceAt::estimate, py::arg("ci_level") = 0.95);

  py::class_<ImmigrationConstants>(m, "ImmigrationConstants")
      .def_readonly("m", &ImmigrationConstants::m)
      .def_readonly("lambda_", &ImmigrationConstants::lambda)
      .def_readonly("mu", &ImmigrationConstants::mu)
      .def_readonly("m_pi", &ImmigrationConstants::m_pi)
      .def_readonly("c2", &ImmigrationConstants::c2)
      .def_readonly("B2", &ImmigrationConstants::B2)
      .def_readonly("nu_tilde2", &ImmigrationConstants::nu_tilde2)
      .def_readonly("nu_bar2", &ImmigrationConstants::nu_bar2);
  m.def("immigration_constants", &immigration_constants, py::arg("spec"));
  m.def("with_mean", &with_mean, py::arg("spec"), py::arg("m"));

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        ExperimentConfig cfg =
            ExperimentConfig::from_json(json::parse(config_json));
        ExperimentResult result = run_experiment(cfg);
        return py::make_tuple(result.summary.dump(2), result.files);
      },
      py::arg("config_json"),
      "Run an experiment from a JSON config string; returns (summary_json, "
      "files).");

  m.def("spec_to_json",
        [](const OffspringSpec& s) { return spec_to_json(s).dump(); });
  m.def("spec_from_json", [](const std::string& text) {
    return spec_from_json(json::parse(text));
  });
}
