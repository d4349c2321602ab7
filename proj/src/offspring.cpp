#include "psdbp/offspring.hpp"

#include <cmath>
#include <limits>

namespace psdbp {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw SpecError(msg);
}

}  // namespace

MeanModel MeanModel::constant(double m) {
  MeanModel mm;
  mm.kind = Kind::constant;
  mm.m = m;
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw SpecError("constant mean model requires m > 0");
  }
  return mm;
}

MeanModel MeanModel::ricker(double r, double K) {
  MeanModel mm;
  mm.kind = Kind::ricker;
  mm.r = r;
  mm.K = K;
  if (!(r > 0.0) || !(K > 0.0) || !std::isfinite(r) || !std::isfinite(K)) {
    throw SpecError("ricker mean model requires r > 0 and K > 0");
  }
  return mm;
}

MeanModel MeanModel::beverton_holt(double K) {
  MeanModel mm;
  mm.kind = Kind::beverton_holt;
  mm.K = K;
  if (!(K > 0.0) || !std::isfinite(K)) {
    throw SpecError("beverton_holt mean model requires K > 0");
  }
  return mm;
}

double MeanModel::operator()(double z) const {
  switch (kind) {
    case Kind::constant:
      return m;
    case Kind::ricker:
      return std::pow(r, 1.0 - z / K);
    case Kind::beverton_holt:
      return 2.0 * K / (K + z);
  }
  return m;
}

std::string MeanModel::name() const {
  switch (kind) {
    case Kind::constant:
      return "constant";
    case Kind::ricker:
      return "ricker";
    case Kind::beverton_holt:
      return "beverton_holt";
  }
  return "constant";
}

std::string family_name(Family f) {
  switch (f) {
    case Family::geometric:
      return "geometric";
    case Family::poisson:
      return "poisson";
    case Family::two_point_binary:
      return "two_point_binary";
    case Family::two_bernoulli:
      return "two_bernoulli";
    case Family::explicit_pmf:
      return "explicit_pmf";
  }
  return "geometric";
}

Family family_from_name(const std::string& name) {
  if (name == "geometric") return Family::geometric;
  if (name == "poisson") return Family::poisson;
  if (name == "two_point_binary") return Family::two_point_binary;
  if (name == "two_bernoulli") return Family::two_bernoulli;
  if (name == "explicit_pmf") return Family::explicit_pmf;
  throw ConfigError("unknown offspring family: " + name);
}

OffspringSpec OffspringSpec::geometric(MeanModel mm, double tail_cutoff) {
  require(tail_cutoff > 0.0 && tail_cutoff < 1e-3, "tail cutoff out of range");
  OffspringSpec s;
  s.family_ = Family::geometric;
  s.mean_model_ = mm;
  s.tail_cutoff_ = tail_cutoff;
  return s;
}

OffspringSpec OffspringSpec::poisson(MeanModel mm, double tail_cutoff) {
  require(tail_cutoff > 0.0 && tail_cutoff < 1e-3, "tail cutoff out of range");
  OffspringSpec s;
  s.family_ = Family::poisson;
  s.mean_model_ = mm;
  s.tail_cutoff_ = tail_cutoff;
  return s;
}

OffspringSpec OffspringSpec::two_point_binary(MeanModel mm,
                                              long reachability_bound) {
  require(reachability_bound >= 1, "reachability bound must be >= 1");
  for (long z = 1; z <= reachability_bound; ++z) {
    double m = mm(static_cast<double>(z));
    if (!(m > 0.0) || !(m < 2.0)) {
      throw SpecError("two_point_binary requires 0 < m(z) < 2; violated at z=" +
                      std::to_string(z) + " with m(z)=" + std::to_string(m));
    }
  }
  OffspringSpec s;
  s.family_ = Family::two_point_binary;
  s.mean_model_ = mm;
  s.reachability_bound_ = reachability_bound;
  return s;
}

OffspringSpec OffspringSpec::two_bernoulli(double m) {
  require(m > 0.0 && m < 2.0, "two_bernoulli requires 0 < m < 2");
  OffspringSpec s;
  s.family_ = Family::two_bernoulli;
  s.mean_model_ = MeanModel::constant(m);
  return s;
}

OffspringSpec OffspringSpec::explicit_pmf(std::vector<double> p,
                                          bool allow_degenerate) {
  require(!p.empty(), "explicit pmf must be non-empty");
  double sum = 0.0;
  double mean = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    require(p[k] >= 0.0 && std::isfinite(p[k]),
            "explicit pmf entries must be finite and non-negative");
    sum += p[k];
    mean += static_cast<double>(k) * p[k];
  }
  require(std::abs(sum - 1.0) <= 1e-12, "explicit pmf must sum to 1");
  if (!allow_degenerate) {
    double p0 = p[0];
    double p1 = p.size() > 1 ? p[1] : 0.0;
    require(p0 > 0.0, "offspring law must allow extinction (p0 > 0)");
    require(p0 + p1 < 1.0, "offspring law must allow growth (p0 + p1 < 1)");
  }
  require(mean > 0.0 || allow_degenerate, "explicit pmf must have positive mean");
  OffspringSpec s;
  s.family_ = Family::explicit_pmf;
  s.mean_model_ = mean > 0.0 ? MeanModel::constant(mean)
                             : MeanModel{};  // degenerate test laws only
  s.mean_model_.m = mean;
  s.allow_degenerate_ = allow_degenerate;
  s.explicit_ = std::move(p);
  return s;
}

double OffspringSpec::mean(long z) const {
  if (family_ == Family::explicit_pmf) return mean_model_.m;
  return mean_model_(static_cast<double>(z));
}

double OffspringSpec::variance(long z) const {
  double m = mean(z);
  switch (family_) {
    case Family::geometric:
      return m * (1.0 + m);
    case Family::poisson:
      return m;
    case Family::two_point_binary:
    case Family::two_bernoulli:
      // support {0, 2}: E xi^2 = 4 p2 = 2 m.
      return m * (2.0 - m);
    case Family::explicit_pmf: {
      double ex2 = 0.0;
      for (std::size_t k = 0; k < explicit_.size(); ++k) {
        ex2 += static_cast<double>(k) * static_cast<double>(k) * explicit_[k];
      }
      return ex2 - m * m;
    }
  }
  return 0.0;
}

std::vector<double> OffspringSpec::pmf(long z) const {
  return pmf(z, tail_cutoff_);
}

std::vector<double> OffspringSpec::pmf(long z, double tail_cutoff) const {
  if (z < 1) throw SpecError("pmf requires population size z >= 1");
  if (!(tail_cutoff > 0.0)) throw SpecError("tail cutoff must be positive");
  switch (family_) {
    case Family::geometric: {
      double m = mean(z);
      double ratio = m / (1.0 + m);
      std::vector<double> p;
      double tail = 1.0;  // mass of {k, k+1, ...} = ratio^k
      double atom = 1.0 / (1.0 + m);
      while (tail > tail_cutoff) {
        p.push_back(atom);
        tail *= ratio;
        atom *= ratio;
        if (p.size() > 4'000'000) {
          throw NumericError("geometric pmf did not reach the tail cutoff");
        }
      }
      return p;
    }
    case Family::poisson: {
      double m = mean(z);
      std::vector<double> p;
      double atom = std::exp(-m);
      double cum = 0.0;
      std::size_t k = 0;
      while (true) {
        p.push_back(atom);
        cum += atom;
        if (1.0 - cum <= tail_cutoff && static_cast<double>(k) >= m) break;
        ++k;
        atom *= m / static_cast<double>(k);
        if (k > 4'000'000) {
          throw NumericError("poisson pmf did not reach the tail cutoff");
        }
      }
      return p;
    }
    case Family::two_point_binary:
    case Family::two_bernoulli: {
      double m = mean(z);
      if (!(m > 0.0) || !(m < 2.0)) {
        throw SpecError("binary splitting undefined: m(z) outside (0,2) at z=" +
                        std::to_string(z));
      }
      return {1.0 - m / 2.0, 0.0, m / 2.0};
    }
    case Family::explicit_pmf:
      return explicit_;
  }
  return {};
}

std::vector<double> OffspringSpec::size_biased_pmf(long z) const {
  return size_biased_pmf(z, tail_cutoff_);
}

std::vector<double> OffspringSpec::size_biased_pmf(long z,
                                                   double tail_cutoff) const {
  if (size_dependent()) {
    throw SpecError("size-biased law is defined for constant-mean families only");
  }
  std::vector<double> p = pmf(z, tail_cutoff);
  double m = mean(z);
  if (!(m > 0.0)) throw SpecError("size-biased law requires m(z) > 0");
  std::vector<double> q(p.size(), 0.0);
  for (std::size_t k = 1; k < p.size(); ++k) {
    q[k] = static_cast<double>(k) * p[k] / m;
  }
  return q;
}

std::optional<std::pair<double, double>> OffspringSpec::ab_constants() const {
  switch (family_) {
    case Family::geometric:
      return std::make_pair(1.0, 1.0);  // V/m = 1 + m
    case Family::poisson:
      return std::make_pair(0.0, 1.0);  // V/m = 1
    case Family::two_point_binary:
    case Family::two_bernoulli:
      return std::make_pair(-1.0, 2.0);  // V/m = 2 - m
    case Family::explicit_pmf:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace psdbp
