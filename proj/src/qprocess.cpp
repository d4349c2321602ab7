#include "psdbp/qprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace psdbp {

namespace {

// Compensated (Kahan) accumulator.
struct Accum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    double y = x - carry;
    double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

std::vector<double> conv(const std::vector<double>& a,
                         const std::vector<double>& b, std::size_t maxlen) {
  std::size_t n = std::min(a.size() + b.size() - 1, maxlen);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < a.size() && i < n; ++i) {
    double ai = a[i];
    if (ai == 0.0) continue;
    std::size_t jmax = std::min(b.size(), n - i);
    for (std::size_t j = 0; j < jmax; ++j) out[i + j] += ai * b[j];
  }
  return out;
}

// p^{*n} truncated to maxlen entries, by iterated doubling. Truncation is
// harmless for the kept entries: support only moves upward under convolution.
std::vector<double> conv_power(const std::vector<double>& p, long n,
                               std::size_t maxlen) {
  std::vector<double> result{1.0};
  std::vector<double> base = p;
  long e = n;
  while (e > 0) {
    if (e & 1) result = conv(result, base, maxlen);
    e >>= 1;
    if (e > 0) base = conv(base, base, maxlen);
  }
  return result;
}

void trim_trailing_zeros(std::vector<double>& v) {
  while (v.size() > 1 && v.back() == 0.0) v.pop_back();
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void write_double(std::ostream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  os << buf;
}

}  // namespace

TruncatedKernel TruncatedKernel::build(const OffspringSpec& spec, long zmax) {
  if (zmax < 1) throw ConfigError("kernel truncation zmax must be >= 1");
  TruncatedKernel k;
  k.zmax_ = zmax;
  k.rows_.resize(static_cast<std::size_t>(zmax));
  k.truncated_.assign(static_cast<std::size_t>(zmax), 0.0);
  const std::size_t maxlen = static_cast<std::size_t>(zmax) + 1;

  if (!spec.size_dependent()) {
    // One shared pmf: row i = row (i-1) * p.
    const std::vector<double> p = spec.pmf(1);
    std::vector<double> row{1.0};
    for (long i = 1; i <= zmax; ++i) {
      row = conv(row, p, maxlen);
      trim_trailing_zeros(row);
      k.rows_[static_cast<std::size_t>(i - 1)] = row;
    }
  } else {
    for (long i = 1; i <= zmax; ++i) {
      std::vector<double> row = conv_power(spec.pmf(i), i, maxlen);
      trim_trailing_zeros(row);
      k.rows_[static_cast<std::size_t>(i - 1)] = std::move(row);
    }
  }

  for (long i = 1; i <= zmax; ++i) {
    Accum mass;
    for (double x : k.rows_[static_cast<std::size_t>(i - 1)]) mass.add(x);
    k.truncated_[static_cast<std::size_t>(i - 1)] =
        std::max(0.0, 1.0 - mass.sum);
  }
  return k;
}

TruncatedKernel TruncatedKernel::from_rows(
    std::vector<std::vector<double>> sub) {
  const std::size_t n = sub.size();
  if (n == 0) throw ConfigError("kernel needs at least one state");
  TruncatedKernel k;
  k.zmax_ = static_cast<long>(n);
  k.rows_.resize(n);
  k.truncated_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (sub[i].size() != n) {
      throw ConfigError("kernel rows must be square over states 1..N");
    }
    Accum mass;
    for (double x : sub[i]) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw ConfigError("kernel entries must be finite and non-negative");
      }
      mass.add(x);
    }
    if (mass.sum > 1.0 + 1e-9) {
      throw ConfigError("kernel row mass exceeds 1");
    }
    std::vector<double> row(n + 1, 0.0);
    row[0] = std::max(0.0, 1.0 - mass.sum);
    for (std::size_t j = 0; j < n; ++j) row[j + 1] = sub[i][j];
    trim_trailing_zeros(row);
    k.rows_[i] = std::move(row);
  }
  return k;
}

double TruncatedKernel::entry(long i, long j) const {
  if (i < 1 || i > zmax_ || j < 0 || j > zmax_) {
    throw ConfigError("kernel index out of range");
  }
  const auto& r = rows_[static_cast<std::size_t>(i - 1)];
  const auto idx = static_cast<std::size_t>(j);
  return idx < r.size() ? r[idx] : 0.0;
}

std::vector<double> TruncatedKernel::apply(const std::vector<double>& x) const {
  if (x.size() != static_cast<std::size_t>(zmax_)) {
    throw ConfigError("vector length does not match zmax");
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    double s = 0.0;
    for (std::size_t j = 1; j < r.size(); ++j) s += r[j] * x[j - 1];
    y[i] = s;
  }
  return y;
}

std::vector<double> TruncatedKernel::apply_transpose(
    const std::vector<double>& x) const {
  if (x.size() != static_cast<std::size_t>(zmax_)) {
    throw ConfigError("vector length does not match zmax");
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 1; j < r.size(); ++j) y[j - 1] += r[j] * xi;
  }
  return y;
}

void TruncatedKernel::dump(std::ostream& os) const {
  os << "psdbp-kernel v1\n";
  os << "zmax " << zmax_ << "\n";
  for (long i = 1; i <= zmax_; ++i) {
    const auto& r = rows_[static_cast<std::size_t>(i - 1)];
    std::size_t nnz = 0;
    for (double x : r) {
      if (x != 0.0) ++nnz;
    }
    os << "row " << i << " trunc ";
    write_double(os, truncated_[static_cast<std::size_t>(i - 1)]);
    os << " nnz " << nnz;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (r[j] == 0.0) continue;
      os << " " << j << " ";
      write_double(os, r[j]);
    }
    os << "\n";
  }
}

TruncatedKernel TruncatedKernel::load(std::istream& is) {
  std::string tok, ver;
  is >> tok >> ver;
  if (tok != "psdbp-kernel" || ver != "v1") {
    throw ConfigError("not a psdbp kernel dump");
  }
  long zmax = 0;
  is >> tok >> zmax;
  if (tok != "zmax" || zmax < 1) throw ConfigError("bad kernel dump header");
  TruncatedKernel k;
  k.zmax_ = zmax;
  k.rows_.assign(static_cast<std::size_t>(zmax),
                 std::vector<double>{0.0});
  k.truncated_.assign(static_cast<std::size_t>(zmax), 0.0);
  for (long n = 0; n < zmax; ++n) {
    long i = 0;
    double trunc = 0.0;
    std::size_t nnz = 0;
    is >> tok >> i;
    if (tok != "row" || i < 1 || i > zmax) throw ConfigError("bad kernel row");
    is >> tok >> trunc;
    if (tok != "trunc") throw ConfigError("bad kernel row");
    is >> tok >> nnz;
    if (tok != "nnz") throw ConfigError("bad kernel row");
    std::vector<double> row(static_cast<std::size_t>(zmax) + 1, 0.0);
    for (std::size_t e = 0; e < nnz; ++e) {
      std::size_t j = 0;
      double p = 0.0;
      is >> j >> p;
      if (!is || j > static_cast<std::size_t>(zmax)) {
        throw ConfigError("bad kernel entry");
      }
      row[j] = p;
    }
    trim_trailing_zeros(row);
    k.rows_[static_cast<std::size_t>(i - 1)] = std::move(row);
    k.truncated_[static_cast<std::size_t>(i - 1)] = trunc;
  }
  if (!is) throw ConfigError("truncated kernel dump");
  return k;
}

void SpectralTriple::dump(std::ostream& os) const {
  os << "psdbp-spectral v1\n";
  os << "rho ";
  write_double(os, rho);
  os << " residual ";
  write_double(os, residual);
  os << " iterations " << iterations << "\n";
  os << "n " << u.size() << "\n";
  for (std::size_t i = 0; i < u.size(); ++i) {
    os << (i + 1) << " ";
    write_double(os, u[i]);
    os << " ";
    write_double(os, v[i]);
    os << "\n";
  }
}

SpectralTriple SpectralTriple::load(std::istream& is) {
  std::string tok, ver;
  is >> tok >> ver;
  if (tok != "psdbp-spectral" || ver != "v1") {
    throw ConfigError("not a psdbp spectral dump");
  }
  SpectralTriple t;
  is >> tok >> t.rho;
  if (tok != "rho") throw ConfigError("bad spectral dump");
  is >> tok >> t.residual;
  if (tok != "residual") throw ConfigError("bad spectral dump");
  is >> tok >> t.iterations;
  if (tok != "iterations") throw ConfigError("bad spectral dump");
  std::size_t n = 0;
  is >> tok >> n;
  if (tok != "n" || n == 0) throw ConfigError("bad spectral dump");
  t.u.assign(n, 0.0);
  t.v.assign(n, 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t i = 0;
    is >> i;
    if (!is || i < 1 || i > n) throw ConfigError("bad spectral entry");
    is >> t.u[i - 1] >> t.v[i - 1];
  }
  if (!is) throw ConfigError("truncated spectral dump");
  return t;
}

SpectralTriple spectral(const TruncatedKernel& kernel, double tol,
                        long max_iters) {
  const std::size_t n = static_cast<std::size_t>(kernel.zmax());
  std::vector<double> v(n, 1.0 / static_cast<double>(n));
  std::vector<double> u(n, 1.0 / static_cast<double>(n));
  SpectralTriple out;

  for (long it = 1; it <= max_iters; ++it) {
    std::vector<double> qv = kernel.apply(v);
    std::vector<double> qtu = kernel.apply_transpose(u);
    const double uv = dot(u, v);
    if (!(uv > 0.0)) throw NumericError("power iteration collapsed");
    const double rho = dot(u, qv) / uv;
    if (!(rho > 0.0) || !std::isfinite(rho)) {
      throw NumericError("kernel has no positive spectral radius");
    }

    double rv = 0.0, ru = 0.0, vmax = 0.0, umax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      rv = std::max(rv, std::abs(qv[i] - rho * v[i]));
      ru = std::max(ru, std::abs(qtu[i] - rho * u[i]));
      vmax = std::max(vmax, std::abs(v[i]));
      umax = std::max(umax, std::abs(u[i]));
    }
    const double res = std::max(rv / vmax, ru / umax);

    double sv = 0.0, su = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sv += std::abs(qv[i]);
      su += std::abs(qtu[i]);
    }
    if (!(sv > 0.0) || !(su > 0.0)) {
      throw NumericError("power iteration collapsed to zero");
    }
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = qv[i] / sv;
      u[i] = qtu[i] / su;
    }

    if (res <= tol) {
      out.rho = rho;
      out.residual = res;
      out.iterations = it;
      break;
    }
    if (it == max_iters) {
      throw NumericError("power iteration did not reach tolerance " +
                         std::to_string(tol) + " in " +
                         std::to_string(max_iters) + " iterations");
    }
  }

  // Normalize: u^T 1 = 1, then u^T v = 1.
  Accum su;
  for (double x : u) su.add(x);
  for (double& x : u) x /= su.sum;
  Accum suv;
  for (std::size_t i = 0; i < n; ++i) suv.add(u[i] * v[i]);
  if (!(suv.sum > 0.0)) throw NumericError("degenerate eigenvector pairing");
  for (double& x : v) x /= suv.sum;

  out.u = std::move(u);
  out.v = std::move(v);
  return out;
}

QTransitions q_transitions(const TruncatedKernel& kernel,
                           const SpectralTriple& triple) {
  const long zmax = kernel.zmax();
  QTransitions qt;
  qt.rows.resize(static_cast<std::size_t>(zmax));
  qt.renorm.assign(static_cast<std::size_t>(zmax), 0.0);
  for (long i = 1; i <= zmax; ++i) {
    const auto& r = kernel.row(i);
    std::vector<double> num(static_cast<std::size_t>(zmax), 0.0);
    Accum s;
    for (std::size_t j = 1; j < r.size(); ++j) {
      double x = r[j] * triple.v[j - 1];
      num[j - 1] = x;
      s.add(x);
    }
    if (!(s.sum > 0.0)) {
      throw NumericError("Q-process row undefined at state " +
                         std::to_string(i));
    }
    for (double& x : num) x /= s.sum;
    qt.rows[static_cast<std::size_t>(i - 1)] = std::move(num);
    // Factor applied to the theoretical row Q_ij v_j / (rho v_i). It is 1 up
    // to the eigen-residual; a larger gap means the triple does not belong to
    // this kernel.
    const double renorm =
        triple.rho * triple.v[static_cast<std::size_t>(i - 1)] / s.sum;
    if (std::abs(renorm - 1.0) > 1e-4) {
      throw NumericError("Q-process row " + std::to_string(i) +
                         " is off stochastic by more than 1e-4; kernel and "
                         "spectral triple do not match");
    }
    qt.renorm[static_cast<std::size_t>(i - 1)] = renorm;
  }
  return qt;
}

std::vector<double> stationary_law(const SpectralTriple& triple) {
  std::vector<double> pi(triple.u.size(), 0.0);
  Accum s;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    pi[j] = triple.u[j] * triple.v[j];
    s.add(pi[j]);
  }
  if (!(s.sum > 0.0)) throw NumericError("stationary law degenerate");
  for (double& x : pi) x /= s.sum;
  return pi;
}

namespace {

// Renormalized Q-process row for a single state.
void q_row_moments(const TruncatedKernel& kernel, const SpectralTriple& triple,
                   long z, double& m1, double& m2) {
  if (z < 1 || z > kernel.zmax()) {
    throw ConfigError("state out of range for Q-process moments");
  }
  const auto& r = kernel.row(z);
  Accum s, s1, s2;
  for (std::size_t j = 1; j < r.size(); ++j) {
    double x = r[j] * triple.v[j - 1];
    double jj = static_cast<double>(j);
    s.add(x);
    s1.add(jj * x);
    s2.add(jj * jj * x);
  }
  if (!(s.sum > 0.0)) {
    throw NumericError("Q-process row undefined at state " + std::to_string(z));
  }
  m1 = s1.sum / s.sum;
  m2 = s2.sum / s.sum;
}

}  // namespace

double m_up(const TruncatedKernel& kernel, const SpectralTriple& triple,
            long z) {
  double m1 = 0.0, m2 = 0.0;
  q_row_moments(kernel, triple, z, m1, m2);
  return m1 / static_cast<double>(z);
}

double sigma2_up(const TruncatedKernel& kernel, const SpectralTriple& triple,
                 long z) {
  double m1 = 0.0, m2 = 0.0;
  q_row_moments(kernel, triple, z, m1, m2);
  const double zz = static_cast<double>(z);
  const double mup = m1 / zz;
  return m2 / (zz * zz) - mup * mup;
}

std::vector<std::vector<double>> survival_vectors(const TruncatedKernel& kernel,
                                                  long tmax) {
  if (tmax < 0) throw ConfigError("tmax must be >= 0");
  std::vector<std::vector<double>> s;
  s.reserve(static_cast<std::size_t>(tmax) + 1);
  s.emplace_back(static_cast<std::size_t>(kernel.zmax()), 1.0);
  for (long t = 1; t <= tmax; ++t) s.push_back(kernel.apply(s.back()));
  return s;
}

std::vector<double> conditioned_row(
    const TruncatedKernel& kernel, long i, long t,
    const std::vector<std::vector<double>>& surv) {
  if (t < 1 || surv.size() < static_cast<std::size_t>(t)) {
    throw ConfigError("conditioned row needs survival vectors up to t");
  }
  if (i < 1 || i > kernel.zmax()) {
    throw ConfigError("state out of range for conditioned row");
  }
  const auto& r = kernel.row(i);
  const auto& st1 = surv[static_cast<std::size_t>(t - 1)];
  std::vector<double> out(static_cast<std::size_t>(kernel.zmax()), 0.0);
  Accum s;
  for (std::size_t j = 1; j < r.size(); ++j) {
    double x = r[j] * st1[j - 1];
    out[j - 1] = x;
    s.add(x);
  }
  if (!(s.sum > 0.0)) {
    throw NumericError("conditioned row undefined: no surviving continuation");
  }
  for (double& x : out) x /= s.sum;
  return out;
}

namespace {

std::vector<double> apply_compensated(const TruncatedKernel& kernel,
                                      const std::vector<double>& x) {
  std::vector<double> y(x.size(), 0.0);
  for (long i = 1; i <= kernel.zmax(); ++i) {
    const auto& r = kernel.row(i);
    Accum s;
    for (std::size_t j = 1; j < r.size(); ++j) s.add(r[j] * x[j - 1]);
    y[static_cast<std::size_t>(i - 1)] = s.sum;
  }
  return y;
}

double weighted_gap(const std::vector<double>& u, const std::vector<double>& a,
                    const std::vector<double>& b) {
  Accum s;
  for (std::size_t j = 0; j < u.size(); ++j) s.add(u[j] * std::abs(a[j] - b[j]));
  return 0.5 * s.sum;
}

}  // namespace

std::vector<double> coupling_error_curve(const TruncatedKernel& kernel,
                                         const SpectralTriple& triple,
                                         long kmax, long tail_pad) {
  if (kmax < 0) throw ConfigError("kmax must be >= 0");
  if (tail_pad < 1) throw ConfigError("tail_pad must be >= 1");
  if (!(triple.rho > 0.0)) throw NumericError("rho must be positive");
  const long T = kmax + tail_pad;

  // Pass 1: deep iterate w_T = rho^{-T} Q^T 1; reproduces the direction of v
  // with error far below the power-iteration residual.
  std::vector<double> w(static_cast<std::size_t>(kernel.zmax()), 1.0);
  for (long t = 1; t <= T; ++t) {
    w = apply_compensated(kernel, w);
    for (double& x : w) x /= triple.rho;
  }
  const std::vector<double> ref = std::move(w);

  // Pass 2: d(k) = (1/2) sum_j u_j |w_k(j) - ref(j)|.
  std::vector<double> d(static_cast<std::size_t>(kmax) + 1, 0.0);
  std::vector<double> wk(static_cast<std::size_t>(kernel.zmax()), 1.0);
  d[0] = weighted_gap(triple.u, wk, ref);
  for (long k = 1; k <= kmax; ++k) {
    wk = apply_compensated(kernel, wk);
    for (double& x : wk) x /= triple.rho;
    d[static_cast<std::size_t>(k)] = weighted_gap(triple.u, wk, ref);
  }
  return d;
}

double coupling_error(const TruncatedKernel& kernel,
                      const SpectralTriple& triple, long k) {
  return coupling_error_curve(kernel, triple, k).back();
}

double coupling_limit(const SpectralTriple& triple) {
  Accum s;
  for (std::size_t j = 0; j < triple.u.size(); ++j) {
    s.add(triple.u[j] * std::abs(1.0 - triple.v[j]));
  }
  return 0.5 * s.sum;
}

long default_hybrid_k(const TruncatedKernel& kernel,
                      const SpectralTriple& triple, double target, long kmax) {
  if (!(target > 0.0)) throw ConfigError("coupling error target must be > 0");
  long cap = 64;
  while (true) {
    std::vector<double> d = coupling_error_curve(kernel, triple, cap);
    for (long k = 1; k <= cap; ++k) {
      if (d[static_cast<std::size_t>(k)] < target) return k;
    }
    if (cap >= kmax) {
      throw NumericError(
          "coupling error target " + std::to_string(target) +
          " is not reachable within k <= " + std::to_string(kmax) +
          " at zmax " + std::to_string(kernel.zmax()));
    }
    cap = std::min(kmax, cap * 2);
  }
}

KernelBundle build_adaptive(const OffspringSpec& spec, long z0,
                            long zmax_start, double tail_weight, double tol) {
  if (z0 < 0) throw ConfigError("z0 must be >= 0");
  long zmax = zmax_start;
  if (zmax <= 0) {
    zmax = 64;
    long floor = 2 * std::max<long>(z0, 1);
    while (zmax < floor) zmax *= 2;
  }
  constexpr long kZmaxCap = 1L << 20;
  while (true) {
    TruncatedKernel kernel = TruncatedKernel::build(spec, zmax);
    SpectralTriple triple = spectral(kernel, tol);
    const auto cut = static_cast<std::size_t>(0.8 * static_cast<double>(zmax));
    Accum tail;
    for (std::size_t j = cut; j < triple.u.size(); ++j) {
      tail.add(triple.u[j]);
    }
    if (tail.sum < tail_weight) {
      return KernelBundle{zmax, std::move(kernel), std::move(triple), tail.sum};
    }
    if (zmax >= kZmaxCap) {
      throw NumericError("adaptive truncation exceeded the zmax cap");
    }
    zmax *= 2;
  }
}

}  // namespace psdbp
