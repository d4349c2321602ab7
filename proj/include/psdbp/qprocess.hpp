#pragma once

#include <iosfwd>
#include <vector>

#include "psdbp/errors.hpp"
#include "psdbp/offspring.hpp"

namespace psdbp {

// Transition kernel of the process restricted to states 1..zmax, with the
// absorbed mass (extinction) and the truncated mass (states beyond zmax)
// tracked per row. Row i holds P(Z_1 = j | Z_0 = i) for j = 0..zmax; the
// identity absorb + sum_j entries + truncated_mass = 1 holds by construction.
class TruncatedKernel {
 public:
  // Row i is the i-fold convolution of the offspring pmf at size i,
  // truncated at zmax. Convolutions are done by iterated doubling.
  static TruncatedKernel build(const OffspringSpec& spec, long zmax);

  // Kernel from an explicit substochastic matrix on states 1..N
  // (sub[i-1][j-1] = Q_ij); used for toy kernels and round trips.
  static TruncatedKernel from_rows(std::vector<std::vector<double>> sub);

  long zmax() const { return zmax_; }

  // Q_ij, 1 <= i <= zmax, 0 <= j <= zmax (j = 0 is absorption).
  double entry(long i, long j) const;
  double absorb(long i) const { return rows_[i - 1][0]; }
  double truncated_mass(long i) const { return truncated_[i - 1]; }

  // Row i over j = 0..len-1; trailing zero entries may be trimmed.
  const std::vector<double>& row(long i) const { return rows_[i - 1]; }

  // y = Q x and y = Q^T x restricted to states 1..zmax
  // (x[j-1] corresponds to state j).
  std::vector<double> apply(const std::vector<double>& x) const;
  std::vector<double> apply_transpose(const std::vector<double>& x) const;

  // Plain-text dump, byte-stable: load(dump(k)) reproduces dump(k) exactly.
  void dump(std::ostream& os) const;
  static TruncatedKernel load(std::istream& is);

 private:
  TruncatedKernel() = default;

  long zmax_ = 0;
  std::vector<std::vector<double>> rows_;  // rows_[i-1][j], j from 0
  std::vector<double> truncated_;
};

// rho with left eigenvector u (u^T Q = rho u^T, u^T 1 = 1) and right
// eigenvector v (Q v = rho v, u^T v = 1). u is the quasi-stationary
// distribution of the truncated chain, v the strength vector.
struct SpectralTriple {
  double rho = 0.0;
  std::vector<double> u;  // size zmax, indexed by state - 1
  std::vector<double> v;
  double residual = 0.0;  // max eigen-residual at exit
  long iterations = 0;

  void dump(std::ostream& os) const;
  static SpectralTriple load(std::istream& is);
};

// Two-sided power iteration with Rayleigh-quotient eigenvalue estimate.
// Throws NumericError if the residual does not reach tol within max_iters.
SpectralTriple spectral(const TruncatedKernel& kernel, double tol = 1e-12,
                        long max_iters = 1'000'000);

// Q-process transitions: rows[i-1][j-1] = Q_ij v_j / (rho v_i), renormalized
// to sum exactly to one; renorm[i-1] is the factor applied to row i.
struct QTransitions {
  std::vector<std::vector<double>> rows;
  std::vector<double> renorm;
};
QTransitions q_transitions(const TruncatedKernel& kernel,
                           const SpectralTriple& triple);

// Stationary law of the Q-process: pi_j proportional to u_j v_j.
std::vector<double> stationary_law(const SpectralTriple& triple);

// Conditional moments of the Q-process, m_up(z) = z^{-1} sum_j j Qup_{zj} and
// sigma2_up(z) = z^{-2} sum_j j^2 Qup_{zj} - m_up(z)^2.
double m_up(const TruncatedKernel& kernel, const SpectralTriple& triple, long z);
double sigma2_up(const TruncatedKernel& kernel, const SpectralTriple& triple,
                 long z);

// Survival vectors s_t = Q^t 1 for t = 0..tmax;
// s[t][i-1] = P(Z_t > 0 | Z_0 = i) on the truncated chain.
std::vector<std::vector<double>> survival_vectors(const TruncatedKernel& kernel,
                                                  long tmax);

// One row of the conditioned chain with t steps remaining before the horizon:
// P(Z_{l+1} = j | Z_l = i, Z_n > 0) = Q_ij s_{t-1}[j] / s_t[i], renormalized.
// surv must hold survival vectors up to index t.
std::vector<double> conditioned_row(
    const TruncatedKernel& kernel, long i, long t,
    const std::vector<std::vector<double>>& surv);

// Total-variation uncoupling bound d(k) = (rho^{-k}/2) sum_j u_j |e_j^T S^k 1|
// where S^k 1 = Q^k 1 - rho^k v. Entry [k] of the result is d(k), k = 0..kmax.
// The reference direction is taken from a deep iterate (kmax + tail_pad
// steps), which reproduces rho^k v to near machine precision; sums are
// compensated. d(0) equals coupling_limit identically.
std::vector<double> coupling_error_curve(const TruncatedKernel& kernel,
                                         const SpectralTriple& triple,
                                         long kmax, long tail_pad = 400);
double coupling_error(const TruncatedKernel& kernel,
                      const SpectralTriple& triple, long k);

// Limit of the uncoupling probability: (1/2) sum_j u_j |1 - v_j|.
double coupling_limit(const SpectralTriple& triple);

// Smallest k with d(k) < target. Throws NumericError when the target is not
// reachable within kmax steps at this truncation.
long default_hybrid_k(const TruncatedKernel& kernel,
                      const SpectralTriple& triple, double target = 1e-6,
                      long kmax = 4096);

// Kernel + spectral triple at an automatically chosen truncation: zmax is
// doubled (starting from max(64, 2*z0) rounded up to a power of two) until
// the quasi-stationary weight beyond 0.8*zmax drops below tail_weight.
struct KernelBundle {
  long zmax = 0;
  TruncatedKernel kernel;
  SpectralTriple triple;
  double tail_weight = 0.0;  // achieved u-mass beyond 0.8*zmax
};
KernelBundle build_adaptive(const OffspringSpec& spec, long z0,
                            long zmax_start = 0, double tail_weight = 1e-8,
                            double tol = 1e-12);

}  // namespace psdbp
