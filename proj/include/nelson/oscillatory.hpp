#pragma once

#include <vector>

#include "nelson/common.hpp"
#include "nelson/params.hpp"
#include "nelson/scattering.hpp"

namespace nelson {

// Kernel of the double commutator of the interaction with the two dressing
// operators, reduced to the families of a kernel set:
//   F_{n,m}(q; r | p; k) =
//     (n+1) sum_l w_l v(k_l) G_{A,n+1}(q + k_l; r, k_l) G_{B,m}(p - k_l; k),
// where v is the full smoothed coupling and (A, B) = (1, 2), or (2, 1) when
// `swapped` is set. Returns zero when n + 1 exceeds the family's arity cap.
// The shifted electron arguments must land on the kernels' lattices whenever
// the packet is nonzero there; a nonzero closed-form packet value at a missed
// lookup throws a validation error.
cplx eval_F(const TwoElectronKernelSet& tk, bool swapped, int n, int m, Vec3 q,
            const std::vector<int>& r, Vec3 p, const std::vector<int>& k,
            const ModelParams& params);

// Boundary between slowly and quickly decaying couplings,
//   sigma_s = kappa (sigma / kappa)^{1 / (8 gamma0)}.
double slow_cutoff_sigma(double sigma, const ModelParams& params);

// eval_F split by coupling speed: `slow` keeps the modes below sigma_s
// through the quintic step chi(|k_l| / sigma_s), `fast` the complement, and
// slow + fast reproduces `total` exactly (the weights sum to one per mode).
struct SplitF {
  cplx total, slow, fast;
};

SplitF eval_F_split(const TwoElectronKernelSet& tk, bool swapped, int n, int m,
                    Vec3 q, const std::vector<int>& r, Vec3 p,
                    const std::vector<int>& k, const ModelParams& params);

// Pointwise magnitude bound used to dominate |F|: the product of per-cloud
// envelopes g(r) g(k) / sqrt(n! m!) over the tuple's mode momenta.
double envelope_bound(const ModeGrid& grid, int n, const std::vector<int>& r,
                      int m, const std::vector<int>& k, double sigma,
                      const ModelParams& params, double c_env);

// Decay-law shapes fitted against sampled magnitudes.
enum class DecayModel {
  InverseT,         // c / t
  InverseTSquared,  // c / t^2
  ThreeRegime,      // sigma^{alpha/(4 gamma0)} / t + sigma t + 1/(t^2 sigma^{1/(4 gamma0)})
};

struct DecaySample {
  double t = 0.0;
  double value = 0.0;
};

struct DecayReport {
  SlopeFit fit;               // log |value| against log t
  double constant = 0.0;      // calibrated envelope constant, first-half max ratio
  double late_excess = 0.0;   // worst second-half ratio over the calibrated bound
  bool enveloped = false;     // late_excess <= 1.25 * constant
  int dropped = 0;            // non-positive samples excluded from the fit
};

// Fits the samples against the model. Requires at least five positive
// samples spanning a decade in t. The envelope constant is calibrated on the
// first half of the time range and the flag reports whether the second half
// stays within 25 percent of it.
DecayReport fit_decay(const std::vector<DecaySample>& samples, DecayModel model,
                      double sigma, const ModelParams& params);

// Closed-form check of the arity sums: with the envelope norm in log form,
//   ||g^m||^2 = (lambda c_env)^{2m} log^m(kappa* / sigma),
// the weighted sum over m + n = mt + nt of (mt + nt)! / (m! n! mt! nt!)
// times ||g^{m-s_m}||^2 ||g^{n-s_n}||^2 must stay below the closed form
// (kappa* / sigma)^{4 lambda^2 c_env^2} times 1, 2, or 4 for the shift
// patterns (0,0), (1,0), (1,1). Terms below 1e-16 of the accumulated sum are
// truncated.
struct SummationRow {
  double sigma = 0.0;
  double lhs[3] = {0.0, 0.0, 0.0};  // shift patterns (0,0), (1,0), (1,1)
  double rhs = 0.0;
  bool ok = false;  // every lhs within its factor times rhs, with 1e-9 slack
  // Quadrature envelope norm on the supplied grid, for comparison with the
  // log form; zero when no grid is given.
  double quad_norm1 = 0.0;
};

struct SummationReport {
  double lambda = 0.0;
  double c_env = 0.0;
  std::vector<SummationRow> rows;
  bool all_ok = false;
};

SummationReport summation_check(const std::vector<double>& sigma_list,
                                const ModelParams& params, double c_env,
                                const ModeGrid* grid = nullptr);

}  // namespace nelson
