#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nelson/common.hpp"
#include "nelson/fiber.hpp"
#include "nelson/fock.hpp"
#include "nelson/grid.hpp"
#include "nelson/params.hpp"
#include "nelson/wick.hpp"

namespace nelson {

// The pairing formulas evaluate bra kernels at electron arguments shifted by
// signed sums of photon-mode momenta. Snapping every mode momentum onto the
// electron lattice once, at grid construction, keeps all those shifts exact
// in binary floating point, so table lookups never miss and never fall back
// to a neighbor. Weights are untouched; modes that land on the same lattice
// point merge, their weights adding. Throws when a snapped node would cross
// a shell boundary or the sigma / kappa edge (the spacing is too coarse for
// the grid's shells).
ModeGrid snap_grid_to_lattice(const ModeGrid& grid, double spacing);

// Uniform electron lattice of the given spacing covering the union of the
// balls B(center_i, radius_i), padded by `margin_cells` lattice cells. Every
// point carries weight spacing^3 and the lookup radius is zero: a query off
// the lattice reads as zero, which is exact for functions supported on the
// balls. Centers are snapped to the lattice first.
std::shared_ptr<ElectronGrid> build_packet_lattice(
    const std::vector<Vec3>& centers, const std::vector<double>& radii,
    double spacing, int margin_cells = 1);

// Compactly supported C^2 bump in momentum space,
//   h(p) = A exp(-r^2 / (r^2 - |p - c|^2))   for |p - c| < r,  else 0,
// with A chosen so the lattice L2 norm of the samples is one. The closed
// form stays available through operator() for off-lattice queries.
class WavePacket {
 public:
  WavePacket() = default;

  Vec3 center() const { return center_; }
  double radius() const { return radius_; }
  double amplitude() const { return amplitude_; }

  const std::shared_ptr<const ElectronGrid>& egrid() const { return egrid_; }
  const std::vector<double>& samples() const { return samples_; }
  // Indices of lattice points where the sample is nonzero.
  const std::vector<int>& support() const { return support_; }

  double operator()(Vec3 p) const;

  // Lattice quadrature norms of the samples and the closed-form sup norms of
  // the packet and its gradient over the support ball.
  double norm_l1() const { return l1_; }
  double norm_l2() const { return l2_; }
  double norm_linf() const { return linf_; }
  double max_gradient() const { return max_grad_; }

  friend WavePacket make_bump(Vec3 center, double radius,
                              std::shared_ptr<const ElectronGrid> egrid,
                              const ModelParams& params);

 private:
  Vec3 center_;
  double radius_ = 0.0;
  double amplitude_ = 0.0;
  std::shared_ptr<const ElectronGrid> egrid_;
  std::vector<double> samples_;
  std::vector<int> support_;
  double l1_ = 0.0, l2_ = 0.0, linf_ = 0.0, max_grad_ = 0.0;
};

// Builds the normalized bump on the lattice. The support ball must fit
// inside the momentum domain, |center| + radius <= p_max, and must contain
// at least one lattice point.
WavePacket make_bump(Vec3 center, double radius,
                     std::shared_ptr<const ElectronGrid> egrid,
                     const ModelParams& params);

// True when the support balls of the two packets are disjoint.
bool packets_disjoint(const WavePacket& a, const WavePacket& b);

// Axis-aligned bounding box of the ground-state group velocities over a
// packet's support.
struct VelocityBox {
  Vec3 lo, hi;
  double min_speed = 0.0;
  double max_speed = 0.0;
  bool contains(Vec3 v) const;
};

// Central finite differences of the energy surface at every support point of
// the packet. The surface cube must contain each support point with one
// interior cell to spare on every side.
VelocityBox velocity_support(const WavePacket& h, const EnergySurface& surface);

// Distance between the boxes (zero when they intersect).
double box_gap(const VelocityBox& a, const VelocityBox& b);

// Minimum distance between the velocity sets themselves: min over support
// pairs of |grad E(p1) - grad E(p2)|, from the same finite differences. Each
// packet reads its own surface.
double velocity_separation(const WavePacket& h1, const EnergySurface& s1,
                           const WavePacket& h2, const EnergySurface& s2);

// Ground-state data kept per (P, sigma): the scalars and the symmetric
// m-photon amplitude tables, without the raw Fock vector.
struct StoredGround {
  Vec3 P;
  double sigma = 0.0;
  double energy = 0.0;
  double gap = 0.0;
  double residual = 0.0;
  std::map<int, PhotonTable> components;
};

// Cache of fiber ground states keyed by (P, sigma) up to quantization
// tolerance. ensure() solves the missing entries, optionally in parallel,
// and returns how many solves ran. save/load use a little binary format with
// a magic tag and version; load returns false when the file is absent or the
// tag does not match, leaving the store unchanged.
class GroundStateStore {
 public:
  const StoredGround* find(Vec3 P, double sigma) const;
  void insert(StoredGround gs);

  int ensure(const std::vector<Vec3>& points, double sigma,
             std::shared_ptr<const FockBasis> basis, const ModelParams& params,
             const SolverOptions& opts = {}, int threads = 1);

  bool save(const std::string& path) const;
  bool load(const std::string& path);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Key {
    QKey3 p;
    long long sigma = 0;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  static Key make_key(Vec3 P, double sigma);

  std::unordered_map<Key, StoredGround, KeyHash> entries_;
};

// Energy surface on the packet's support read out of the store instead of
// fresh solves, on a cube of the given lattice spacing. Only the support
// points and their axis neighbors are filled; slots the finite differences
// never read stay NaN. Missing store entries throw.
EnergySurface surface_from_store(const WavePacket& h, double sigma,
                                 const GroundStateStore& store, double spacing);

// Energy entering the phases e^{-i E t}. LadderMin evaluates every packet at
// the reference cutoff sigma_ref (one fixed dispersion for the whole ladder),
// Current at the cutoff the kernels are built for.
enum class EnergyRef { LadderMin, Current };

// Shared inputs of the scattering routines: the physical parameters, the
// snapped mode grid, the packet lattice, the Fock basis of the fiber solves,
// and the ground-state cache. All referenced objects are read-only during
// runs and may be shared across threads.
struct ScatteringContext {
  ModelParams params;
  std::shared_ptr<const ModeGrid> grid;
  std::shared_ptr<const ElectronGrid> egrid;
  std::shared_ptr<const FockBasis> basis;
  GroundStateStore* store = nullptr;
  int m_max = 1;
  EnergyRef energy_ref = EnergyRef::LadderMin;
  double sigma_ref = 0.0;  // cutoff used by LadderMin phases
  int threads = 1;
  SolverOptions solver;
  double c_env = 1.0;  // envelope constant for arity tail estimates
};

void validate_context(const ScatteringContext& ctx);

// Kernel family of one dressed two-packet state at time t and cutoff sigma:
//   G_{i,m}(q; k) = e^{-i E_ref(q) t} h_i(q) f^m_{q,sigma}(k),  m = 0..m_max.
// Tuples touching modes below sigma are dropped; the amplitudes there vanish
// by the support of the cutoff coupling, so this only removes solver noise.
struct TwoElectronKernelSet {
  double t = 0.0;
  double sigma = 0.0;
  int m_max = 0;
  WavePacket h1, h2;
  std::vector<DiscreteKernel> g1, g2;  // index = photon arity
};

// Tabulates both families from the ground-state cache. Every support point
// of each packet must already be solved at this sigma (and at sigma_ref when
// the context phases use LadderMin), otherwise a validation error names the
// missing momentum.
TwoElectronKernelSet build_kernels(const ScatteringContext& ctx,
                                   const WavePacket& h1, const WavePacket& h2,
                                   double t, double sigma);

// Single dressed packet psi_{h,sigma} = sum_P w_P h(P) psi_{P,sigma} in the
// sense of its kernel family; norm_psi is the lattice norm of the dressed
// state and equals norm_h = ||h||_2 exactly when the component tables are
// exactly normalized.
struct SingleElectronState {
  double sigma = 0.0;
  WavePacket h;
  std::vector<DiscreteKernel> g;  // index = photon arity, no phases
  double norm_h = 0.0;
  double norm_psi = 0.0;
};

// Builds the dressed state and verifies ||psi|| = ||h||_2 within 1e-10.
SingleElectronState psi_h_sigma(const ScatteringContext& ctx,
                                const WavePacket& h, double sigma);

// <psi_a, psi_b> across possibly different cutoffs: the electron sum of
// conj(h_a) h_b times the overlap of the photon clouds.
cplx psi_inner(const SingleElectronState& a, const SingleElectronState& b);

// Two-packet overlap split by contraction class. `direct` collects the
// pairings where each cloud meets its own bra partner and sums to the
// product <psi'_1, psi_1><psi'_2, psi_2>; `exchange` the swapped pairings;
// `rest` every mixed pairing. max_total_arity is the last creator total
// included before the envelope tail estimate fell below 1e-12 of the
// accumulated value; tail_bound is that estimate.
struct OverlapParts {
  cplx total, direct, exchange, rest;
  double tail_bound = 0.0;
  int max_total_arity = 0;
  PairingStats stats;
};

OverlapParts overlap(const ScatteringContext& ctx,
                     const TwoElectronKernelSet& bra,
                     const TwoElectronKernelSet& ket);

// Couplings of the modes the cutoff removed: v_check on modes strictly below
// sigma (no infrared smoothing inside the ball), zero at and above sigma.
std::vector<double> check_couplings(const ModeGrid& grid, double sigma,
                                    const ModelParams& params);

// Norms of the three pieces of the time derivative of the dressed two-packet
// state at fixed t and sigma, phases removed:
//   norm_dcomm   - the double commutator of the interaction with the two
//                  dressing operators, assembled from the shifted-coupling
//                  kernels and paired as two-slot states;
//   norm_check   - the removed-coupling term, paired through the check-photon
//                  sandwich; zero with check_active = false when the grid has
//                  no modes below sigma;
//   norm_hsigma  - the dispersion-mismatch term with weights
//                  (E_{q,sigma} - E_ref(q)) h_i(q); identically zero when the
//                  context phases use the current cutoff;
//   norm_total   - the full derivative norm; the check piece carries an odd
//                  check-photon number and is orthogonal to the other two, so
//                  norm_total^2 = ||dcomm + hsigma||^2 + norm_check^2.
// Both packet orders are summed inside every piece.
struct CookTerms {
  double norm_dcomm = 0.0;
  double norm_check = 0.0;
  double norm_hsigma = 0.0;
  double norm_total = 0.0;
  bool check_active = false;
  PairingStats stats;
};

CookTerms cook_terms(const ScatteringContext& ctx, const WavePacket& h1,
                     const WavePacket& h2, double t, double sigma);

// One row of a cutoff-ladder run: overlaps between consecutive ladder states
// and the size of the rest class at each stage.
struct ConvergenceRow {
  double t1 = 0.0, t2 = 0.0;
  double sigma1 = 0.0, sigma2 = 0.0;
  cplx o11, o22, o12;
  double diff_norm2 = 0.0;  // ||Psi_2 - Psi_1||^2 through the three overlaps
  double rest_12 = 0.0;
  double isometry_defect = 0.0;  // | ||Psi|| - ||h1|| ||h2|| | at stage 2
};

struct ConvergenceReport {
  double gamma = 0.0;
  std::vector<ConvergenceRow> rows;
  SlopeFit rest_fit;            // |rest| against t, log-log
  double truncation_delta = 0.0;  // |total(m_max) - total(m_max - 1)| at t_0
  double truncation_tail = 0.0;   // tail estimate at m_max, t_0
};

// Runs the ladder sigma_t = kappa / t^gamma over the given times. Throws a
// validation error naming the first time whose sigma_t falls below the
// grid's infrared edge, with the largest admissible gamma in the message.
ConvergenceReport convergence_study(const ScatteringContext& ctx,
                                    const WavePacket& h1, const WavePacket& h2,
                                    double gamma,
                                    const std::vector<double>& t_list);

// Rest-class magnitude against time at fixed cutoff, with a log-log fit.
struct RestDecayReport {
  double sigma = 0.0;
  std::vector<double> t;
  std::vector<double> rest_abs;
  std::vector<double> total_abs;
  SlopeFit fit;
};

RestDecayReport rest_decay_study(const ScatteringContext& ctx,
                                 const WavePacket& h1, const WavePacket& h2,
                                 double sigma,
                                 const std::vector<double>& t_list);

}  // namespace nelson
