#pragma once

#include <map>
#include <memory>
#include <vector>

#include "nelson/common.hpp"
#include "nelson/fock.hpp"
#include "nelson/form_factors.hpp"
#include "nelson/grid.hpp"
#include "nelson/params.hpp"

namespace nelson {

struct TupleKeyHash {
  std::size_t operator()(const std::vector<std::uint32_t>& v) const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto c : v) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

// Symmetric m-photon amplitude table over grid modes. Values are addressed by
// mode-index tuples; storage is dense for m <= 2 and sparse above.
class PhotonTable {
 public:
  PhotonTable() = default;
  PhotonTable(int m, std::size_t J);

  int arity() const { return m_; }
  std::size_t modes() const { return J_; }

  // Tuple may be in any order (the table is symmetric).
  cplx value(std::vector<std::uint32_t> tuple) const;
  void set(std::vector<std::uint32_t> tuple, cplx v);

  // Quadrature L2 norm squared: sum over ordered tuples of Prod w * |f|^2.
  double norm2(const ModeGrid& grid) const;

  // Applies f(tuple) *= factor for every stored entry.
  void scale(cplx factor);

  const std::unordered_map<std::vector<std::uint32_t>, cplx, TupleKeyHash>& entries() const {
    return sparse_;
  }

 private:
  int m_ = 0;
  std::size_t J_ = 0;
  cplx scalar_ = 0.0;                 // m = 0
  std::vector<cplx> dense_;           // m = 1 (J) or m = 2 (J*J, both orders)
  std::unordered_map<std::vector<std::uint32_t>, cplx, TupleKeyHash> sparse_;  // m >= 3, sorted keys
};

struct SolverOptions {
  double tol = 1e-10;          // residual ||H psi - E psi||
  int max_iter = 600;
  std::size_t dense_dim = 2000;  // dense diagonalization below this dimension
  std::uint64_t seed = 12345;  // restart vector source on Krylov breakdown
};

struct GroundState {
  Vec3 P;
  double sigma = 0.0;
  double energy = 0.0;
  double gap = 0.0;
  double residual = 0.0;
  // Norm of the amplitude carried by states occupying modes below sigma;
  // exact support says this should vanish.
  double norm_check = 0.0;
  std::vector<cplx> vector;
  std::shared_ptr<const FockBasis> basis;
  std::map<int, PhotonTable> components;
};

// H = (P - P_f)^2 / 2 + H_f + Sum_j sqrt(w_j) v^sigma(k_j) (b_j + b_j^dagger).
// The quadratic electron term is diagonal in the occupation basis.
SparseOperator assemble_fiber_hamiltonian(Vec3 P, double sigma, const ModeGrid& grid,
                                          const FockBasis& basis, const ModelParams& params);

// Lowest eigenpair of a Hermitian operator: dense diagonalization below
// opts.dense_dim, otherwise Rayleigh-Ritz on a fully reorthogonalized Krylov
// space seeded with the vacuum. The phase is fixed so the vacuum amplitude is
// real and positive; the gap comes from the two lowest Ritz values.
GroundState ground_state(const SparseOperator& H, std::shared_ptr<const FockBasis> basis,
                         const SolverOptions& opts = {});

// Convenience wrapper: assemble + solve + tag with (P, sigma).
GroundState solve_fiber(Vec3 P, double sigma, std::shared_ptr<const FockBasis> basis,
                        const ModelParams& params, const SolverOptions& opts = {});

// Unpacks the occupation amplitudes into symmetric m-photon tables,
// f^m(modes of n) = psi_n * sqrt(Prod n_j! / m!) / Prod w_j^{n_j/2},
// and caches them on the state. Sum_m ||f^m||^2 = 1.
const std::map<int, PhotonTable>& extract_components(GroundState& gs);

// One-photon component through the resolvent identity:
// f1(k_j) = -v^sigma(k_j) <Omega, (H_{P-k_j} + |k_j| - E_P)^{-1} psi_trunc>,
// with the resolvent assembled on the basis truncated at m_max - 1 and
// psi_trunc the projection of the ground vector onto it. In the truncated
// model this identity is exact, so the result matches extract_components.
// The shifted operator is verified positive definite before solving.
std::vector<cplx> froehlich_f1(const GroundState& gs, const ModeGrid& grid,
                               const FockBasis& basis, const ModelParams& params,
                               double cg_tol = 1e-10);

struct CubeSpec {
  Vec3 center;
  double h = 0.0;  // lattice spacing
  int n = 0;       // points per axis (odd keeps the center on the grid)

  std::vector<Vec3> points() const;
  std::size_t flat(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * n + iy) * n + iz;
  }
};

struct EnergySurface {
  double sigma = 0.0;
  CubeSpec cube;
  std::vector<double> energies;  // cube lex order (x outer, z inner)

  double at(int ix, int iy, int iz) const { return energies[cube.flat(ix, iy, iz)]; }
};

EnergySurface energy_surface(double sigma, const CubeSpec& cube,
                             std::shared_ptr<const FockBasis> basis,
                             const ModelParams& params, const SolverOptions& opts = {});

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double max_residual = 0.0;  // max |log y - fit| over samples
};

// Least squares on (log x, log y).
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

struct SpectralReport {
  struct PerSigma {
    double sigma = 0.0;
    double min_hessian_eig = 0.0;  // over interior cube points
    bool convex = false;
    double max_grad = 0.0;
    double max_d2 = 0.0;
    double max_d3 = 0.0;
  };
  std::vector<PerSigma> per_sigma;

  // |E_{P,sigma} - E_{P,sigma'}| (max over the cube) against sigma for
  // consecutive ladder pairs.
  std::vector<double> cauchy_sigma;
  std::vector<double> cauchy_gap;
  SlopeFit energy_cauchy;

  // ||psi_sigma - psi_sigma'|| at the cube center (states on one common
  // basis), against sigma'.
  std::vector<double> psi_cauchy;
  SlopeFit state_cauchy;

  // || d psi / dP || at the cube center per sigma (phase-aligned central
  // differences), fitted as c / sigma^delta.
  std::vector<double> dpsi_norm;
  SlopeFit state_deriv;

  bool all_convex = false;
};

// surfaces: one per sigma, same cube, descending sigma ladder. states[i] must
// hold, for surfaces[i].sigma, ground states at the cube center and the six
// center +- h_P axis neighbors (in the order c, +x, -x, +y, -y, +z, -z), all
// on one shared basis across sigmas. h_P is the differencing step used for
// d psi / dP (the cube spacing serves for the energy derivatives).
SpectralReport verify_spectral_bounds(const std::vector<EnergySurface>& surfaces,
                                      const std::vector<std::vector<GroundState>>& states,
                                      double h_P, const ModelParams& params);

void write_f1_csv(const std::vector<cplx>& f1, const ModeGrid& grid, const std::string& path);

}  // namespace nelson
