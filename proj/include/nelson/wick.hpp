#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "nelson/common.hpp"
#include "nelson/grid.hpp"

namespace nelson {

// Counters filled by the pairing engines. `interp_fallbacks` counts electron
// lookups that missed every table point by more than the exact-hit tolerance
// but still fell inside the grid's lookup radius (the value of the nearest
// point was used). `mismatched_pairings` counts calls whose creator and
// annihilator totals disagree; such a pairing is identically zero.
struct PairingStats {
  long long interp_fallbacks = 0;
  long long mismatched_pairings = 0;
};

struct ElectronPoint {
  Vec3 p;
  double w = 0.0;  // momentum-space quadrature weight
};

// Finite electron momentum grid with spatial lookup. A query within 1e-9 of a
// stored point is an exact hit. With a positive lookup radius, queries within
// that radius of some point resolve to the nearest point (counted as an
// interpolation fallback); anything farther is outside the kernel's support
// and reads as zero. Radius zero gives strict exact-or-absent semantics.
class ElectronGrid {
 public:
  ElectronGrid() = default;
  ElectronGrid(std::vector<ElectronPoint> points, double lookup_radius);

  int size() const { return static_cast<int>(points_.size()); }
  const ElectronPoint& operator[](int i) const { return points_[i]; }
  double lookup_radius() const { return lookup_radius_; }

  // Index of the grid point matching p, or -1 when p lies outside the
  // support. Near misses increment stats->interp_fallbacks when stats is set.
  int lookup(const Vec3& p, PairingStats* stats = nullptr) const;

 private:
  std::vector<ElectronPoint> points_;
  double lookup_radius_ = 0.0;
  double cell_ = 1.0;
  std::unordered_map<QKey3, std::vector<int>, QKey3Hash> bins_;
};

// Table of complex kernel values over electron grid points and photon mode
// tuples, symmetric within each photon group by sorted storage. Two shapes
// occur: one electron slot with one photon group, G(p; k_1..k_m), and two
// electron slots each carrying a photon group, F(q; r_1..r_n | p; k_1..k_m).
class DiscreteKernel {
 public:
  DiscreteKernel(std::shared_ptr<const ModeGrid> grid,
                 std::shared_ptr<const ElectronGrid> egrid, int m);
  DiscreteKernel(std::shared_ptr<const ModeGrid> grid,
                 std::shared_ptr<const ElectronGrid> egrid_q,
                 std::shared_ptr<const ElectronGrid> egrid_p, int n, int m);

  int electron_arity() const { return e_arity_; }
  int photon_arity(int slot = 0) const { return arity_[slot]; }
  int total_photon_arity() const { return arity_[0] + arity_[1]; }
  const ModeGrid& grid() const { return *grid_; }
  const std::shared_ptr<const ModeGrid>& grid_ptr() const { return grid_; }
  const ElectronGrid& egrid(int slot = 0) const { return *egrid_[slot]; }
  const std::shared_ptr<const ElectronGrid>& egrid_ptr(int slot = 0) const {
    return egrid_[slot];
  }

  // Table access by indices. Tuples may arrive in any order; storage sorts.
  void set(int e, std::span<const int> t, cplx v);
  cplx at(int e, std::span<const int> t) const;
  void set2(int eq, std::span<const int> r, int ep, std::span<const int> k, cplx v);
  cplx at2(int eq, std::span<const int> r, int ep, std::span<const int> k) const;

  // Evaluation at a momentum-space electron argument (shifted arguments in the
  // pairing identities). Off-support arguments read as zero.
  cplx eval(const Vec3& p, std::span<const int> t,
            PairingStats* stats = nullptr) const;
  cplx eval2(const Vec3& q, std::span<const int> r, const Vec3& p,
             std::span<const int> k, PairingStats* stats = nullptr) const;

  void scale(cplx s);
  // Applies fn(e_indices, sorted_tuples, value) to every nonzero entry.
  template <typename Fn>
  void for_each_nonzero(Fn&& fn) const;

  std::size_t table_size() const { return table_.size(); }
  // True once any entry was written at electron index e of the given slot.
  // Lets the pairing loops skip electron rows that are entirely zero.
  bool e_slot_occupied(int slot, int e) const {
    return occupied_[slot][static_cast<std::size_t>(e)] != 0;
  }

 private:
  std::size_t tuple_rank(std::span<const int> t, int arity) const;
  std::size_t index1(int e, std::span<const int> t) const;
  std::size_t index2(int eq, std::span<const int> r, int ep,
                     std::span<const int> k) const;

  std::shared_ptr<const ModeGrid> grid_;
  std::shared_ptr<const ElectronGrid> egrid_[2];
  int e_arity_ = 1;
  int arity_[2] = {0, 0};
  std::size_t n_tuples_[2] = {1, 1};
  std::vector<cplx> table_;
  std::vector<char> occupied_[2];
};

// One contraction pattern: a permutation rho sending creator slots (the n
// r-slots followed by the m k-slots) to annihilator slots (the n-tilde
// r-slots followed by the m-tilde k-slots), plus its block decomposition.
// r_hat / r_check hold positions within the r-group whose images land in the
// annihilator r-group / k-group; k_hat / k_check hold positions within the
// k-group landing in the annihilator k-group / r-group.
struct ContractionPattern {
  std::vector<int> rho;
  std::vector<int> r_hat, r_check;
  std::vector<int> k_hat, k_check;
};

struct PatternSet {
  int m = 0, n = 0, m_tilde = 0, n_tilde = 0;
  bool mismatched = false;  // totals differ; the pairing is identically zero
  std::vector<ContractionPattern> patterns;
};

// All (m+n)! contraction patterns for creator arities (n photons on the first
// group, m on the second) against annihilator arities (n_tilde, m_tilde).
// Mismatched totals yield an empty set with the flag raised. Totals above 8
// are rejected (factorial growth).
PatternSet enumerate_patterns(int m, int n, int m_tilde, int n_tilde);

// Permanent of a dense real matrix in row-major storage. Direct expansion up
// to order 5, Ryser's formula with Gray-code updates above.
double permanent(const std::vector<double>& a, int n);

// Vacuum expectation of a normal-ordered monomial of discrete annihilation
// and creation operators, <0| a(rt)^{nt} a(kt)^{mt} a*(r)^n a*(k)^m |0>, with
// the continuum delta replaced by delta_{jl}/w_j on the mode grid. Equals the
// permanent of the 0-or-1/w biadjacency matrix between creator and
// annihilator slots.
double vev_monomial(const std::vector<int>& r_tilde,
                    const std::vector<int>& k_tilde,
                    const std::vector<int>& r, const std::vector<int>& k,
                    const ModeGrid& grid);

// <0| B_m(gp) B*_m(g) |0> = m! * sum over electron points and ordered photon
// tuples of conj(gp) g with quadrature weights. The bra kernel gp enters
// conjugated. Photon arity mismatch returns zero and counts as a mismatch.
cplx pair_single(const DiscreteKernel& gp, const DiscreteKernel& g,
                 PairingStats* stats = nullptr);

// Pairing of two-electron-slot kernels,
// <B*(fp) vac, B*(f) vac> = sum over patterns of the two-term bracket with
// block-shifted electron arguments. Requires equal creator and annihilator
// photon totals, else zero with the mismatch flag.
cplx pair_double(const DiscreteKernel& fp, const DiscreteKernel& f,
                 PairingStats* stats = nullptr);

// Four-kernel expectation
// <0| B_nt(g1p) B_mt(g2p) B*_n(g1) B*_m(g2) |0>.
cplx pair_quad(const DiscreteKernel& g1p, const DiscreteKernel& g2p,
               const DiscreteKernel& g1, const DiscreteKernel& g2,
               PairingStats* stats = nullptr);

// Same sum split by contraction class. `direct` collects second-bracket terms
// of patterns with empty r_check and k_check (each cloud pairs with its own
// bra partner), `exchange` first-bracket terms of patterns with empty r_hat
// and k_hat (the clouds swap), `rest` everything else. `total` is accumulated
// independently alongside the three parts.
struct QuadParts {
  cplx total, direct, exchange, rest;
};
QuadParts pair_quad_classified(const DiscreteKernel& g1p,
                               const DiscreteKernel& g2p,
                               const DiscreteKernel& g1,
                               const DiscreteKernel& g2,
                               PairingStats* stats = nullptr);

// Sandwich of the below-sigma creation Hamiltonian between scattering-state
// words: <B*(g1p) Hc B*(g2p) vac, B*(g1) Hc B*(g2) vac> where Hc carries
// per-mode couplings vcheck supported strictly below sigma. The coupling
// photon can only contract with its partner on the other side, so kernels
// must not be supported below sigma for the identity to hold. vcheck is
// indexed like the kernels' mode grid. The grid must contain at least one
// mode below sigma; vcheck must vanish on modes at or above sigma.
cplx pair_checkH(const DiscreteKernel& g2p, const DiscreteKernel& g1p,
                 const DiscreteKernel& g1, const DiscreteKernel& g2,
                 const std::vector<double>& vcheck, double sigma,
                 PairingStats* stats = nullptr);

template <typename Fn>
void DiscreteKernel::for_each_nonzero(Fn&& fn) const {
  // Walk the dense table by odometer over electron indices and sorted tuples.
  std::vector<int> t0(arity_[0]), t1(arity_[1]);
  const int ne0 = egrid_[0]->size();
  const int ne1 = e_arity_ == 2 ? egrid_[1]->size() : 1;
  const int nm = static_cast<int>(grid_->size());
  auto advance_sorted = [nm](std::vector<int>& t) {
    int i = static_cast<int>(t.size()) - 1;
    while (i >= 0) {
      if (t[i] + 1 < nm) {
        ++t[i];
        for (std::size_t j = i + 1; j < t.size(); ++j) t[j] = t[i];
        return true;
      }
      --i;
    }
    return false;
  };
  for (int e0 = 0; e0 < ne0; ++e0) {
    for (int e1 = 0; e1 < ne1; ++e1) {
      std::fill(t0.begin(), t0.end(), 0);
      do {
        std::fill(t1.begin(), t1.end(), 0);
        do {
          cplx v = e_arity_ == 1 ? at(e0, t0) : at2(e0, t0, e1, t1);
          if (v != cplx{}) {
            int es[2] = {e0, e1};
            fn(std::span<const int>(es, static_cast<std::size_t>(e_arity_)),
               std::span<const int>(t0), std::span<const int>(t1), v);
          }
        } while (!t1.empty() && advance_sorted(t1));
      } while (!t0.empty() && advance_sorted(t0));
      if (e_arity_ == 1) break;
    }
  }
}

}  // namespace nelson
