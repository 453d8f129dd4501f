#pragma once

#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "nelson/common.hpp"
#include "nelson/grid.hpp"
#include "nelson/wick.hpp"

namespace nelson {

// Basis label of the truncated two-electron model space: up to two bosonic
// electrons at exact discrete momenta plus a photon occupation over the mode
// grid. Electrons are kept sorted by quantized coordinates so a multiset of
// momenta has one canonical key.
struct OracleKey {
  int n_electrons = 0;
  Vec3 electrons[2];
  std::vector<std::uint8_t> photons;

  bool operator==(const OracleKey& o) const;
};

struct OracleKeyHash {
  std::size_t operator()(const OracleKey& k) const;
};

// Sparse vector over monomial states eta*(p1)..eta*(pl) a*(k1)^n1.. vacuum.
// Monomials are not normalized; the inner product supplies the factors
// n_j!/w_j^{n_j} per photon mode and 1/w_p per electron (2/w_p^2 for a
// doubly occupied electron momentum).
using OracleState = std::unordered_map<OracleKey, cplx, OracleKeyHash>;

// One letter of an operator word, applied literally to oracle states.
struct OpSymbol {
  enum Kind {
    PhotonCreate,
    PhotonAnnihilate,
    ElectronCreate,
    ElectronAnnihilate
  } kind;
  int mode = 0;      // photon operators
  Vec3 p;            // electron operators
  double w = 0.0;    // quadrature weight, electron creation only
};

// Literal state-vector arithmetic on the truncated two-electron plus photon
// space. All operators follow the smeared-delta normalization
// [a_j, a_l*] = delta_{jl}/w_j and [eta_p, eta_q*] = delta_{pq}/w_p, so
// expectation values computed here are directly comparable with the pairing
// formulas. Exceeding the photon cap or the two-electron bound throws.
class OracleSpace {
 public:
  OracleSpace(std::shared_ptr<const ModeGrid> grid, int photon_cap,
              double default_electron_weight = 0.0);

  const ModeGrid& grid() const { return *grid_; }
  int photon_cap() const { return photon_cap_; }

  OracleState vacuum() const;

  OracleState photon_create(int mode, const OracleState& s) const;
  OracleState photon_annihilate(int mode, const OracleState& s) const;
  OracleState electron_create(const Vec3& p, double w, const OracleState& s);
  OracleState electron_annihilate(const Vec3& p, const OracleState& s) const;

  // Registers the quadrature weight carried by an electron momentum, for
  // points that enter through Hamiltonian shifts rather than explicit
  // creation. Re-registration with a different weight throws.
  void register_electron_weight(const Vec3& p, double w);

  // B*_m(G) for a one-electron-slot kernel: sums over the kernel's electron
  // grid and ordered photon tuples, creating the photons and an electron at
  // p - (sum of tuple momenta).
  OracleState apply_Bstar(const DiscreteKernel& g, const OracleState& s);
  // B*_{n,m}(F) for a two-electron-slot kernel.
  OracleState apply_Bstar2(const DiscreteKernel& f, const OracleState& s);
  // Below-sigma creation Hamiltonian with per-mode couplings vcheck: for each
  // electron and each mode j, amplitude w_j vcheck_j, photon j created and
  // the electron shifted down by k_j.
  OracleState apply_checkH(const std::vector<double>& vcheck,
                           const OracleState& s);

  // Free part: sum of p^2/2 over electrons plus sum n_j |k_j|.
  OracleState apply_free(const OracleState& s) const;
  // Interaction with per-mode couplings v: absorption moves an electron up by
  // k_j with amplitude n_j v_j, emission moves it down with amplitude w_j v_j.
  OracleState apply_interaction(const std::vector<double>& v,
                                const OracleState& s);
  OracleState apply_hamiltonian(const std::vector<double>& v,
                                const OracleState& s);

  cplx inner(const OracleState& a, const OracleState& b) const;
  double norm(const OracleState& a) const;

 private:
  double electron_weight(const Vec3& p) const;
  double key_norm2(const OracleKey& k) const;

  std::shared_ptr<const ModeGrid> grid_;
  int photon_cap_ = 0;
  double default_electron_weight_ = 0.0;
  std::unordered_map<QKey3, double, QKey3Hash> eweights_;
};

// y += a * x, dropping exact zeros.
void axpy(OracleState& y, cplx a, const OracleState& x);

// <vacuum, word vacuum> with the word applied right to left.
cplx brute_force_vev(std::span<const OpSymbol> word, OracleSpace& space);

}  // namespace nelson
