#pragma once

// Randomized equivalence sweep between the closed-form pairing operations and
// the literal truncated-Fock oracle. Kernels live on a three-mode grid with
// dyadic mode momenta and a dyadic electron lattice closed under every shift
// sum that can occur up to total photon arity 3 plus one below-sigma mode, so
// all shifted electron arguments either hit the lattice exactly or lie outside
// every kernel's support on both routes.

#include <algorithm>
#include <cstdint>
#include <memory>

#include "nelson/grid.hpp"

namespace nelson {

// Three dyadic modes with distinct weights; mode 0 sits below kSweepSigma,
// modes 1 and 2 above.
std::shared_ptr<const ModeGrid> sweep_mode_grid();

constexpr double kSweepSigma = 0.2;

// Base electron points (dyadic) plus the lattice closure under up to four
// mode shifts of either sign. The base-point count is written through
// n_base_out when non-null; base points come first in the grid.
std::shared_ptr<const ElectronGrid> sweep_electron_grid(const ModeGrid& grid,
                                                        int* n_base_out);

struct WickSweep {
  long long cases = 0;
  long long nontrivial = 0;  // oracle values above 1e-8, summed over ops
  double max_err_single = 0.0;
  double max_err_double = 0.0;
  double max_err_quad = 0.0;
  double max_err_check = 0.0;
  double max_partition_defect = 0.0;
  double max_herm_defect = 0.0;
  long long interp_fallbacks = 0;

  double max_err() const {
    return std::max(std::max(max_err_single, max_err_double),
                    std::max(max_err_quad, max_err_check));
  }
};

// Runs cases_per_combo random cases for every bra/ket arity combination with
// total photon count up to 3, comparing pair_single, pair_double, pair_quad
// (with its partition and conjugate symmetry) and pair_checkH against a
// brute-force evaluation on the truncated Fock space. Deterministic in seed.
WickSweep run_wick_oracle_sweep(int cases_per_combo, std::uint64_t seed);

}  // namespace nelson
