#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "nelson/common.hpp"
#include "nelson/grid.hpp"

namespace nelson {

using Occupation = std::vector<std::uint8_t>;

struct OccupationHash {
  std::size_t operator()(const Occupation& n) const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto c : n) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

// Occupation-number basis of the photon Fock space over a mode grid,
// truncated at total number m_max. Graded by total photon number with the
// vacuum first; within a grade the first mode fills first.
struct FockBasis {
  ModeGrid grid;
  int m_max = 0;
  std::vector<Occupation> states;
  std::vector<std::size_t> grade_offset;  // grade_offset[m] = first index of grade m; size m_max+2
  std::unordered_map<Occupation, std::size_t, OccupationHash> index;

  std::size_t J() const { return grid.size(); }
  std::size_t dim() const { return states.size(); }
  int grade_of(std::size_t idx) const;
  std::size_t lookup(const Occupation& n) const;  // throws if absent
};

FockBasis build_basis(const ModeGrid& grid, int m_max);

// Compressed-sparse-row complex matrix. Rows are contiguous and column
// indices sorted, so matrix-vector products are deterministic regardless of
// how rows are distributed over threads.
struct SparseOperator {
  std::size_t dim = 0;
  std::vector<std::size_t> row_ptr;  // size dim+1
  std::vector<std::uint32_t> col;
  std::vector<cplx> val;
  bool hermitian = false;

  std::vector<cplx> apply(const std::vector<cplx>& x) const;
  cplx entry(std::size_t r, std::size_t c) const;
  std::size_t nnz() const { return val.size(); }
};

struct Triplet {
  std::size_t row, col;
  cplx value;
};

SparseOperator operator_from_triplets(std::size_t dim, std::vector<Triplet> triplets,
                                      bool hermitian_hint = false);

SparseOperator creation(std::size_t j, const FockBasis& basis);
SparseOperator annihilation(std::size_t j, const FockBasis& basis);
SparseOperator photon_energy(const FockBasis& basis);
SparseOperator photon_momentum(const FockBasis& basis, int axis);

// Sum_j weights[j] * (b_j + b_j^dagger). Hermitian when the weights are real.
SparseOperator smeared_field(const std::vector<cplx>& weights, const FockBasis& basis);

void write_operator_csv(const SparseOperator& op, const std::string& path);

}  // namespace nelson
