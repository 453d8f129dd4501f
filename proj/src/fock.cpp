#include "nelson/fock.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace nelson {

namespace {

void enumerate_grade(std::size_t J, int m, Occupation& cur, std::size_t pos,
                     std::vector<Occupation>& out) {
  if (pos + 1 == J) {
    cur[pos] = static_cast<std::uint8_t>(m);
    out.push_back(cur);
    cur[pos] = 0;
    return;
  }
  for (int n = m; n >= 0; --n) {
    cur[pos] = static_cast<std::uint8_t>(n);
    enumerate_grade(J, m - n, cur, pos + 1, out);
  }
  cur[pos] = 0;
}

}  // namespace

int FockBasis::grade_of(std::size_t idx) const {
  for (int m = 0; m <= m_max; ++m)
    if (idx < grade_offset[m + 1]) return m;
  throw validation_error("grade_of: index out of range");
}

std::size_t FockBasis::lookup(const Occupation& n) const {
  auto it = index.find(n);
  if (it == index.end()) throw validation_error("occupation vector not in basis");
  return it->second;
}

FockBasis build_basis(const ModeGrid& grid, int m_max) {
  if (m_max < 0) throw validation_error("build_basis: m_max must be >= 0");
  const std::size_t J = grid.size();
  if (J == 0) throw validation_error("build_basis: empty grid");

  // dimension = C(J + m_max, m_max); guard before enumerating
  double dim_est = 1.0;
  for (int i = 1; i <= m_max; ++i) dim_est = dim_est * (J + i) / i;
  if (dim_est > 5e6)
    throw validation_error("build_basis: dimension " + std::to_string(dim_est) +
                           " exceeds the 5e6 state guard");

  FockBasis b;
  b.grid = grid;
  b.m_max = m_max;
  b.grade_offset.resize(m_max + 2);
  Occupation cur(J, 0);
  for (int m = 0; m <= m_max; ++m) {
    b.grade_offset[m] = b.states.size();
    enumerate_grade(J, m, cur, 0, b.states);
  }
  b.grade_offset[m_max + 1] = b.states.size();
  b.index.reserve(b.states.size());
  for (std::size_t i = 0; i < b.states.size(); ++i) b.index.emplace(b.states[i], i);
  return b;
}

SparseOperator operator_from_triplets(std::size_t dim, std::vector<Triplet> t,
                                      bool hermitian_hint) {
  std::sort(t.begin(), t.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseOperator op;
  op.dim = dim;
  op.hermitian = hermitian_hint;
  op.row_ptr.assign(dim + 1, 0);
  op.col.reserve(t.size());
  op.val.reserve(t.size());
  for (std::size_t i = 0; i < t.size();) {
    std::size_t j = i;
    cplx sum = 0.0;
    while (j < t.size() && t[j].row == t[i].row && t[j].col == t[i].col) {
      sum += t[j].value;
      ++j;
    }
    if (sum != 0.0) {
      op.row_ptr[t[i].row + 1]++;
      op.col.push_back(static_cast<std::uint32_t>(t[i].col));
      op.val.push_back(sum);
    }
    i = j;
  }
  for (std::size_t r = 0; r < dim; ++r) op.row_ptr[r + 1] += op.row_ptr[r];
  return op;
}

std::vector<cplx> SparseOperator::apply(const std::vector<cplx>& x) const {
  if (x.size() != dim) throw validation_error("apply: dimension mismatch");
  std::vector<cplx> y(dim, cplx(0.0));
  for (std::size_t r = 0; r < dim; ++r) {
    cplx acc = 0.0;
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) acc += val[p] * x[col[p]];
    y[r] = acc;
  }
  return y;
}

cplx SparseOperator::entry(std::size_t r, std::size_t c) const {
  for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p)
    if (col[p] == c) return val[p];
  return 0.0;
}

SparseOperator creation(std::size_t j, const FockBasis& basis) {
  if (j >= basis.J()) throw validation_error("creation: mode index out of range");
  std::vector<Triplet> t;
  Occupation up;
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const Occupation& n = basis.states[i];
    if (basis.grade_of(i) >= basis.m_max) continue;  // hard truncation
    up = n;
    up[j]++;
    t.push_back({basis.lookup(up), i, std::sqrt(static_cast<double>(n[j]) + 1.0)});
  }
  return operator_from_triplets(basis.dim(), std::move(t));
}

SparseOperator annihilation(std::size_t j, const FockBasis& basis) {
  if (j >= basis.J()) throw validation_error("annihilation: mode index out of range");
  std::vector<Triplet> t;
  Occupation down;
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const Occupation& n = basis.states[i];
    if (n[j] == 0) continue;
    down = n;
    down[j]--;
    t.push_back({basis.lookup(down), i, std::sqrt(static_cast<double>(n[j]))});
  }
  return operator_from_triplets(basis.dim(), std::move(t));
}

SparseOperator photon_energy(const FockBasis& basis) {
  std::vector<Triplet> t;
  t.reserve(basis.dim());
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    double e = 0.0;
    const Occupation& n = basis.states[i];
    for (std::size_t j = 0; j < basis.J(); ++j)
      if (n[j]) e += n[j] * norm(basis.grid[j].k);
    if (e != 0.0) t.push_back({i, i, e});
  }
  return operator_from_triplets(basis.dim(), std::move(t), true);
}

SparseOperator photon_momentum(const FockBasis& basis, int axis) {
  if (axis < 0 || axis > 2) throw validation_error("photon_momentum: axis must be 0, 1 or 2");
  std::vector<Triplet> t;
  t.reserve(basis.dim());
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    double pf = 0.0;
    const Occupation& n = basis.states[i];
    for (std::size_t j = 0; j < basis.J(); ++j) {
      if (!n[j]) continue;
      const Vec3& k = basis.grid[j].k;
      pf += n[j] * (axis == 0 ? k.x : axis == 1 ? k.y : k.z);
    }
    if (pf != 0.0) t.push_back({i, i, pf});
  }
  return operator_from_triplets(basis.dim(), std::move(t), true);
}

SparseOperator smeared_field(const std::vector<cplx>& weights, const FockBasis& basis) {
  if (weights.size() != basis.J())
    throw validation_error("smeared_field: need one weight per mode");
  std::vector<Triplet> t;
  Occupation tmp;
  bool real_weights = true;
  for (const cplx& c : weights)
    if (c.imag() != 0.0) real_weights = false;
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const Occupation& n = basis.states[i];
    const bool can_raise = basis.grade_of(i) < basis.m_max;
    for (std::size_t j = 0; j < basis.J(); ++j) {
      const cplx c = weights[j];
      if (c == 0.0) continue;
      if (can_raise) {
        tmp = n;
        tmp[j]++;
        t.push_back({basis.lookup(tmp), i, c * std::sqrt(static_cast<double>(n[j]) + 1.0)});
      }
      if (n[j]) {
        tmp = n;
        tmp[j]--;
        t.push_back({basis.lookup(tmp), i, c * std::sqrt(static_cast<double>(n[j]))});
      }
    }
  }
  return operator_from_triplets(basis.dim(), std::move(t), real_weights);
}

void write_operator_csv(const SparseOperator& op, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "row,col,re,im\n";
  char buf[128];
  for (std::size_t r = 0; r < op.dim; ++r)
    for (std::size_t p = op.row_ptr[r]; p < op.row_ptr[r + 1]; ++p) {
      std::snprintf(buf, sizeof buf, "%zu,%u,%.17g,%.17g\n", r, op.col[p],
                    op.val[p].real(), op.val[p].imag());
      out << buf;
    }
}

}  // namespace nelson
