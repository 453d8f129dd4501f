#include "nelson/wick.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

namespace nelson {

namespace {

constexpr double kExactHitTol = 1e-9;

// Compensated complex accumulator; the pairing sums mix many signs and the
// classified parts must reproduce the jointly accumulated total at 1e-12.
struct KahanC {
  cplx sum{};
  cplx comp{};
  void add(cplx v) {
    cplx y = v - comp;
    cplx t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

std::uint64_t ubinom(int n, int k) {
  if (k < 0 || k > n) return 0;
  if (k > n - k) k = n - k;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / i;
  return r;
}

bool advance_ordered(std::vector<int>& t, int base) {
  for (int i = static_cast<int>(t.size()) - 1; i >= 0; --i) {
    if (++t[i] < base) return true;
    t[i] = 0;
  }
  return false;
}

}  // namespace

ElectronGrid::ElectronGrid(std::vector<ElectronPoint> points, double lookup_radius)
    : points_(std::move(points)), lookup_radius_(lookup_radius) {
  if (lookup_radius_ < 0.0)
    throw validation_error("ElectronGrid: lookup radius must be >= 0");
  for (const auto& pt : points_)
    if (!(pt.w > 0.0))
      throw validation_error("ElectronGrid: point weights must be positive");
  cell_ = std::max(lookup_radius_, 1e-6);
  for (int i = 0; i < size(); ++i)
    bins_[quantize(points_[i].p, 1.0 / cell_)].push_back(i);
}

int ElectronGrid::lookup(const Vec3& p, PairingStats* stats) const {
  if (points_.empty()) return -1;
  const QKey3 center = quantize(p, 1.0 / cell_);
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::int64_t da = -1; da <= 1; ++da)
    for (std::int64_t db = -1; db <= 1; ++db)
      for (std::int64_t dc = -1; dc <= 1; ++dc) {
        auto it = bins_.find(QKey3{center.a + da, center.b + db, center.c + dc});
        if (it == bins_.end()) continue;
        for (int i : it->second) {
          double d2 = norm2(points_[i].p - p);
          if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
          }
        }
      }
  if (best < 0) return -1;
  const double d = std::sqrt(best_d2);
  if (d <= kExactHitTol) return best;
  if (d <= lookup_radius_) {
    if (stats) ++stats->interp_fallbacks;
    return best;
  }
  return -1;
}

DiscreteKernel::DiscreteKernel(std::shared_ptr<const ModeGrid> grid,
                               std::shared_ptr<const ElectronGrid> egrid, int m)
    : grid_(std::move(grid)), e_arity_(1) {
  if (!grid_ || !egrid) throw validation_error("DiscreteKernel: null grid");
  if (m < 0) throw validation_error("DiscreteKernel: negative photon arity");
  egrid_[0] = std::move(egrid);
  egrid_[1] = egrid_[0];
  arity_[0] = m;
  const int M = static_cast<int>(grid_->size());
  n_tuples_[0] = ubinom(M + m - 1, m);
  n_tuples_[1] = 1;
  table_.assign(static_cast<std::size_t>(egrid_[0]->size()) * n_tuples_[0], cplx{});
  occupied_[0].assign(egrid_[0]->size(), 0);
  occupied_[1].assign(1, 1);
}

DiscreteKernel::DiscreteKernel(std::shared_ptr<const ModeGrid> grid,
                               std::shared_ptr<const ElectronGrid> egrid_q,
                               std::shared_ptr<const ElectronGrid> egrid_p,
                               int n, int m)
    : grid_(std::move(grid)), e_arity_(2) {
  if (!grid_ || !egrid_q || !egrid_p)
    throw validation_error("DiscreteKernel: null grid");
  if (n < 0 || m < 0)
    throw validation_error("DiscreteKernel: negative photon arity");
  egrid_[0] = std::move(egrid_q);
  egrid_[1] = std::move(egrid_p);
  arity_[0] = n;
  arity_[1] = m;
  const int M = static_cast<int>(grid_->size());
  n_tuples_[0] = ubinom(M + n - 1, n);
  n_tuples_[1] = ubinom(M + m - 1, m);
  table_.assign(static_cast<std::size_t>(egrid_[0]->size()) *
                    static_cast<std::size_t>(egrid_[1]->size()) * n_tuples_[0] *
                    n_tuples_[1],
                cplx{});
  occupied_[0].assign(egrid_[0]->size(), 0);
  occupied_[1].assign(egrid_[1]->size(), 0);
}

std::size_t DiscreteKernel::tuple_rank(std::span<const int> t, int arity) const {
  // Rank of the sorted tuple in the combinations-with-repetition order.
  std::array<int, 8> s{};
  const int a = arity;
  for (int i = 0; i < a; ++i) s[i] = t[i];
  std::sort(s.begin(), s.begin() + a);
  const int M = static_cast<int>(grid_->size());
  if (a > 0 && (s[0] < 0 || s[a - 1] >= M))
    throw validation_error("DiscreteKernel: mode index out of range");
  std::uint64_t rank = 0;
  for (int i = 0; i < a; ++i) rank += ubinom(s[i] + i, i + 1);
  return static_cast<std::size_t>(rank);
}

std::size_t DiscreteKernel::index1(int e, std::span<const int> t) const {
  return static_cast<std::size_t>(e) * n_tuples_[0] + tuple_rank(t, arity_[0]);
}

std::size_t DiscreteKernel::index2(int eq, std::span<const int> r, int ep,
                                   std::span<const int> k) const {
  std::size_t idx = static_cast<std::size_t>(eq) * egrid_[1]->size() + ep;
  idx = idx * n_tuples_[0] + tuple_rank(r, arity_[0]);
  idx = idx * n_tuples_[1] + tuple_rank(k, arity_[1]);
  return idx;
}

void DiscreteKernel::set(int e, std::span<const int> t, cplx v) {
  if (e_arity_ != 1) throw validation_error("DiscreteKernel::set: wrong arity");
  if (e < 0 || e >= egrid_[0]->size())
    throw validation_error("DiscreteKernel::set: electron index out of range");
  if (static_cast<int>(t.size()) != arity_[0])
    throw validation_error("DiscreteKernel::set: tuple length mismatch");
  table_[index1(e, t)] = v;
  occupied_[0][static_cast<std::size_t>(e)] = 1;
}

cplx DiscreteKernel::at(int e, std::span<const int> t) const {
  return table_[index1(e, t)];
}

void DiscreteKernel::set2(int eq, std::span<const int> r, int ep,
                          std::span<const int> k, cplx v) {
  if (e_arity_ != 2) throw validation_error("DiscreteKernel::set2: wrong arity");
  if (eq < 0 || eq >= egrid_[0]->size() || ep < 0 || ep >= egrid_[1]->size())
    throw validation_error("DiscreteKernel::set2: electron index out of range");
  if (static_cast<int>(r.size()) != arity_[0] ||
      static_cast<int>(k.size()) != arity_[1])
    throw validation_error("DiscreteKernel::set2: tuple length mismatch");
  table_[index2(eq, r, ep, k)] = v;
  occupied_[0][static_cast<std::size_t>(eq)] = 1;
  occupied_[1][static_cast<std::size_t>(ep)] = 1;
}

cplx DiscreteKernel::at2(int eq, std::span<const int> r, int ep,
                         std::span<const int> k) const {
  return table_[index2(eq, r, ep, k)];
}

cplx DiscreteKernel::eval(const Vec3& p, std::span<const int> t,
                          PairingStats* stats) const {
  const int e = egrid_[0]->lookup(p, stats);
  if (e < 0) return cplx{};
  return at(e, t);
}

cplx DiscreteKernel::eval2(const Vec3& q, std::span<const int> r, const Vec3& p,
                           std::span<const int> k, PairingStats* stats) const {
  const int eq = egrid_[0]->lookup(q, stats);
  if (eq < 0) return cplx{};
  const int ep = egrid_[1]->lookup(p, stats);
  if (ep < 0) return cplx{};
  return at2(eq, r, ep, k);
}

void DiscreteKernel::scale(cplx s) {
  for (auto& v : table_) v *= s;
}

PatternSet enumerate_patterns(int m, int n, int m_tilde, int n_tilde) {
  if (m < 0 || n < 0 || m_tilde < 0 || n_tilde < 0)
    throw validation_error("enumerate_patterns: negative arity");
  PatternSet out;
  out.m = m;
  out.n = n;
  out.m_tilde = m_tilde;
  out.n_tilde = n_tilde;
  if (m + n != m_tilde + n_tilde) {
    out.mismatched = true;
    return out;
  }
  const int total = m + n;
  if (total > 8)
    throw validation_error("enumerate_patterns: total arity above 8");
  std::vector<int> perm(total);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    ContractionPattern pat;
    pat.rho = perm;
    for (int i = 0; i < n; ++i) {
      if (perm[i] < n_tilde)
        pat.r_hat.push_back(i);
      else
        pat.r_check.push_back(i);
    }
    for (int i = n; i < total; ++i) {
      if (perm[i] >= n_tilde)
        pat.k_hat.push_back(i - n);
      else
        pat.k_check.push_back(i - n);
    }
    out.patterns.push_back(std::move(pat));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

double permanent(const std::vector<double>& a, int n) {
  if (n < 0 || static_cast<std::size_t>(n) * n != a.size())
    throw validation_error("permanent: matrix size mismatch");
  if (n == 0) return 1.0;
  if (n <= 5) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double acc = 0.0;
    do {
      double prod = 1.0;
      for (int i = 0; i < n; ++i) prod *= a[static_cast<std::size_t>(i) * n + perm[i]];
      acc += prod;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return acc;
  }
  // Ryser with Gray-code subset updates.
  std::vector<double> rowsum(n, 0.0);
  double acc = 0.0;
  const std::uint32_t limit = 1u << n;
  std::uint32_t prev_gray = 0;
  for (std::uint32_t g = 1; g < limit; ++g) {
    const std::uint32_t gray = g ^ (g >> 1);
    const std::uint32_t diff = gray ^ prev_gray;
    const int j = std::countr_zero(diff);
    const double sgn_col = (gray & diff) ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i)
      rowsum[i] += sgn_col * a[static_cast<std::size_t>(i) * n + j];
    double prod = 1.0;
    for (int i = 0; i < n; ++i) prod *= rowsum[i];
    const int popcnt = std::popcount(gray);
    acc += ((n - popcnt) % 2 == 0 ? 1.0 : -1.0) * prod;
    prev_gray = gray;
  }
  return acc;
}

double vev_monomial(const std::vector<int>& r_tilde,
                    const std::vector<int>& k_tilde, const std::vector<int>& r,
                    const std::vector<int>& k, const ModeGrid& grid) {
  std::vector<int> creators = r;
  creators.insert(creators.end(), k.begin(), k.end());
  std::vector<int> annihilators = r_tilde;
  annihilators.insert(annihilators.end(), k_tilde.begin(), k_tilde.end());
  if (creators.size() != annihilators.size()) return 0.0;
  const int total = static_cast<int>(creators.size());
  if (total == 0) return 1.0;
  if (total > 8) throw validation_error("vev_monomial: total arity above 8");
  const int M = static_cast<int>(grid.size());
  for (int j : creators)
    if (j < 0 || j >= M) throw validation_error("vev_monomial: bad mode index");
  for (int j : annihilators)
    if (j < 0 || j >= M) throw validation_error("vev_monomial: bad mode index");
  std::vector<double> biadj(static_cast<std::size_t>(total) * total, 0.0);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j < total; ++j)
      if (creators[i] == annihilators[j])
        biadj[static_cast<std::size_t>(i) * total + j] = 1.0 / grid[creators[i]].w;
  return permanent(biadj, total);
}

namespace {

void require_same_grid(const DiscreteKernel& a, const DiscreteKernel& b,
                       const char* op) {
  if (&a.grid() != &b.grid())
    throw validation_error(std::string(op) + ": kernels must share a mode grid");
}

// Pattern blocks resolved against concrete ordered tuples: shift sums and the
// mode-index tuples fed to the bra kernels' two photon groups.
struct ResolvedBlocks {
  Vec3 r_hat_sum, r_check_sum, k_hat_sum, k_check_sum;
  std::array<int, 8> bra1{};  // (r_hat, k_check), length n_tilde
  std::array<int, 8> bra2{};  // (k_hat, r_check), length m_tilde
  int len1 = 0, len2 = 0;
};

void resolve_blocks(const ContractionPattern& pat, const ModeGrid& grid,
                    std::span<const int> r, std::span<const int> k,
                    ResolvedBlocks& out) {
  out.r_hat_sum = out.r_check_sum = out.k_hat_sum = out.k_check_sum = Vec3{};
  out.len1 = out.len2 = 0;
  for (int i : pat.r_hat) {
    out.r_hat_sum += grid[r[i]].k;
    out.bra1[out.len1++] = r[i];
  }
  for (int i : pat.k_check) {
    out.k_check_sum += grid[k[i]].k;
    out.bra1[out.len1++] = k[i];
  }
  for (int i : pat.k_hat) {
    out.k_hat_sum += grid[k[i]].k;
    out.bra2[out.len2++] = k[i];
  }
  for (int i : pat.r_check) {
    out.r_check_sum += grid[r[i]].k;
    out.bra2[out.len2++] = r[i];
  }
}

double tuple_weight(const ModeGrid& grid, std::span<const int> t) {
  double w = 1.0;
  for (int j : t) w *= grid[j].w;
  return w;
}

}  // namespace

cplx pair_single(const DiscreteKernel& gp, const DiscreteKernel& g,
                 PairingStats* stats) {
  if (gp.electron_arity() != 1 || g.electron_arity() != 1)
    throw validation_error("pair_single: expects single-electron-slot kernels");
  require_same_grid(gp, g, "pair_single");
  const int m = g.photon_arity();
  if (gp.photon_arity() != m) {
    if (stats) ++stats->mismatched_pairings;
    return cplx{};
  }
  const ModeGrid& grid = g.grid();
  const int M = static_cast<int>(grid.size());
  const ElectronGrid& eg = g.egrid();
  const bool shared_egrid = &eg == &gp.egrid();
  KahanC acc;
  std::vector<int> t(m, 0);
  for (int e = 0; e < eg.size(); ++e) {
    if (!g.e_slot_occupied(0, e)) continue;
    const double we = eg[e].w;
    std::fill(t.begin(), t.end(), 0);
    do {
      cplx v = g.at(e, t);
      if (v == cplx{}) continue;
      cplx bra = shared_egrid ? gp.at(e, t) : gp.eval(eg[e].p, t, stats);
      if (bra == cplx{}) continue;
      acc.add(we * tuple_weight(grid, t) * std::conj(bra) * v);
    } while (!t.empty() && advance_ordered(t, M));
  }
  return factorial(m) * acc.sum;
}

cplx pair_double(const DiscreteKernel& fp, const DiscreteKernel& f,
                 PairingStats* stats) {
  if (fp.electron_arity() != 2 || f.electron_arity() != 2)
    throw validation_error("pair_double: expects two-electron-slot kernels");
  require_same_grid(fp, f, "pair_double");
  const int n = f.photon_arity(0), m = f.photon_arity(1);
  const int n_t = fp.photon_arity(0), m_t = fp.photon_arity(1);
  PatternSet ps = enumerate_patterns(m, n, m_t, n_t);
  if (ps.mismatched) {
    if (stats) ++stats->mismatched_pairings;
    return cplx{};
  }
  const ModeGrid& grid = f.grid();
  const int M = static_cast<int>(grid.size());
  const ElectronGrid& egq = f.egrid(0);
  const ElectronGrid& egp = f.egrid(1);
  KahanC acc;
  std::vector<int> r(n, 0), k(m, 0);
  ResolvedBlocks rb;
  for (int eq = 0; eq < egq.size(); ++eq) {
    if (!f.e_slot_occupied(0, eq)) continue;
    const Vec3 q = egq[eq].p;
    for (int ep = 0; ep < egp.size(); ++ep) {
      if (!f.e_slot_occupied(1, ep)) continue;
      const Vec3 p = egp[ep].p;
      const double wqp = egq[eq].w * egp[ep].w;
      std::fill(r.begin(), r.end(), 0);
      do {
        std::fill(k.begin(), k.end(), 0);
        do {
          cplx val = f.at2(eq, r, ep, k);
          if (val == cplx{}) continue;
          const double w = wqp * tuple_weight(grid, r) * tuple_weight(grid, k);
          for (const auto& pat : ps.patterns) {
            resolve_blocks(pat, grid, r, k, rb);
            std::span<const int> g1(rb.bra1.data(), static_cast<std::size_t>(rb.len1));
            std::span<const int> g2(rb.bra2.data(), static_cast<std::size_t>(rb.len2));
            const Vec3 hat = rb.k_hat_sum - rb.r_hat_sum;
            const Vec3 chk = rb.k_check_sum - rb.r_check_sum;
            cplx t1 = std::conj(fp.eval2(p - hat, g1, q + hat, g2, stats));
            cplx t2 = std::conj(fp.eval2(q + chk, g1, p - chk, g2, stats));
            if (t1 != cplx{} || t2 != cplx{}) acc.add(w * val * (t1 + t2));
          }
        } while (!k.empty() && advance_ordered(k, M));
      } while (!r.empty() && advance_ordered(r, M));
    }
  }
  return acc.sum;
}

QuadParts pair_quad_classified(const DiscreteKernel& g1p,
                               const DiscreteKernel& g2p,
                               const DiscreteKernel& g1,
                               const DiscreteKernel& g2, PairingStats* stats) {
  if (g1p.electron_arity() != 1 || g2p.electron_arity() != 1 ||
      g1.electron_arity() != 1 || g2.electron_arity() != 1)
    throw validation_error("pair_quad: expects single-electron-slot kernels");
  require_same_grid(g1p, g1, "pair_quad");
  require_same_grid(g2p, g1, "pair_quad");
  require_same_grid(g2, g1, "pair_quad");
  const int n = g1.photon_arity(), m = g2.photon_arity();
  const int n_t = g1p.photon_arity(), m_t = g2p.photon_arity();
  PatternSet ps = enumerate_patterns(m, n, m_t, n_t);
  if (ps.mismatched) {
    if (stats) ++stats->mismatched_pairings;
    return QuadParts{};
  }
  const ModeGrid& grid = g1.grid();
  const int M = static_cast<int>(grid.size());
  const ElectronGrid& egq = g1.egrid();
  const ElectronGrid& egp = g2.egrid();
  // Classification of each bracket term: the second (unhatted-shift) term of a
  // pattern with empty check blocks pairs each ket cloud with its own bra
  // partner; the first term of a pattern with empty hat blocks swaps them.
  KahanC total, direct, exchange, rest;
  std::vector<int> r(n, 0), k(m, 0);
  ResolvedBlocks rb;
  for (int eq = 0; eq < egq.size(); ++eq) {
    if (!g1.e_slot_occupied(0, eq)) continue;
    const Vec3 q = egq[eq].p;
    for (int ep = 0; ep < egp.size(); ++ep) {
      if (!g2.e_slot_occupied(0, ep)) continue;
      const Vec3 p = egp[ep].p;
      const double wqp = egq[eq].w * egp[ep].w;
      std::fill(r.begin(), r.end(), 0);
      do {
        cplx v1 = g1.at(eq, r);
        if (v1 == cplx{}) {
          if (r.empty()) break;
          continue;
        }
        std::fill(k.begin(), k.end(), 0);
        do {
          cplx val = v1 * g2.at(ep, k);
          if (val == cplx{}) continue;
          const double w = wqp * tuple_weight(grid, r) * tuple_weight(grid, k);
          const cplx wval = w * val;
          for (const auto& pat : ps.patterns) {
            resolve_blocks(pat, grid, r, k, rb);
            std::span<const int> b1(rb.bra1.data(), static_cast<std::size_t>(rb.len1));
            std::span<const int> b2(rb.bra2.data(), static_cast<std::size_t>(rb.len2));
            const Vec3 hat = rb.k_hat_sum - rb.r_hat_sum;
            const Vec3 chk = rb.k_check_sum - rb.r_check_sum;
            cplx ta = std::conj(g1p.eval(p - hat, b1, stats)) *
                      std::conj(g2p.eval(q + hat, b2, stats));
            cplx tb = std::conj(g1p.eval(q + chk, b1, stats)) *
                      std::conj(g2p.eval(p - chk, b2, stats));
            if (ta == cplx{} && tb == cplx{}) continue;
            total.add(wval * (ta + tb));
            const bool checks_empty = pat.r_check.empty() && pat.k_check.empty();
            const bool hats_empty = pat.r_hat.empty() && pat.k_hat.empty();
            if (tb != cplx{}) {
              if (checks_empty)
                direct.add(wval * tb);
              else
                rest.add(wval * tb);
            }
            if (ta != cplx{}) {
              if (hats_empty)
                exchange.add(wval * ta);
              else
                rest.add(wval * ta);
            }
          }
        } while (!k.empty() && advance_ordered(k, M));
      } while (!r.empty() && advance_ordered(r, M));
    }
  }
  return QuadParts{total.sum, direct.sum, exchange.sum, rest.sum};
}

cplx pair_quad(const DiscreteKernel& g1p, const DiscreteKernel& g2p,
               const DiscreteKernel& g1, const DiscreteKernel& g2,
               PairingStats* stats) {
  return pair_quad_classified(g1p, g2p, g1, g2, stats).total;
}

cplx pair_checkH(const DiscreteKernel& g2p, const DiscreteKernel& g1p,
                 const DiscreteKernel& g1, const DiscreteKernel& g2,
                 const std::vector<double>& vcheck, double sigma,
                 PairingStats* stats) {
  if (g2p.electron_arity() != 1 || g1p.electron_arity() != 1 ||
      g1.electron_arity() != 1 || g2.electron_arity() != 1)
    throw validation_error("pair_checkH: expects single-electron-slot kernels");
  require_same_grid(g2p, g1, "pair_checkH");
  require_same_grid(g1p, g1, "pair_checkH");
  require_same_grid(g2, g1, "pair_checkH");
  const ModeGrid& grid = g1.grid();
  const int M = static_cast<int>(grid.size());
  if (vcheck.size() != grid.size())
    throw validation_error("pair_checkH: vcheck length must match the grid");
  std::vector<int> sub_modes;
  for (int j = 0; j < M; ++j) {
    if (norm(grid[j].k) < sigma) sub_modes.push_back(j);
    else if (vcheck[j] != 0.0)
      throw validation_error("pair_checkH: vcheck must vanish at or above sigma");
  }
  if (sub_modes.empty())
    throw validation_error("pair_checkH: grid carries no modes below sigma");
  double vnorm2 = 0.0;
  for (int j : sub_modes) vnorm2 += grid[j].w * vcheck[j] * vcheck[j];

  const int n = g1.photon_arity(), m = g2.photon_arity();
  const int n_t = g2p.photon_arity(), m_t = g1p.photon_arity();
  PatternSet ps = enumerate_patterns(m, n, m_t, n_t);
  if (ps.mismatched) {
    if (stats) ++stats->mismatched_pairings;
    return cplx{};
  }
  const ElectronGrid& egq = g1.egrid();
  const ElectronGrid& egp = g2.egrid();
  KahanC acc;
  std::vector<int> r(n, 0), k(m, 0);
  ResolvedBlocks rb;
  for (int eq = 0; eq < egq.size(); ++eq) {
    if (!g1.e_slot_occupied(0, eq)) continue;
    const Vec3 q = egq[eq].p;
    for (int ep = 0; ep < egp.size(); ++ep) {
      if (!g2.e_slot_occupied(0, ep)) continue;
      const Vec3 p = egp[ep].p;
      const double wqp = egq[eq].w * egp[ep].w;
      std::fill(r.begin(), r.end(), 0);
      do {
        cplx v1 = g1.at(eq, r);
        if (v1 == cplx{}) {
          if (r.empty()) break;
          continue;
        }
        std::fill(k.begin(), k.end(), 0);
        do {
          cplx val = v1 * g2.at(ep, k);
          if (val == cplx{}) continue;
          const double w = wqp * tuple_weight(grid, r) * tuple_weight(grid, k);
          for (const auto& pat : ps.patterns) {
            resolve_blocks(pat, grid, r, k, rb);
            std::span<const int> b1(rb.bra1.data(), static_cast<std::size_t>(rb.len1));
            std::span<const int> b2(rb.bra2.data(), static_cast<std::size_t>(rb.len2));
            const Vec3 hat = rb.k_hat_sum - rb.r_hat_sum;
            const Vec3 chk = rb.k_check_sum - rb.r_check_sum;
            // Crossed electron routing: the interaction momentum shift
            // survives in both bra arguments.
            cplx term_sub{};
            for (int j : sub_modes) {
              if (vcheck[j] == 0.0) continue;
              const Vec3 kj = grid[j].k;
              cplx b2v = std::conj(g2p.eval(q + kj + chk, b1, stats));
              if (b2v == cplx{}) continue;
              cplx b1v = std::conj(g1p.eval(p - kj - chk, b2, stats));
              if (b1v == cplx{}) continue;
              term_sub += grid[j].w * vcheck[j] * vcheck[j] * b2v * b1v;
            }
            // Parallel routing: the shift cancels within each electron line
            // and the coupling square sum factors out.
            cplx term_full = vnorm2 * std::conj(g2p.eval(p - hat, b1, stats)) *
                             std::conj(g1p.eval(q + hat, b2, stats));
            if (term_sub != cplx{} || term_full != cplx{})
              acc.add(w * val * (term_sub + term_full));
          }
        } while (!k.empty() && advance_ordered(k, M));
      } while (!r.empty() && advance_ordered(r, M));
    }
  }
  return acc.sum;
}

}  // namespace nelson
