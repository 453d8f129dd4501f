#include "nelson/selftest.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "nelson/grid.hpp"
#include "nelson/oracle.hpp"
#include "nelson/wick.hpp"

namespace nelson {

std::shared_ptr<const ModeGrid> sweep_mode_grid() {
  auto g = std::make_shared<ModeGrid>();
  g->modes = {{{0.125, 0.0, 0.0}, 0.5},
              {{0.0, 0.25, 0.0}, 0.25},
              {{0.25, -0.25, 0.5}, 1.0}};
  g->sigma = 0.0625;
  g->kappa = 1.0;
  g->shell_bounds = {0.0625, 1.0};
  return g;
}

std::shared_ptr<const ElectronGrid> sweep_electron_grid(const ModeGrid& grid,
                                                        int* n_base_out) {
  const std::vector<Vec3> base = {{0.0625, -0.125, 0.03125},
                                  {-0.15625, 0.0625, 0.09375},
                                  {0.1875, 0.125, -0.0625},
                                  {-0.03125, 0.21875, 0.15625}};
  const double weight = 0.03125;
  std::vector<ElectronPoint> pts;
  std::unordered_map<QKey3, bool, QKey3Hash> seen;
  auto add = [&](const Vec3& p) {
    if (seen.emplace(quantize(p), true).second) pts.push_back({p, weight});
  };
  for (const Vec3& b : base) add(b);
  const int depth = 4;
  for (int c0 = -depth; c0 <= depth; ++c0)
    for (int c1 = -depth; c1 <= depth; ++c1)
      for (int c2 = -depth; c2 <= depth; ++c2) {
        if (std::abs(c0) + std::abs(c1) + std::abs(c2) > depth) continue;
        for (const Vec3& b : base)
          add(b + static_cast<double>(c0) * grid[0].k +
              static_cast<double>(c1) * grid[1].k +
              static_cast<double>(c2) * grid[2].k);
      }
  if (n_base_out) *n_base_out = static_cast<int>(base.size());
  return std::make_shared<ElectronGrid>(std::move(pts), 0.0);
}

namespace {

cplx random_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng), u(rng)};
}

std::vector<int> random_tuple(std::mt19937_64& rng, int arity, int lo,
                              int hi) {
  std::uniform_int_distribution<int> d(lo, hi - 1);
  std::vector<int> t(arity);
  for (int& x : t) x = d(rng);
  std::sort(t.begin(), t.end());
  return t;
}

struct SweepContext {
  std::shared_ptr<const ModeGrid> grid;
  std::shared_ptr<const ElectronGrid> egrid;
  int n_base = 0;
  std::vector<double> vcheck;
  OracleSpace* oracle = nullptr;
};

struct KetEntry {
  int e;
  std::vector<int> t;
};

std::vector<KetEntry> ket_entries(const DiscreteKernel& g) {
  std::vector<KetEntry> out;
  g.for_each_nonzero([&](std::span<const int> es, std::span<const int> t0,
                         std::span<const int>, cplx) {
    out.push_back({es[0], std::vector<int>(t0.begin(), t0.end())});
  });
  return out;
}

// Shift sums and bra-side index groups of one pattern resolved against the
// concrete ket tuples (r of length n, k fills the rest), with annihilator
// split position n_tilde. Group one collects hatted r-slots and checked
// k-slots and has length n_tilde; group two the complement.
struct ResolvedShift {
  Vec3 hat, chk;
  std::vector<int> bra1, bra2;
};

ResolvedShift resolve_for_test(const ContractionPattern& pat, int n,
                               int n_tilde, const ModeGrid& grid,
                               const std::vector<int>& r,
                               const std::vector<int>& k) {
  ResolvedShift out;
  Vec3 r_hat{}, r_chk{}, k_hat{}, k_chk{};
  const int total = static_cast<int>(pat.rho.size());
  for (int i = 0; i < n; ++i) {
    if (pat.rho[i] < n_tilde) {
      r_hat += grid[r[i]].k;
      out.bra1.push_back(r[i]);
    } else {
      r_chk += grid[r[i]].k;
    }
  }
  for (int i = n; i < total; ++i) {
    if (pat.rho[i] < n_tilde) {
      k_chk += grid[k[i - n]].k;
      out.bra1.push_back(k[i - n]);
    } else {
      k_hat += grid[k[i - n]].k;
      out.bra2.push_back(k[i - n]);
    }
  }
  for (int i = 0; i < n; ++i)
    if (pat.rho[i] >= n_tilde) out.bra2.push_back(r[i]);
  out.hat = k_hat - r_hat;
  out.chk = k_chk - r_chk;
  return out;
}

struct ComboErrors {
  double err_single = 0.0, err_double = 0.0, err_quad = 0.0, err_check = 0.0;
  double partition = 0.0, herm = 0.0;
  int nontrivial = 0;
};

double rel_err(cplx formula, cplx oracle) {
  return std::abs(formula - oracle) / std::max(1.0, std::abs(oracle));
}

// One random case at fixed arities (ket n, m against bra n_t, m_t).
// Exercises pair_single on equal-arity combos, pair_double, pair_quad with
// its classification and conjugate symmetry, and pair_checkH, all against
// the literal oracle.
ComboErrors run_case(int n, int m, int n_t, int m_t, std::mt19937_64& rng,
                     const SweepContext& cx, PairingStats* stats) {
  const int M = static_cast<int>(cx.grid->size());
  const ElectronGrid& eg = *cx.egrid;
  std::uniform_int_distribution<int> eb(0, cx.n_base - 1);
  std::uniform_int_distribution<int> eany(0, eg.size() - 1);
  std::uniform_int_distribution<int> coin(0, 1);
  OracleSpace& oracle = *cx.oracle;
  ComboErrors out;

  // Ket kernels sit on the base points so every shifted image stays on the
  // lattice; bra kernels receive entries aimed at those images plus noise.
  DiscreteKernel g1(cx.grid, cx.egrid, n), g2(cx.grid, cx.egrid, m);
  DiscreteKernel g1p(cx.grid, cx.egrid, n_t), g2p(cx.grid, cx.egrid, m_t);
  DiscreteKernel f(cx.grid, cx.egrid, cx.egrid, n, m);
  DiscreteKernel fp(cx.grid, cx.egrid, cx.egrid, n_t, m_t);
  for (int i = 0; i < 2; ++i) {
    g1.set(eb(rng), random_tuple(rng, n, 0, M), random_unit(rng));
    g2.set(eb(rng), random_tuple(rng, m, 0, M), random_unit(rng));
    f.set2(eb(rng), random_tuple(rng, n, 0, M), eb(rng),
           random_tuple(rng, m, 0, M), random_unit(rng));
  }

  PatternSet ps = enumerate_patterns(m, n, m_t, n_t);
  const auto k1 = ket_entries(g1);
  const auto k2 = ket_entries(g2);
  std::uniform_int_distribution<int> pick_pat(
      0, static_cast<int>(ps.patterns.size()) - 1);
  std::uniform_int_distribution<int> pick1(0, static_cast<int>(k1.size()) - 1);
  std::uniform_int_distribution<int> pick2(0, static_cast<int>(k2.size()) - 1);

  for (int rep = 0; rep < 3; ++rep) {
    const auto& e1 = k1[pick1(rng)];
    const auto& e2 = k2[pick2(rng)];
    const auto& pat = ps.patterns[pick_pat(rng)];
    ResolvedShift rs = resolve_for_test(pat, n, n_t, *cx.grid, e1.t, e2.t);
    const Vec3 q = eg[e1.e].p, p = eg[e2.e].p;
    Vec3 pos1, pos2;
    if (coin(rng)) {
      pos1 = p - rs.hat;
      pos2 = q + rs.hat;
    } else {
      pos1 = q + rs.chk;
      pos2 = p - rs.chk;
    }
    const int i1 = eg.lookup(pos1), i2 = eg.lookup(pos2);
    if (i1 >= 0) g1p.set(i1, rs.bra1, random_unit(rng));
    if (i2 >= 0) g2p.set(i2, rs.bra2, random_unit(rng));
    if (i1 >= 0 && i2 >= 0) fp.set2(i1, rs.bra1, i2, rs.bra2, random_unit(rng));
  }
  g1p.set(eany(rng), random_tuple(rng, n_t, 0, M), random_unit(rng));
  g2p.set(eany(rng), random_tuple(rng, m_t, 0, M), random_unit(rng));
  if (n_t == n && m_t == m) {
    for (const auto& e : k1) g1p.set(e.e, e.t, g1.at(e.e, e.t));
    for (const auto& e : k2) g2p.set(e.e, e.t, g2.at(e.e, e.t));
  }

  // quad, with partition exactness and conjugate symmetry on the side
  {
    OracleState bra =
        oracle.apply_Bstar(g1p, oracle.apply_Bstar(g2p, oracle.vacuum()));
    OracleState ket =
        oracle.apply_Bstar(g1, oracle.apply_Bstar(g2, oracle.vacuum()));
    const cplx ov = oracle.inner(bra, ket);
    QuadParts parts = pair_quad_classified(g1p, g2p, g1, g2, stats);
    out.err_quad = rel_err(parts.total, ov);
    out.partition =
        std::abs(parts.direct + parts.exchange + parts.rest - parts.total) /
        std::max(1.0, std::abs(parts.total));
    cplx swapped = pair_quad(g1, g2, g1p, g2p, stats);
    out.herm = std::abs(parts.total - std::conj(swapped)) /
               std::max(1.0, std::abs(parts.total));
    if (std::abs(ov) > 1e-8) ++out.nontrivial;
  }

  // double
  {
    OracleState bra = oracle.apply_Bstar2(fp, oracle.vacuum());
    OracleState ket = oracle.apply_Bstar2(f, oracle.vacuum());
    const cplx ov = oracle.inner(bra, ket);
    out.err_double = rel_err(pair_double(fp, f, stats), ov);
    if (std::abs(ov) > 1e-8) ++out.nontrivial;
  }

  // single, when the first-kernel arities agree
  if (n_t == n) {
    OracleState bra = oracle.apply_Bstar(g1p, oracle.vacuum());
    OracleState ket = oracle.apply_Bstar(g1, oracle.vacuum());
    const cplx ov = oracle.inner(bra, ket);
    out.err_single = rel_err(pair_single(g1p, g1, stats), ov);
    if (std::abs(ov) > 1e-8) ++out.nontrivial;
  }

  // check sandwich; its kernels avoid the below-sigma mode, where a photon
  // leg could contract against the check interaction itself
  {
    DiscreteKernel c1(cx.grid, cx.egrid, n), c2(cx.grid, cx.egrid, m);
    DiscreteKernel c1p(cx.grid, cx.egrid, n_t), c2p(cx.grid, cx.egrid, m_t);
    for (int i = 0; i < 2; ++i) {
      c1.set(eb(rng), random_tuple(rng, n, 1, M), random_unit(rng));
      c2.set(eb(rng), random_tuple(rng, m, 1, M), random_unit(rng));
    }
    PatternSet pc = enumerate_patterns(m, n, n_t, m_t);
    std::uniform_int_distribution<int> pick_pc(
        0, static_cast<int>(pc.patterns.size()) - 1);
    const auto e1s = ket_entries(c1);
    const auto e2s = ket_entries(c2);
    std::uniform_int_distribution<int> p1(0, static_cast<int>(e1s.size()) - 1);
    std::uniform_int_distribution<int> p2(0, static_cast<int>(e2s.size()) - 1);
    const Vec3 k0 = (*cx.grid)[0].k;
    for (int rep = 0; rep < 3; ++rep) {
      const auto& e1 = e1s[p1(rng)];
      const auto& e2 = e2s[p2(rng)];
      const auto& pat = pc.patterns[pick_pc(rng)];
      ResolvedShift rs = resolve_for_test(pat, n, m_t, *cx.grid, e1.t, e2.t);
      const Vec3 q = eg[e1.e].p, p = eg[e2.e].p;
      Vec3 pos2p, pos1p;
      if (coin(rng)) {
        pos2p = q + k0 + rs.chk;
        pos1p = p - k0 - rs.chk;
      } else {
        pos2p = p - rs.hat;
        pos1p = q + rs.hat;
      }
      const int i2p = eg.lookup(pos2p), i1p = eg.lookup(pos1p);
      if (i2p >= 0) c2p.set(i2p, rs.bra1, random_unit(rng));
      if (i1p >= 0) c1p.set(i1p, rs.bra2, random_unit(rng));
    }
    c1p.set(eany(rng), random_tuple(rng, n_t, 1, M), random_unit(rng));
    c2p.set(eany(rng), random_tuple(rng, m_t, 1, M), random_unit(rng));
    if (n_t == n && m_t == m) {
      for (const auto& e : e1s) c1p.set(e.e, e.t, c1.at(e.e, e.t));
      for (const auto& e : e2s) c2p.set(e.e, e.t, c2.at(e.e, e.t));
    }
    OracleState bra = oracle.apply_Bstar(
        c1p,
        oracle.apply_checkH(cx.vcheck, oracle.apply_Bstar(c2p, oracle.vacuum())));
    OracleState ket = oracle.apply_Bstar(
        c1,
        oracle.apply_checkH(cx.vcheck, oracle.apply_Bstar(c2, oracle.vacuum())));
    const cplx ov = oracle.inner(bra, ket);
    out.err_check =
        rel_err(pair_checkH(c2p, c1p, c1, c2, cx.vcheck, kSweepSigma, stats), ov);
    if (std::abs(ov) > 1e-8) ++out.nontrivial;
  }
  return out;
}

}  // namespace

WickSweep run_wick_oracle_sweep(int cases_per_combo, std::uint64_t seed) {
  SweepContext cx;
  cx.grid = sweep_mode_grid();
  cx.egrid = sweep_electron_grid(*cx.grid, &cx.n_base);
  cx.vcheck = {0.4, 0.0, 0.0};
  OracleSpace oracle(cx.grid, 5);
  cx.oracle = &oracle;

  WickSweep sweep;
  PairingStats stats;
  for (int total = 0; total <= 3; ++total) {
    for (int n = 0; n <= total; ++n) {
      const int m = total - n;
      for (int n_t = 0; n_t <= total; ++n_t) {
        const int m_t = total - n_t;
        for (int c = 0; c < cases_per_combo; ++c) {
          std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(total) << 24) ^
                              (static_cast<std::uint64_t>(n) << 16) ^
                              (static_cast<std::uint64_t>(n_t) << 8) ^
                              (static_cast<std::uint64_t>(c) * 0x9e3779b97f4a7c15ull));
          ComboErrors e = run_case(n, m, n_t, m_t, rng, cx, &stats);
          ++sweep.cases;
          sweep.nontrivial += e.nontrivial;
          sweep.max_err_single = std::max(sweep.max_err_single, e.err_single);
          sweep.max_err_double = std::max(sweep.max_err_double, e.err_double);
          sweep.max_err_quad = std::max(sweep.max_err_quad, e.err_quad);
          sweep.max_err_check = std::max(sweep.max_err_check, e.err_check);
          sweep.max_partition_defect =
              std::max(sweep.max_partition_defect, e.partition);
          sweep.max_herm_defect = std::max(sweep.max_herm_defect, e.herm);
        }
      }
    }
  }
  sweep.interp_fallbacks = stats.interp_fallbacks;
  return sweep;
}

}  // namespace nelson
