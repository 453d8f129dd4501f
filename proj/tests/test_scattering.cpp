#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <vector>

#include "nelson/grid.hpp"
#include "nelson/oracle.hpp"
#include "nelson/scattering.hpp"
#include "support/scatter_fixture.hpp"

using namespace nelson;
using namespace nelson::testsupport;

namespace {

constexpr double d = kSpacing;

// Flattened (electron slots, photon tuples) -> value maps for comparing two
// kernels entry by entry.
std::map<std::vector<int>, cplx> kernel_entries(const DiscreteKernel& k) {
  std::map<std::vector<int>, cplx> out;
  k.for_each_nonzero([&](std::span<const int> es, std::span<const int> t0,
                         std::span<const int> t1, cplx v) {
    std::vector<int> key(es.begin(), es.end());
    key.insert(key.end(), t0.begin(), t0.end());
    key.insert(key.end(), t1.begin(), t1.end());
    out[key] = v;
  });
  return out;
}

double kernel_max_diff(const DiscreteKernel& a, const DiscreteKernel& b) {
  auto ma = kernel_entries(a), mb = kernel_entries(b);
  double worst = 0.0;
  for (const auto& [k, v] : ma) {
    auto it = mb.find(k);
    worst = std::max(worst, std::abs(v - (it == mb.end() ? cplx{} : it->second)));
  }
  for (const auto& [k, v] : mb)
    if (!ma.count(k)) worst = std::max(worst, std::abs(v));
  return worst;
}

double family_max_diff(const std::vector<DiscreteKernel>& a,
                       const std::vector<DiscreteKernel>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, kernel_max_diff(a[i], b[i]));
  return worst;
}

// Two-slot product kernel P(e1, r | e2, k) = ga(e1, r) gb(e2, k).
DiscreteKernel product_kernel(const DiscreteKernel& ga, const DiscreteKernel& gb) {
  DiscreteKernel out(ga.grid_ptr(), ga.egrid_ptr(), gb.egrid_ptr(),
                     ga.photon_arity(), gb.photon_arity());
  ga.for_each_nonzero([&](std::span<const int> ea, std::span<const int> ra,
                          std::span<const int>, cplx va) {
    gb.for_each_nonzero([&](std::span<const int> eb, std::span<const int> kb,
                            std::span<const int>, cplx vb) {
      out.set2(ea[0], std::vector<int>(ra.begin(), ra.end()), eb[0],
               std::vector<int>(kb.begin(), kb.end()), va * vb);
    });
  });
  return out;
}

cplx self_overlap_product(const TwoElectronKernelSet& tk) {
  cplx d1 = 0.0, d2 = 0.0;
  for (std::size_t n = 0; n < tk.g1.size(); ++n)
    d1 += pair_single(tk.g1[n], tk.g1[n]) / factorial(static_cast<int>(n));
  for (std::size_t m = 0; m < tk.g2.size(); ++m)
    d2 += pair_single(tk.g2[m], tk.g2[m]) / factorial(static_cast<int>(m));
  return d1 * d2;
}

}  // namespace

TEST_CASE("mode grids snap onto the electron lattice") {
  const ModeGrid raw = build_annulus_grid(0.25, 1.0, 2, 6);
  const double h = 1.0 / 64;
  const ModeGrid snapped = snap_grid_to_lattice(raw, h);

  REQUIRE(snapped.size() == raw.size());
  double w_raw = 0.0, w_snap = 0.0;
  for (std::size_t j = 0; j < raw.size(); ++j) w_raw += raw[j].w;
  for (std::size_t j = 0; j < snapped.size(); ++j) {
    const Mode& m = snapped[j];
    w_snap += m.w;
    for (double c : {m.k.x, m.k.y, m.k.z}) {
      const double cells = c / h;
      CHECK(std::abs(cells - std::llround(cells)) < 1e-9);
    }
    CHECK(std::abs(norm(m.k) - norm(raw[j].k)) < h);
  }
  CHECK(w_snap == doctest::Approx(w_raw).epsilon(1e-14));

  SUBCASE("coincident snapped modes merge and add their weights") {
    ModeGrid g;
    g.sigma = 0.1;
    g.kappa = 1.0;
    g.shell_bounds = {0.1, 1.0};
    g.modes = {{{0.1243, 0.0, 0.0}, 0.3}, {{0.1257, 0.0, 0.0}, 0.4}};
    const ModeGrid merged = snap_grid_to_lattice(g, 1.0 / 32);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].k.x == doctest::Approx(0.125).epsilon(1e-15));
    CHECK(merged[0].w == doctest::Approx(0.7).epsilon(1e-15));
  }

  SUBCASE("a snap across the infrared edge is rejected") {
    ModeGrid g;
    g.sigma = 0.1;
    g.kappa = 1.0;
    g.shell_bounds = {0.1, 1.0};
    g.modes = {{{0.098, 0.0, 0.0}, 1.0}};
    CHECK_THROWS_AS((void)snap_grid_to_lattice(g, 0.05), validation_error);
  }

  SUBCASE("nonpositive spacing is rejected") {
    CHECK_THROWS_AS((void)snap_grid_to_lattice(raw, 0.0), validation_error);
  }
}

TEST_CASE("packet lattices cover the support balls with one margin cell") {
  const Vec3 c{3 * d, 0.0, 0.0};
  const auto eg = build_packet_lattice({c}, {1.25 * d}, d, 1);
  CHECK(eg->size() == 57);
  for (int e = 0; e < eg->size(); ++e) {
    CHECK((*eg)[e].w == d * d * d);
    CHECK(norm((*eg)[e].p - c) <= 2.25 * d + 1e-12);
  }
  CHECK(eg->lookup(c) >= 0);
  CHECK(eg->lookup({3 * d, d, -d}) >= 0);
  CHECK(eg->lookup({3 * d, 3 * d, 0.0}) < 0);
  CHECK(eg->lookup({3.5 * d, 0.0, 0.0}) < 0);

  SUBCASE("coincident balls deduplicate") {
    const auto eg2 = build_packet_lattice({c, c}, {1.25 * d, 1.25 * d}, d, 1);
    CHECK(eg2->size() == 57);
  }
}

TEST_CASE("bump packets match their closed form on the lattice") {
  ModelParams params;
  const Vec3 c{3 * d, 0.0, 0.0};
  const double r = 1.25 * d;
  const auto eg = build_packet_lattice({c}, {r}, d, 1);
  const WavePacket h = make_bump(c, r, eg, params);

  REQUIRE(h.support().size() == 7);
  double n2 = 0.0;
  for (int e : h.support()) {
    const Vec3 p = (*eg)[e].p;
    CHECK(norm(p - c) < r);
    CHECK(h.samples()[static_cast<std::size_t>(e)] == h(p));
    n2 += (*eg)[e].w * h(p) * h(p);
  }
  CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(h.norm_l2() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(h(c) == doctest::Approx(h.amplitude() * std::exp(-1.0)).epsilon(1e-14));
  CHECK(h.norm_linf() == doctest::Approx(h(c)).epsilon(1e-14));
  CHECK(h({3 * d + r, 0.0, 0.0}) == 0.0);
  CHECK(h({0.1, 0.1, 0.1}) == 0.0);
  CHECK(h.max_gradient() > 0.0);
  CHECK(h.norm_l1() > 0.0);

  SUBCASE("packets escaping the electron ball are rejected") {
    CHECK_THROWS_AS((void)make_bump({0.15, 0.0, 0.0}, 0.03, eg, params),
                    validation_error);
  }
  SUBCASE("a ball holding no lattice point is rejected") {
    CHECK_THROWS_AS(
        (void)make_bump({3.5 * d, 0.5 * d, 0.5 * d}, 0.4 * d, eg, params),
        validation_error);
  }
  SUBCASE("disjointness predicate") {
    const Vec3 c2{-3 * d, 0.0, 0.0};
    const auto eg2 = build_packet_lattice({c, c2}, {r, r}, d, 1);
    const WavePacket a = make_bump(c, r, eg2, params);
    const WavePacket b = make_bump(c2, r, eg2, params);
    CHECK(packets_disjoint(a, b));
    CHECK(!packets_disjoint(a, a));
  }
}

TEST_CASE("ground-state store solves, saves, and reloads") {
  const auto grid = lattice_modes();
  const auto basis = std::make_shared<const FockBasis>(build_basis(*grid, 1));
  ModelParams params;
  params.lambda = 0.0;
  GroundStateStore store;
  const std::vector<Vec3> pts = {{d, 0.0, 0.0}, {0.0, 2 * d, 0.0}, {0.0, 0.0, 0.0}};

  CHECK(store.ensure(pts, 0.25, basis, params) == 3);
  CHECK(store.size() == 3);
  CHECK(store.ensure(pts, 0.25, basis, params) == 0);

  for (const Vec3& P : pts) {
    const StoredGround* gs = store.find(P, 0.25);
    REQUIRE(gs != nullptr);
    CHECK(std::abs(gs->energy - 0.5 * dot(P, P)) <= 1e-13);
    CHECK(gs->gap > 0.0);
    const auto it = gs->components.find(0);
    REQUIRE(it != gs->components.end());
    const cplx f0 = it->second.value({});
    CHECK(f0.real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(f0.imag()) <= 1e-12);
  }
  CHECK(store.find({d + 1e-12, 0.0, 0.0}, 0.25) != nullptr);
  CHECK(store.find({5 * d, 0.0, 0.0}, 0.25) == nullptr);
  CHECK(store.find(pts[0], 0.3) == nullptr);

  SUBCASE("binary roundtrip is exact") {
    params.lambda = 0.05;
    store.ensure(pts, 0.25, basis, params);

    const std::string path = "gs_store_roundtrip.bin";
    REQUIRE(store.save(path));
    GroundStateStore loaded;
    REQUIRE(loaded.load(path));
    CHECK(loaded.size() == store.size());
    for (const Vec3& P : pts)
      for (double sigma : {0.25}) {
        const StoredGround* a = store.find(P, sigma);
        const StoredGround* b = loaded.find(P, sigma);
        REQUIRE(b != nullptr);
        CHECK(a->energy == b->energy);
        CHECK(a->gap == b->gap);
        REQUIRE(a->components.size() == b->components.size());
        CHECK(a->components.at(0).value({}) == b->components.at(0).value({}));
        CHECK(a->components.at(1).value({0}) == b->components.at(1).value({0}));
      }
    std::remove(path.c_str());
  }

  SUBCASE("corrupt and missing files are refused without clearing the store") {
    const std::string path = "gs_store_corrupt.bin";
    std::ofstream(path) << "not a ground state store";
    GroundStateStore s2;
    s2.insert(*store.find(pts[0], 0.25));
    CHECK(!s2.load(path));
    CHECK(!s2.load("no_such_file.bin"));
    CHECK(s2.size() == 1);
    std::remove(path.c_str());
  }

  SUBCASE("coupling lowers the ground energy below the free parabola") {
    params.lambda = 0.05;
    GroundStateStore s3;
    s3.ensure({pts[0]}, 0.25, basis, params);
    const StoredGround* gs = s3.find(pts[0], 0.25);
    REQUIRE(gs != nullptr);
    CHECK(gs->energy < 0.5 * dot(pts[0], pts[0]));
    CHECK(gs->residual <= 1e-8);
  }
}

TEST_CASE("velocity boxes from the stored energy surface") {
  auto lab = make_lab(0.0, 1, 0.1);
  const EnergySurface s1 = surface_from_store(lab->h1, 0.1, lab->store, d);
  const EnergySurface s2 = surface_from_store(lab->h2, 0.1, lab->store, d);

  // Free dispersion: the central difference of a parabola is exact, so the
  // velocity box equals the support bounding box.
  const VelocityBox b1 = velocity_support(lab->h1, s1);
  const VelocityBox b2 = velocity_support(lab->h2, s2);
  CHECK(std::abs(b1.lo.x - 2 * d) <= 1e-7);
  CHECK(std::abs(b1.hi.x - 4 * d) <= 1e-7);
  CHECK(std::abs(b1.lo.y + d) <= 1e-7);
  CHECK(std::abs(b1.hi.y - d) <= 1e-7);
  CHECK(std::abs(b1.min_speed - 2 * d) <= 1e-7);
  CHECK(std::abs(b1.max_speed - 4 * d) <= 1e-7);
  CHECK(std::abs(b2.hi.x + 2 * d) <= 1e-7);

  CHECK(std::abs(box_gap(b1, b2) - 4 * d) <= 1e-6);
  CHECK(box_gap(b1, b1) == 0.0);
  CHECK(std::abs(velocity_separation(lab->h1, s1, lab->h2, s2) - 4 * d) <= 1e-6);
  CHECK(b1.contains({3 * d, 0.0, 0.0}));
  CHECK(!b1.contains({-3 * d, 0.0, 0.0}));

  SUBCASE("a surface built for one packet rejects the other") {
    CHECK_THROWS_AS((void)velocity_support(lab->h2, s1), validation_error);
  }

  SUBCASE("weak coupling keeps the boxes separated") {
    auto wlab = make_lab(0.05, 1, 0.1);
    const EnergySurface w1 = surface_from_store(wlab->h1, 0.1, wlab->store, d);
    const EnergySurface w2 = surface_from_store(wlab->h2, 0.1, wlab->store, d);
    const double gap = box_gap(velocity_support(wlab->h1, w1),
                               velocity_support(wlab->h2, w2));
    CHECK(gap > 2 * d);
    CHECK(gap < 6 * d);
  }
}

TEST_CASE("dressed single packets keep the packet norm") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);

  const SingleElectronState a = psi_h_sigma(lab->ctx, lab->h1, 0.1);
  CHECK(a.norm_h == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.norm_psi == doctest::Approx(a.norm_h).epsilon(1e-10));

  const SingleElectronState b = psi_h_sigma(lab->ctx, lab->h1, 0.2);
  CHECK(b.norm_psi == doctest::Approx(b.norm_h).epsilon(1e-10));

  SUBCASE("free theory gives the bare packet") {
    auto free_lab = make_lab(0.0, 1, 0.1);
    const SingleElectronState f = psi_h_sigma(free_lab->ctx, free_lab->h1, 0.1);
    CHECK(f.norm_psi == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(kernel_entries(f.g[1]).empty());
    CHECK(pair_single(f.g[1], f.g[1]) == cplx{});
  }

  SUBCASE("disjoint packets have exactly zero overlap") {
    const SingleElectronState c = psi_h_sigma(lab->ctx, lab->h2, 0.1);
    const cplx ip = psi_inner(a, c);
    CHECK(ip.real() == 0.0);
    CHECK(ip.imag() == 0.0);
  }

  SUBCASE("cross-cutoff inner product matches the oracle") {
    OracleSpace space(lab->grid, 2, d * d * d);
    auto fam1 = build_family(lab->ctx, lab->h1, 0.1, 1,
                             [](double, double) { return cplx{1.0, 0.0}; });
    auto fam2 = build_family(lab->ctx, lab->h1, 0.2, 1,
                             [](double, double) { return cplx{1.0, 0.0}; });
    const OracleState sa = single_dressed(space, fam1);
    const OracleState sb = single_dressed(space, fam2);
    const cplx want = space.inner(sa, sb);
    const cplx got = psi_inner(a, b);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    CHECK(std::abs(want) > 0.9);  // nearby cutoffs, nearly aligned states
  }
}

TEST_CASE("kernel families carry the reference phases") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);
  const ScatteringContext& ctx = lab->ctx;

  const TwoElectronKernelSet tk0 = build_kernels(ctx, lab->h1, lab->h2, 0.0, 0.1);
  const TwoElectronKernelSet tk2 = build_kernels(ctx, lab->h1, lab->h2, 2.0, 0.1);

  SUBCASE("t = 0 tabulates the bare families") {
    auto plain1 = build_family(ctx, lab->h1, 0.1, 1,
                               [](double, double) { return cplx{1.0, 0.0}; });
    CHECK(family_max_diff(tk0.g1, plain1) <= 1e-15);
  }

  SUBCASE("independent tabulation at t = 2 agrees") {
    auto phased = build_family(ctx, lab->h1, 0.1, 1, [](double, double er) {
      return std::exp(cplx{0.0, -er * 2.0});
    });
    CHECK(family_max_diff(tk2.g1, phased) <= 5e-15);
  }

  SUBCASE("the phase leaves the magnitudes alone") {
    auto m0 = kernel_entries(tk0.g1[1]);
    auto m2 = kernel_entries(tk2.g1[1]);
    REQUIRE(!m0.empty());
    REQUIRE(m0.size() == m2.size());
    for (const auto& [k, v] : m0)
      CHECK(std::abs(std::abs(v) - std::abs(m2.at(k))) <= 1e-14);
  }

  SUBCASE("tuples below the cutoff are dropped") {
    const TwoElectronKernelSet tkc = build_kernels(ctx, lab->h1, lab->h2, 1.0, 0.2);
    bool touched_sub = false;
    tkc.g1[1].for_each_nonzero([&](std::span<const int>, std::span<const int> t0,
                                   std::span<const int>, cplx) {
      for (int j : t0)
        if (norm((*ctx.grid)[static_cast<std::size_t>(j)].k) < 0.2)
          touched_sub = true;
    });
    CHECK(!touched_sub);
    CHECK(!kernel_entries(tkc.g1[1]).empty());
  }

  SUBCASE("missing ground states are named") {
    auto fresh = make_lab(0.05, 1, 0.1);
    CHECK_THROWS_AS(
        (void)build_kernels(fresh->ctx, fresh->h1, fresh->h2, 1.0, 0.2),
        validation_error);
  }

  SUBCASE("cutoff couplings of the removed modes") {
    const auto vc = check_couplings(*ctx.grid, 0.2, ctx.params);
    REQUIRE(vc.size() == 3);
    CHECK(vc[0] == doctest::Approx(0.05 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(vc[1] == 0.0);
    CHECK(vc[2] == 0.0);
  }
}

TEST_CASE("free-theory overlap reduces to direct plus exchange") {
  SUBCASE("disjoint packets") {
    auto lab = make_lab(0.0, 1, 0.1);
    const TwoElectronKernelSet tk =
        build_kernels(lab->ctx, lab->h1, lab->h2, 3.0, 0.1);
    const OverlapParts ov = overlap(lab->ctx, tk, tk);
    CHECK(ov.total.real() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(ov.total.imag()) <= 1e-14);
    CHECK(std::abs(ov.direct - ov.total) <= 1e-13);
    CHECK(ov.exchange == cplx{});
    CHECK(ov.rest == cplx{});
    CHECK(ov.max_total_arity == 0);
  }

  SUBCASE("overlapping packets pick up the exchange square") {
    auto lab = make_lab(0.0, 1, 0.1, EnergyRef::LadderMin, {-d, 0.0, 0.0},
                        {d, 0.0, 0.0}, 2.5 * d);
    CHECK(!packets_disjoint(lab->h1, lab->h2));
    double ip = 0.0;
    for (int e = 0; e < lab->egrid->size(); ++e)
      ip += (*lab->egrid)[e].w * lab->h1.samples()[static_cast<std::size_t>(e)] *
            lab->h2.samples()[static_cast<std::size_t>(e)];
    CHECK(ip > 0.1);

    const TwoElectronKernelSet tk =
        build_kernels(lab->ctx, lab->h1, lab->h2, 0.0, 0.1);
    const OverlapParts ov = overlap(lab->ctx, tk, tk);
    CHECK(ov.direct.real() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ov.exchange.real() == doctest::Approx(ip * ip).epsilon(1e-12));
    CHECK(ov.rest == cplx{});
    CHECK(ov.total.real() == doctest::Approx(1.0 + ip * ip).epsilon(1e-13));
  }
}

TEST_CASE("two-packet overlap matches the brute-force expansion") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);
  const ScatteringContext& ctx = lab->ctx;

  const TwoElectronKernelSet tka = build_kernels(ctx, lab->h1, lab->h2, 2.0, 0.1);
  const OverlapParts ov = overlap(ctx, tka, tka);

  OracleSpace space(lab->grid, 2, d * d * d);
  const OracleState psi = dressed_state(space, tka.g1, tka.g2);
  const cplx want = space.inner(psi, psi);

  CHECK(std::abs(ov.total - want) <= 1e-10 * std::max(1.0, std::abs(want)));
  CHECK(std::abs(ov.direct + ov.exchange + ov.rest - ov.total) <=
        1e-12 * std::max(1.0, std::abs(ov.total)));
  CHECK(std::abs(ov.direct - self_overlap_product(tka)) <=
        1e-12 * std::max(1.0, std::abs(ov.direct)));
  CHECK(ov.max_total_arity == 2);
  CHECK(ov.total.real() > 0.9);
  CHECK(std::abs(ov.rest) < 0.05);

  SUBCASE("cross-cutoff overlap agrees and is hermitian") {
    const TwoElectronKernelSet tkb =
        build_kernels(ctx, lab->h1, lab->h2, 3.0, 0.2);
    const OverlapParts oab = overlap(ctx, tkb, tka);
    const OverlapParts oba = overlap(ctx, tka, tkb);
    CHECK(std::abs(oab.total - std::conj(oba.total)) <= 1e-12);
    CHECK(std::abs(oab.direct - std::conj(oba.direct)) <= 1e-12);
    CHECK(std::abs(oab.exchange - std::conj(oba.exchange)) <= 1e-12);
    CHECK(std::abs(oab.rest - std::conj(oba.rest)) <= 1e-12);

    const OracleState psib = dressed_state(space, tkb.g1, tkb.g2);
    const cplx wab = space.inner(psib, psi);
    CHECK(std::abs(oab.total - wab) <= 1e-10 * std::max(1.0, std::abs(wab)));
  }

  SUBCASE("two photons per cloud still satisfy the partition") {
    auto lab2 = make_lab(0.05, 2, 0.1);
    const TwoElectronKernelSet tk2 =
        build_kernels(lab2->ctx, lab2->h1, lab2->h2, 1.0, 0.1);
    const OverlapParts ov2 = overlap(lab2->ctx, tk2, tk2);
    CHECK(std::abs(ov2.direct + ov2.exchange + ov2.rest - ov2.total) <=
          1e-12 * std::max(1.0, std::abs(ov2.total)));
    CHECK(ov2.max_total_arity == 4);
    CHECK(ov2.tail_bound >= 0.0);

    OracleSpace space4(lab2->grid, 4, d * d * d);
    const OracleState p2 = dressed_state(space4, tk2.g1, tk2.g2);
    const cplx want2 = space4.inner(p2, p2);
    CHECK(std::abs(ov2.total - want2) <= 1e-10 * std::max(1.0, std::abs(want2)));
  }

  SUBCASE("kernel sets from another lattice are rejected") {
    auto other = make_lab(0.05, 1, 0.1);
    const TwoElectronKernelSet tko =
        build_kernels(other->ctx, other->h1, other->h2, 2.0, 0.1);
    CHECK_THROWS_AS((void)overlap(ctx, tko, tka), validation_error);
  }
}

TEST_CASE("product kernels factor through the pair engines") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);
  const TwoElectronKernelSet ka = build_kernels(lab->ctx, lab->h1, lab->h2, 0.9, 0.1);
  const TwoElectronKernelSet kb = build_kernels(lab->ctx, lab->h1, lab->h2, 1.7, 0.2);

  for (int n = 0; n <= 1; ++n)
    for (int m = 0; m <= 1; ++m) {
      const DiscreteKernel pk = product_kernel(ka.g1[static_cast<std::size_t>(n)],
                                               ka.g2[static_cast<std::size_t>(m)]);
      const DiscreteKernel pb = product_kernel(kb.g1[static_cast<std::size_t>(n)],
                                               kb.g2[static_cast<std::size_t>(m)]);
      const cplx via_double = pair_double(pb, pk);
      const cplx via_quad =
          pair_quad(kb.g1[static_cast<std::size_t>(n)], kb.g2[static_cast<std::size_t>(m)],
                    ka.g1[static_cast<std::size_t>(n)], ka.g2[static_cast<std::size_t>(m)]);
      CHECK(std::abs(via_double - via_quad) <=
            1e-12 * std::max(1.0, std::abs(via_quad)));
    }
}

TEST_CASE("cook terms decompose the dressed-state derivative") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);
  const ScatteringContext& ctx = lab->ctx;
  const double t = 1.7, sigma = 0.2;

  const CookTerms ct = cook_terms(ctx, lab->h1, lab->h2, t, sigma);
  CHECK(ct.check_active);
  CHECK(ct.norm_dcomm > 0.0);
  CHECK(ct.norm_check > 0.0);
  CHECK(ct.norm_hsigma > 0.0);

  const TwoElectronKernelSet tk = build_kernels(ctx, lab->h1, lab->h2, t, sigma);
  OracleSpace space(lab->grid, 4, d * d * d);
  const std::vector<double> v_full = full_couplings(*lab->grid, ctx.params);
  const std::vector<double> vcheck = check_couplings(*lab->grid, sigma, ctx.params);

  // Direct route: i H Phi plus the phase derivative of the families.
  const OracleState phi = dressed_state(space, tk.g1, tk.g2);
  const OracleState hphi = space.apply_hamiltonian(v_full, phi);
  auto dot_coef = [t](double, double er) {
    return cplx{0.0, -er} * std::exp(cplx{0.0, -er * t});
  };
  const auto dot1 = build_family(ctx, lab->h1, sigma, ctx.m_max, dot_coef);
  const auto dot2 = build_family(ctx, lab->h2, sigma, ctx.m_max, dot_coef);
  OracleState deriv = dressed_state(space, dot1, tk.g2);
  axpy(deriv, 1.0, dressed_state(space, tk.g1, dot2));
  axpy(deriv, cplx{0.0, 1.0}, hphi);

  // Formula route: shifted-coupling double commutator, removed-coupling
  // sandwich, and the dispersion-mismatch families.
  auto hs_coef = [t](double ec, double er) {
    return (ec - er) * std::exp(cplx{0.0, -er * t});
  };
  const auto hs1 = build_family(ctx, lab->h1, sigma, ctx.m_max, hs_coef);
  const auto hs2 = build_family(ctx, lab->h2, sigma, ctx.m_max, hs_coef);

  const OracleState dcomm = dcomm_state(space, ctx, tk);
  const OracleState check = check_state(space, vcheck, tk.g1, tk.g2);
  OracleState hsig = dressed_state(space, hs1, tk.g2);
  axpy(hsig, 1.0, dressed_state(space, tk.g1, hs2));

  OracleState formula = dcomm;
  axpy(formula, 1.0, check);
  axpy(formula, 1.0, hsig);

  // The solve truncates the photon number, so the eigenvalue substitution
  // behind the three-term formula leaves a residual per cloud. Adding the
  // dressed residuals makes the derivative identity exact.
  const OracleState leak1 = cloud_leak(space, ctx, lab->h1, sigma, t, tk.g1);
  const OracleState leak2 = cloud_leak(space, ctx, lab->h2, sigma, t, tk.g2);
  OracleState full = formula;
  axpy(full, 1.0, dress_with(space, tk.g2, leak1));
  axpy(full, 1.0, dress_with(space, tk.g1, leak2));

  OracleState diff = deriv;
  axpy(diff, cplx{0.0, -1.0}, full);  // deriv - i * (formula + leaks)
  const double dn = space.norm(deriv);
  CHECK(dn > 1e-2);
  CHECK(space.norm(diff) <= 1e-12 * dn);

  // The truncation residual is a small orthogonal-ish correction here; the
  // reported norms describe the three-term formula itself.
  CHECK(space.norm(full) == doctest::Approx(dn).epsilon(1e-12));
  CHECK(ct.norm_total == doctest::Approx(space.norm(formula)).epsilon(1e-9));
  CHECK(ct.norm_dcomm == doctest::Approx(space.norm(dcomm)).epsilon(1e-9));
  CHECK(ct.norm_check == doctest::Approx(space.norm(check)).epsilon(1e-9));
  CHECK(ct.norm_hsigma == doctest::Approx(space.norm(hsig)).epsilon(1e-9));
  OracleState leak_sum = full;
  axpy(leak_sum, -1.0, formula);
  const double leak_norm = space.norm(leak_sum);
  CHECK(leak_norm > 0.0);
  CHECK(leak_norm < 0.2 * dn);

  SUBCASE("finite differences of the evolved state agree") {
    auto fd_at = [&](double step) {
      const TwoElectronKernelSet kp =
          build_kernels(ctx, lab->h1, lab->h2, t + step, sigma);
      const TwoElectronKernelSet km =
          build_kernels(ctx, lab->h1, lab->h2, t - step, sigma);
      const OracleState plus = dressed_state(space, kp.g1, kp.g2);
      const OracleState minus = dressed_state(space, km.g1, km.g2);
      return fd_envelope_norm(space, v_full, plus, minus, step);
    };
    const double nd = fd_at(1e-3), nd2 = fd_at(5e-4);
    const double rich = (4.0 * nd2 - nd) / 3.0;
    CHECK(rich == doctest::Approx(dn).epsilon(1e-5));
  }

  SUBCASE("current-cutoff phases remove the dispersion mismatch") {
    ScatteringContext cur = ctx;
    cur.energy_ref = EnergyRef::Current;
    const CookTerms c2 = cook_terms(cur, lab->h1, lab->h2, t, sigma);
    CHECK(c2.norm_hsigma == 0.0);
    CHECK(c2.norm_dcomm > 0.0);
    CHECK(c2.norm_total * c2.norm_total ==
          doctest::Approx(c2.norm_dcomm * c2.norm_dcomm +
                          c2.norm_check * c2.norm_check)
              .epsilon(1e-9));
  }

  SUBCASE("at the reference cutoff only the commutator survives") {
    const CookTerms c3 = cook_terms(ctx, lab->h1, lab->h2, t, 0.1);
    CHECK(!c3.check_active);
    CHECK(c3.norm_check == 0.0);
    CHECK(c3.norm_hsigma <= 1e-12);
    CHECK(c3.norm_total == doctest::Approx(c3.norm_dcomm).epsilon(1e-9));
  }

  SUBCASE("free theory has no derivative at all") {
    auto free_lab = make_lab(0.0, 1, 0.1);
    ensure_all(*free_lab, 0.2);
    const CookTerms cf = cook_terms(free_lab->ctx, free_lab->h1, free_lab->h2,
                                    t, 0.2);
    CHECK(cf.norm_dcomm == 0.0);
    CHECK(cf.norm_check == 0.0);
    CHECK(cf.norm_hsigma == 0.0);
    CHECK(cf.norm_total == 0.0);
  }
}

TEST_CASE("ladder study walks the cutoff schedule") {
  auto lab = make_lab(0.05, 1, 0.1);
  const std::vector<double> times = {2.0, 3.0, 4.0};
  const ConvergenceReport rep =
      convergence_study(lab->ctx, lab->h1, lab->h2, 1.0, times);

  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].sigma1 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(rep.rows[0].sigma2 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(rep.rows[1].sigma2 == doctest::Approx(0.25).epsilon(1e-15));
  for (const ConvergenceRow& row : rep.rows) {
    CHECK(std::abs(row.o11.real() - 1.0) < 1e-3);
    CHECK(std::abs(row.o22.real() - 1.0) < 1e-3);
    CHECK(row.diff_norm2 >= -1e-12);
    CHECK(row.isometry_defect < 1e-3);
    CHECK(std::abs(row.rest_12) < 0.05);
  }
  CHECK(rep.truncation_delta >= 0.0);
  CHECK(std::isfinite(rep.rest_fit.slope));

  SUBCASE("schedules that undershoot the grid edge are named") {
    CHECK_THROWS_WITH_AS(
        (void)convergence_study(lab->ctx, lab->h1, lab->h2, 5.0, times),
        doctest::Contains("gamma"), validation_error);
  }
  SUBCASE("time lists must ascend") {
    CHECK_THROWS_AS((void)convergence_study(lab->ctx, lab->h1, lab->h2, 1.0,
                                            {4.0, 2.0}),
                    validation_error);
  }
}

TEST_CASE("rest decay study reports the mixed-pairing magnitude") {
  auto lab = make_lab(0.05, 1, 0.1);
  ensure_all(*lab, 0.2);
  const RestDecayReport rep =
      rest_decay_study(lab->ctx, lab->h1, lab->h2, 0.2, {2.0, 4.0, 8.0});
  REQUIRE(rep.t.size() == 3);
  REQUIRE(rep.rest_abs.size() == 3);
  CHECK(rep.sigma == 0.2);
  for (double r : rep.rest_abs) CHECK(r >= 0.0);
  for (double tot : rep.total_abs) CHECK(tot > 0.5);
}
