#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

#include "nelson/form_factors.hpp"
#include "nelson/grid.hpp"
#include "nelson/params.hpp"
#include "nelson/quadrature.hpp"
#include "support/quad_oracle.hpp"

using namespace nelson;
using test_support::adaptive_quad;

namespace {
const double FOURPI = 4.0 * M_PI;

double grid_sum(const ModeGrid& g, const std::function<double(Vec3)>& f) {
  double s = 0.0;
  for (const auto& m : g.modes) s += m.w * f(m.k);
  return s;
}
}  // namespace

TEST_CASE("gauss-legendre nodes integrate polynomials exactly") {
  for (int n : {1, 2, 5, 12}) {
    Quad1D q = gauss_legendre(n, -0.3, 1.7);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.nodes[i], deg);
      const double exact =
          (std::pow(1.7, deg + 1) - std::pow(-0.3, deg + 1)) / (deg + 1);
      CHECK(s == doctest::Approx(exact).epsilon(1e-13));
    }
  }
}

TEST_CASE("radial volume rule matches adaptive quadrature of r^2 f(r)") {
  Quad1D q = radial_volume_rule(8, 0.1, 1.0);
  auto apply = [&q](const std::function<double(double)>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) s += q.weights[i] * f(q.nodes[i]);
    return s;
  };
  auto exact = [](const std::function<double(double)>& f) {
    return adaptive_quad([&f](double r) { return r * r * f(r); }, 0.1, 1.0);
  };
  std::vector<std::function<double(double)>> fs = {
      [](double r) { return std::exp(-r); },
      [](double r) { return std::cos(3.0 * r); },
      [](double r) { return 1.0 / (1.0 + r * r); },
  };
  for (const auto& f : fs) CHECK(apply(f) == doctest::Approx(exact(f)).epsilon(1e-10));
  // half-integer powers converge but are not exact for a Gauss rule in the
  // r^2 dr measure
  auto root = [](double r) { return std::sqrt(r); };
  CHECK(apply(root) == doctest::Approx(exact(root)).epsilon(1e-6));
}

TEST_CASE("radial volume rule is exact through degree 2n-1") {
  for (int n : {1, 2, 4, 8}) {
    Quad1D q = radial_volume_rule(n, 0.3, 1.0);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.nodes[i], deg);
      const double exact =
          (std::pow(1.0, deg + 3) - std::pow(0.3, deg + 3)) / (deg + 3);
      CHECK(s == doctest::Approx(exact).epsilon(1e-12));
    }
  }
}

TEST_CASE("angular sets: weights, symmetry, polynomial degree") {
  for (int n : {1, 6, 14, 26}) {
    auto pts = angular_points(n);
    REQUIRE(pts.size() == static_cast<std::size_t>(n));
    double s = 0.0;
    for (const auto& p : pts) {
      s += p.w;
      CHECK(norm(p.u) == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(s == doctest::Approx(FOURPI).epsilon(1e-14));
  }

  // Exact sphere averages of even monomials x^2a y^2b z^2c:
  // integral = 4pi (2a-1)!! (2b-1)!! (2c-1)!! / (2a+2b+2c+1)!!.
  auto dfact = [](int n) {
    double r = 1.0;
    for (int i = n; i > 1; i -= 2) r *= i;
    return r;
  };
  auto exact_mono = [&](int a, int b, int c) {
    return FOURPI * dfact(2 * a - 1) * dfact(2 * b - 1) * dfact(2 * c - 1) /
           dfact(2 * (a + b + c) + 1);
  };
  struct Case {
    int n, a, b, c;
  };
  // degree = 2(a+b+c) must not exceed the rule's design degree
  std::vector<Case> cases = {{6, 1, 0, 0},  {14, 1, 0, 0}, {14, 1, 1, 0}, {14, 2, 0, 0},
                             {26, 1, 1, 0}, {26, 2, 0, 0}, {26, 1, 1, 1}, {26, 3, 0, 0},
                             {26, 2, 1, 0}};
  for (const auto& cs : cases) {
    auto pts = angular_points(cs.n);
    double s = 0.0;
    for (const auto& p : pts)
      s += p.w * std::pow(p.u.x, 2 * cs.a) * std::pow(p.u.y, 2 * cs.b) *
           std::pow(p.u.z, 2 * cs.c);
    CHECK(s == doctest::Approx(exact_mono(cs.a, cs.b, cs.c)).epsilon(1e-12));
  }

  // Odd monomials vanish by symmetry.
  for (int n : {6, 14, 26}) {
    auto pts = angular_points(n);
    double s = 0.0;
    for (const auto& p : pts) s += p.w * p.u.x * p.u.y * p.u.z * p.u.z;
    CHECK(std::abs(s) < 1e-14);
  }

  // 90-degree rotation about z maps each supported set onto itself.
  for (int n : {1, 6, 14, 26}) {
    auto pts = angular_points(n);
    std::set<std::tuple<long, long, long>> orig;
    auto key = [](Vec3 u) {
      return std::make_tuple(std::lround(u.x * 1e12), std::lround(u.y * 1e12),
                             std::lround(u.z * 1e12));
    };
    for (const auto& p : pts) orig.insert(key(p.u));
    for (const auto& p : pts) {
      Vec3 rot{-p.u.y, p.u.x, p.u.z};
      CHECK(orig.count(key(rot)) == 1);
    }
  }

  CHECK_THROWS_AS(angular_points(5), validation_error);
}

TEST_CASE("annulus grid examples") {
  SUBCASE("sigma 0.5 kappa 1: 24 modes, exact volume") {
    ModeGrid g = build_annulus_grid(0.5, 1.0, 4, 6);
    REQUIRE(g.size() == 24);
    CHECK(g.total_weight() == doctest::Approx(FOURPI / 3.0 * (1.0 - 0.125)).epsilon(1e-10));
  }
  SUBCASE("thin shell single mode") {
    ModeGrid g = build_annulus_grid(0.999, 1.0, 1, 1);
    REQUIRE(g.size() == 1);
    CHECK(g.modes[0].w ==
          doctest::Approx(FOURPI * 0.9995 * 0.9995 * 0.001).epsilon(1e-6));
    CHECK(g.modes[0].w ==
          doctest::Approx(FOURPI / 3.0 * (1.0 - std::pow(0.999, 3))).epsilon(1e-12));
  }
  SUBCASE("wide annulus volume to 1e-9") {
    ModeGrid g = build_annulus_grid(0.1, 1.0, 8, 14);
    CHECK(g.total_weight() ==
          doctest::Approx(FOURPI / 3.0 * (1.0 - 0.001)).epsilon(1e-9));
  }
  SUBCASE("range and positivity invariants") {
    ModeGrid g = build_annulus_grid(0.2, 0.9, 3, 14);
    for (const auto& m : g.modes) {
      const double r = norm(m.k);
      CHECK(r >= 0.2);
      CHECK(r <= 0.9);
      CHECK(m.w > 0.0);
    }
  }
  SUBCASE("invalid ranges rejected") {
    CHECK_THROWS_AS(build_annulus_grid(1.0, 0.5, 4, 6), validation_error);
    CHECK_THROWS_AS(build_annulus_grid(0.5, 0.5, 4, 6), validation_error);
    CHECK_THROWS_AS(build_annulus_grid(0.0, 0.5, 4, 6), validation_error);
  }
}

TEST_CASE("grid radial functions against adaptive quadrature") {
  ModeGrid g = build_annulus_grid(0.1, 1.0, 8, 6);
  auto radial = [&g](const std::function<double(double)>& f) {
    return grid_sum(g, [&f](Vec3 k) { return f(norm(k)); });
  };
  std::vector<std::function<double(double)>> fs = {
      [](double r) { return std::exp(-2.0 * r); },
      [](double r) { return std::cos(2.0 * r); },
      [](double r) { return 1.0 / (0.5 + r * r); },
  };
  for (const auto& f : fs) {
    const double exact =
        FOURPI * adaptive_quad([&f](double r) { return r * r * f(r); }, 0.1, 1.0);
    CHECK(radial(f) == doctest::Approx(exact).epsilon(1e-8));
  }
}

TEST_CASE("quadrature consistency invariant: |k|^n exact for n <= 2 n_radial - 1") {
  for (int nr : {1, 2, 4, 8}) {
    ModeGrid g = build_annulus_grid(0.3, 1.0, nr, 6);
    for (int deg = 0; deg <= 2 * nr - 1; ++deg) {
      const double got = grid_sum(g, [deg](Vec3 k) { return std::pow(norm(k), deg); });
      const double exact =
          FOURPI * (std::pow(1.0, deg + 3) - std::pow(0.3, deg + 3)) / (deg + 3);
      CHECK(got == doctest::Approx(exact).epsilon(1e-10));
    }
  }
}

TEST_CASE("composite shell grid respects shell boundaries") {
  std::vector<double> bounds = {0.05, 0.1, 0.2, 0.5, 1.0};
  ModeGrid g = build_shell_grid(bounds, 3, 6);
  REQUIRE(g.size() == 4 * 3 * 6);
  CHECK(g.total_weight() ==
        doctest::Approx(FOURPI / 3.0 * (1.0 - std::pow(0.05, 3))).epsilon(1e-12));
  // No mode sits on an interior boundary, so sharp cutoffs at the bounds are
  // unambiguous on this grid.
  for (const auto& m : g.modes) {
    const double r = norm(m.k);
    for (double b : bounds) CHECK(std::abs(r - b) > 1e-6);
  }
  // Per-shell volume is exact as well.
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    double vol = 0.0;
    for (const auto& m : g.modes) {
      const double r = norm(m.k);
      if (r > bounds[s] && r < bounds[s + 1]) vol += m.w;
    }
    CHECK(vol == doctest::Approx(FOURPI / 3.0 *
                                 (std::pow(bounds[s + 1], 3) - std::pow(bounds[s], 3)))
                     .epsilon(1e-12));
  }
  CHECK_THROWS_AS(build_shell_grid({0.5, 0.2, 1.0}, 3, 6), validation_error);
}

TEST_CASE("cutoff profile chi") {
  ModelParams p;  // kappa 1, eps0 0.1
  CHECK(chi_kappa({0, 0, 0}, p) == 1.0);
  CHECK(chi_kappa({0.9, 0, 0}, p) == 1.0);
  CHECK(chi_kappa({0, 0, 1.0}, p) == 0.0);
  CHECK(chi_kappa({0, 0, 2.0}, p) == 0.0);
  CHECK(chi_kappa({0.95, 0, 0}, p) == doctest::Approx(0.5).epsilon(1e-14));
  double prev = 1.0;
  for (double r = 0.90; r <= 1.0; r += 0.005) {
    double c = chi_kappa({r, 0, 0}, p);
    CHECK(c <= prev + 1e-15);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    prev = c;
  }
}

TEST_CASE("form factor values") {
  ModelParams p;
  p.lambda = 1.0;
  p.alpha_bar = 0.5;
  CHECK(form_factor({0.25, 0, 0}, p) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));

  p.lambda = 0.0;
  CHECK(form_factor({0.3, 0.1, 0}, p) == 0.0);

  p.lambda = 0.1;
  p.alpha_bar = 0.3;
  // lambda |k|^0.3 / sqrt(2 |k|) at |k| = 0.5; frozen from scalar arithmetic
  CHECK(form_factor({0, 0.5, 0}, p) ==
        doctest::Approx(0.08122523963562356).epsilon(1e-14));

  p.alpha_bar = 0.3;
  CHECK_THROWS_AS(form_factor({0, 0, 0}, p), numerical_error);
  p.alpha_bar = 0.5;
  CHECK(form_factor({0, 0, 0}, p) == 0.0);
}

TEST_CASE("cutoff split of the form factor") {
  ModelParams p;
  p.lambda = 0.7;
  p.alpha_bar = 0.4;
  // Dyadic sigma and axis-aligned dyadic momenta make the |k| = sigma
  // boundary case exact in floating point.
  const double sigma = 0.25;

  CHECK(form_factor_cutoff({0.125, 0, 0}, sigma, p) == 0.0);
  CHECK(form_factor_cutoff({0.25, 0, 0}, sigma, p) ==
        form_factor({0.25, 0, 0}, p));  // closed at sigma
  CHECK(form_factor_cutoff({0.5, 0, 0}, sigma, p) == form_factor({0.5, 0, 0}, p));

  CHECK(form_factor_check({0.5, 0, 0}, sigma, p) == 0.0);
  CHECK(form_factor_check({0.25, 0, 0}, sigma, p) == 0.0);  // open at sigma
  CHECK(form_factor_check({0.125, 0, 0}, sigma, p) > 0.0);

  // Exact pointwise partition below the shoulder.
  for (double r : {0.05, 0.19, 0.25, 0.26, 0.5, 0.9}) {
    Vec3 k{r / std::sqrt(3.0), r / std::sqrt(3.0), -r / std::sqrt(3.0)};
    CHECK(form_factor_cutoff(k, sigma, p) + form_factor_check(k, sigma, p) ==
          form_factor(k, p));
  }
  CHECK_THROWS_AS(form_factor_cutoff({0.1, 0, 0}, 0.0, p), validation_error);
}

TEST_CASE("envelope product") {
  ModelParams p;
  p.lambda = 0.1;
  p.alpha_bar = 0.5;
  const double sigma = 0.1;

  CHECK(g_envelope({}, sigma, p, 2.0) == 1.0);
  // c_env * lambda * |k|^(alpha_bar - 3/2) = 2 * 0.1 * 0.5^(-1) = 0.4
  CHECK(g_envelope({{0, 0, 0.5}}, sigma, p, 2.0) == doctest::Approx(0.4).epsilon(1e-14));
  // kappa* = 1/0.9; outside support
  CHECK(g_envelope({{0, 0, 1.2}}, sigma, p, 2.0) == 0.0);
  CHECK(g_envelope({{0, 0, 0.05}}, sigma, p, 2.0) == 0.0);
  // multiplicativity
  const double a = g_envelope({{0.3, 0, 0}}, sigma, p, 2.0);
  const double b = g_envelope({{0, 0.7, 0}}, sigma, p, 2.0);
  CHECK(g_envelope({{0.3, 0, 0}, {0, 0.7, 0}}, sigma, p, 2.0) ==
        doctest::Approx(a * b).epsilon(1e-14));
  CHECK_THROWS_AS(g_envelope({{0.3, 0, 0}}, sigma, p, 0.0), validation_error);
}

TEST_CASE("pointwise domination v/|k| <= g1 for c_env above the floor") {
  ModelParams p;
  p.lambda = 0.25;
  p.alpha_bar = 0.5;
  const double sigma = 0.1;
  const double c_env = 0.72;  // floor is 1/sqrt(2) ~ 0.7071
  ModeGrid g = build_annulus_grid(sigma, 1.0, 8, 14);
  for (const auto& m : g.modes) {
    const double lhs = form_factor_cutoff(m.k, sigma, p) / norm(m.k);
    CHECK(lhs <= g_envelope({m.k}, sigma, p, c_env) * (1.0 + 1e-12));
  }
}

TEST_CASE("model params validation and config parsing") {
  ModelParams p;
  p.validate();
  p.alpha_bar = 0.6;
  CHECK_THROWS_AS(p.validate(), validation_error);
  p.alpha_bar = 0.5;
  p.gamma = 3.0;
  CHECK_THROWS_AS(p.validate(), validation_error);
  p.gamma = 6.0;
  p.gamma0 = 5.0;
  CHECK_THROWS_AS(p.validate(), validation_error);

  auto kv = parse_key_value_text(
      "# comment\nlambda = 0.05\nalpha_bar=0.5\n\nkappa = 1.0 # trailing\ngamma=4.5\n"
      "gamma0 = 6\n");
  ModelParams q = params_from_config(kv);
  CHECK(q.lambda == 0.05);
  CHECK(q.gamma == 4.5);
  CHECK(q.gamma0 == 6.0);
  CHECK(q.eps0 == 0.1);  // default survives

  CHECK_THROWS_AS(parse_key_value_text("not a pair\n"), validation_error);
  CHECK_THROWS_AS(params_from_config(parse_key_value_text("lambda=abc\n")),
                  validation_error);

  // Hash is canonical over semantic content: key order does not matter,
  // values do.
  auto kv2 = parse_key_value_text(
      "gamma0 = 6\ngamma=4.5\nkappa = 1.0\nalpha_bar=0.5\nlambda = 0.05\n");
  CHECK(config_hash(kv2) == config_hash(kv));
  kv2["lambda"] = "0.06";
  CHECK(config_hash(kv2) != config_hash(kv));
}

TEST_CASE("grid csv export") {
  ModeGrid g = build_annulus_grid(0.5, 1.0, 2, 6);
  const std::string path = "modes_test_grid.csv";
  write_grid_csv(g, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "kx,ky,kz,w");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == g.size());
  std::remove(path.c_str());
}
