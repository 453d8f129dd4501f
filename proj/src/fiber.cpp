#include "nelson/fiber.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

namespace nelson {

PhotonTable::PhotonTable(int m, std::size_t J) : m_(m), J_(J) {
  if (m == 0)
    scalar_ = 0.0;
  else if (m == 1)
    dense_.assign(J, 0.0);
  else if (m == 2)
    dense_.assign(J * J, 0.0);
}

cplx PhotonTable::value(std::vector<std::uint32_t> t) const {
  if (static_cast<int>(t.size()) != m_)
    throw validation_error("PhotonTable::value: tuple arity mismatch");
  if (m_ == 0) return scalar_;
  if (m_ == 1) return dense_[t[0]];
  if (m_ == 2) return dense_[static_cast<std::size_t>(t[0]) * J_ + t[1]];
  std::sort(t.begin(), t.end());
  auto it = sparse_.find(t);
  return it == sparse_.end() ? cplx(0.0) : it->second;
}

void PhotonTable::set(std::vector<std::uint32_t> t, cplx v) {
  if (static_cast<int>(t.size()) != m_)
    throw validation_error("PhotonTable::set: tuple arity mismatch");
  if (m_ == 0) {
    scalar_ = v;
    return;
  }
  if (m_ == 1) {
    dense_[t[0]] = v;
    return;
  }
  if (m_ == 2) {
    dense_[static_cast<std::size_t>(t[0]) * J_ + t[1]] = v;
    dense_[static_cast<std::size_t>(t[1]) * J_ + t[0]] = v;
    return;
  }
  std::sort(t.begin(), t.end());
  sparse_[t] = v;
}

double PhotonTable::norm2(const ModeGrid& grid) const {
  // Sum over ordered tuples = sum over sorted representatives times the
  // number of distinct orderings m! / prod(multiplicities!).
  if (m_ == 0) return std::norm(scalar_);
  std::vector<double> terms;
  if (m_ == 1) {
    terms.reserve(J_);
    for (std::size_t j = 0; j < J_; ++j)
      terms.push_back(grid[j].w * std::norm(dense_[j]));
  } else if (m_ == 2) {
    for (std::size_t a = 0; a < J_; ++a)
      for (std::size_t b = 0; b < J_; ++b)
        terms.push_back(grid[a].w * grid[b].w * std::norm(dense_[a * J_ + b]));
  } else {
    for (const auto& [key, v] : sparse_) {
      double w = 1.0;
      for (auto j : key) w *= grid[j].w;
      double orderings = factorial(m_);
      std::size_t i = 0;
      while (i < key.size()) {
        std::size_t r = i;
        while (r < key.size() && key[r] == key[i]) ++r;
        orderings /= factorial(static_cast<int>(r - i));
        i = r;
      }
      terms.push_back(orderings * w * std::norm(v));
    }
  }
  return pairwise_sum(terms);
}

void PhotonTable::scale(cplx factor) {
  scalar_ *= factor;
  for (auto& v : dense_) v *= factor;
  for (auto& [k, v] : sparse_) v *= factor;
}

SparseOperator assemble_fiber_hamiltonian(Vec3 P, double sigma, const ModeGrid& grid,
                                          const FockBasis& basis, const ModelParams& params) {
  if (basis.J() != grid.size())
    throw validation_error("assemble_fiber_hamiltonian: basis built on a different grid");
  const std::size_t J = grid.size();

  std::vector<cplx> weights(J);
  for (std::size_t j = 0; j < J; ++j)
    weights[j] = std::sqrt(grid[j].w) * form_factor_cutoff(grid[j].k, sigma, params);
  SparseOperator H = smeared_field(weights, basis);

  // (P - P_f)^2 / 2 + H_f is diagonal in the occupation basis. Merge it into
  // the field operator's CSR structure directly.
  std::vector<Triplet> t;
  t.reserve(H.nnz() + basis.dim());
  for (std::size_t r = 0; r < H.dim; ++r)
    for (std::size_t p = H.row_ptr[r]; p < H.row_ptr[r + 1]; ++p)
      t.push_back({r, H.col[p], H.val[p]});
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const Occupation& n = basis.states[i];
    Vec3 Pf{0, 0, 0};
    double hf = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (!n[j]) continue;
      Pf += static_cast<double>(n[j]) * grid[j].k;
      hf += n[j] * norm(grid[j].k);
    }
    t.push_back({i, i, 0.5 * norm2(P - Pf) + hf});
  }
  return operator_from_triplets(basis.dim(), std::move(t), true);
}

namespace {

double vec_norm(const std::vector<cplx>& v) {
  std::vector<double> t(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = std::norm(v[i]);
  return std::sqrt(pairwise_sum(t));
}

cplx vec_dot(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  std::vector<cplx> t(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) t[i] = std::conj(a[i]) * b[i];
  return pairwise_sum(t);
}

void axpy(std::vector<cplx>& y, cplx a, const std::vector<cplx>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

struct RitzResult {
  double theta0 = 0.0, theta1 = 0.0;
  double res0 = 0.0;
  std::vector<cplx> x0;
};

// Rayleigh-Ritz over an explicitly stored, fully reorthogonalized Krylov
// basis. Slower than textbook Lanczos but immune to loss of orthogonality
// and to breakdown when the seed is an exact eigenvector.
RitzResult krylov_lowest(const SparseOperator& H, const SolverOptions& opts) {
  const std::size_t dim = H.dim;
  std::vector<std::vector<cplx>> V, HV;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<cplx> v(dim, 0.0);
  v[0] = 1.0;  // vacuum seed

  Eigen::MatrixXcd T;
  RitzResult best;
  double prev_theta1 = 0.0;
  const int kmax = static_cast<int>(std::min<std::size_t>(opts.max_iter, dim));
  for (int k = 0; k < kmax; ++k) {
    // Re-orthogonalize twice against everything kept so far.
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : V) axpy(v, -vec_dot(u, v), u);
    double nv = vec_norm(v);
    if (nv < 1e-13) {
      // Krylov space exhausted; restart with a random direction.
      for (auto& c : v) c = cplx(gauss(rng), gauss(rng));
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& u : V) axpy(v, -vec_dot(u, v), u);
      nv = vec_norm(v);
      if (nv < 1e-13) break;  // full space spanned
    }
    for (auto& c : v) c /= nv;
    V.push_back(v);
    HV.push_back(H.apply(v));

    const int m = static_cast<int>(V.size());
    T.conservativeResize(m, m);
    for (int i = 0; i < m; ++i) {
      cplx tij = vec_dot(V[i], HV[m - 1]);
      T(i, m - 1) = tij;
      T(m - 1, i) = std::conj(tij);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(T);
    const double theta0 = es.eigenvalues()(0);
    const double theta1 = m > 1 ? es.eigenvalues()(1) : theta0;

    std::vector<cplx> x(dim, 0.0), Hx(dim, 0.0);
    for (int i = 0; i < m; ++i) {
      const cplx yi = es.eigenvectors()(i, 0);
      axpy(x, yi, V[i]);
      axpy(Hx, yi, HV[i]);
    }
    axpy(Hx, -theta0, x);
    const double res0 = vec_norm(Hx);

    best = {theta0, theta1, res0, std::move(x)};
    const bool theta1_settled =
        m > 1 && std::abs(theta1 - prev_theta1) < 1e-9 * std::max(1.0, std::abs(theta1));
    prev_theta1 = theta1;
    if (res0 <= opts.tol && m > 1 && theta1_settled) return best;
    if (static_cast<std::size_t>(m) == dim && res0 <= opts.tol) return best;

    v = HV.back();  // next Krylov direction
  }
  if (best.res0 > opts.tol)
    throw numerical_error("ground_state: Krylov solver stalled at residual " +
                          std::to_string(best.res0));
  return best;
}

}  // namespace

GroundState ground_state(const SparseOperator& H, std::shared_ptr<const FockBasis> basis,
                         const SolverOptions& opts) {
  if (!basis || basis->dim() != H.dim)
    throw validation_error("ground_state: basis does not match operator dimension");
  const std::size_t dim = H.dim;

  GroundState gs;
  gs.basis = basis;

  if (dim <= opts.dense_dim) {
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(dim, dim);
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t p = H.row_ptr[r]; p < H.row_ptr[r + 1]; ++p) A(r, H.col[p]) = H.val[p];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A);
    gs.energy = es.eigenvalues()(0);
    gs.gap = dim > 1 ? es.eigenvalues()(1) - es.eigenvalues()(0) : 0.0;
    gs.vector.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) gs.vector[i] = es.eigenvectors()(i, 0);
  } else {
    RitzResult r = krylov_lowest(H, opts);
    gs.energy = r.theta0;
    gs.gap = r.theta1 - r.theta0;
    gs.vector = std::move(r.x0);
  }

  // Normalize and fix the phase on the vacuum amplitude.
  double nrm = vec_norm(gs.vector);
  for (auto& c : gs.vector) c /= nrm;
  cplx v0 = gs.vector[0];
  if (std::abs(v0) < 1e-12)
    throw numerical_error("ground_state: vacuum amplitude below 1e-12, phase convention fails");
  cplx phase = std::conj(v0) / std::abs(v0);
  for (auto& c : gs.vector) c *= phase;

  std::vector<cplx> Hx = H.apply(gs.vector);
  axpy(Hx, -gs.energy, gs.vector);
  gs.residual = vec_norm(Hx);
  if (gs.residual > opts.tol)
    throw numerical_error("ground_state: residual " + std::to_string(gs.residual) +
                          " above tolerance");
  return gs;
}

GroundState solve_fiber(Vec3 P, double sigma, std::shared_ptr<const FockBasis> basis,
                        const ModelParams& params, const SolverOptions& opts) {
  SparseOperator H = assemble_fiber_hamiltonian(P, sigma, basis->grid, *basis, params);
  GroundState gs = ground_state(H, basis, opts);
  gs.P = P;
  gs.sigma = sigma;

  // Support diagnostic: amplitude carried by states that occupy sub-sigma modes.
  std::vector<double> below;
  for (std::size_t i = 0; i < basis->dim(); ++i) {
    const Occupation& n = basis->states[i];
    for (std::size_t j = 0; j < basis->J(); ++j)
      if (n[j] && norm(basis->grid[j].k) < sigma) {
        below.push_back(std::norm(gs.vector[i]));
        break;
      }
  }
  gs.norm_check = std::sqrt(pairwise_sum(below));
  return gs;
}

const std::map<int, PhotonTable>& extract_components(GroundState& gs) {
  if (!gs.components.empty()) return gs.components;
  const FockBasis& basis = *gs.basis;
  const std::size_t J = basis.J();
  for (int m = 0; m <= basis.m_max; ++m) gs.components.emplace(m, PhotonTable(m, J));
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const int m = basis.grade_of(i);
    const Occupation& n = basis.states[i];
    double fac = 1.0 / std::sqrt(factorial(m));
    std::vector<std::uint32_t> tuple;
    tuple.reserve(m);
    for (std::size_t j = 0; j < J; ++j) {
      if (!n[j]) continue;
      fac *= std::sqrt(factorial(n[j])) * std::pow(basis.grid[j].w, -0.5 * n[j]);
      for (int c = 0; c < n[j]; ++c) tuple.push_back(static_cast<std::uint32_t>(j));
    }
    gs.components.at(m).set(std::move(tuple), gs.vector[i] * fac);
  }
  return gs.components;
}

std::vector<cplx> froehlich_f1(const GroundState& gs, const ModeGrid& grid,
                               const FockBasis& basis, const ModelParams& params,
                               double cg_tol) {
  if (basis.m_max < 1) throw validation_error("froehlich_f1: need m_max >= 1");
  const std::size_t J = grid.size();
  std::vector<cplx> f1(J, 0.0);

  // Basis truncated one grade lower; its states are a prefix of the full
  // graded basis, so projecting the ground vector is a plain truncation.
  FockBasis sub = build_basis(grid, basis.m_max - 1);
  auto sub_ptr = std::make_shared<const FockBasis>(sub);
  const std::size_t dsub = sub.dim();
  std::vector<cplx> rhs0(gs.vector.begin(), gs.vector.begin() + dsub);

  for (std::size_t j = 0; j < J; ++j) {
    const double vj = form_factor_cutoff(grid[j].k, gs.sigma, params);
    if (vj == 0.0) continue;

    SparseOperator A =
        assemble_fiber_hamiltonian(gs.P - grid[j].k, gs.sigma, grid, sub, params);
    const double shift = norm(grid[j].k) - gs.energy;
    std::vector<Triplet> t;
    t.reserve(A.nnz() + dsub);
    for (std::size_t r = 0; r < dsub; ++r)
      for (std::size_t p = A.row_ptr[r]; p < A.row_ptr[r + 1]; ++p)
        t.push_back({r, A.col[p], A.val[p]});
    for (std::size_t r = 0; r < dsub; ++r) t.push_back({r, r, shift});
    SparseOperator As = operator_from_triplets(dsub, std::move(t), true);

    // Positive definiteness of the shifted operator.
    double lowest;
    if (dsub <= 2000) {
      Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(dsub, dsub);
      for (std::size_t r = 0; r < dsub; ++r)
        for (std::size_t p = As.row_ptr[r]; p < As.row_ptr[r + 1]; ++p)
          M(r, As.col[p]) = As.val[p];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M);
      lowest = es.eigenvalues()(0);
    } else {
      SolverOptions probe;
      probe.tol = 1e-8;
      lowest = ground_state(As, sub_ptr, probe).energy;
    }
    if (!(lowest > 0.0))
      throw numerical_error("froehlich_f1: shifted operator not positive definite at mode " +
                            std::to_string(j));

    // Conjugate gradients for the Hermitian positive definite system.
    std::vector<cplx> x(dsub, 0.0), r = rhs0, p = r;
    double rr = std::pow(vec_norm(r), 2);
    const double stop = cg_tol * std::sqrt(rr);
    for (int it = 0; it < 20000 && std::sqrt(rr) > stop; ++it) {
      std::vector<cplx> Ap = As.apply(p);
      cplx pAp = vec_dot(p, Ap);
      cplx alpha = rr / pAp;
      axpy(x, alpha, p);
      axpy(r, -alpha, Ap);
      double rr_new = std::pow(vec_norm(r), 2);
      cplx beta = rr_new / rr;
      for (std::size_t i = 0; i < dsub; ++i) p[i] = r[i] + beta * p[i];
      rr = rr_new;
    }
    if (std::sqrt(rr) > stop * 10)
      throw numerical_error("froehlich_f1: CG failed to converge at mode " + std::to_string(j));
    f1[j] = -vj * x[0];
  }
  return f1;
}

std::vector<Vec3> CubeSpec::points() const {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n) * n * n);
  const double off = 0.5 * (n - 1);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz)
        out.push_back(center + h * Vec3{ix - off, iy - off, iz - off});
  return out;
}

EnergySurface energy_surface(double sigma, const CubeSpec& cube,
                             std::shared_ptr<const FockBasis> basis,
                             const ModelParams& params, const SolverOptions& opts) {
  if (cube.n < 3) throw validation_error("energy_surface: need at least 3 points per axis");
  EnergySurface s;
  s.sigma = sigma;
  s.cube = cube;
  auto pts = cube.points();
  s.energies.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    s.energies[i] = solve_fiber(pts[i], sigma, basis, params, opts).energy;
  return s;
}

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw validation_error("fit_loglog: need at least two samples");
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0))
      throw validation_error("fit_loglog: samples must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  SlopeFit f;
  const double denom = n * sxx - sx * sx;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  for (std::size_t i = 0; i < n; ++i)
    f.max_residual = std::max(
        f.max_residual, std::abs(std::log(y[i]) - (f.slope * std::log(x[i]) + f.intercept)));
  return f;
}

namespace {

cplx align_phase(const std::vector<cplx>& ref, const std::vector<cplx>& v) {
  cplx ov = vec_dot(ref, v);
  double a = std::abs(ov);
  return a < 1e-14 ? cplx(1.0) : std::conj(ov) / a;
}

}  // namespace

SpectralReport verify_spectral_bounds(const std::vector<EnergySurface>& surfaces,
                                      const std::vector<std::vector<GroundState>>& states,
                                      double h_P, const ModelParams& params) {
  if (surfaces.empty()) throw validation_error("verify_spectral_bounds: no surfaces");
  for (std::size_t i = 0; i + 1 < surfaces.size(); ++i)
    if (!(surfaces[i].sigma > surfaces[i + 1].sigma))
      throw validation_error("verify_spectral_bounds: sigma ladder must strictly decrease");

  SpectralReport rep;
  rep.all_convex = true;

  for (const auto& s : surfaces) {
    SpectralReport::PerSigma ps;
    ps.sigma = s.sigma;
    const int n = s.cube.n;
    const double h = s.cube.h;
    ps.min_hessian_eig = std::numeric_limits<double>::infinity();
    for (int ix = 1; ix + 1 < n; ++ix)
      for (int iy = 1; iy + 1 < n; ++iy)
        for (int iz = 1; iz + 1 < n; ++iz) {
          auto E = [&s](int a, int b, int c) { return s.at(a, b, c); };
          Eigen::Matrix3d Hm;
          Hm(0, 0) = (E(ix + 1, iy, iz) - 2 * E(ix, iy, iz) + E(ix - 1, iy, iz)) / (h * h);
          Hm(1, 1) = (E(ix, iy + 1, iz) - 2 * E(ix, iy, iz) + E(ix, iy - 1, iz)) / (h * h);
          Hm(2, 2) = (E(ix, iy, iz + 1) - 2 * E(ix, iy, iz) + E(ix, iy, iz - 1)) / (h * h);
          Hm(0, 1) = Hm(1, 0) = (E(ix + 1, iy + 1, iz) - E(ix + 1, iy - 1, iz) -
                                 E(ix - 1, iy + 1, iz) + E(ix - 1, iy - 1, iz)) /
                                (4 * h * h);
          Hm(0, 2) = Hm(2, 0) = (E(ix + 1, iy, iz + 1) - E(ix + 1, iy, iz - 1) -
                                 E(ix - 1, iy, iz + 1) + E(ix - 1, iy, iz - 1)) /
                                (4 * h * h);
          Hm(1, 2) = Hm(2, 1) = (E(ix, iy + 1, iz + 1) - E(ix, iy + 1, iz - 1) -
                                 E(ix, iy - 1, iz + 1) + E(ix, iy - 1, iz - 1)) /
                                (4 * h * h);
          Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(Hm);
          ps.min_hessian_eig = std::min(ps.min_hessian_eig, es.eigenvalues()(0));

          const double gx = (E(ix + 1, iy, iz) - E(ix - 1, iy, iz)) / (2 * h);
          const double gy = (E(ix, iy + 1, iz) - E(ix, iy - 1, iz)) / (2 * h);
          const double gz = (E(ix, iy, iz + 1) - E(ix, iy, iz - 1)) / (2 * h);
          ps.max_grad = std::max(ps.max_grad, norm(Vec3{gx, gy, gz}));
          ps.max_d2 = std::max({ps.max_d2, std::abs(Hm(0, 0)), std::abs(Hm(1, 1)),
                                std::abs(Hm(2, 2))});
          if (ix >= 2 && ix + 2 < n)
            ps.max_d3 = std::max(ps.max_d3,
                                 std::abs(E(ix + 2, iy, iz) - 2 * E(ix + 1, iy, iz) +
                                          2 * E(ix - 1, iy, iz) - E(ix - 2, iy, iz)) /
                                     (2 * h * h * h));
        }
    ps.convex = ps.min_hessian_eig > 0.0;
    rep.all_convex = rep.all_convex && ps.convex;
    rep.per_sigma.push_back(ps);
  }

  // Cauchy differences of the energy over consecutive ladder pairs.
  if (surfaces.size() >= 2) {
    for (std::size_t i = 0; i + 1 < surfaces.size(); ++i) {
      double d = 0.0;
      for (std::size_t p = 0; p < surfaces[i].energies.size(); ++p)
        d = std::max(d, std::abs(surfaces[i].energies[p] - surfaces[i + 1].energies[p]));
      rep.cauchy_sigma.push_back(surfaces[i].sigma);
      rep.cauchy_gap.push_back(d);
    }
    bool fittable = rep.cauchy_gap.size() >= 2;
    for (double d : rep.cauchy_gap) fittable = fittable && d > 0.0;
    if (fittable) rep.energy_cauchy = fit_loglog(rep.cauchy_sigma, rep.cauchy_gap);
  }

  // State-level quantities need the seven-state bundles.
  if (!states.empty()) {
    if (states.size() != surfaces.size())
      throw validation_error("verify_spectral_bounds: one state bundle per surface required");
    std::vector<double> sig;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto& b = states[i];
      if (b.size() != 7)
        throw validation_error("verify_spectral_bounds: bundle must hold center and 6 neighbors");
      sig.push_back(surfaces[i].sigma);
      const auto& c = b[0].vector;
      double total = 0.0;
      for (int axis = 0; axis < 3; ++axis) {
        const auto& plus = b[1 + 2 * axis].vector;
        const auto& minus = b[2 + 2 * axis].vector;
        cplx php = align_phase(c, plus), phm = align_phase(c, minus);
        std::vector<double> acc(c.size());
        for (std::size_t q = 0; q < c.size(); ++q)
          acc[q] = std::norm((php * plus[q] - phm * minus[q]) / (2.0 * h_P));
        total += pairwise_sum(acc);
      }
      rep.dpsi_norm.push_back(std::sqrt(total));
    }
    bool fittable = sig.size() >= 2;
    for (double d : rep.dpsi_norm) fittable = fittable && d > 0.0;
    if (fittable) rep.state_deriv = fit_loglog(sig, rep.dpsi_norm);

    // || psi_sigma - psi_sigma' || at the center, all on one shared basis.
    std::vector<double> sig_big;
    for (std::size_t i = 0; i + 1 < states.size(); ++i) {
      const auto& a = states[i][0].vector;
      const auto& b = states[i + 1][0].vector;
      if (a.size() != b.size())
        throw validation_error(
            "verify_spectral_bounds: psi Cauchy differences need one shared basis");
      cplx ph = align_phase(a, b);
      std::vector<double> acc(a.size());
      for (std::size_t q = 0; q < a.size(); ++q) acc[q] = std::norm(a[q] - ph * b[q]);
      rep.psi_cauchy.push_back(std::sqrt(pairwise_sum(acc)));
      sig_big.push_back(std::pow(surfaces[i].sigma, params.alpha_bar));
    }
    bool cfit = rep.psi_cauchy.size() >= 2;
    for (double d : rep.psi_cauchy) cfit = cfit && d > 0.0;
    if (cfit) rep.state_cauchy = fit_loglog(sig_big, rep.psi_cauchy);
  }
  return rep;
}

void write_f1_csv(const std::vector<cplx>& f1, const ModeGrid& grid, const std::string& path) {
  if (f1.size() != grid.size()) throw validation_error("write_f1_csv: length mismatch");
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "kx,ky,kz,re,im\n";
  char buf[200];
  for (std::size_t j = 0; j < grid.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", grid[j].k.x,
                  grid[j].k.y, grid[j].k.z, f1[j].real(), f1[j].imag());
    out << buf;
  }
}

}  // namespace nelson
