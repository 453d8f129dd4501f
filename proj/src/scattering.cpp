#include "nelson/scattering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "nelson/form_factors.hpp"
#include "nelson/oscillatory.hpp"

namespace nelson {

namespace {

std::string fmt_vec(Vec3 p) {
  std::ostringstream os;
  os << std::setprecision(12) << "(" << p.x << ", " << p.y << ", " << p.z << ")";
  return os.str();
}

double snap_coord(double x, double d) { return std::round(x / d) * d; }

Vec3 snap_point(Vec3 p, double d) {
  return {snap_coord(p.x, d), snap_coord(p.y, d), snap_coord(p.z, d)};
}

// Walks all sorted index tuples of the given arity over J modes.
template <typename Fn>
void for_each_sorted_tuple(int J, int arity, Fn&& fn) {
  if (J <= 0 && arity > 0) return;
  std::vector<int> t(static_cast<std::size_t>(arity), 0);
  auto advance = [J](std::vector<int>& v) {
    int i = static_cast<int>(v.size()) - 1;
    while (i >= 0) {
      if (v[i] + 1 < J) {
        ++v[i];
        for (std::size_t j = i + 1; j < v.size(); ++j) v[j] = v[i];
        return true;
      }
      --i;
    }
    return false;
  };
  do {
    fn(std::span<const int>(t));
  } while (!t.empty() && advance(t));
  if (t.empty()) return;
}

// Runs fn(i) for i in [0, n), fanning out over up to `threads` async tasks.
// Tasks own disjoint strides, so writes to per-index slots never race.
template <typename Fn>
void parallel_for_index(int n, int threads, Fn&& fn) {
  if (n <= 0) return;
  const int nt = std::max(1, std::min(threads, n));
  if (nt == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futs;
  futs.reserve(static_cast<std::size_t>(nt));
  for (int w = 0; w < nt; ++w) {
    futs.push_back(std::async(std::launch::async, [&fn, w, n, nt]() {
      for (int i = w; i < n; i += nt) fn(i);
    }));
  }
  for (auto& f : futs) f.get();
}

}  // namespace

ModeGrid snap_grid_to_lattice(const ModeGrid& grid, double spacing) {
  if (!(spacing > 0.0))
    throw validation_error("snap_grid_to_lattice: spacing must be positive");
  if (grid.modes.empty())
    throw validation_error("snap_grid_to_lattice: empty grid");

  // Radii the snap must not cross: shell edges plus the annulus ends. A node
  // changing sides would move weight across a sharp-cutoff boundary.
  std::vector<double> bounds = grid.shell_bounds;
  bounds.push_back(grid.sigma);
  bounds.push_back(grid.kappa);

  ModeGrid out = grid;
  out.modes.clear();
  std::unordered_map<QKey3, std::size_t, QKey3Hash> seen;
  for (const Mode& m : grid.modes) {
    const Vec3 s = snap_point(m.k, spacing);
    const double r0 = norm(m.k), r1 = norm(s);
    for (double b : bounds) {
      if ((r0 - b) * (r1 - b) <= 0.0) {
        std::ostringstream os;
        os << std::setprecision(6) << "snap_grid_to_lattice: node at |k| = "
           << r0 << " crosses the boundary " << b << " when snapped to |k| = "
           << r1 << "; use a lattice spacing below " << std::abs(r0 - b)
           << " or fewer, wider shells";
        throw validation_error(os.str());
      }
    }
    const QKey3 key = quantize(s, 1e9);
    auto it = seen.find(key);
    if (it != seen.end()) {
      out.modes[it->second].w += m.w;
    } else {
      seen.emplace(key, out.modes.size());
      out.modes.push_back({s, m.w});
    }
  }
  return out;
}

std::shared_ptr<ElectronGrid> build_packet_lattice(
    const std::vector<Vec3>& centers, const std::vector<double>& radii,
    double spacing, int margin_cells) {
  if (centers.empty() || centers.size() != radii.size())
    throw validation_error("build_packet_lattice: need matching, nonempty centers and radii");
  if (!(spacing > 0.0))
    throw validation_error("build_packet_lattice: spacing must be positive");
  if (margin_cells < 0)
    throw validation_error("build_packet_lattice: margin_cells must be >= 0");

  const double w = spacing * spacing * spacing;
  std::vector<ElectronPoint> pts;
  std::unordered_set<QKey3, QKey3Hash> seen;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (!(radii[i] > 0.0))
      throw validation_error("build_packet_lattice: radii must be positive");
    const Vec3 c = snap_point(centers[i], spacing);
    const double R = radii[i] + margin_cells * spacing;
    const int lim = static_cast<int>(std::ceil(R / spacing));
    const double R2_cells = (R / spacing) * (R / spacing);
    for (int ox = -lim; ox <= lim; ++ox)
      for (int oy = -lim; oy <= lim; ++oy)
        for (int oz = -lim; oz <= lim; ++oz) {
          const double cells2 = double(ox) * ox + double(oy) * oy + double(oz) * oz;
          if (cells2 > R2_cells) continue;
          const Vec3 p{c.x + spacing * ox, c.y + spacing * oy, c.z + spacing * oz};
          if (seen.insert(quantize(p, 1e9)).second) pts.push_back({p, w});
        }
  }
  return std::make_shared<ElectronGrid>(std::move(pts), 0.0);
}

double WavePacket::operator()(Vec3 p) const {
  const double u = norm2(p - center_);
  const double r2 = radius_ * radius_;
  if (u >= r2) return 0.0;
  return amplitude_ * std::exp(-r2 / (r2 - u));
}

WavePacket make_bump(Vec3 center, double radius,
                     std::shared_ptr<const ElectronGrid> egrid,
                     const ModelParams& params) {
  if (!egrid) throw validation_error("make_bump: null electron grid");
  if (!(radius > 0.0)) throw validation_error("make_bump: radius must be positive");
  if (norm(center) + radius > params.p_max + 1e-12) {
    std::ostringstream os;
    os << std::setprecision(6) << "make_bump: support ball escapes the momentum "
       << "domain, |center| + radius = " << norm(center) + radius
       << " > p_max = " << params.p_max;
    throw validation_error(os.str());
  }

  WavePacket h;
  h.center_ = center;
  h.radius_ = radius;
  h.amplitude_ = 1.0;
  h.egrid_ = std::move(egrid);

  const ElectronGrid& eg = *h.egrid_;
  h.samples_.assign(static_cast<std::size_t>(eg.size()), 0.0);
  double raw2 = 0.0;
  for (int e = 0; e < eg.size(); ++e) {
    const double v = h(eg[e].p);
    if (v == 0.0) continue;
    h.samples_[static_cast<std::size_t>(e)] = v;
    h.support_.push_back(e);
    raw2 += eg[e].w * v * v;
  }
  if (h.support_.empty() || raw2 <= 0.0)
    throw validation_error("make_bump: support ball contains no lattice points; "
                           "use a finer lattice or a larger radius");

  const double A = 1.0 / std::sqrt(raw2);
  h.amplitude_ = A;
  double l1 = 0.0, l2sq = 0.0, linf = 0.0;
  for (int e : h.support_) {
    double& s = h.samples_[static_cast<std::size_t>(e)];
    s *= A;
    const double w = eg[e].w;
    l1 += w * std::abs(s);
    l2sq += w * s * s;
    linf = std::max(linf, std::abs(s));
  }
  h.l1_ = l1;
  h.l2_ = std::sqrt(l2sq);
  h.linf_ = linf;

  // Gradient magnitude is radial: |grad h|(u) = h(u) * 2 r^2 sqrt(u) /
  // (r^2 - u)^2 with u = |p - c|^2. A dense scan of the radial profile
  // resolves the single interior maximum well enough for reporting.
  const double r2 = radius * radius;
  double gmax = 0.0;
  const int N = 4096;
  for (int i = 1; i < N; ++i) {
    const double s = radius * i / N;
    const double u = s * s;
    const double g = A * std::exp(-r2 / (r2 - u)) * 2.0 * r2 * s / ((r2 - u) * (r2 - u));
    gmax = std::max(gmax, g);
  }
  h.max_grad_ = gmax;
  return h;
}

bool packets_disjoint(const WavePacket& a, const WavePacket& b) {
  return norm(a.center() - b.center()) >= a.radius() + b.radius();
}

bool VelocityBox::contains(Vec3 v) const {
  return lo.x <= v.x && v.x <= hi.x && lo.y <= v.y && v.y <= hi.y &&
         lo.z <= v.z && v.z <= hi.z;
}

namespace {

// Central-difference energy gradients at the packet's support points.
std::vector<Vec3> surface_gradients(const WavePacket& h,
                                    const EnergySurface& surface) {
  const CubeSpec& cube = surface.cube;
  if (!(cube.h > 0.0) || cube.n < 3)
    throw validation_error("velocity_support: energy surface cube is degenerate");
  const int half = (cube.n - 1) / 2;
  std::vector<Vec3> grads;
  grads.reserve(h.support().size());
  for (int e : h.support()) {
    const Vec3 p = h.egrid()->operator[](e).p;
    const Vec3 rel = p - cube.center;
    const int ix = static_cast<int>(std::llround(rel.x / cube.h)) + half;
    const int iy = static_cast<int>(std::llround(rel.y / cube.h)) + half;
    const int iz = static_cast<int>(std::llround(rel.z / cube.h)) + half;
    if (ix < 1 || ix > cube.n - 2 || iy < 1 || iy > cube.n - 2 || iz < 1 ||
        iz > cube.n - 2)
      throw validation_error(
          "velocity_support: energy surface does not cover the packet support "
          "with an interior margin; enlarge the cube");
    const Vec3 at{cube.center.x + cube.h * (ix - half),
                  cube.center.y + cube.h * (iy - half),
                  cube.center.z + cube.h * (iz - half)};
    if (norm(at - p) > 1e-9)
      throw validation_error(
          "velocity_support: packet lattice is not aligned with the energy "
          "surface cube");
    const double inv2h = 1.0 / (2.0 * cube.h);
    grads.push_back(
        {(surface.at(ix + 1, iy, iz) - surface.at(ix - 1, iy, iz)) * inv2h,
         (surface.at(ix, iy + 1, iz) - surface.at(ix, iy - 1, iz)) * inv2h,
         (surface.at(ix, iy, iz + 1) - surface.at(ix, iy, iz - 1)) * inv2h});
  }
  return grads;
}

}  // namespace

VelocityBox velocity_support(const WavePacket& h, const EnergySurface& surface) {
  const auto grads = surface_gradients(h, surface);
  const double inf = std::numeric_limits<double>::infinity();
  VelocityBox box{{inf, inf, inf}, {-inf, -inf, -inf}, inf, 0.0};
  for (const Vec3& g : grads) {
    box.lo = {std::min(box.lo.x, g.x), std::min(box.lo.y, g.y), std::min(box.lo.z, g.z)};
    box.hi = {std::max(box.hi.x, g.x), std::max(box.hi.y, g.y), std::max(box.hi.z, g.z)};
    const double s = norm(g);
    box.min_speed = std::min(box.min_speed, s);
    box.max_speed = std::max(box.max_speed, s);
  }
  return box;
}

double box_gap(const VelocityBox& a, const VelocityBox& b) {
  auto axis = [](double alo, double ahi, double blo, double bhi) {
    return std::max({0.0, alo - bhi, blo - ahi});
  };
  const double gx = axis(a.lo.x, a.hi.x, b.lo.x, b.hi.x);
  const double gy = axis(a.lo.y, a.hi.y, b.lo.y, b.hi.y);
  const double gz = axis(a.lo.z, a.hi.z, b.lo.z, b.hi.z);
  return std::sqrt(gx * gx + gy * gy + gz * gz);
}

double velocity_separation(const WavePacket& h1, const EnergySurface& s1,
                           const WavePacket& h2, const EnergySurface& s2) {
  const auto g1 = surface_gradients(h1, s1);
  const auto g2 = surface_gradients(h2, s2);
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& a : g1)
    for (const Vec3& b : g2) best = std::min(best, norm(a - b));
  return best;
}

std::size_t GroundStateStore::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = QKey3Hash{}(k.p);
  h ^= static_cast<std::uint64_t>(k.sigma) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return static_cast<std::size_t>(h);
}

GroundStateStore::Key GroundStateStore::make_key(Vec3 P, double sigma) {
  return {quantize(P, 1e9), std::llround(sigma * 1e9)};
}

const StoredGround* GroundStateStore::find(Vec3 P, double sigma) const {
  auto it = entries_.find(make_key(P, sigma));
  return it == entries_.end() ? nullptr : &it->second;
}

void GroundStateStore::insert(StoredGround gs) {
  entries_[make_key(gs.P, gs.sigma)] = std::move(gs);
}

int GroundStateStore::ensure(const std::vector<Vec3>& points, double sigma,
                             std::shared_ptr<const FockBasis> basis,
                             const ModelParams& params, const SolverOptions& opts,
                             int threads) {
  if (!basis) throw validation_error("GroundStateStore::ensure: null basis");
  std::vector<Vec3> missing;
  std::unordered_set<Key, KeyHash> queued;
  for (const Vec3& P : points) {
    const Key key = make_key(P, sigma);
    if (entries_.count(key) || !queued.insert(key).second) continue;
    missing.push_back(P);
  }
  if (missing.empty()) return 0;

  std::vector<StoredGround> solved(missing.size());
  parallel_for_index(static_cast<int>(missing.size()), threads, [&](int i) {
    GroundState gs = solve_fiber(missing[static_cast<std::size_t>(i)], sigma,
                                 basis, params, opts);
    extract_components(gs);
    solved[static_cast<std::size_t>(i)] =
        StoredGround{gs.P, gs.sigma, gs.energy, gs.gap, gs.residual,
                     std::move(gs.components)};
  });
  for (auto& s : solved) insert(std::move(s));
  return static_cast<int>(missing.size());
}

namespace {

constexpr char kStoreMagic[8] = {'N', 'G', 'S', 'T', 'O', 'R', 'E', '1'};
constexpr std::uint32_t kStoreVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return bool(is);
}

}  // namespace

bool GroundStateStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) return false;
  os.write(kStoreMagic, sizeof(kStoreMagic));
  write_pod(os, kStoreVersion);

  // Order by (sigma, P) so identical stores serialize identically.
  std::vector<const StoredGround*> order;
  order.reserve(entries_.size());
  for (const auto& [key, gs] : entries_) order.push_back(&gs);
  std::sort(order.begin(), order.end(), [](const StoredGround* a, const StoredGround* b) {
    if (a->sigma != b->sigma) return a->sigma < b->sigma;
    if (a->P.x != b->P.x) return a->P.x < b->P.x;
    if (a->P.y != b->P.y) return a->P.y < b->P.y;
    return a->P.z < b->P.z;
  });

  write_pod(os, static_cast<std::uint64_t>(order.size()));
  for (const StoredGround* gs : order) {
    write_pod(os, gs->P.x);
    write_pod(os, gs->P.y);
    write_pod(os, gs->P.z);
    write_pod(os, gs->sigma);
    write_pod(os, gs->energy);
    write_pod(os, gs->gap);
    write_pod(os, gs->residual);
    write_pod(os, static_cast<std::uint32_t>(gs->components.size()));
    for (const auto& [m, table] : gs->components) {
      write_pod(os, static_cast<std::int32_t>(m));
      write_pod(os, static_cast<std::uint64_t>(table.modes()));
      std::vector<std::pair<std::vector<std::uint32_t>, cplx>> nz;
      for_each_sorted_tuple(static_cast<int>(table.modes()), m,
                            [&](std::span<const int> t) {
                              std::vector<std::uint32_t> tu(t.begin(), t.end());
                              const cplx v = table.value(tu);
                              if (v != cplx{}) nz.emplace_back(std::move(tu), v);
                            });
      write_pod(os, static_cast<std::uint64_t>(nz.size()));
      for (const auto& [tu, v] : nz) {
        for (std::uint32_t j : tu) write_pod(os, j);
        write_pod(os, v.real());
        write_pod(os, v.imag());
      }
    }
  }
  return bool(os);
}

bool GroundStateStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kStoreMagic)) return false;
  std::uint32_t version = 0;
  if (!read_pod(is, version) || version != kStoreVersion) return false;
  std::uint64_t count = 0;
  if (!read_pod(is, count)) return false;

  std::vector<StoredGround> loaded;
  loaded.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredGround gs;
    std::uint32_t n_comp = 0;
    if (!read_pod(is, gs.P.x) || !read_pod(is, gs.P.y) || !read_pod(is, gs.P.z) ||
        !read_pod(is, gs.sigma) || !read_pod(is, gs.energy) ||
        !read_pod(is, gs.gap) || !read_pod(is, gs.residual) ||
        !read_pod(is, n_comp))
      return false;
    for (std::uint32_t c = 0; c < n_comp; ++c) {
      std::int32_t m = 0;
      std::uint64_t J = 0, nz = 0;
      if (!read_pod(is, m) || !read_pod(is, J) || !read_pod(is, nz)) return false;
      PhotonTable table(static_cast<int>(m), static_cast<std::size_t>(J));
      for (std::uint64_t e = 0; e < nz; ++e) {
        std::vector<std::uint32_t> tu(static_cast<std::size_t>(m));
        for (auto& j : tu)
          if (!read_pod(is, j)) return false;
        double re = 0.0, im = 0.0;
        if (!read_pod(is, re) || !read_pod(is, im)) return false;
        table.set(std::move(tu), cplx{re, im});
      }
      gs.components.emplace(static_cast<int>(m), std::move(table));
    }
    loaded.push_back(std::move(gs));
  }
  for (auto& gs : loaded) insert(std::move(gs));
  return true;
}

EnergySurface surface_from_store(const WavePacket& h, double sigma,
                                 const GroundStateStore& store, double spacing) {
  if (!(spacing > 0.0))
    throw validation_error("surface_from_store: spacing must be positive");
  const Vec3 c = snap_point(h.center(), spacing);
  int half = 0;
  for (int e : h.support()) {
    const Vec3 rel = h.egrid()->operator[](e).p - c;
    const int mx = std::max({std::abs(std::llround(rel.x / spacing)),
                             std::abs(std::llround(rel.y / spacing)),
                             std::abs(std::llround(rel.z / spacing))});
    half = std::max(half, static_cast<int>(mx));
  }
  half += 1;  // one interior spare ring for central differences

  EnergySurface surf;
  surf.sigma = sigma;
  surf.cube = CubeSpec{c, spacing, 2 * half + 1};
  const int n = surf.cube.n;
  surf.energies.assign(static_cast<std::size_t>(n) * n * n,
                       std::numeric_limits<double>::quiet_NaN());

  // Only the support points and their axis neighbors are read by the
  // finite differences; everything else stays NaN.
  auto fill = [&](Vec3 p) {
    const Vec3 rel = p - c;
    const int ix = static_cast<int>(std::llround(rel.x / spacing)) + half;
    const int iy = static_cast<int>(std::llround(rel.y / spacing)) + half;
    const int iz = static_cast<int>(std::llround(rel.z / spacing)) + half;
    if (ix < 0 || ix >= n || iy < 0 || iy >= n || iz < 0 || iz >= n) return;
    const std::size_t idx =
        (static_cast<std::size_t>(ix) * n + iy) * n + iz;
    if (!std::isnan(surf.energies[idx])) return;
    const StoredGround* gs = store.find(p, sigma);
    if (!gs)
      throw validation_error("surface_from_store: ground state missing for P = " +
                             fmt_vec(p) + "; run ensure() over the packet lattice "
                             "with one margin cell first");
    surf.energies[idx] = gs->energy;
  };
  for (int e : h.support()) {
    const Vec3 p = h.egrid()->operator[](e).p;
    fill(p);
    for (int axis = 0; axis < 3; ++axis)
      for (int s = -1; s <= 1; s += 2) {
        Vec3 q = p;
        (axis == 0 ? q.x : axis == 1 ? q.y : q.z) += s * spacing;
        fill(q);
      }
  }
  return surf;
}

void validate_context(const ScatteringContext& ctx) {
  ctx.params.validate();
  if (!ctx.grid || ctx.grid->modes.empty())
    throw validation_error("scattering context: null or empty mode grid");
  if (!ctx.egrid || ctx.egrid->size() == 0)
    throw validation_error("scattering context: null or empty electron lattice");
  if (!ctx.basis) throw validation_error("scattering context: null Fock basis");
  if (!ctx.store) throw validation_error("scattering context: null ground-state store");
  if (ctx.m_max < 0 || ctx.m_max > ctx.basis->m_max)
    throw validation_error("scattering context: m_max must lie in [0, basis m_max]");
  if (ctx.threads < 1)
    throw validation_error("scattering context: threads must be >= 1");
  if (ctx.energy_ref == EnergyRef::LadderMin && !(ctx.sigma_ref > 0.0))
    throw validation_error("scattering context: LadderMin phases need sigma_ref > 0");
  if (!(ctx.c_env > 0.0))
    throw validation_error("scattering context: c_env must be positive");
  if (ctx.basis->grid.size() != ctx.grid->size())
    throw validation_error("scattering context: Fock basis was built on a different grid");
  for (std::size_t j = 0; j < ctx.grid->size(); ++j) {
    const Mode& a = ctx.basis->grid[j];
    const Mode& b = (*ctx.grid)[j];
    if (!(a.k == b.k) || a.w != b.w)
      throw validation_error("scattering context: Fock basis was built on a different grid");
  }
}

namespace {

// Phase and dispersion-mismatch energies come from the store: the energy at
// the current cutoff is part of the looked-up entry, the reference energy
// needs one more lookup when the context pins phases to sigma_ref.
double phase_energy(const ScatteringContext& ctx, Vec3 P, double cur_energy) {
  if (ctx.energy_ref == EnergyRef::Current) return cur_energy;
  const StoredGround* ref = ctx.store->find(P, ctx.sigma_ref);
  if (!ref)
    throw validation_error("scattering: ground state missing at the reference "
                           "cutoff sigma_ref for P = " + fmt_vec(P) +
                           "; run ensure() at sigma_ref first");
  return ref->energy;
}

// Tabulates one kernel family: kernel[m](e, tuple) = coef(e, gs) * f^m(tuple)
// for every support point of the packet. Values on tuples touching modes
// below sigma are dropped (exact support of the cutoff coupling). Zero values
// are skipped so empty rows stay unoccupied.
std::vector<DiscreteKernel> tabulate_family(
    const ScatteringContext& ctx, const WavePacket& h, double sigma, int mm,
    const std::function<cplx(int, const StoredGround&)>& coef) {
  const ModeGrid& grid = *ctx.grid;
  const int J = static_cast<int>(grid.size());
  std::vector<char> sub(static_cast<std::size_t>(J), 0);
  for (int j = 0; j < J; ++j)
    sub[static_cast<std::size_t>(j)] = norm(grid[static_cast<std::size_t>(j)].k) < sigma;

  std::vector<DiscreteKernel> out;
  out.reserve(static_cast<std::size_t>(mm) + 1);
  for (int m = 0; m <= mm; ++m) out.emplace_back(ctx.grid, ctx.egrid, m);

  for (int e : h.support()) {
    const Vec3 P = (*ctx.egrid)[e].p;
    const StoredGround* gs = ctx.store->find(P, sigma);
    if (!gs)
      throw validation_error("scattering: ground state missing for P = " +
                             fmt_vec(P) + " at sigma = " + std::to_string(sigma) +
                             "; run ensure() over the packet lattice first");
    const cplx c = coef(e, *gs);
    if (c == cplx{}) continue;
    for (int m = 0; m <= mm; ++m) {
      auto it = gs->components.find(m);
      if (it == gs->components.end()) continue;
      const PhotonTable& table = it->second;
      for_each_sorted_tuple(J, m, [&](std::span<const int> t) {
        for (int j : t)
          if (sub[static_cast<std::size_t>(j)]) return;
        const cplx v = table.value(std::vector<std::uint32_t>(t.begin(), t.end()));
        if (v == cplx{}) return;
        out[static_cast<std::size_t>(m)].set(e, t, c * v);
      });
    }
  }
  return out;
}

double check_sigma_range(const ScatteringContext& ctx, double sigma) {
  if (!(sigma > 0.0 && sigma <= ctx.params.kappa))
    throw validation_error("scattering: sigma must lie in (0, kappa]");
  if (sigma < ctx.grid->sigma - 1e-15)
    throw validation_error("scattering: sigma falls below the grid's infrared "
                           "edge; rebuild the grid with a smaller sigma");
  return sigma;
}

void check_packet(const ScatteringContext& ctx, const WavePacket& h) {
  if (h.egrid() != ctx.egrid)
    throw validation_error("scattering: packet lives on a different electron "
                           "lattice than the context");
}

}  // namespace

TwoElectronKernelSet build_kernels(const ScatteringContext& ctx,
                                   const WavePacket& h1, const WavePacket& h2,
                                   double t, double sigma) {
  validate_context(ctx);
  check_sigma_range(ctx, sigma);
  check_packet(ctx, h1);
  check_packet(ctx, h2);

  TwoElectronKernelSet tk;
  tk.t = t;
  tk.sigma = sigma;
  tk.m_max = ctx.m_max;
  tk.h1 = h1;
  tk.h2 = h2;
  auto phase_coef = [&](const WavePacket& h) {
    return std::function<cplx(int, const StoredGround&)>(
        [&ctx, &h, t](int e, const StoredGround& gs) {
          const double E = phase_energy(ctx, gs.P, gs.energy);
          return std::exp(cplx{0.0, -E * t}) * h.samples()[static_cast<std::size_t>(e)];
        });
  };
  tk.g1 = tabulate_family(ctx, h1, sigma, ctx.m_max, phase_coef(h1));
  tk.g2 = tabulate_family(ctx, h2, sigma, ctx.m_max, phase_coef(h2));
  return tk;
}

SingleElectronState psi_h_sigma(const ScatteringContext& ctx, const WavePacket& h,
                                double sigma) {
  validate_context(ctx);
  check_sigma_range(ctx, sigma);
  check_packet(ctx, h);

  SingleElectronState s;
  s.sigma = sigma;
  s.h = h;
  s.g = tabulate_family(ctx, h, sigma, ctx.m_max,
                        [&h](int e, const StoredGround&) {
                          return cplx{h.samples()[static_cast<std::size_t>(e)], 0.0};
                        });
  s.norm_h = h.norm_l2();

  std::vector<double> terms;
  terms.reserve(s.g.size());
  PairingStats stats;
  for (std::size_t n = 0; n < s.g.size(); ++n)
    terms.push_back(pair_single(s.g[n], s.g[n], &stats).real() /
                    factorial(static_cast<int>(n)));
  const double n2 = pairwise_sum(terms);
  s.norm_psi = n2 > 0.0 ? std::sqrt(n2) : 0.0;
  if (std::abs(s.norm_psi - s.norm_h) > 1e-10 * std::max(1.0, s.norm_h)) {
    std::ostringstream os;
    os << std::setprecision(12) << "psi_h_sigma: dressed-state norm "
       << s.norm_psi << " deviates from the packet norm " << s.norm_h
       << " beyond 1e-10; the component tables are not normalized";
    throw numerical_error(os.str());
  }
  return s;
}

cplx psi_inner(const SingleElectronState& a, const SingleElectronState& b) {
  const std::size_t na = a.g.size(), nb = b.g.size();
  std::vector<cplx> terms;
  PairingStats stats;
  for (std::size_t n = 0; n < std::min(na, nb); ++n)
    terms.push_back(pair_single(a.g[n], b.g[n], &stats) /
                    factorial(static_cast<int>(n)));
  return pairwise_sum(terms);
}

namespace {

// Coarse per-arity magnitude of one dressed cloud, ||h||_2 sqrt(S1^m / m!)
// with S1 the one-photon envelope weight. Only steers the arity tail stop
// and the reported tail bound.
struct TailEnvelope {
  std::vector<double> bound1, bound2;  // per arity, families 1 and 2
};

TailEnvelope tail_envelope(const ScatteringContext& ctx,
                           const TwoElectronKernelSet& tk) {
  const ModeGrid& grid = *ctx.grid;
  double S1 = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double g = g_envelope({grid[j].k}, tk.sigma, ctx.params, ctx.c_env);
    S1 += grid[j].w * g * g;
  }
  TailEnvelope env;
  for (int m = 0; m <= tk.m_max; ++m) {
    const double base = std::sqrt(std::pow(S1, m) / factorial(m));
    env.bound1.push_back(tk.h1.norm_l2() * base);
    env.bound2.push_back(tk.h2.norm_l2() * base);
  }
  return env;
}

double level_estimate(const TailEnvelope& bra, const TailEnvelope& ket, int T) {
  const int mb = static_cast<int>(bra.bound1.size()) - 1;
  const int mk = static_cast<int>(ket.bound1.size()) - 1;
  double est = 0.0;
  for (int n = std::max(0, T - mk); n <= std::min(T, mk); ++n) {
    const int m = T - n;
    for (int nt = std::max(0, T - mb); nt <= std::min(T, mb); ++nt) {
      const int mt = T - nt;
      est += factorial(T) /
             std::sqrt(factorial(n) * factorial(m) * factorial(nt) * factorial(mt)) *
             ket.bound1[static_cast<std::size_t>(n)] *
             ket.bound2[static_cast<std::size_t>(m)] *
             bra.bound1[static_cast<std::size_t>(nt)] *
             bra.bound2[static_cast<std::size_t>(mt)];
    }
  }
  return est;
}

}  // namespace

OverlapParts overlap(const ScatteringContext& ctx, const TwoElectronKernelSet& bra,
                     const TwoElectronKernelSet& ket) {
  validate_context(ctx);
  if (bra.g1.empty() || bra.g2.empty() || ket.g1.empty() || ket.g2.empty())
    throw validation_error("overlap: kernel sets are empty");
  if (bra.g1[0].grid_ptr() != ket.g1[0].grid_ptr())
    throw validation_error("overlap: kernel sets live on different mode grids");
  if (bra.g1[0].egrid_ptr() != ket.g1[0].egrid_ptr())
    throw validation_error("overlap: kernel sets live on different electron lattices");

  const int mb = bra.m_max, mk = ket.m_max;
  const int t_cap = std::min(2 * mb, 2 * mk);
  const TailEnvelope env_bra = tail_envelope(ctx, bra);
  const TailEnvelope env_ket = tail_envelope(ctx, ket);
  const double scale_floor = std::max(
      1e-300, bra.h1.norm_l2() * bra.h2.norm_l2() * ket.h1.norm_l2() * ket.h2.norm_l2());

  struct Combo {
    int n, m, nt, mt;
    double coeff;
  };
  std::vector<cplx> acc_total, acc_direct, acc_exchange, acc_rest;
  OverlapParts out{};
  double running = 0.0;

  for (int T = 0; T <= t_cap; ++T) {
    std::vector<Combo> combos;
    for (int n = std::max(0, T - mk); n <= std::min(T, mk); ++n)
      for (int nt = std::max(0, T - mb); nt <= std::min(T, mb); ++nt) {
        const int m = T - n, mt = T - nt;
        combos.push_back({n, m, nt, mt,
                          1.0 / std::sqrt(factorial(n) * factorial(m) *
                                          factorial(nt) * factorial(mt))});
      }
    std::vector<QuadParts> parts(combos.size());
    std::vector<PairingStats> stats(combos.size());
    parallel_for_index(static_cast<int>(combos.size()), ctx.threads, [&](int i) {
      const Combo& c = combos[static_cast<std::size_t>(i)];
      parts[static_cast<std::size_t>(i)] = pair_quad_classified(
          bra.g1[static_cast<std::size_t>(c.nt)], bra.g2[static_cast<std::size_t>(c.mt)],
          ket.g1[static_cast<std::size_t>(c.n)], ket.g2[static_cast<std::size_t>(c.m)],
          &stats[static_cast<std::size_t>(i)]);
    });
    for (std::size_t i = 0; i < combos.size(); ++i) {
      const double c = combos[i].coeff;
      acc_total.push_back(c * parts[i].total);
      acc_direct.push_back(c * parts[i].direct);
      acc_exchange.push_back(c * parts[i].exchange);
      acc_rest.push_back(c * parts[i].rest);
      out.stats.interp_fallbacks += stats[i].interp_fallbacks;
      out.stats.mismatched_pairings += stats[i].mismatched_pairings;
      running += std::abs(c * parts[i].total);
    }
    out.max_total_arity = T;
    out.tail_bound = T < t_cap ? level_estimate(env_bra, env_ket, T + 1) : 0.0;
    if (T < t_cap && out.tail_bound < 1e-12 * std::max(running, scale_floor)) break;
  }

  out.total = pairwise_sum(acc_total);
  out.direct = pairwise_sum(acc_direct);
  out.exchange = pairwise_sum(acc_exchange);
  out.rest = pairwise_sum(acc_rest);

  const double defect =
      std::abs(out.total - (out.direct + out.exchange + out.rest));
  if (defect > 1e-12 * std::max(1.0, std::abs(out.total)))
    throw numerical_error("overlap: contraction classes no longer sum to the "
                          "total; partition defect " + std::to_string(defect));
  return out;
}

std::vector<double> check_couplings(const ModeGrid& grid, double sigma,
                                    const ModelParams& params) {
  std::vector<double> v(grid.size(), 0.0);
  for (std::size_t j = 0; j < grid.size(); ++j)
    v[j] = form_factor_check(grid[j].k, sigma, params);
  return v;
}

namespace {

// One creation-word piece of the derivative: a two-slot kernel with a real
// coefficient. family 0 holds the double-commutator pieces, family 1 the
// dispersion-mismatch products.
struct DerivativePiece {
  DiscreteKernel F;
  double coeff = 0.0;
  int family = 0;
};

// Electron lattice shared by all derivative pieces: the packet supports and
// every mode-momentum shift of them, so shifted bra lookups inside
// pair_double always land on the lattice exactly.
std::shared_ptr<ElectronGrid> union_egrid(const ScatteringContext& ctx,
                                          const WavePacket& h1,
                                          const WavePacket& h2) {
  const ModeGrid& grid = *ctx.grid;
  const ElectronGrid& eg = *ctx.egrid;
  std::vector<ElectronPoint> pts;
  std::unordered_set<QKey3, QKey3Hash> seen;
  const double w = eg[0].w;
  auto add = [&](Vec3 p) {
    if (seen.insert(quantize(p, 1e9)).second) pts.push_back({p, w});
  };
  for (const WavePacket* h : {&h1, &h2})
    for (int e : h->support()) {
      const Vec3 p = eg[e].p;
      add(p);
      for (std::size_t j = 0; j < grid.size(); ++j) {
        add(p - grid[j].k);
        add(p + grid[j].k);
      }
    }
  return std::make_shared<ElectronGrid>(std::move(pts), 0.0);
}

}  // namespace

CookTerms cook_terms(const ScatteringContext& ctx, const WavePacket& h1,
                     const WavePacket& h2, double t, double sigma) {
  validate_context(ctx);
  check_sigma_range(ctx, sigma);
  check_packet(ctx, h1);
  check_packet(ctx, h2);

  const TwoElectronKernelSet tk = build_kernels(ctx, h1, h2, t, sigma);
  const int mm = ctx.m_max;
  CookTerms out{};

  // Dispersion-mismatch families, weight (E_{P,sigma} - E_ref(P)) under the
  // same phases. Identically zero when phases use the current cutoff.
  const bool hs_zero = ctx.energy_ref == EnergyRef::Current;
  TwoElectronKernelSet mix12, mix21;
  if (!hs_zero) {
    auto hs_coef = [&](const WavePacket& h) {
      return std::function<cplx(int, const StoredGround&)>(
          [&ctx, &h, t](int e, const StoredGround& gs) {
            const double E = phase_energy(ctx, gs.P, gs.energy);
            return std::exp(cplx{0.0, -E * t}) * (gs.energy - E) *
                   h.samples()[static_cast<std::size_t>(e)];
          });
    };
    std::vector<DiscreteKernel> gs1 =
        tabulate_family(ctx, h1, sigma, mm, hs_coef(h1));
    std::vector<DiscreteKernel> gs2 =
        tabulate_family(ctx, h2, sigma, mm, hs_coef(h2));
    mix12.t = mix21.t = t;
    mix12.sigma = mix21.sigma = sigma;
    mix12.m_max = mix21.m_max = mm;
    mix12.h1 = h1;
    mix12.h2 = h2;
    mix21.h1 = h2;
    mix21.h2 = h1;
    mix12.g1 = tk.g1;
    mix12.g2 = std::move(gs2);
    mix21.g1 = tk.g2;
    mix21.g2 = std::move(gs1);

    const cplx aa = overlap(ctx, mix12, mix12).total;
    const cplx bb = overlap(ctx, mix21, mix21).total;
    const cplx ab = overlap(ctx, mix12, mix21).total;
    const double n2 = aa.real() + bb.real() + 2.0 * ab.real();
    out.norm_hsigma = n2 > 0.0 ? std::sqrt(n2) : 0.0;
  }

  // Removed-coupling term through the check-photon sandwich, both packet
  // orders on both sides.
  const std::vector<double> vcheck = check_couplings(*ctx.grid, sigma, ctx.params);
  bool has_sub = false;
  for (std::size_t j = 0; j < ctx.grid->size(); ++j)
    if (norm((*ctx.grid)[j].k) < sigma) has_sub = true;
  out.check_active = has_sub;
  double nc2 = 0.0;
  if (has_sub) {
    const std::vector<DiscreteKernel>* fam[2] = {&tk.g1, &tk.g2};
    std::vector<double> terms;
    for (int T = 0; T <= 2 * mm; ++T)
      for (int n = std::max(0, T - mm); n <= std::min(T, mm); ++n)
        for (int nt = std::max(0, T - mm); nt <= std::min(T, mm); ++nt) {
          const int m = T - n, mt = T - nt;
          const double coeff = 1.0 / std::sqrt(factorial(n) * factorial(m) *
                                               factorial(nt) * factorial(mt));
          for (int ket_ord = 0; ket_ord < 2; ++ket_ord)
            for (int bra_ord = 0; bra_ord < 2; ++bra_ord) {
              const auto& ket_out = (*fam[ket_ord])[static_cast<std::size_t>(n)];
              const auto& ket_in = (*fam[1 - ket_ord])[static_cast<std::size_t>(m)];
              const auto& bra_out = (*fam[bra_ord])[static_cast<std::size_t>(nt)];
              const auto& bra_in = (*fam[1 - bra_ord])[static_cast<std::size_t>(mt)];
              terms.push_back(coeff * pair_checkH(bra_in, bra_out, ket_out, ket_in,
                                                  vcheck, sigma, &out.stats)
                                          .real());
            }
        }
    nc2 = pairwise_sum(terms);
    out.norm_check = nc2 > 0.0 ? std::sqrt(nc2) : 0.0;
  }

  // Double-commutator pieces: two-slot kernels (n+1 and m photons shifted by
  // one coupling momentum), weights 1 / sqrt((a+1)! b!), both family orders.
  const auto egridU = union_egrid(ctx, h1, h2);
  std::vector<DerivativePiece> pieces;
  const ElectronGrid& eg = *ctx.egrid;
  const ModeGrid& grid = *ctx.grid;
  const int J = static_cast<int>(grid.size());

  for (int swapped = 0; swapped < 2; ++swapped) {
    const WavePacket& ha = swapped ? h2 : h1;
    const WavePacket& hb = swapped ? h1 : h2;
    for (int a = 0; a + 1 <= mm; ++a)
      for (int b = 0; b <= mm; ++b) {
        DerivativePiece piece{DiscreteKernel(ctx.grid, egridU, egridU, a, b),
                              1.0 / std::sqrt(factorial(a + 1) * factorial(b)), 0};
        // Candidate electron pairs: q reaches the first cloud's support
        // through some +k_l, p the second through -k_l.
        std::unordered_set<std::uint64_t> cand;
        std::vector<std::pair<int, int>> cand_list;
        for (int j = 0; j < J; ++j) {
          const Vec3 kj = grid[static_cast<std::size_t>(j)].k;
          for (int e1 : ha.support()) {
            const int eq = egridU->lookup(eg[e1].p - kj);
            if (eq < 0) continue;
            for (int e2 : hb.support()) {
              const int ep = egridU->lookup(eg[e2].p + kj);
              if (ep < 0) continue;
              const std::uint64_t key =
                  (static_cast<std::uint64_t>(eq) << 32) | static_cast<std::uint32_t>(ep);
              if (cand.insert(key).second) cand_list.emplace_back(eq, ep);
            }
          }
        }
        for (const auto& [eq, ep] : cand_list) {
          const Vec3 q = (*egridU)[eq].p;
          const Vec3 p = (*egridU)[ep].p;
          for_each_sorted_tuple(J, a, [&](std::span<const int> r) {
            std::vector<int> rv(r.begin(), r.end());
            for_each_sorted_tuple(J, b, [&](std::span<const int> k) {
              std::vector<int> kv(k.begin(), k.end());
              const cplx v =
                  eval_F(tk, swapped != 0, a, b, q, rv, p, kv, ctx.params);
              if (v != cplx{}) piece.F.set2(eq, rv, ep, kv, v);
            });
          });
        }
        pieces.push_back(std::move(piece));
      }
  }

  // Dispersion-mismatch products on the same lattice, for the cross Gram
  // with the double commutator.
  const std::size_t n_dcomm = pieces.size();
  if (!hs_zero) {
    const TwoElectronKernelSet* mixes[2] = {&mix12, &mix21};
    for (const TwoElectronKernelSet* mix : mixes)
      for (int n = 0; n <= mm; ++n)
        for (int m = 0; m <= mm; ++m) {
          DerivativePiece piece{DiscreteKernel(ctx.grid, egridU, egridU, n, m),
                                1.0 / std::sqrt(factorial(n) * factorial(m)), 1};
          const DiscreteKernel& ga = mix->g1[static_cast<std::size_t>(n)];
          const DiscreteKernel& gb = mix->g2[static_cast<std::size_t>(m)];
          ga.for_each_nonzero([&](std::span<const int> es1, std::span<const int> r,
                                  std::span<const int>, cplx va) {
            const int eq = egridU->lookup(eg[es1[0]].p);
            gb.for_each_nonzero([&](std::span<const int> es2, std::span<const int> k,
                                    std::span<const int>, cplx vb) {
              const int ep = egridU->lookup(eg[es2[0]].p);
              piece.F.set2(eq, r, ep, k, va * vb);
            });
          });
          pieces.push_back(std::move(piece));
        }
  }

  // Gram matrix over the pieces. Only equal photon totals pair; the check
  // piece is orthogonal to everything here (odd check-photon number).
  struct GramJob {
    std::size_t i, j;
  };
  std::vector<GramJob> jobs;
  for (std::size_t i = 0; i < pieces.size(); ++i)
    for (std::size_t j = i; j < pieces.size(); ++j)
      if (pieces[i].F.total_photon_arity() == pieces[j].F.total_photon_arity())
        jobs.push_back({i, j});
  std::vector<cplx> gram(jobs.size());
  std::vector<PairingStats> gram_stats(jobs.size());
  parallel_for_index(static_cast<int>(jobs.size()), ctx.threads, [&](int idx) {
    const GramJob& job = jobs[static_cast<std::size_t>(idx)];
    gram[static_cast<std::size_t>(idx)] =
        pair_double(pieces[job.i].F, pieces[job.j].F,
                    &gram_stats[static_cast<std::size_t>(idx)]);
  });

  std::vector<double> dcomm_terms, cross_terms, hs_terms;
  for (std::size_t idx = 0; idx < jobs.size(); ++idx) {
    const auto& job = jobs[idx];
    const double cc = pieces[job.i].coeff * pieces[job.j].coeff;
    const double v = job.i == job.j ? cc * gram[idx].real()
                                    : 2.0 * cc * gram[idx].real();
    const int fi = pieces[job.i].family, fj = pieces[job.j].family;
    if (fi == 0 && fj == 0)
      dcomm_terms.push_back(v);
    else if (fi == 1 && fj == 1)
      hs_terms.push_back(v);
    else
      cross_terms.push_back(v);
    out.stats.interp_fallbacks += gram_stats[idx].interp_fallbacks;
    out.stats.mismatched_pairings += gram_stats[idx].mismatched_pairings;
  }
  (void)n_dcomm;
  const double nd2 = pairwise_sum(dcomm_terms);
  const double cross = pairwise_sum(cross_terms);
  const double nh2_gram = pairwise_sum(hs_terms);
  out.norm_dcomm = nd2 > 0.0 ? std::sqrt(nd2) : 0.0;

  const double nh2 = hs_zero ? 0.0 : out.norm_hsigma * out.norm_hsigma;
  if (!hs_zero &&
      std::abs(nh2_gram - nh2) > 1e-9 * std::max(1.0, nh2))
    throw numerical_error("cook_terms: dispersion-mismatch norm differs "
                          "between the product-kernel and overlap routes");
  const double total2 = nd2 + nh2 + cross + nc2;
  out.norm_total = total2 > 0.0 ? std::sqrt(total2) : 0.0;
  return out;
}

ConvergenceReport convergence_study(const ScatteringContext& ctx,
                                    const WavePacket& h1, const WavePacket& h2,
                                    double gamma,
                                    const std::vector<double>& t_list) {
  validate_context(ctx);
  check_packet(ctx, h1);
  check_packet(ctx, h2);
  if (t_list.size() < 2)
    throw validation_error("convergence_study: need at least two times");
  if (!(gamma > 0.0))
    throw validation_error("convergence_study: gamma must be positive");
  for (std::size_t i = 0; i + 1 < t_list.size(); ++i)
    if (!(t_list[i] > 0.0) || !(t_list[i] < t_list[i + 1]))
      throw validation_error("convergence_study: times must be positive and increasing");

  const double kappa = ctx.params.kappa;
  for (double t : t_list) {
    const double st = kappa / std::pow(t, gamma);
    if (st < ctx.grid->sigma - 1e-15) {
      const double t_max = t_list.back();
      const double g_star = std::log(kappa / ctx.grid->sigma) / std::log(t_max);
      std::ostringstream os;
      os << std::setprecision(6) << "convergence_study: sigma(t) = " << st
         << " at t = " << t << " falls below the grid's infrared edge "
         << ctx.grid->sigma << "; start later, rebuild the grid with a smaller "
         << "sigma, or use gamma <= " << g_star;
      throw validation_error(os.str());
    }
  }

  std::vector<Vec3> pts;
  for (const WavePacket* h : {&h1, &h2})
    for (int e : h->support()) pts.push_back((*ctx.egrid)[e].p);
  if (ctx.energy_ref == EnergyRef::LadderMin)
    ctx.store->ensure(pts, ctx.sigma_ref, ctx.basis, ctx.params, ctx.solver,
                      ctx.threads);

  ConvergenceReport rep;
  rep.gamma = gamma;

  std::vector<TwoElectronKernelSet> stages;
  std::vector<cplx> self;
  stages.reserve(t_list.size());
  for (double t : t_list) {
    const double st = kappa / std::pow(t, gamma);
    ctx.store->ensure(pts, st, ctx.basis, ctx.params, ctx.solver, ctx.threads);
    stages.push_back(build_kernels(ctx, h1, h2, t, st));
    self.push_back(overlap(ctx, stages.back(), stages.back()).total);
  }

  const double hh = h1.norm_l2() * h2.norm_l2();
  std::vector<double> fit_t, fit_rest;
  for (std::size_t i = 0; i + 1 < stages.size(); ++i) {
    const OverlapParts cross = overlap(ctx, stages[i], stages[i + 1]);
    ConvergenceRow row;
    row.t1 = stages[i].t;
    row.t2 = stages[i + 1].t;
    row.sigma1 = stages[i].sigma;
    row.sigma2 = stages[i + 1].sigma;
    row.o11 = self[i];
    row.o22 = self[i + 1];
    row.o12 = cross.total;
    row.diff_norm2 = self[i].real() + self[i + 1].real() - 2.0 * cross.total.real();
    row.rest_12 = std::abs(cross.rest);
    const double n22 = self[i + 1].real();
    row.isometry_defect = std::abs((n22 > 0.0 ? std::sqrt(n22) : 0.0) - hh);
    rep.rows.push_back(row);
    if (row.rest_12 > 0.0) {
      fit_t.push_back(row.t2);
      fit_rest.push_back(row.rest_12);
    }
  }
  if (fit_t.size() >= 2) rep.rest_fit = fit_loglog(fit_t, fit_rest);

  if (ctx.m_max >= 1) {
    ScatteringContext trunc = ctx;
    trunc.m_max = ctx.m_max - 1;
    const double t0 = t_list.front();
    const double s0 = kappa / std::pow(t0, gamma);
    const TwoElectronKernelSet cut_tk = build_kernels(trunc, h1, h2, t0, s0);
    const OverlapParts full = overlap(ctx, stages.front(), stages.front());
    const OverlapParts cut = overlap(trunc, cut_tk, cut_tk);
    rep.truncation_delta = std::abs(full.total - cut.total);
    rep.truncation_tail = full.tail_bound;
  }
  return rep;
}

RestDecayReport rest_decay_study(const ScatteringContext& ctx,
                                 const WavePacket& h1, const WavePacket& h2,
                                 double sigma,
                                 const std::vector<double>& t_list) {
  validate_context(ctx);
  check_sigma_range(ctx, sigma);
  check_packet(ctx, h1);
  check_packet(ctx, h2);
  if (t_list.empty())
    throw validation_error("rest_decay_study: empty time list");

  std::vector<Vec3> pts;
  for (const WavePacket* h : {&h1, &h2})
    for (int e : h->support()) pts.push_back((*ctx.egrid)[e].p);
  ctx.store->ensure(pts, sigma, ctx.basis, ctx.params, ctx.solver, ctx.threads);
  if (ctx.energy_ref == EnergyRef::LadderMin)
    ctx.store->ensure(pts, ctx.sigma_ref, ctx.basis, ctx.params, ctx.solver,
                      ctx.threads);

  RestDecayReport rep;
  rep.sigma = sigma;
  std::vector<double> fit_t, fit_rest;
  for (double t : t_list) {
    const TwoElectronKernelSet tk = build_kernels(ctx, h1, h2, t, sigma);
    const OverlapParts op = overlap(ctx, tk, tk);
    rep.t.push_back(t);
    rep.rest_abs.push_back(std::abs(op.rest));
    rep.total_abs.push_back(std::abs(op.total));
    if (std::abs(op.rest) > 0.0) {
      fit_t.push_back(t);
      fit_rest.push_back(std::abs(op.rest));
    }
  }
  if (fit_t.size() >= 2) rep.fit = fit_loglog(fit_t, fit_rest);
  return rep;
}

}  // namespace nelson
