#include "nelson/oscillatory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nelson/form_factors.hpp"

namespace nelson {

namespace {

struct FGeometry {
  const std::vector<DiscreteKernel>* ga;
  const std::vector<DiscreteKernel>* gb;
  const WavePacket* ha;
  const WavePacket* hb;
};

FGeometry pick_families(const TwoElectronKernelSet& tk, bool swapped) {
  if (swapped) return {&tk.g2, &tk.g1, &tk.h2, &tk.h1};
  return {&tk.g1, &tk.g2, &tk.h1, &tk.h2};
}

void check_f_args(const TwoElectronKernelSet& tk, int n, int m,
                  const std::vector<int>& r, const std::vector<int>& k) {
  if (n < 0 || m < 0)
    throw validation_error("eval_F: negative photon arity");
  if (static_cast<int>(r.size()) != n || static_cast<int>(k.size()) != m)
    throw validation_error("eval_F: tuple lengths do not match the arities");
  if (tk.g1.empty() || tk.g2.empty())
    throw validation_error("eval_F: kernel set is empty");
}

// One coupling-shift term of the F sum, or zero. Throws when a shifted
// electron argument misses the lattice at a point where the packet is
// nonzero (the mode grid is not commensurate with the electron lattice).
cplx f_term(const FGeometry& geo, int n, int m, Vec3 qs, Vec3 ps,
            const std::vector<int>& r_ext, const std::vector<int>& k) {
  const DiscreteKernel& ka = (*geo.ga)[static_cast<std::size_t>(n) + 1];
  const DiscreteKernel& kb = (*geo.gb)[static_cast<std::size_t>(m)];
  const int eq = ka.egrid().lookup(qs);
  if (eq < 0) {
    if ((*geo.ha)(qs) != 0.0)
      throw validation_error("eval_F: shifted electron argument misses the "
                             "lattice where the packet is nonzero; the mode "
                             "grid is not commensurate with the lattice");
    return cplx{};
  }
  const int ep = kb.egrid().lookup(ps);
  if (ep < 0) {
    if ((*geo.hb)(ps) != 0.0)
      throw validation_error("eval_F: shifted electron argument misses the "
                             "lattice where the packet is nonzero; the mode "
                             "grid is not commensurate with the lattice");
    return cplx{};
  }
  return ka.at(eq, r_ext) * kb.at(ep, k);
}

}  // namespace

cplx eval_F(const TwoElectronKernelSet& tk, bool swapped, int n, int m, Vec3 q,
            const std::vector<int>& r, Vec3 p, const std::vector<int>& k,
            const ModelParams& params) {
  check_f_args(tk, n, m, r, k);
  if (n + 1 > tk.m_max || m > tk.m_max) return cplx{};
  const FGeometry geo = pick_families(tk, swapped);
  const ModeGrid& grid = tk.g1[0].grid();

  std::vector<cplx> terms;
  std::vector<int> r_ext(r.begin(), r.end());
  r_ext.push_back(0);
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const double v = form_factor(grid[l].k, params);
    if (v == 0.0) continue;
    r_ext.back() = static_cast<int>(l);
    const cplx t =
        f_term(geo, n, m, q + grid[l].k, p - grid[l].k, r_ext, k);
    if (t != cplx{}) terms.push_back(grid[l].w * v * t);
  }
  return double(n + 1) * pairwise_sum(terms);
}

double slow_cutoff_sigma(double sigma, const ModelParams& params) {
  if (!(sigma > 0.0 && sigma <= params.kappa))
    throw validation_error("slow_cutoff_sigma: sigma must lie in (0, kappa]");
  return params.kappa * std::pow(sigma / params.kappa, 1.0 / (8.0 * params.gamma0));
}

SplitF eval_F_split(const TwoElectronKernelSet& tk, bool swapped, int n, int m,
                    Vec3 q, const std::vector<int>& r, Vec3 p,
                    const std::vector<int>& k, const ModelParams& params) {
  check_f_args(tk, n, m, r, k);
  SplitF out{};
  if (n + 1 > tk.m_max || m > tk.m_max) return out;
  const FGeometry geo = pick_families(tk, swapped);
  const ModeGrid& grid = tk.g1[0].grid();
  const double sigma_s = slow_cutoff_sigma(tk.sigma, params);
  const double lo = (1.0 - params.eps0) * sigma_s;

  std::vector<cplx> tot, slow, fast;
  std::vector<int> r_ext(r.begin(), r.end());
  r_ext.push_back(0);
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const double v = form_factor(grid[l].k, params);
    if (v == 0.0) continue;
    r_ext.back() = static_cast<int>(l);
    const cplx t =
        f_term(geo, n, m, q + grid[l].k, p - grid[l].k, r_ext, k);
    if (t == cplx{}) continue;
    const cplx term = grid[l].w * v * t;
    const double chi1 = smooth_cutoff(norm(grid[l].k), lo, sigma_s);
    const cplx s = chi1 * term;
    tot.push_back(term);
    slow.push_back(s);
    fast.push_back(term - s);
  }
  const double scale = double(n + 1);
  out.total = scale * pairwise_sum(tot);
  out.slow = scale * pairwise_sum(slow);
  out.fast = scale * pairwise_sum(fast);
  return out;
}

double envelope_bound(const ModeGrid& grid, int n, const std::vector<int>& r,
                      int m, const std::vector<int>& k, double sigma,
                      const ModelParams& params, double c_env) {
  if (static_cast<int>(r.size()) != n || static_cast<int>(k.size()) != m)
    throw validation_error("envelope_bound: tuple lengths do not match");
  std::vector<Vec3> rv, kv;
  for (int j : r) rv.push_back(grid[static_cast<std::size_t>(j)].k);
  for (int j : k) kv.push_back(grid[static_cast<std::size_t>(j)].k);
  return g_envelope(rv, sigma, params, c_env) * g_envelope(kv, sigma, params, c_env) /
         std::sqrt(factorial(n) * factorial(m));
}

DecayReport fit_decay(const std::vector<DecaySample>& samples, DecayModel model,
                      double sigma, const ModelParams& params) {
  std::vector<DecaySample> kept;
  int dropped = 0;
  for (const DecaySample& s : samples) {
    if (s.t > 0.0 && s.value > 0.0)
      kept.push_back(s);
    else
      ++dropped;
  }
  if (kept.size() < 5)
    throw validation_error("fit_decay: need at least five positive samples");
  std::sort(kept.begin(), kept.end(),
            [](const DecaySample& a, const DecaySample& b) { return a.t < b.t; });
  if (kept.back().t < 10.0 * kept.front().t - 1e-9)
    throw validation_error("fit_decay: samples must span at least a decade in t");
  if (model == DecayModel::ThreeRegime && !(sigma > 0.0))
    throw validation_error("fit_decay: the three-regime bound needs sigma > 0");

  std::vector<double> ts, vs;
  for (const DecaySample& s : kept) {
    ts.push_back(s.t);
    vs.push_back(s.value);
  }

  DecayReport rep;
  rep.dropped = dropped;
  rep.fit = fit_loglog(ts, vs);

  auto bound = [&](double t) {
    switch (model) {
      case DecayModel::InverseT:
        return 1.0 / t;
      case DecayModel::InverseTSquared:
        return 1.0 / (t * t);
      case DecayModel::ThreeRegime:
        return std::pow(sigma, params.alpha_bar / (4.0 * params.gamma0)) / t +
               sigma * t +
               1.0 / (t * t * std::pow(sigma, 1.0 / (4.0 * params.gamma0)));
    }
    return 0.0;
  };

  const std::size_t half = (kept.size() + 1) / 2;
  double c_first = 0.0, c_late = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const double ratio = vs[i] / bound(ts[i]);
    if (i < half)
      c_first = std::max(c_first, ratio);
    else
      c_late = std::max(c_late, ratio);
  }
  rep.constant = c_first;
  rep.late_excess = c_late;
  rep.enveloped = c_late <= 1.25 * c_first;
  return rep;
}

SummationReport summation_check(const std::vector<double>& sigma_list,
                                const ModelParams& params, double c_env,
                                const ModeGrid* grid) {
  params.validate();
  if (!(c_env > 0.0))
    throw validation_error("summation_check: c_env must be positive");
  if (sigma_list.empty())
    throw validation_error("summation_check: empty sigma list");

  const double kappa_star = params.kappa_star();
  SummationReport rep;
  rep.lambda = params.lambda;
  rep.c_env = c_env;
  rep.all_ok = true;

  for (double sigma : sigma_list) {
    if (!(sigma > 0.0 && sigma <= kappa_star))
      throw validation_error("summation_check: sigma must lie in (0, kappa*]");
    SummationRow row;
    row.sigma = sigma;
    const double L = std::log(kappa_star / sigma);
    const double x = params.lambda * params.lambda * c_env * c_env * L;
    row.rhs = std::exp(4.0 * x);

    const int shifts[3][2] = {{0, 0}, {1, 0}, {1, 1}};
    const double factors[3] = {1.0, 2.0, 4.0};
    bool ok = true;
    for (int v = 0; v < 3; ++v) {
      double acc = 0.0;
      for (int T = 0; T <= 400; ++T) {
        // Creator and annihilator splits factor: the annihilator side sums
        // to 2^T exactly, the creator side carries the envelope powers.
        double level = 0.0;
        for (int mi = 0; mi <= T; ++mi) {
          const int ni = T - mi;
          const int em = mi - shifts[v][0], en = ni - shifts[v][1];
          if (em < 0 || en < 0) continue;
          level += std::pow(x, em + en) / (factorial(mi) * factorial(ni));
        }
        const double term = std::pow(2.0, T) * level;
        acc += term;
        if (T > 2 && term < 1e-16 * acc) break;
      }
      row.lhs[v] = acc;
      if (acc > factors[v] * row.rhs * (1.0 + 1e-9)) ok = false;
    }
    row.ok = ok;
    if (!ok) rep.all_ok = false;

    if (grid) {
      double s = 0.0;
      for (std::size_t j = 0; j < grid->size(); ++j) {
        const double g = g_envelope({(*grid)[j].k}, sigma, params, c_env);
        s += (*grid)[j].w * g * g;
      }
      row.quad_norm1 = s;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace nelson
