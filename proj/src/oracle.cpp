#include "nelson/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace nelson {

namespace {

bool qless(const QKey3& a, const QKey3& b) {
  if (a.a != b.a) return a.a < b.a;
  if (a.b != b.b) return a.b < b.b;
  return a.c < b.c;
}

int total_photons(const OracleKey& k) {
  int n = 0;
  for (auto c : k.photons) n += c;
  return n;
}

bool advance_ordered(std::vector<int>& t, int base) {
  for (int i = static_cast<int>(t.size()) - 1; i >= 0; --i) {
    if (++t[i] < base) return true;
    t[i] = 0;
  }
  return false;
}

}  // namespace

bool OracleKey::operator==(const OracleKey& o) const {
  if (n_electrons != o.n_electrons || photons != o.photons) return false;
  for (int i = 0; i < n_electrons; ++i)
    if (!(quantize(electrons[i]) == quantize(o.electrons[i]))) return false;
  return true;
}

std::size_t OracleKeyHash::operator()(const OracleKey& k) const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  mix(static_cast<std::uint64_t>(k.n_electrons));
  QKey3Hash qh;
  for (int i = 0; i < k.n_electrons; ++i) mix(qh(quantize(k.electrons[i])));
  for (auto c : k.photons) mix(c);
  return static_cast<std::size_t>(h);
}

OracleSpace::OracleSpace(std::shared_ptr<const ModeGrid> grid, int photon_cap,
                         double default_electron_weight)
    : grid_(std::move(grid)),
      photon_cap_(photon_cap),
      default_electron_weight_(default_electron_weight) {
  if (!grid_) throw validation_error("OracleSpace: null grid");
  if (photon_cap_ < 0) throw validation_error("OracleSpace: negative photon cap");
  if (default_electron_weight_ < 0.0)
    throw validation_error("OracleSpace: negative electron weight");
}

OracleState OracleSpace::vacuum() const {
  OracleState s;
  OracleKey k;
  k.photons.assign(grid_->size(), 0);
  s.emplace(std::move(k), cplx{1.0});
  return s;
}

void OracleSpace::register_electron_weight(const Vec3& p, double w) {
  if (!(w > 0.0))
    throw validation_error("OracleSpace: electron weight must be positive");
  auto [it, inserted] = eweights_.emplace(quantize(p), w);
  if (!inserted && it->second != w)
    throw validation_error(
        "OracleSpace: electron momentum registered with a different weight");
}

double OracleSpace::electron_weight(const Vec3& p) const {
  auto it = eweights_.find(quantize(p));
  if (it != eweights_.end()) return it->second;
  if (default_electron_weight_ > 0.0) return default_electron_weight_;
  throw validation_error("OracleSpace: unregistered electron momentum");
}

OracleState OracleSpace::photon_create(int mode, const OracleState& s) const {
  if (mode < 0 || mode >= static_cast<int>(grid_->size()))
    throw validation_error("OracleSpace: bad mode index");
  OracleState out;
  for (const auto& [key, amp] : s) {
    if (total_photons(key) + 1 > photon_cap_)
      throw validation_error("OracleSpace: photon cap exceeded");
    OracleKey nk = key;
    ++nk.photons[mode];
    out[nk] += amp;
  }
  return out;
}

OracleState OracleSpace::photon_annihilate(int mode, const OracleState& s) const {
  if (mode < 0 || mode >= static_cast<int>(grid_->size()))
    throw validation_error("OracleSpace: bad mode index");
  OracleState out;
  for (const auto& [key, amp] : s) {
    if (key.photons[mode] == 0) continue;
    OracleKey nk = key;
    --nk.photons[mode];
    out[nk] += amp * (static_cast<double>(key.photons[mode]) / (*grid_)[mode].w);
  }
  return out;
}

OracleState OracleSpace::electron_create(const Vec3& p, double w,
                                         const OracleState& s) {
  register_electron_weight(p, w);
  OracleState out;
  for (const auto& [key, amp] : s) {
    if (key.n_electrons >= 2)
      throw validation_error("OracleSpace: more than two electrons");
    OracleKey nk = key;
    nk.electrons[nk.n_electrons++] = p;
    if (nk.n_electrons == 2 &&
        qless(quantize(nk.electrons[1]), quantize(nk.electrons[0])))
      std::swap(nk.electrons[0], nk.electrons[1]);
    out[nk] += amp;
  }
  return out;
}

OracleState OracleSpace::electron_annihilate(const Vec3& p,
                                             const OracleState& s) const {
  const QKey3 target = quantize(p);
  OracleState out;
  for (const auto& [key, amp] : s) {
    for (int slot = 0; slot < key.n_electrons; ++slot) {
      if (!(quantize(key.electrons[slot]) == target)) continue;
      OracleKey nk;
      nk.photons = key.photons;
      nk.n_electrons = key.n_electrons - 1;
      if (nk.n_electrons == 1) nk.electrons[0] = key.electrons[1 - slot];
      out[nk] += amp / electron_weight(key.electrons[slot]);
    }
  }
  return out;
}

OracleState OracleSpace::apply_Bstar(const DiscreteKernel& g,
                                     const OracleState& s) {
  if (g.electron_arity() != 1)
    throw validation_error("apply_Bstar: expects a one-electron-slot kernel");
  if (&g.grid() != grid_.get())
    throw validation_error("apply_Bstar: kernel grid differs from oracle grid");
  const int m = g.photon_arity();
  const int M = static_cast<int>(grid_->size());
  const ElectronGrid& eg = g.egrid();
  OracleState out;
  std::vector<int> t(m, 0);
  for (int e = 0; e < eg.size(); ++e) {
    if (!g.e_slot_occupied(0, e)) continue;
    std::fill(t.begin(), t.end(), 0);
    do {
      cplx v = g.at(e, t);
      if (v == cplx{}) continue;
      double w = eg[e].w;
      Vec3 shift{};
      for (int j : t) {
        w *= (*grid_)[j].w;
        shift += (*grid_)[j].k;
      }
      OracleState cur;
      for (const auto& [key, amp] : s) cur[key] = amp * w * v;
      for (int j : t) cur = photon_create(j, cur);
      cur = electron_create(eg[e].p - shift, eg[e].w, cur);
      axpy(out, cplx{1.0}, cur);
    } while (!t.empty() && advance_ordered(t, M));
  }
  return out;
}

OracleState OracleSpace::apply_Bstar2(const DiscreteKernel& f,
                                      const OracleState& s) {
  if (f.electron_arity() != 2)
    throw validation_error("apply_Bstar2: expects a two-electron-slot kernel");
  if (&f.grid() != grid_.get())
    throw validation_error("apply_Bstar2: kernel grid differs from oracle grid");
  const int n = f.photon_arity(0), m = f.photon_arity(1);
  const int M = static_cast<int>(grid_->size());
  const ElectronGrid& egq = f.egrid(0);
  const ElectronGrid& egp = f.egrid(1);
  OracleState out;
  std::vector<int> r(n, 0), k(m, 0);
  for (int eq = 0; eq < egq.size(); ++eq) {
    if (!f.e_slot_occupied(0, eq)) continue;
    for (int ep = 0; ep < egp.size(); ++ep) {
      if (!f.e_slot_occupied(1, ep)) continue;
      std::fill(r.begin(), r.end(), 0);
      do {
        std::fill(k.begin(), k.end(), 0);
        do {
          cplx v = f.at2(eq, r, ep, k);
          if (v == cplx{}) continue;
          double w = egq[eq].w * egp[ep].w;
          Vec3 rshift{}, kshift{};
          for (int j : r) {
            w *= (*grid_)[j].w;
            rshift += (*grid_)[j].k;
          }
          for (int j : k) {
            w *= (*grid_)[j].w;
            kshift += (*grid_)[j].k;
          }
          OracleState cur;
          for (const auto& [key, amp] : s) cur[key] = amp * w * v;
          for (int j : r) cur = photon_create(j, cur);
          for (int j : k) cur = photon_create(j, cur);
          cur = electron_create(egp[ep].p - kshift, egp[ep].w, cur);
          cur = electron_create(egq[eq].p - rshift, egq[eq].w, cur);
          axpy(out, cplx{1.0}, cur);
        } while (!k.empty() && advance_ordered(k, M));
      } while (!r.empty() && advance_ordered(r, M));
    }
  }
  return out;
}

OracleState OracleSpace::apply_checkH(const std::vector<double>& vcheck,
                                      const OracleState& s) {
  if (vcheck.size() != grid_->size())
    throw validation_error("apply_checkH: vcheck length must match the grid");
  OracleState out;
  for (const auto& [key, amp] : s) {
    for (int slot = 0; slot < key.n_electrons; ++slot) {
      const Vec3 q = key.electrons[slot];
      const double wq = electron_weight(q);
      for (int j = 0; j < static_cast<int>(vcheck.size()); ++j) {
        if (vcheck[j] == 0.0) continue;
        if (total_photons(key) + 1 > photon_cap_)
          throw validation_error("OracleSpace: photon cap exceeded");
        OracleKey nk = key;
        ++nk.photons[j];
        nk.electrons[slot] = q - (*grid_)[j].k;
        register_electron_weight(nk.electrons[slot], wq);
        if (nk.n_electrons == 2 &&
            qless(quantize(nk.electrons[1]), quantize(nk.electrons[0])))
          std::swap(nk.electrons[0], nk.electrons[1]);
        out[nk] += amp * (*grid_)[j].w * vcheck[j];
      }
    }
  }
  return out;
}

OracleState OracleSpace::apply_free(const OracleState& s) const {
  OracleState out;
  for (const auto& [key, amp] : s) {
    double e = 0.0;
    for (int i = 0; i < key.n_electrons; ++i) e += 0.5 * norm2(key.electrons[i]);
    for (std::size_t j = 0; j < key.photons.size(); ++j)
      e += key.photons[j] * nelson::norm((*grid_)[j].k);
    if (e != 0.0) out[key] = amp * e;
  }
  return out;
}

OracleState OracleSpace::apply_interaction(const std::vector<double>& v,
                                           const OracleState& s) {
  if (v.size() != grid_->size())
    throw validation_error("apply_interaction: v length must match the grid");
  OracleState out;
  for (const auto& [key, amp] : s) {
    for (int slot = 0; slot < key.n_electrons; ++slot) {
      const Vec3 q = key.electrons[slot];
      const double wq = electron_weight(q);
      for (int j = 0; j < static_cast<int>(v.size()); ++j) {
        if (v[j] == 0.0) continue;
        // absorption
        if (key.photons[j] > 0) {
          OracleKey nk = key;
          --nk.photons[j];
          nk.electrons[slot] = q + (*grid_)[j].k;
          register_electron_weight(nk.electrons[slot], wq);
          if (nk.n_electrons == 2 &&
              qless(quantize(nk.electrons[1]), quantize(nk.electrons[0])))
            std::swap(nk.electrons[0], nk.electrons[1]);
          out[nk] += amp * static_cast<double>(key.photons[j]) * v[j];
        }
        // emission
        if (total_photons(key) + 1 > photon_cap_)
          throw validation_error("OracleSpace: photon cap exceeded");
        OracleKey nk = key;
        ++nk.photons[j];
        nk.electrons[slot] = q - (*grid_)[j].k;
        register_electron_weight(nk.electrons[slot], wq);
        if (nk.n_electrons == 2 &&
            qless(quantize(nk.electrons[1]), quantize(nk.electrons[0])))
          std::swap(nk.electrons[0], nk.electrons[1]);
        out[nk] += amp * (*grid_)[j].w * v[j];
      }
    }
  }
  return out;
}

OracleState OracleSpace::apply_hamiltonian(const std::vector<double>& v,
                                           const OracleState& s) {
  OracleState out = apply_free(s);
  axpy(out, cplx{1.0}, apply_interaction(v, s));
  return out;
}

double OracleSpace::key_norm2(const OracleKey& k) const {
  double f = 1.0;
  for (std::size_t j = 0; j < k.photons.size(); ++j) {
    const int nj = k.photons[j];
    if (nj == 0) continue;
    f *= factorial(nj) / std::pow((*grid_)[j].w, nj);
  }
  if (k.n_electrons == 1) {
    f /= electron_weight(k.electrons[0]);
  } else if (k.n_electrons == 2) {
    const double w0 = electron_weight(k.electrons[0]);
    const double w1 = electron_weight(k.electrons[1]);
    f /= w0 * w1;
    if (quantize(k.electrons[0]) == quantize(k.electrons[1])) f *= 2.0;
  }
  return f;
}

cplx OracleSpace::inner(const OracleState& a, const OracleState& b) const {
  const OracleState& small = a.size() <= b.size() ? a : b;
  const OracleState& large = a.size() <= b.size() ? b : a;
  const bool small_is_a = a.size() <= b.size();
  cplx sum{}, comp{};
  for (const auto& [key, amp] : small) {
    auto it = large.find(key);
    if (it == large.end()) continue;
    const cplx av = small_is_a ? amp : it->second;
    const cplx bv = small_is_a ? it->second : amp;
    const cplx v = std::conj(av) * bv * key_norm2(key);
    const cplx y = v - comp;
    const cplx t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

double OracleSpace::norm(const OracleState& a) const {
  return std::sqrt(std::max(0.0, inner(a, a).real()));
}

void axpy(OracleState& y, cplx a, const OracleState& x) {
  if (a == cplx{}) return;
  for (const auto& [key, amp] : x) {
    cplx& slot = y[key];
    slot += a * amp;
    if (slot == cplx{}) y.erase(key);
  }
}

cplx brute_force_vev(std::span<const OpSymbol> word, OracleSpace& space) {
  OracleState s = space.vacuum();
  for (auto it = word.rbegin(); it != word.rend(); ++it) {
    switch (it->kind) {
      case OpSymbol::PhotonCreate:
        s = space.photon_create(it->mode, s);
        break;
      case OpSymbol::PhotonAnnihilate:
        s = space.photon_annihilate(it->mode, s);
        break;
      case OpSymbol::ElectronCreate:
        s = space.electron_create(it->p, it->w, s);
        break;
      case OpSymbol::ElectronAnnihilate:
        s = space.electron_annihilate(it->p, s);
        break;
    }
    if (s.empty()) return cplx{};
  }
  return space.inner(space.vacuum(), s);
}

}  // namespace nelson
