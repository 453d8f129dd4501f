#include "nelson/form_factors.hpp"

#include <cmath>

namespace nelson {

double smooth_cutoff(double r, double lo, double hi) {
  if (!(lo < hi)) throw validation_error("smooth_cutoff: requires lo < hi");
  if (r <= lo) return 1.0;
  if (r >= hi) return 0.0;
  const double u = (r - lo) / (hi - lo);
  const double s = u * u * u * (u * (6.0 * u - 15.0) + 10.0);
  return 1.0 - s;
}

double chi_kappa(Vec3 k, const ModelParams& p) {
  return smooth_cutoff(norm(k), (1.0 - p.eps0) * p.kappa, p.kappa);
}

namespace {

// |k|^alpha_bar / sqrt(2|k|) with the k = 0 conventions shared by all three
// form factors: error below alpha_bar = 1/2, value 0 at alpha_bar = 1/2.
double radial_part(double r, const ModelParams& p) {
  if (r == 0.0) {
    if (p.alpha_bar < 0.5)
      throw numerical_error("form factor singular at k = 0 for alpha_bar < 1/2");
    return 0.0;
  }
  return std::pow(r, p.alpha_bar) / std::sqrt(2.0 * r);
}

}  // namespace

double form_factor(Vec3 k, const ModelParams& p) {
  if (p.lambda == 0.0) return 0.0;
  return p.lambda * chi_kappa(k, p) * radial_part(norm(k), p);
}

double form_factor_cutoff(Vec3 k, double sigma, const ModelParams& p) {
  if (!(sigma > 0.0 && sigma <= p.kappa))
    throw validation_error("form_factor_cutoff: sigma must lie in (0, kappa]");
  if (norm(k) < sigma) return 0.0;
  return form_factor(k, p);
}

double form_factor_check(Vec3 k, double sigma, const ModelParams& p) {
  if (!(sigma > 0.0 && sigma <= p.kappa))
    throw validation_error("form_factor_check: sigma must lie in (0, kappa]");
  const double r = norm(k);
  if (r >= sigma) return 0.0;
  if (p.lambda == 0.0) return 0.0;
  return p.lambda * radial_part(r, p);
}

double g_envelope(const std::vector<Vec3>& ks, double sigma, const ModelParams& p,
                  double c_env) {
  if (!(c_env > 0.0)) throw validation_error("g_envelope: c_env must be > 0");
  const double kappa_star = p.kappa_star();
  double prod = 1.0;
  for (const Vec3& k : ks) {
    const double r = norm(k);
    if (r < sigma || r >= kappa_star) return 0.0;
    prod *= c_env * p.lambda * std::pow(r, p.alpha_bar - 1.5);
  }
  return prod;
}

}  // namespace nelson
