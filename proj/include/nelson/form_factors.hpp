#pragma once

#include <vector>

#include "nelson/common.hpp"
#include "nelson/params.hpp"

namespace nelson {

// Quintic cutoff profile: 1 for r <= lo, 0 for r >= hi, the monotone C^2
// smoothstep in between. Requires lo < hi.
double smooth_cutoff(double r, double lo, double hi);

// Smoothed UV cutoff profile: 1 on |k| <= (1-eps0)*kappa, 0 on |k| >= kappa,
// quintic smoothstep (C^2, monotone) across the shoulder.
double chi_kappa(Vec3 k, const ModelParams& p);

// v(k) = lambda * chi_kappa(k) * |k|^alpha_bar / sqrt(2|k|).
// k = 0 is singular for alpha_bar < 1/2 (error); for alpha_bar = 1/2 the
// value 0 is returned by convention (grids never sample k = 0).
double form_factor(Vec3 k, const ModelParams& p);

// v^sigma(k) = v(k) * 1_{|k| >= sigma}; the support is closed at sigma.
double form_factor_cutoff(Vec3 k, double sigma, const ModelParams& p);

// Complementary piece, supported on the open ball |k| < sigma. No UV profile
// (sigma sits far below the shoulder in every use), so
// v_check(k) = lambda * |k|^alpha_bar / sqrt(2|k|) * 1_{|k| < sigma},
// and v^sigma + v_check = v wherever chi = 1.
double form_factor_check(Vec3 k, double sigma, const ModelParams& p);

// Product envelope g^m_sigma(k_1..k_m) = Prod_i c_env * lambda *
// 1_{sigma <= |k_i| < kappa*} * |k_i|^(alpha_bar - 3/2), kappa* = kappa/(1-eps0).
// Empty list gives 1.
double g_envelope(const std::vector<Vec3>& ks, double sigma, const ModelParams& p,
                  double c_env);

}  // namespace nelson
