#include "nelson/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace nelson {

Quad1D gauss_legendre(int n, double a, double b) {
  if (n < 1) throw validation_error("gauss_legendre: n must be >= 1");
  if (!(a < b)) throw validation_error("gauss_legendre: need a < b");
  Quad1D q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double xm = 0.5 * (b + a);
  const double xl = 0.5 * (b - a);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Newton iteration on P_n, starting from the Chebyshev-like estimate.
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    q.nodes[i] = xm - xl * z;
    q.nodes[n - 1 - i] = xm + xl * z;
    q.weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
    q.weights[n - 1 - i] = q.weights[i];
  }
  return q;
}

Quad1D radial_volume_rule(int n, double a, double b) {
  if (n < 1) throw validation_error("radial_volume_rule: n must be >= 1");
  if (!(0.0 <= a && a < b)) throw validation_error("radial_volume_rule: need 0 <= a < b");

  // Discrete Stieltjes: an (n+4)-point Gauss-Legendre rule integrates every
  // inner product <p, q> = Int p q r^2 dr appearing below exactly, so the
  // recurrence coefficients come out exact up to roundoff.
  Quad1D base = gauss_legendre(n + 4, a, b);
  const int M = static_cast<int>(base.nodes.size());
  std::vector<double> wr(M);
  for (int i = 0; i < M; ++i) wr[i] = base.weights[i] * base.nodes[i] * base.nodes[i];

  std::vector<double> alpha(n), beta(n);
  std::vector<double> p_prev(M, 0.0), p_cur(M, 1.0);
  double norm_prev = 0.0;
  double norm_cur = 0.0;
  for (int i = 0; i < M; ++i) norm_cur += wr[i];
  beta[0] = norm_cur;  // Int r^2 dr over [a, b]
  for (int j = 0; j < n; ++j) {
    double xp = 0.0;
    for (int i = 0; i < M; ++i) xp += wr[i] * base.nodes[i] * p_cur[i] * p_cur[i];
    alpha[j] = xp / norm_cur;
    if (j + 1 < n) {
      std::vector<double> p_next(M);
      const double bj = (j == 0) ? 0.0 : norm_cur / norm_prev;
      for (int i = 0; i < M; ++i)
        p_next[i] = (base.nodes[i] - alpha[j]) * p_cur[i] - bj * p_prev[i];
      p_prev = p_cur;
      p_cur = p_next;
      norm_prev = norm_cur;
      norm_cur = 0.0;
      for (int i = 0; i < M; ++i) norm_cur += wr[i] * p_cur[i] * p_cur[i];
      beta[j + 1] = norm_cur / norm_prev;
    }
  }

  // Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
  // beta0 times the squared first components of the eigenvectors.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    J(j, j) = alpha[j];
    if (j + 1 < n) {
      double sb = std::sqrt(beta[j + 1]);
      J(j, j + 1) = sb;
      J(j + 1, j) = sb;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Quad1D q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int j = 0; j < n; ++j) {
    q.nodes[j] = es.eigenvalues()(j);
    double v0 = es.eigenvectors()(0, j);
    q.weights[j] = beta[0] * v0 * v0;
  }
  return q;
}

std::vector<AngularPoint> angular_points(int n) {
  const double fourpi = 4.0 * M_PI;
  std::vector<AngularPoint> pts;
  auto add_axes = [&pts](double w) {
    pts.push_back({{1, 0, 0}, w});
    pts.push_back({{-1, 0, 0}, w});
    pts.push_back({{0, 1, 0}, w});
    pts.push_back({{0, -1, 0}, w});
    pts.push_back({{0, 0, 1}, w});
    pts.push_back({{0, 0, -1}, w});
  };
  auto add_corners = [&pts](double w) {
    const double c = 1.0 / std::sqrt(3.0);
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1}) pts.push_back({{sx * c, sy * c, sz * c}, w});
  };
  auto add_edges = [&pts](double w) {
    const double c = 1.0 / std::sqrt(2.0);
    for (int s1 : {-1, 1})
      for (int s2 : {-1, 1}) {
        pts.push_back({{s1 * c, s2 * c, 0}, w});
        pts.push_back({{s1 * c, 0, s2 * c}, w});
        pts.push_back({{0, s1 * c, s2 * c}, w});
      }
  };
  switch (n) {
    case 1:
      pts.push_back({{0, 0, 1}, fourpi});
      break;
    case 6:
      add_axes(fourpi / 6.0);
      break;
    case 14:
      add_axes(fourpi / 15.0);
      add_corners(fourpi * 3.0 / 40.0);
      break;
    case 26:
      add_axes(fourpi / 21.0);
      add_edges(fourpi * 4.0 / 105.0);
      add_corners(fourpi * 9.0 / 280.0);
      break;
    default:
      throw validation_error(
          "angular_points: unsupported count " + std::to_string(n) +
          "; supported values are 1, 6, 14, 26");
  }
  return pts;
}

}  // namespace nelson
