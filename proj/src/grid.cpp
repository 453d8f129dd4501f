#include "nelson/grid.hpp"

#include <cstdio>
#include <fstream>

#include "nelson/quadrature.hpp"

namespace nelson {

double ModeGrid::total_weight() const {
  std::vector<double> w;
  w.reserve(modes.size());
  for (const auto& m : modes) w.push_back(m.w);
  return pairwise_sum(w);
}

ModeGrid build_annulus_grid(double sigma, double kappa, int n_radial, int n_angular) {
  return build_shell_grid({sigma, kappa}, n_radial, n_angular);
}

ModeGrid build_shell_grid(const std::vector<double>& bounds, int n_radial, int n_angular) {
  if (bounds.size() < 2) throw validation_error("build_shell_grid: need at least two bounds");
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i)
    if (!(bounds[i] < bounds[i + 1]))
      throw validation_error("build_shell_grid: bounds must be strictly increasing");
  if (!(bounds.front() > 0.0))
    throw validation_error("build_shell_grid: inner radius must be > 0");
  if (n_radial < 1) throw validation_error("build_shell_grid: n_radial must be >= 1");

  const auto ang = angular_points(n_angular);  // validates n_angular

  ModeGrid g;
  g.sigma = bounds.front();
  g.kappa = bounds.back();
  g.n_radial = n_radial;
  g.n_angular = n_angular;
  g.shell_bounds = bounds;
  g.modes.reserve((bounds.size() - 1) * n_radial * ang.size());
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    Quad1D rad = radial_volume_rule(n_radial, bounds[s], bounds[s + 1]);
    for (int i = 0; i < n_radial; ++i) {
      for (const auto& a : ang) {
        Mode m;
        m.k = rad.nodes[i] * a.u;
        m.w = rad.weights[i] * a.w;
        g.modes.push_back(m);
      }
    }
  }
  return g;
}

void write_grid_csv(const ModeGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot open for writing: " + path);
  out << "kx,ky,kz,w\n";
  char buf[160];
  for (const auto& m : grid.modes) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", m.k.x, m.k.y, m.k.z, m.w);
    out << buf;
  }
}

}  // namespace nelson
