#pragma once

#include <string>
#include <vector>

#include "nelson/common.hpp"

namespace nelson {

struct Mode {
  Vec3 k;
  double w = 0.0;  // momentum-space volume carried by the mode
};

// Quadrature grid on the annulus sigma <= |k| <= kappa. Product of a radial
// Gauss rule (measure r^2 dr) with an octahedrally symmetric angular set,
// possibly concatenated over several radial shells.
struct ModeGrid {
  std::vector<Mode> modes;
  double sigma = 0.0;
  double kappa = 0.0;
  int n_radial = 0;   // radial nodes per shell
  int n_angular = 0;
  std::vector<double> shell_bounds;  // ascending; [sigma, kappa] for one shell

  std::size_t size() const { return modes.size(); }
  const Mode& operator[](std::size_t j) const { return modes[j]; }

  double total_weight() const;
};

ModeGrid build_annulus_grid(double sigma, double kappa, int n_radial, int n_angular);

// Concatenation of annulus grids over consecutive shells
// [bounds[0], bounds[1]], ..., [bounds[s-1], bounds[s]], n_radial nodes each.
// Radial shell edges coincide with the bounds, so a sharp cutoff placed at any
// interior bound is exact on the grid (no mode straddles it).
ModeGrid build_shell_grid(const std::vector<double>& bounds, int n_radial, int n_angular);

void write_grid_csv(const ModeGrid& grid, const std::string& path);

}  // namespace nelson
