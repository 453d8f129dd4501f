#pragma once

#include <utility>
#include <vector>

#include "nelson/common.hpp"

namespace nelson {

struct Quad1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre rule on [a, b]; exact for polynomials of degree <= 2n-1.
Quad1D gauss_legendre(int n, double a, double b);

// Gauss rule on [a, b] with respect to the measure r^2 dr (the radial part of
// the 3d volume element), built by a discrete Stieltjes procedure plus the
// Golub-Welsch eigenproblem. Sum_i w_i p(r_i) = Int_a^b p(r) r^2 dr exactly
// for polynomials p of degree <= 2n-1, which a plain Gauss-Legendre rule with
// the Jacobian folded into the weights would not achieve.
Quad1D radial_volume_rule(int n, double a, double b);

struct AngularPoint {
  Vec3 u;    // unit direction
  double w;  // weight; all weights for a rule sum to 4*pi
};

// Octahedrally symmetric point sets on the unit sphere. Supported counts:
//   1  (single +z point, constants only),
//   6  (octahedron vertices, exact to polynomial degree 3),
//   14 (vertices + cube corners, degree 5),
//   26 (vertices + edge midpoints + corners, degree 7).
// Every supported set is invariant under 90-degree coordinate rotations.
std::vector<AngularPoint> angular_points(int n);

}  // namespace nelson
