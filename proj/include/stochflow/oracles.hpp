#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stochflow::oracles {

/// (e^{-tH} u)(0) for u(x) = exp(-|x|^2 / 2) and H = Delta/2 on the plane.
inline double flat_plane_gaussian(double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("flat_plane_gaussian: t must be >= 0");
  return 1.0 / (1.0 + t);
}

/// Same problem evaluated at an arbitrary point: the convolution of two
/// isotropic Gaussians stays Gaussian with variance 1 + t.
inline double flat_plane_gaussian(double t, double x1, double x2) {
  return flat_plane_gaussian(t) * std::exp(-(x1 * x1 + x2 * x2) / (2.0 * (1.0 + t)));
}

/// Multiplier of cos(2 pi k x / L) under e^{-t Delta/2}.
inline double torus_cosine(double t, double L, int k) {
  if (!(t >= 0.0) || !(L > 0.0) || k < 0) throw std::invalid_argument("torus_cosine: bad input");
  const double w = 2.0 * std::numbers::pi * k / L;
  return std::exp(-0.5 * t * w * w);
}

/// Multiplier of a degree-l spherical harmonic under e^{-t Delta/2} on the
/// sphere of radius a (Laplace eigenvalue l(l+1)/a^2).
inline double sphere_zonal(double t, double a, int l) {
  if (!(t >= 0.0) || !(a > 0.0) || l < 0) throw std::invalid_argument("sphere_zonal: bad input");
  return std::exp(-0.5 * t * l * (l + 1) / (a * a));
}

/// Legendre polynomial P_l, used for the zonal test functions.
inline double legendre(int l, double x) {
  if (l == 0) return 1.0;
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= l; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

/// Constant potential V contributes exp(-V t).
inline double potential_factor(double t, double V) { return std::exp(-V * t); }

}  // namespace stochflow::oracles
