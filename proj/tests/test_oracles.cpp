#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "stochflow/oracles.hpp"

using namespace stochflow::oracles;

namespace {

constexpr double kPi = std::numbers::pi;

// Heat kernel of Delta/2 at time t convolved with exp(-|y - x|^2 / 2), by
// tensor-product Simpson quadrature on a large square.
double gaussian_convolution(double t, double x1, double x2) {
  const int n = 800;
  const double L = 12.0, h = 2 * L / n;
  auto w = [&](int i) { return (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double y1 = -L + i * h;
    for (int j = 0; j <= n; ++j) {
      const double y2 = -L + j * h;
      const double k = std::exp(-(y1 * y1 + y2 * y2) / (2 * t)) / (2 * kPi * t);
      const double u = std::exp(-((x1 + y1) * (x1 + y1) + (x2 + y2) * (x2 + y2)) / 2);
      sum += w(i) * w(j) * k * u;
    }
  }
  return sum * h * h / 9.0;
}

}  // namespace

TEST(FlatPlaneGaussian, Examples) {
  EXPECT_DOUBLE_EQ(flat_plane_gaussian(1.0), 0.5);
  EXPECT_DOUBLE_EQ(flat_plane_gaussian(3.0), 0.25);
  EXPECT_NEAR(flat_plane_gaussian(1e-12), 1.0, 1e-11);
  EXPECT_EQ(flat_plane_gaussian(0.0), 1.0);
}

TEST(FlatPlaneGaussian, AgreesWithQuadrature) {
  EXPECT_NEAR(gaussian_convolution(1.0, 0, 0), 0.5, 1e-9);
  EXPECT_NEAR(gaussian_convolution(3.0, 0, 0), 0.25, 1e-9);
  EXPECT_NEAR(gaussian_convolution(0.7, 0.4, -0.9), flat_plane_gaussian(0.7, 0.4, -0.9), 1e-9);
}

TEST(TorusCosine, Examples) {
  for (double t : {0.01, 0.5, 3.0}) EXPECT_EQ(torus_cosine(t, 1.0, 0), 1.0);
  EXPECT_NEAR(torus_cosine(0.05, 1.0, 1), std::exp(-kPi * kPi / 10), 1e-15);
  EXPECT_NEAR(torus_cosine(0.05, 1.0, 1), 0.372708, 5e-7);
}

TEST(TorusCosine, AgreesWithWrappedKernelQuadrature) {
  // Periodic heat kernel as a sum of images, integrated against cos(2 pi x).
  const double t = 0.05, L = 1.0;
  const int n = 2000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = (i + 0.5) / n - 0.5;
    double k = 0.0;
    for (int m = -5; m <= 5; ++m) k += std::exp(-(y + m * L) * (y + m * L) / (2 * t)) / std::sqrt(2 * kPi * t);
    sum += k * std::cos(2 * kPi * y) / n;
  }
  EXPECT_NEAR(sum, torus_cosine(t, L, 1), 1e-12);
}

TEST(SphereZonal, Examples) {
  for (double t : {0.1, 1.0}) EXPECT_EQ(sphere_zonal(t, 1.0, 0), 1.0);
  EXPECT_NEAR(sphere_zonal(0.5, 1.0, 1), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(sphere_zonal(0.5, 1.0, 1), 0.6065, 5e-5);
  EXPECT_NEAR(sphere_zonal(0.25, 1.0, 2), std::exp(-0.75), 1e-15);
  EXPECT_NEAR(sphere_zonal(0.25, 1.0, 2), 0.4724, 5e-5);
}

TEST(SphereZonal, LegendreBasis) {
  EXPECT_EQ(legendre(0, 0.3), 1.0);
  EXPECT_EQ(legendre(1, 0.3), 0.3);
  EXPECT_NEAR(legendre(2, 0.3), (3 * 0.09 - 1) / 2, 1e-15);
  EXPECT_NEAR(legendre(3, -0.6), (5 * -0.216 - 3 * -0.6) / 2, 1e-15);
}

TEST(Multipliers, InUnitIntervalAndDecreasing) {
  std::mt19937_64 eng(21);
  std::uniform_real_distribution<double> T(1e-3, 2.0), A(0.3, 3.0);
  for (int k = 0; k < 500; ++k) {
    const double t = T(eng), a = A(eng);
    const int l = 1 + k % 6;
    // Short periods underflow the torus multiplier to zero, so keep L >= 1 there.
    const double z = sphere_zonal(t, a, l), c = torus_cosine(t / 4, a + 1, l);
    EXPECT_GT(z, 0.0);
    EXPECT_LE(z, 1.0);
    EXPECT_GT(c, 0.0);
    EXPECT_LE(c, 1.0);
    EXPECT_LT(sphere_zonal(t * 1.1, a, l), z);
    EXPECT_LT(sphere_zonal(t, a, l + 1), z);
    EXPECT_LT(torus_cosine(t / 4 * 1.1, a + 1, l), c);
    EXPECT_LT(torus_cosine(t / 4, a + 1, l + 1), c);
    EXPECT_LT(flat_plane_gaussian(t * 1.1), flat_plane_gaussian(t));
  }
}

TEST(Multipliers, SemigroupComposition) {
  std::mt19937_64 eng(22);
  std::uniform_real_distribution<double> T(1e-3, 1.0), A(0.5, 2.0), V(-1.0, 2.0);
  for (int k = 0; k < 500; ++k) {
    const double t1 = T(eng), t2 = T(eng), a = A(eng), v = V(eng);
    const int l = k % 5;
    EXPECT_NEAR(sphere_zonal(t1 + t2, a, l), sphere_zonal(t1, a, l) * sphere_zonal(t2, a, l), 1e-14);
    EXPECT_NEAR(torus_cosine(t1 + t2, a, l), torus_cosine(t1, a, l) * torus_cosine(t2, a, l), 1e-14);
    EXPECT_NEAR(potential_factor(t1 + t2, v), potential_factor(t1, v) * potential_factor(t2, v), 1e-13);
  }
  EXPECT_NEAR(torus_cosine(0.1, 1.0, 1), std::pow(torus_cosine(0.05, 1.0, 1), 2), 1e-15);
}

TEST(Oracles, RejectInvalidInput) {
  EXPECT_THROW(flat_plane_gaussian(-1.0), std::invalid_argument);
  EXPECT_THROW(torus_cosine(0.1, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(torus_cosine(0.1, 1.0, -1), std::invalid_argument);
  EXPECT_THROW(sphere_zonal(0.1, -1.0, 1), std::invalid_argument);
}
