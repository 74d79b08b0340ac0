#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace stochflow {

/// Solves the periodic system (x[i-1] + 4 x[i] + x[i+1]) / 6 = rhs[i] in place.
///
/// This is the interpolation condition of the uniform cubic B-spline. The
/// system is strictly diagonally dominant; a cyclic Thomas sweep with a
/// Sherman-Morrison correction solves it in O(n). For n < 3 the stencil wraps
/// onto itself and the mean value is the only resolvable mode.
inline void solve_cyclic_141(std::span<double> rhs, std::vector<double>& scratch) {
  const std::size_t n = rhs.size();
  if (n == 0) return;
  if (n == 1) return;  // 6/6 x = rhs
  if (n == 2) {
    // x0*(4+2)/6... the two neighbours coincide: (2 x1 + 4 x0)/6 = r0
    const double r0 = rhs[0], r1 = rhs[1];
    // [4 2; 2 4]/6 x = r
    const double det = (16.0 - 4.0) / 36.0;
    rhs[0] = (4.0 / 6.0 * r0 - 2.0 / 6.0 * r1) / det;
    rhs[1] = (4.0 / 6.0 * r1 - 2.0 / 6.0 * r0) / det;
    return;
  }
  // Multiply through by 6: a=1, b=4, c=1 with corner entries 1.
  for (auto& r : rhs) r *= 6.0;
  constexpr double a = 1.0, c = 1.0, b = 4.0;
  const double gamma = -b;
  scratch.assign(3 * n, 0.0);
  double* cp = scratch.data();
  double* z = cp + n;
  double* u = z + n;
  // Modified diagonal for Sherman-Morrison: A = B + u v^T with u = (gamma, 0.., c),
  // v = (1, 0.., a/gamma).
  auto diag = [&](std::size_t i) {
    if (i == 0) return b - gamma;
    if (i == n - 1) return b - c * a / gamma;
    return b;
  };
  // Thomas for B x = rhs and B z = u simultaneously.
  u[0] = gamma;
  u[n - 1] = c;
  double denom = diag(0);
  cp[0] = c / denom;
  rhs[0] /= denom;
  z[0] = u[0] / denom;
  for (std::size_t i = 1; i < n; ++i) {
    denom = diag(i) - a * cp[i - 1];
    cp[i] = c / denom;
    rhs[i] = (rhs[i] - a * rhs[i - 1]) / denom;
    z[i] = (u[i] - a * z[i - 1]) / denom;
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    rhs[i] -= cp[i] * rhs[i + 1];
    z[i] -= cp[i] * z[i + 1];
  }
  const double vy = rhs[0] + a / gamma * rhs[n - 1];
  const double vz = z[0] + a / gamma * z[n - 1];
  const double factor = vy / (1.0 + vz);
  for (std::size_t i = 0; i < n; ++i) rhs[i] -= factor * z[i];
}

/// Value and derivatives of a scalar field at a point.
struct ScalarJet {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d11 = 0.0;
  double d22 = 0.0;
};

/// Periodic C2 cubic B-spline interpolant of a row-major n1 x n2 grid on
/// [0, L1) x [0, L2). Node (i, j) sits at (i * L1 / n1, j * L2 / n2); the
/// first index runs along x1.
///
/// Coefficients are computed for u - u[0] so that a constant grid yields
/// identically zero derivatives and the exact constant value.
class PeriodicCubicSpline {
 public:
  PeriodicCubicSpline() = default;

  PeriodicCubicSpline(std::vector<double> values, std::size_t n1, std::size_t n2, double L1,
                      double L2)
      : n1_(n1), n2_(n2), L1_(L1), L2_(L2), values_(std::move(values)) {
    if (n1 < 1 || n2 < 1 || values_.size() != n1 * n2)
      throw std::invalid_argument("PeriodicCubicSpline: grid size mismatch");
    if (!(L1 > 0.0) || !(L2 > 0.0))
      throw std::invalid_argument("PeriodicCubicSpline: periods must be positive");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("PeriodicCubicSpline: non-finite value");
    h1_ = L1 / static_cast<double>(n1);
    h2_ = L2 / static_cast<double>(n2);
    inv_h1_ = 1.0 / h1_;
    inv_h2_ = 1.0 / h2_;
    offset_ = values_[0];

    std::vector<double> coeff(values_.size());
    for (std::size_t k = 0; k < coeff.size(); ++k) coeff[k] = values_[k] - offset_;
    std::vector<double> line, scratch;
    // along x1 (stride n2)
    line.resize(n1);
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t i = 0; i < n1; ++i) line[i] = coeff[i * n2 + j];
      solve_cyclic_141(line, scratch);
      for (std::size_t i = 0; i < n1; ++i) coeff[i * n2 + j] = line[i];
    }
    // along x2 (contiguous)
    for (std::size_t i = 0; i < n1; ++i)
      solve_cyclic_141(std::span<double>(coeff.data() + i * n2, n2), scratch);

    // Pad by one layer before and two after so evaluation never wraps.
    p1_ = n1 + 3;
    p2_ = n2 + 3;
    padded_.resize(p1_ * p2_);
    for (std::size_t a = 0; a < p1_; ++a) {
      const std::size_t i = (a + n1 - 1) % n1;
      for (std::size_t b = 0; b < p2_; ++b) {
        const std::size_t j = (b + n2 - 1) % n2;
        padded_[a * p2_ + b] = coeff[i * n2 + j];
      }
    }
  }

  std::size_t n1() const { return n1_; }
  std::size_t n2() const { return n2_; }
  double L1() const { return L1_; }
  double L2() const { return L2_; }
  double h1() const { return h1_; }
  double h2() const { return h2_; }
  const std::vector<double>& nodes() const { return values_; }

  double value(double x1, double x2) const {
    Cell c = locate(x1, x2);
    double w1[4], w2[4];
    basis(c.f1, w1);
    basis(c.f2, w2);
    double s = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double* row = &padded_[(c.i1 + a) * p2_ + c.i2];
      s += w1[a] * (w2[0] * row[0] + w2[1] * row[1] + w2[2] * row[2] + w2[3] * row[3]);
    }
    return offset_ + s;
  }

  /// Value and first derivatives (second-derivative slots left zero).
  ScalarJet gradient(double x1, double x2) const {
    Cell c = locate(x1, x2);
    double w1[4], w2[4], dw1[4], dw2[4];
    basis(c.f1, w1);
    basis(c.f2, w2);
    basis_d1(c.f1, dw1);
    basis_d1(c.f2, dw2);
    double s = 0.0, s1 = 0.0, s2 = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double* row = &padded_[(c.i1 + a) * p2_ + c.i2];
      const double r0 = w2[0] * row[0] + w2[1] * row[1] + w2[2] * row[2] + w2[3] * row[3];
      const double r1 = dw2[0] * row[0] + dw2[1] * row[1] + dw2[2] * row[2] + dw2[3] * row[3];
      s += w1[a] * r0;
      s1 += dw1[a] * r0;
      s2 += w1[a] * r1;
    }
    return {offset_ + s, s1 * inv_h1_, s2 * inv_h2_, 0.0, 0.0};
  }

  /// Value, gradient and the pure second derivatives.
  ScalarJet jet(double x1, double x2) const {
    Cell c = locate(x1, x2);
    double w1[4], w2[4], dw1[4], dw2[4], ddw1[4], ddw2[4];
    basis(c.f1, w1);
    basis(c.f2, w2);
    basis_d1(c.f1, dw1);
    basis_d1(c.f2, dw2);
    basis_d2(c.f1, ddw1);
    basis_d2(c.f2, ddw2);
    double s = 0.0, s1 = 0.0, s2 = 0.0, s11 = 0.0, s22 = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double* row = &padded_[(c.i1 + a) * p2_ + c.i2];
      const double r0 = w2[0] * row[0] + w2[1] * row[1] + w2[2] * row[2] + w2[3] * row[3];
      const double r1 = dw2[0] * row[0] + dw2[1] * row[1] + dw2[2] * row[2] + dw2[3] * row[3];
      const double r2 = ddw2[0] * row[0] + ddw2[1] * row[1] + ddw2[2] * row[2] + ddw2[3] * row[3];
      s += w1[a] * r0;
      s1 += dw1[a] * r0;
      s2 += w1[a] * r1;
      s11 += ddw1[a] * r0;
      s22 += w1[a] * r2;
    }
    return {offset_ + s, s1 * inv_h1_, s2 * inv_h2_, s11 * inv_h1_ * inv_h1_, s22 * inv_h2_ * inv_h2_};
  }

  /// Flat Laplacian of the interpolant at every node, row-major.
  std::vector<double> node_laplacian() const { return node_laplacian(values_, n1_, n2_, h1_, h2_); }

  /// Node Laplacian of the spline through `u` without building the spline:
  /// applies the second difference first and the (1,4,1)/6 inverse after, so
  /// a constant grid gives exact zeros.
  static std::vector<double> node_laplacian(std::span<const double> u, std::size_t n1,
                                            std::size_t n2, double h1, double h2) {
    std::vector<double> out(n1 * n2, 0.0);
    std::vector<double> line, scratch;
    line.resize(n1);
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t i = 0; i < n1; ++i) {
        const std::size_t im = (i + n1 - 1) % n1, ip = (i + 1) % n1;
        line[i] = (u[im * n2 + j] - 2.0 * u[i * n2 + j] + u[ip * n2 + j]) / (h1 * h1);
      }
      solve_cyclic_141(line, scratch);
      for (std::size_t i = 0; i < n1; ++i) out[i * n2 + j] = line[i];
    }
    line.resize(n2);
    for (std::size_t i = 0; i < n1; ++i) {
      const double* row = u.data() + i * n2;
      for (std::size_t j = 0; j < n2; ++j) {
        const std::size_t jm = (j + n2 - 1) % n2, jp = (j + 1) % n2;
        line[j] = (row[jm] - 2.0 * row[j] + row[jp]) / (h2 * h2);
      }
      solve_cyclic_141(line, scratch);
      for (std::size_t j = 0; j < n2; ++j) out[i * n2 + j] += line[j];
    }
    return out;
  }

 private:
  struct Cell {
    std::size_t i1, i2;
    double f1, f2;
  };

  Cell locate(double x1, double x2) const {
    const double s1 = x1 * inv_h1_, s2 = x2 * inv_h2_;
    const double c1 = std::floor(s1), c2 = std::floor(s2);
    long i1 = static_cast<long>(c1) % static_cast<long>(n1_);
    long i2 = static_cast<long>(c2) % static_cast<long>(n2_);
    if (i1 < 0) i1 += static_cast<long>(n1_);
    if (i2 < 0) i2 += static_cast<long>(n2_);
    return {static_cast<std::size_t>(i1), static_cast<std::size_t>(i2), s1 - c1, s2 - c2};
  }

  static void basis(double f, double* w) {
    const double g = 1.0 - f, f2 = f * f, f3 = f2 * f;
    w[0] = g * g * g / 6.0;
    w[1] = (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0;
    w[2] = (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0;
    w[3] = f3 / 6.0;
  }
  static void basis_d1(double f, double* w) {
    const double g = 1.0 - f;
    w[0] = -0.5 * g * g;
    w[1] = 0.5 * (3.0 * f * f - 4.0 * f);
    w[2] = 0.5 * (-3.0 * f * f + 2.0 * f + 1.0);
    w[3] = 0.5 * f * f;
  }
  static void basis_d2(double f, double* w) {
    w[0] = 1.0 - f;
    w[1] = 3.0 * f - 2.0;
    w[2] = 1.0 - 3.0 * f;
    w[3] = f;
  }

  std::size_t n1_ = 0, n2_ = 0, p1_ = 0, p2_ = 0;
  double L1_ = 1.0, L2_ = 1.0, h1_ = 1.0, h2_ = 1.0, inv_h1_ = 1.0, inv_h2_ = 1.0;
  double offset_ = 0.0;
  std::vector<double> values_;
  std::vector<double> padded_;
};

}  // namespace stochflow
