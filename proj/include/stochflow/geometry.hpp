#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "stochflow/periodic_spline.hpp"

namespace stochflow {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  int chart = 0;
  double x1 = 0.0;
  double x2 = 0.0;
};

struct TangentVector {
  Point base;
  double v1 = 0.0;
  double v2 = 0.0;
};

struct MetricTensor {
  double g11 = 1.0;
  double g12 = 0.0;
  double g22 = 1.0;

  double det() const { return g11 * g22 - g12 * g12; }
  bool positive_definite() const { return g11 > 0.0 && det() > 0.0; }
};

/// Log conformal factor phi (metric = e^{2 phi} * identity) and its gradient.
struct ConformalJet {
  double phi = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

struct GeodesicOptions {
  /// Maximum metric length of one RK4 substep.
  double h_geo = 0.05;
};

// ---------------------------------------------------------------------------
// Manifold catalog. Every entry is conformally flat in each of its charts.

struct FlatPlane {
  static constexpr bool is_flat = true;
  static constexpr bool has_charts = false;

  ConformalJet conformal(const Point&) const { return {}; }
  ConformalJet conformal_gradient(const Point&) const { return {}; }
  double log_factor(const Point&) const { return 0.0; }
  double gaussian_curvature(const Point&) const { return 0.0; }
  Point canonical(const Point& p) const { return p; }
  double guard_radius() const { return std::numeric_limits<double>::infinity(); }
  double volume_density(const Point&, double) const { return 1.0; }
  void check(const Point& p) const {
    if (p.chart != 0 || !std::isfinite(p.x1) || !std::isfinite(p.x2))
      throw GeometryError("FlatPlane: point outside chart domain");
  }
};

struct FlatTorus {
  static constexpr bool is_flat = true;
  static constexpr bool has_charts = false;

  double L1 = 1.0;
  double L2 = 1.0;

  FlatTorus() = default;
  FlatTorus(double l1, double l2) : L1(l1), L2(l2) {
    if (!(L1 > 0.0) || !(L2 > 0.0)) throw std::invalid_argument("FlatTorus: periods must be > 0");
  }

  ConformalJet conformal(const Point&) const { return {}; }
  ConformalJet conformal_gradient(const Point&) const { return {}; }
  double log_factor(const Point&) const { return 0.0; }
  double gaussian_curvature(const Point&) const { return 0.0; }
  Point canonical(const Point& p) const { return {0, wrap(p.x1, L1), wrap(p.x2, L2)}; }
  // Flat exp_map wraps exactly, so steps of any length are admissible.
  double guard_radius() const { return std::numeric_limits<double>::infinity(); }
  double volume_density(const Point&, double) const { return 1.0; }
  void check(const Point& p) const {
    if (p.chart != 0 || !std::isfinite(p.x1) || !std::isfinite(p.x2))
      throw GeometryError("FlatTorus: point outside chart domain");
  }

  static double wrap(double x, double L) {
    double r = std::fmod(x, L);
    if (r < 0.0) r += L;
    if (r >= L) r -= L;
    return r;
  }
};

/// Round sphere of radius a in two stereographic charts. Chart 0 projects from
/// the south pole (its origin is the north pole); chart 1 projects from the
/// north pole with a reflected second axis, so the transition w = 1/z is
/// holomorphic and both charts share the orientation of the outward normal.
struct RoundSphere {
  static constexpr bool is_flat = false;
  static constexpr bool has_charts = true;
  static constexpr double switch_radius = 1.2;

  double radius = 1.0;

  RoundSphere() = default;
  explicit RoundSphere(double a) : radius(a) {
    if (!(a > 0.0)) throw std::invalid_argument("RoundSphere: radius must be > 0");
  }

  ConformalJet conformal(const Point& p) const {
    const double s = 1.0 + p.x1 * p.x1 + p.x2 * p.x2;
    return {std::log(2.0 * radius / s), -2.0 * p.x1 / s, -2.0 * p.x2 / s};
  }
  /// Gradient only; the phi slot is left zero.
  ConformalJet conformal_gradient(const Point& p) const {
    const double s = 2.0 / (1.0 + p.x1 * p.x1 + p.x2 * p.x2);
    return {0.0, -s * p.x1, -s * p.x2};
  }
  double log_factor(const Point& p) const {
    return std::log(2.0 * radius / (1.0 + p.x1 * p.x1 + p.x2 * p.x2));
  }
  double gaussian_curvature(const Point&) const { return 1.0 / (radius * radius); }
  Point canonical(const Point& p) const {
    if (p.x1 * p.x1 + p.x2 * p.x2 > switch_radius * switch_radius) return other_chart(p);
    return p;
  }
  double guard_radius() const { return 0.9 * std::numbers::pi * radius; }
  double volume_density(const Point&, double r) const {
    if (r >= std::numbers::pi * radius)
      throw GeometryError("RoundSphere: |v| beyond the cut locus guard");
    if (r == 0.0) return 1.0;
    const double s = r / radius;
    return std::sin(s) / s;
  }
  void check(const Point& p) const {
    if ((p.chart != 0 && p.chart != 1) || !std::isfinite(p.x1) || !std::isfinite(p.x2))
      throw GeometryError("RoundSphere: point outside chart domain");
  }

  /// w = 1/z as complex numbers.
  static Point other_chart(const Point& p) {
    const double r2 = p.x1 * p.x1 + p.x2 * p.x2;
    if (r2 == 0.0) throw GeometryError("RoundSphere: chart origin has no image in the other chart");
    return {1 - p.chart, p.x1 / r2, -p.x2 / r2};
  }
  /// Pushes a chart vector at p through w = 1/z: dw = -dz / z^2.
  static void push_vector(const Point& p, double& v1, double& v2) {
    const double a = p.x1 * p.x1 - p.x2 * p.x2;  // Re z^2
    const double b = 2.0 * p.x1 * p.x2;          // Im z^2
    const double m = a * a + b * b;
    // -(v1 + i v2) * conj(z^2) / |z^2|^2
    const double r1 = -(v1 * a + v2 * b) / m;
    const double r2 = -(v2 * a - v1 * b) / m;
    v1 = r1;
    v2 = r2;
  }

  /// Embedding in R^3 (outward normal orientation).
  std::array<double, 3> embed(const Point& p) const {
    const double r2 = p.x1 * p.x1 + p.x2 * p.x2;
    const double s = 1.0 + r2;
    const double X = 2.0 * p.x1 / s, Y = 2.0 * p.x2 / s, Z = (1.0 - r2) / s;
    if (p.chart == 0) return {radius * X, radius * Y, radius * Z};
    return {radius * X, -radius * Y, -radius * Z};
  }

  /// Inverse of embed; picks the chart that keeps |z| <= 1.
  Point from_embedding(double X, double Y, double Z) const {
    const double n = std::sqrt(X * X + Y * Y + Z * Z);
    X /= n;
    Y /= n;
    Z /= n;
    if (Z >= 0.0) return {0, X / (1.0 + Z), Y / (1.0 + Z)};
    return {1, X / (1.0 - Z), -Y / (1.0 - Z)};
  }
};

/// Flat torus carrying the metric e^{2u} * identity, u given on a periodic grid.
class ConformalTorus {
 public:
  static constexpr bool is_flat = false;
  static constexpr bool has_charts = false;

  ConformalTorus() : ConformalTorus(std::vector<double>{0.0}, 1, 1, 1.0, 1.0) {}

  ConformalTorus(std::vector<double> u, std::size_t n1, std::size_t n2, double L1, double L2)
      : spline_(std::make_shared<const PeriodicCubicSpline>(std::move(u), n1, n2, L1, L2)) {
    const auto& v = spline_->nodes();
    u_min_ = *std::min_element(v.begin(), v.end());
  }

  const PeriodicCubicSpline& spline() const { return *spline_; }
  double L1() const { return spline_->L1(); }
  double L2() const { return spline_->L2(); }

  ConformalJet conformal(const Point& p) const {
    const ScalarJet j = spline_->gradient(p.x1, p.x2);
    return {j.value, j.d1, j.d2};
  }
  ConformalJet conformal_gradient(const Point& p) const { return conformal(p); }
  double log_factor(const Point& p) const { return spline_->value(p.x1, p.x2); }
  double gaussian_curvature(const Point& p) const {
    const ScalarJet j = spline_->jet(p.x1, p.x2);
    return curvature_from_jet(j);
  }
  static double curvature_from_jet(const ScalarJet& j) {
    return -std::exp(-2.0 * j.value) * (j.d11 + j.d22);
  }
  Point canonical(const Point& p) const {
    return {0, FlatTorus::wrap(p.x1, L1()), FlatTorus::wrap(p.x2, L2())};
  }
  double guard_radius() const { return 0.45 * std::min(L1(), L2()) * std::exp(u_min_); }
  /// Second-order normal-coordinate expansion.
  double volume_density(const Point& p, double r) const {
    return density_from_curvature(gaussian_curvature(p), r);
  }
  static double density_from_curvature(double K, double r) { return 1.0 - K * r * r / 6.0; }
  void check(const Point& p) const {
    if (p.chart != 0 || !std::isfinite(p.x1) || !std::isfinite(p.x2))
      throw GeometryError("ConformalTorus: point outside chart domain");
  }

 private:
  std::shared_ptr<const PeriodicCubicSpline> spline_;
  double u_min_ = 0.0;
};

using Manifold = std::variant<FlatPlane, FlatTorus, RoundSphere, ConformalTorus>;

inline std::string manifold_name(const Manifold& m) {
  switch (m.index()) {
    case 0: return "plane";
    case 1: return "torus";
    case 2: return "sphere";
    default: return "conformal_torus";
  }
}

// ---------------------------------------------------------------------------
// Pointwise operations.

template <class M>
MetricTensor metric_at(const M& m, const Point& x) {
  m.check(x);
  const double f = std::exp(2.0 * m.log_factor(x));
  return {f, 0.0, f};
}
inline MetricTensor metric_at(const Manifold& m, const Point& x) {
  return std::visit([&](const auto& mm) { return metric_at(mm, x); }, m);
}

/// R = 2K.
template <class M>
double scalar_curvature(const M& m, const Point& x) {
  m.check(x);
  return 2.0 * m.gaussian_curvature(x);
}
inline double scalar_curvature(const Manifold& m, const Point& x) {
  return std::visit([&](const auto& mm) { return scalar_curvature(mm, x); }, m);
}

template <class M>
double metric_norm(const M& m, const TangentVector& v) {
  return std::exp(m.log_factor(v.base)) * std::hypot(v.v1, v.v2);
}
inline double metric_norm(const Manifold& m, const TangentVector& v) {
  return std::visit([&](const auto& mm) { return metric_norm(mm, v); }, m);
}

template <class M>
double normal_volume_density(const M& m, const TangentVector& v) {
  m.check(v.base);
  const double r = metric_norm(m, v);
  if constexpr (std::is_same_v<M, ConformalTorus>) {
    if (r >= m.guard_radius()) throw GeometryError("ConformalTorus: |v| beyond guard radius");
  }
  return m.volume_density(v.base, r);
}
inline double normal_volume_density(const Manifold& m, const TangentVector& v) {
  return std::visit([&](const auto& mm) { return normal_volume_density(mm, v); }, m);
}

/// Re-expresses a point in the requested chart (sphere only; identity elsewhere).
template <class M>
Point to_chart(const M&, const Point& p, int chart) {
  if constexpr (M::has_charts) {
    if (p.chart != chart) return RoundSphere::other_chart(p);
  }
  return p;
}

template <class M>
TangentVector to_chart(const M&, const TangentVector& v, int chart) {
  if constexpr (M::has_charts) {
    if (v.base.chart != chart) {
      TangentVector out = v;
      RoundSphere::push_vector(v.base, out.v1, out.v2);
      out.base = RoundSphere::other_chart(v.base);
      return out;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Geodesic integration.

namespace detail {

struct GeoState {
  double x1, x2, p1, p2, w1, w2;
};

template <class M, bool Transport>
inline GeoState geo_rhs(const M& m, int chart, const GeoState& s) {
  const ConformalJet j = m.conformal_gradient(Point{chart, s.x1, s.x2});
  const double gp = j.d1 * s.p1 + j.d2 * s.p2;
  const double pp = s.p1 * s.p1 + s.p2 * s.p2;
  GeoState d{};
  d.x1 = s.p1;
  d.x2 = s.p2;
  d.p1 = -2.0 * gp * s.p1 + pp * j.d1;
  d.p2 = -2.0 * gp * s.p2 + pp * j.d2;
  if constexpr (Transport) {
    const double gw = j.d1 * s.w1 + j.d2 * s.w2;
    const double pw = s.p1 * s.w1 + s.p2 * s.w2;
    d.w1 = -(s.p1 * gw + s.w1 * gp - pw * j.d1);
    d.w2 = -(s.p2 * gw + s.w2 * gp - pw * j.d2);
  }
  return d;
}

inline GeoState axpy(const GeoState& s, double h, const GeoState& d) {
  return {s.x1 + h * d.x1, s.x2 + h * d.x2, s.p1 + h * d.p1,
          s.p2 + h * d.p2, s.w1 + h * d.w1, s.w2 + h * d.w2};
}

template <class M, bool Transport>
inline void rk4_step(const M& m, int chart, GeoState& s, double h, const GeoState& k1) {
  const GeoState k2 = geo_rhs<M, Transport>(m, chart, axpy(s, 0.5 * h, k1));
  const GeoState k3 = geo_rhs<M, Transport>(m, chart, axpy(s, 0.5 * h, k2));
  const GeoState k4 = geo_rhs<M, Transport>(m, chart, axpy(s, h, k3));
  const double w = h / 6.0;
  s.x1 += w * (k1.x1 + 2.0 * k2.x1 + 2.0 * k3.x1 + k4.x1);
  s.x2 += w * (k1.x2 + 2.0 * k2.x2 + 2.0 * k3.x2 + k4.x2);
  s.p1 += w * (k1.p1 + 2.0 * k2.p1 + 2.0 * k3.p1 + k4.p1);
  s.p2 += w * (k1.p2 + 2.0 * k2.p2 + 2.0 * k3.p2 + k4.p2);
  if constexpr (Transport) {
    s.w1 += w * (k1.w1 + 2.0 * k2.w1 + 2.0 * k3.w1 + k4.w1);
    s.w2 += w * (k1.w2 + 2.0 * k2.w2 + 2.0 * k3.w2 + k4.w2);
  }
}

template <class M, bool Transport>
inline void rk4_step(const M& m, int chart, GeoState& s, double h) {
  rk4_step<M, Transport>(m, chart, s, h, geo_rhs<M, Transport>(m, chart, s));
}

/// Right-hand side at a state whose conformal gradient is already known.
inline GeoState geo_rhs_known(const ConformalJet& j, const GeoState& s) {
  const double gp = j.d1 * s.p1 + j.d2 * s.p2;
  const double pp = s.p1 * s.p1 + s.p2 * s.p2;
  return {s.p1, s.p2, -2.0 * gp * s.p1 + pp * j.d1, -2.0 * gp * s.p2 + pp * j.d2, 0.0, 0.0};
}

}  // namespace detail

struct GeodesicEnd {
  Point end;
  TangentVector velocity;     // terminal velocity, based at end
  TangentVector transported;  // transported vector (zero if none requested)
};

/// Follows the geodesic with initial velocity v for unit parameter time,
/// optionally transporting w (based at v.base) along it.
template <class M, bool Transport = false>
GeodesicEnd follow_geodesic(const M& m, const TangentVector& v, const TangentVector* w,
                            const GeodesicOptions& opt, double speed,
                            const ConformalJet* start_gradient = nullptr) {
  int chart = v.base.chart;
  detail::GeoState s{v.base.x1, v.base.x2, v.v1, v.v2, 0.0, 0.0};
  if constexpr (Transport) {
    TangentVector wc = to_chart(m, *w, chart);
    s.w1 = wc.v1;
    s.w2 = wc.v2;
  }
  if constexpr (M::is_flat) {
    // Straight lines; transport is the identity.
    s.x1 += s.p1;
    s.x2 += s.p2;
  } else {
    const std::size_t nsub =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(speed / opt.h_geo)));
    const double h = 1.0 / static_cast<double>(nsub);
    for (std::size_t k = 0; k < nsub; ++k) {
      if (!Transport && k == 0 && start_gradient)
        detail::rk4_step<M, Transport>(m, chart, s, h, detail::geo_rhs_known(*start_gradient, s));
      else
        detail::rk4_step<M, Transport>(m, chart, s, h);
      if constexpr (M::has_charts) {
        if (s.x1 * s.x1 + s.x2 * s.x2 > RoundSphere::switch_radius * RoundSphere::switch_radius) {
          const Point here{chart, s.x1, s.x2};
          RoundSphere::push_vector(here, s.p1, s.p2);
          if constexpr (Transport) RoundSphere::push_vector(here, s.w1, s.w2);
          const Point there = RoundSphere::other_chart(here);
          chart = there.chart;
          s.x1 = there.x1;
          s.x2 = there.x2;
        }
      }
    }
    if (!std::isfinite(s.x1) || !std::isfinite(s.x2))
      throw GeometryError("exp_map: geodesic left the chart (coordinate overflow)");
  }
  GeodesicEnd out;
  const Point raw{chart, s.x1, s.x2};
  out.end = m.canonical(raw);
  out.velocity = {out.end, s.p1, s.p2};
  out.transported = {out.end, s.w1, s.w2};
  if constexpr (M::has_charts) {
    if (out.end.chart != chart) {
      RoundSphere::push_vector(raw, out.velocity.v1, out.velocity.v2);
      RoundSphere::push_vector(raw, out.transported.v1, out.transported.v2);
    }
  }
  return out;
}

template <class M>
Point exp_map(const M& m, const TangentVector& v, const GeodesicOptions& opt = {}) {
  m.check(v.base);
  if (v.v1 == 0.0 && v.v2 == 0.0) return m.canonical(v.base);
  return follow_geodesic<M, false>(m, v, nullptr, opt, metric_norm(m, v)).end;
}
inline Point exp_map(const Manifold& m, const TangentVector& v, const GeodesicOptions& opt = {}) {
  return std::visit([&](const auto& mm) { return exp_map(mm, v, opt); }, m);
}

/// Endpoint and terminal velocity of the geodesic.
template <class M>
GeodesicEnd geodesic_end(const M& m, const TangentVector& v, const GeodesicOptions& opt = {}) {
  m.check(v.base);
  return follow_geodesic<M, false>(m, v, nullptr, opt, metric_norm(m, v));
}

/// Coordinate distance between two points after expressing b in a's chart
/// (torus differences taken modulo the periods).
template <class M>
double chart_gap(const M& m, const Point& a, const Point& b) {
  const Point bb = to_chart(m, b, a.chart);
  double d1 = bb.x1 - a.x1, d2 = bb.x2 - a.x2;
  if constexpr (std::is_same_v<M, FlatTorus>) {
    d1 -= m.L1 * std::round(d1 / m.L1);
    d2 -= m.L2 * std::round(d2 / m.L2);
  } else if constexpr (std::is_same_v<M, ConformalTorus>) {
    d1 -= m.L1() * std::round(d1 / m.L1());
    d2 -= m.L2() * std::round(d2 / m.L2());
  }
  return std::hypot(d1, d2);
}

/// A geodesic segment: the geodesic with initial velocity `velocity` run for
/// unit parameter time.
using GeodesicSegment = TangentVector;

/// Parallel transport of w along a head-to-tail chain of geodesic segments.
template <class M>
TangentVector parallel_transport(const M& m, std::span<const GeodesicSegment> path,
                                 const TangentVector& w, const GeodesicOptions& opt = {},
                                 double chain_tol = 1e-6) {
  if (path.empty()) return w;
  if (chart_gap(m, path.front().base, w.base) > chain_tol)
    throw GeometryError("parallel_transport: vector is not based at the path start");
  TangentVector cur = w;
  Point at = path.front().base;
  for (std::size_t k = 0; k < path.size(); ++k) {
    const GeodesicSegment& seg = path[k];
    m.check(seg.base);
    if (chart_gap(m, at, seg.base) > chain_tol)
      throw GeometryError("parallel_transport: segments do not chain head to tail");
    cur.base = to_chart(m, at, cur.base.chart);
    cur = to_chart(m, cur, seg.base.chart);
    cur.base = seg.base;
    const GeodesicEnd e = follow_geodesic<M, true>(m, seg, &cur, opt, metric_norm(m, seg));
    cur = e.transported;
    at = e.end;
  }
  return cur;
}
inline TangentVector parallel_transport(const Manifold& m, std::span<const GeodesicSegment> path,
                                        const TangentVector& w, const GeodesicOptions& opt = {}) {
  return std::visit([&](const auto& mm) { return parallel_transport(mm, path, w, opt); }, m);
}

/// Signed rotation angle (counter-clockwise positive, in the chart's
/// orientation) that transport around a closed chain applies to a vector.
template <class M>
double holonomy_angle(const M& m, std::span<const GeodesicSegment> loop,
                      const GeodesicOptions& opt = {}, double chain_tol = 1e-6) {
  if (loop.empty()) return 0.0;
  const Point start = loop.front().base;
  const TangentVector w0{start, 1.0, 0.0};
  TangentVector w1 = parallel_transport(m, loop, w0, opt, chain_tol);
  if (chart_gap(m, start, w1.base) > chain_tol)
    throw GeometryError("holonomy_angle: loop is not closed");
  w1 = to_chart(m, w1, start.chart);
  // Conformal charts preserve angles.
  return std::atan2(w0.v1 * w1.v2 - w0.v2 * w1.v1, w0.v1 * w1.v1 + w0.v2 * w1.v2);
}
inline double holonomy_angle(const Manifold& m, std::span<const GeodesicSegment> loop,
                             const GeodesicOptions& opt = {}) {
  return std::visit([&](const auto& mm) { return holonomy_angle(mm, loop, opt); }, m);
}

namespace detail {

template <class M>
void wrap_period(const M& m, double& d1, double& d2) {
  if constexpr (std::is_same_v<M, FlatTorus>) {
    d1 -= m.L1 * std::round(d1 / m.L1);
    d2 -= m.L2 * std::round(d2 / m.L2);
  } else if constexpr (std::is_same_v<M, ConformalTorus>) {
    d1 -= m.L1() * std::round(d1 / m.L1());
    d2 -= m.L2() * std::round(d2 / m.L2());
  }
}

// Damped Newton on the residual of exp_map(x, (a, b)) against y, measured in
// the chart of y. Refines (a, b) in place; true on convergence.
template <class M>
bool newton_shoot(const M& m, const Point& x, const Point& y, double& a, double& b,
                  const GeodesicOptions& opt, double tol, int max_iter, double max_len) {
  auto residual = [&](double va, double vb, double& r1, double& r2) {
    const Point e = to_chart(m, exp_map(m, TangentVector{x, va, vb}, opt), y.chart);
    r1 = e.x1 - y.x1;
    r2 = e.x2 - y.x2;
    wrap_period(m, r1, r2);
  };
  double r1, r2;
  residual(a, b, r1, r2);
  double rn = std::hypot(r1, r2);
  for (int it = 0; it < max_iter && rn >= tol; ++it) {
    const double eps = 1e-7 * std::max(1.0, std::hypot(a, b));
    double pa1, pa2, ma1, ma2, pb1, pb2, mb1, mb2;
    residual(a + eps, b, pa1, pa2);
    residual(a - eps, b, ma1, ma2);
    residual(a, b + eps, pb1, pb2);
    residual(a, b - eps, mb1, mb2);
    const double j11 = (pa1 - ma1) / (2 * eps), j21 = (pa2 - ma2) / (2 * eps);
    const double j12 = (pb1 - mb1) / (2 * eps), j22 = (pb2 - mb2) / (2 * eps);
    const double det = j11 * j22 - j12 * j21;
    if (det == 0.0 || !std::isfinite(det)) break;
    const double da = (j22 * r1 - j12 * r2) / det;
    const double db = (-j21 * r1 + j11 * r2) / det;
    bool moved = false;
    for (double lam = 1.0; lam > 1e-3; lam *= 0.5) {
      const double na = a - lam * da, nb = b - lam * db;
      if (metric_norm(m, TangentVector{x, na, nb}) > max_len) continue;
      double q1, q2;
      residual(na, nb, q1, q2);
      const double qn = std::hypot(q1, q2);
      if (std::isfinite(qn) && qn < rn) {
        a = na, b = nb, r1 = q1, r2 = q2, rn = qn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  return rn < std::sqrt(tol);
}

}  // namespace detail

/// Finds v at x with exp_map(x, v) = y. The target is moved from x to y in
/// small steps along a straight segment of each chart, Newton-refining at
/// each step; the shortest converged geodesic is returned.
template <class M>
TangentVector shoot_geodesic(const M& m, const Point& x, const Point& y,
                             const GeodesicOptions& opt = {}, double tol = 1e-12,
                             int max_iter = 50) {
  m.check(x);
  m.check(y);
  constexpr double kStep = 0.3;  // metric length per continuation step
  std::optional<TangentVector> best;
  double best_len = std::numeric_limits<double>::infinity();
  std::vector<int> charts{x.chart};
  if constexpr (M::has_charts) charts.push_back(1 - x.chart);
  for (int c : charts) {
    Point xc, yc;
    try {
      xc = to_chart(m, x, c);
      yc = to_chart(m, y, c);
    } catch (const GeometryError&) {
      continue;  // a chart origin has no image in the other chart
    }
    double d1 = yc.x1 - xc.x1, d2 = yc.x2 - xc.x2;
    detail::wrap_period(m, d1, d2);
    constexpr int kSeg = 64;
    double seg_len = 0.0;
    for (int i = 0; i < kSeg; ++i) {
      const double s = (i + 0.5) / kSeg;
      seg_len += std::exp(m.conformal(Point{c, xc.x1 + s * d1, xc.x2 + s * d2}).phi) / kSeg;
    }
    seg_len *= std::hypot(d1, d2);
    const double max_len = 2.0 * seg_len + 1.0;
    const int steps = std::max(1, static_cast<int>(std::ceil(seg_len / kStep)));

    double a = 0.0, b = 0.0;
    bool ok = true;
    for (int k = 1; k <= steps && ok; ++k) {
      const double s = static_cast<double>(k) / steps;
      const Point target = k == steps ? y : Point{c, xc.x1 + s * d1, xc.x2 + s * d2};
      if (k == 1) {
        const Point tx = to_chart(m, target, x.chart);
        a = tx.x1 - x.x1;
        b = tx.x2 - x.x2;
        detail::wrap_period(m, a, b);
      } else {
        const double grow = static_cast<double>(k) / (k - 1);
        a *= grow;
        b *= grow;
      }
      ok = detail::newton_shoot(m, x, target, a, b, opt, k == steps ? tol : 1e-8, max_iter,
                                max_len);
    }
    if (!ok) continue;
    const TangentVector v{x, a, b};
    const double len = metric_norm(m, v);
    if (len < best_len) best_len = len, best = v;
  }
  if (best) return *best;
  throw GeometryError("shoot_geodesic: Newton iteration did not converge");
}

template <class M>
double geodesic_distance(const M& m, const Point& x, const Point& y,
                         const GeodesicOptions& opt = {}) {
  return metric_norm(m, shoot_geodesic(m, x, y, opt));
}

/// Closed geodesic polygon through the given vertices (last joins the first).
template <class M>
std::vector<GeodesicSegment> geodesic_polygon(const M& m, std::span<const Point> vertices,
                                              const GeodesicOptions& opt = {}) {
  std::vector<GeodesicSegment> loop;
  loop.reserve(vertices.size());
  for (std::size_t k = 0; k < vertices.size(); ++k)
    loop.push_back(shoot_geodesic(m, vertices[k], vertices[(k + 1) % vertices.size()], opt));
  return loop;
}

/// Holonomy angle of the geodesic square with chart corners x +- delta.
template <class M>
double square_holonomy(const M& m, const Point& x, double delta, const GeodesicOptions& opt = {}) {
  const std::array<Point, 4> v{Point{x.chart, x.x1 - delta, x.x2 - delta},
                               Point{x.chart, x.x1 + delta, x.x2 - delta},
                               Point{x.chart, x.x1 + delta, x.x2 + delta},
                               Point{x.chart, x.x1 - delta, x.x2 + delta}};
  const auto loop = geodesic_polygon(m, std::span<const Point>(v), opt);
  return holonomy_angle(m, std::span<const GeodesicSegment>(loop), opt);
}

/// Gaussian curvature at x from holonomy / area of shrinking squares.
/// The area of each square is taken as 4 delta^2 e^{2 phi(x)}; both that and
/// the mean of K over the square are off by O(delta^2), so the estimates at
/// delta and delta / 2 are Richardson-combined.
template <class M>
double holonomy_curvature(const M& m, const Point& x, double delta,
                          const GeodesicOptions& opt = {}) {
  const double g = std::exp(2.0 * m.conformal(x).phi);
  const double k1 = square_holonomy(m, x, delta, opt) / (4.0 * delta * delta * g);
  const double k2 = square_holonomy(m, x, 0.5 * delta, opt) / (delta * delta * g);
  return (4.0 * k2 - k1) / 3.0;
}

}  // namespace stochflow
