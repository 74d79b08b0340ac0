#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include "stochflow/geometry.hpp"
#include "stochflow/random.hpp"

namespace stochflow {

/// Time subdivision (t_1, ..., t_r) of [0, total()].
class Partition {
 public:
  Partition() = default;
  explicit Partition(std::vector<double> steps) : steps_(std::move(steps)) {
    if (steps_.empty()) throw std::invalid_argument("Partition: at least one step required");
    for (double s : steps_)
      if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("Partition: steps must be finite and > 0");
    total_ = neumaier_sum(steps_);
  }

  static Partition uniform(double t, std::size_t r) {
    if (!(t > 0.0) || r < 1) throw std::invalid_argument("uniform_partition: need t > 0, r >= 1");
    Partition p(std::vector<double>(r, t / static_cast<double>(r)));
    p.total_ = t;
    return p;
  }

  const std::vector<double>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  double mesh() const { return *std::max_element(steps_.begin(), steps_.end()); }
  double total() const { return total_; }
  /// sigma_j = t_1 + ... + t_j (sigma_0 = 0).
  double sigma(std::size_t j) const {
    if (j == steps_.size()) return total_;
    return neumaier_sum(std::span<const double>(steps_.data(), j));
  }

 private:
  static double neumaier_sum(std::span<const double> xs) {
    double sum = 0.0, comp = 0.0;
    for (double x : xs) {
      const double t = sum + x;
      if (std::abs(sum) >= std::abs(x))
        comp += (sum - t) + x;
      else
        comp += (x - t) + sum;
      sum = t;
    }
    return sum + comp;
  }

  std::vector<double> steps_;
  double total_ = 0.0;
};

inline Partition uniform_partition(double t, std::size_t r) { return Partition::uniform(t, r); }

/// A sampled piecewise-geodesic path: vertices[j] = exp(vertices[j-1], tangents[j-1]).
struct GeodesicPath {
  Point start;
  std::vector<Point> vertices;
  std::vector<TangentVector> tangents;
  /// Metric length of each segment.
  std::vector<double> step_lengths;
  /// Scalar curvature R at each segment's start vertex.
  std::vector<double> curvatures;
  Partition partition;
  double log_weight = 0.0;
  std::size_t resamples = 0;
};

class PathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathOptions {
  GeodesicOptions geodesic;
  int max_resamples = 100;
};

/// Outcome of one walk without the stored vertices.
struct WalkResult {
  Point end;
  double log_weight = 0.0;
  std::size_t resamples = 0;
};

/// Per-step record handed to walk observers.
struct WalkStep {
  std::size_t j;  // 1-based step index
  double t;
  const TangentVector& tangent;
  double length;
  double scalar_curvature;
  const Point& vertex;  // x_j
  double log_weight;    // cumulative after step j
};

namespace detail {

template <class M>
inline double curvature_at(const M& m, const Point& x, ConformalJet* jet) {
  if constexpr (std::is_same_v<M, ConformalTorus>) {
    const ScalarJet j = m.spline().jet(x.x1, x.x2);
    if (jet) *jet = {j.value, j.d1, j.d2};
    return ConformalTorus::curvature_from_jet(j);
  } else {
    if (jet) *jet = m.conformal(x);
    return m.gaussian_curvature(x);
  }
}

template <class M>
inline double density(const M& m, const Point& x, double K, double r) {
  if constexpr (std::is_same_v<M, ConformalTorus>) {
    return ConformalTorus::density_from_curvature(K, r);
  } else {
    return m.volume_density(x, r);
  }
}

}  // namespace detail

/// Geodesic random walk driving the importance-sampled product formula.
///
/// Each step draws v_j with independent N(0, t_j) components in an orthonormal
/// frame at x_{j-1}, moves to exp(x_{j-1}, v_j) and multiplies the weight by
/// theta(v_j) * exp(t_j R(x_{j-1}) / 6). Steps longer than the manifold's
/// guard radius, or with non-positive density, are redrawn.
template <class M, class Engine, class Observer>
WalkResult walk(const M& m, const Point& x, const Partition& P, Engine& eng,
                const PathOptions& opt, Observer&& observe) {
  m.check(x);
  std::normal_distribution<double> normal(0.0, 1.0);
  WalkResult res;
  Point cur = m.canonical(x);
  const double guard = m.guard_radius();
  const auto& steps = P.steps();
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const double t = steps[j];
    const double sd = std::sqrt(t);
    ConformalJet jet;
    const double K = detail::curvature_at(m, cur, &jet);
    const double to_chart = std::exp(-jet.phi);
    double r = 0.0, theta = 1.0, xi1 = 0.0, xi2 = 0.0;
    for (int attempt = 0;; ++attempt) {
      xi1 = normal(eng);
      xi2 = normal(eng);
      r = sd * std::sqrt(xi1 * xi1 + xi2 * xi2);
      if (r < guard) {
        theta = detail::density(m, cur, K, r);
        if (theta > 0.0) break;
      }
      ++res.resamples;
      if (attempt + 1 >= opt.max_resamples)
        throw PathError("sample_path: step guard violated " + std::to_string(opt.max_resamples) +
                        " times in a row");
    }
    const TangentVector v{cur, to_chart * sd * xi1, to_chart * sd * xi2};
    Point next;
    if constexpr (M::is_flat) {
      next = m.canonical(Point{cur.chart, cur.x1 + v.v1, cur.x2 + v.v2});
    } else {
      next = follow_geodesic<M, false>(m, v, nullptr, opt.geodesic, r, &jet).end;
    }
    if constexpr (std::is_same_v<M, ConformalTorus>)
      res.log_weight += std::log1p(-K * r * r / 6.0) + t * K / 3.0;
    else if constexpr (!M::is_flat)
      res.log_weight += std::log(theta) + t * K / 3.0;
    observe(WalkStep{j + 1, t, v, r, 2.0 * K, next, res.log_weight});
    cur = next;
  }
  res.end = cur;
  return res;
}

template <class M, class Engine>
WalkResult walk(const M& m, const Point& x, const Partition& P, Engine& eng,
                const PathOptions& opt = {}) {
  return walk(m, x, P, eng, opt, [](const WalkStep&) {});
}

template <class M>
GeodesicPath sample_path(const M& m, const Point& x, const Partition& P, const RngStream& rng,
                         const PathOptions& opt = {}) {
  auto eng = rng.engine();
  GeodesicPath path;
  path.start = m.canonical(x);
  path.partition = P;
  path.vertices.reserve(P.size() + 1);
  path.vertices.push_back(path.start);
  path.tangents.reserve(P.size());
  const WalkResult res = walk(m, x, P, eng, opt, [&](const WalkStep& s) {
    path.tangents.push_back(s.tangent);
    path.step_lengths.push_back(s.length);
    path.curvatures.push_back(s.scalar_curvature);
    path.vertices.push_back(s.vertex);
  });
  path.log_weight = res.log_weight;
  path.resamples = res.resamples;
  return path;
}
inline GeodesicPath sample_path(const Manifold& m, const Point& x, const Partition& P,
                                const RngStream& rng, const PathOptions& opt = {}) {
  return std::visit([&](const auto& mm) { return sample_path(mm, x, P, rng, opt); }, m);
}

/// E(gamma) = sum_j d_j^2 / t_j.
inline double energy(const GeodesicPath& path) {
  const auto& t = path.partition.steps();
  double e = 0.0;
  for (std::size_t j = 0; j < path.step_lengths.size(); ++j)
    e += path.step_lengths[j] * path.step_lengths[j] / t[j];
  return e;
}

/// E/2 minus the left-endpoint quadrature of R/6 along the path.
inline double l_functional(const GeodesicPath& path) {
  const auto& t = path.partition.steps();
  double curv = 0.0;
  for (std::size_t j = 0; j < path.curvatures.size(); ++j) curv += t[j] * path.curvatures[j] / 6.0;
  return 0.5 * energy(path) - curv;
}

}  // namespace stochflow
