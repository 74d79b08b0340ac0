#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochflow/geometry.hpp"
#include "stochflow/oracles.hpp"
#include "stochflow/parallel.hpp"
#include "stochflow/stochastic_paths.hpp"

namespace stochflow {

class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Test functions

struct TestFunction {
  enum class Kind { Constant, Gaussian, CosX, CosY, Zonal, ConformalExponent };
  Kind kind = Kind::Constant;
  int k = 1;  // wave number (cosines) or degree (zonal)

  std::string name() const {
    switch (kind) {
      case Kind::Constant: return "constant";
      case Kind::Gaussian: return "gaussian";
      case Kind::CosX: return k == 1 ? "cos_x" : "cos_x:" + std::to_string(k);
      case Kind::CosY: return k == 1 ? "cos_y" : "cos_y:" + std::to_string(k);
      case Kind::Zonal: return "zonal_" + std::to_string(k);
      case Kind::ConformalExponent: return "conformal_u";
    }
    return "?";
  }

  static TestFunction parse(const std::string& s) {
    auto wave = [&](const std::string& head, Kind kind) -> std::optional<TestFunction> {
      if (s == head) return TestFunction{kind, 1};
      if (s.rfind(head + ":", 0) == 0) {
        const int k = std::stoi(s.substr(head.size() + 1));
        if (k < 0) throw std::invalid_argument("test function: negative wave number");
        return TestFunction{kind, k};
      }
      return std::nullopt;
    };
    if (s == "constant") return {Kind::Constant, 0};
    if (s == "gaussian") return {Kind::Gaussian, 0};
    if (s == "conformal_u") return {Kind::ConformalExponent, 0};
    if (auto f = wave("cos_x", Kind::CosX)) return *f;
    if (auto f = wave("cos_y", Kind::CosY)) return *f;
    if (s.rfind("zonal_", 0) == 0) {
      const int l = std::stoi(s.substr(6));
      if (l < 0) throw std::invalid_argument("test function: negative zonal degree");
      return {Kind::Zonal, l};
    }
    throw std::invalid_argument("unknown test function '" + s + "'");
  }
};

/// Throws if `f` is not defined on every point of `m`.
inline void check_defined(const Manifold& m, const TestFunction& f) {
  using K = TestFunction::Kind;
  const bool ok = [&] {
    switch (f.kind) {
      case K::Constant: return true;
      case K::Gaussian: return std::holds_alternative<FlatPlane>(m);
      case K::CosX:
      case K::CosY:
        return std::holds_alternative<FlatTorus>(m) || std::holds_alternative<ConformalTorus>(m);
      case K::Zonal: return std::holds_alternative<RoundSphere>(m);
      case K::ConformalExponent: return std::holds_alternative<ConformalTorus>(m);
    }
    return false;
  }();
  if (!ok)
    throw std::invalid_argument("test function '" + f.name() + "' is not defined on " +
                                manifold_name(m));
}

template <class M>
double evaluate(const M& m, const TestFunction& f, const Point& x) {
  using K = TestFunction::Kind;
  switch (f.kind) {
    case K::Constant: return 1.0;
    case K::Gaussian: return std::exp(-0.5 * (x.x1 * x.x1 + x.x2 * x.x2));
    case K::CosX:
    case K::CosY: {
      double L = 1.0;
      if constexpr (std::is_same_v<M, FlatTorus>) L = f.kind == K::CosX ? m.L1 : m.L2;
      if constexpr (std::is_same_v<M, ConformalTorus>) L = f.kind == K::CosX ? m.L1() : m.L2();
      const double c = f.kind == K::CosX ? x.x1 : x.x2;
      return std::cos(2.0 * std::numbers::pi * f.k * c / L);
    }
    case K::Zonal:
      if constexpr (std::is_same_v<M, RoundSphere>) {
        const double r2 = x.x1 * x.x1 + x.x2 * x.x2;
        double z = (1.0 - r2) / (1.0 + r2);
        if (x.chart == 1) z = -z;
        return oracles::legendre(f.k, z);
      }
      break;
    case K::ConformalExponent:
      if constexpr (std::is_same_v<M, ConformalTorus>) return m.log_factor(x);
      break;
  }
  throw std::invalid_argument("test function not defined on this manifold");
}
inline double evaluate(const Manifold& m, const TestFunction& f, const Point& x) {
  return std::visit([&](const auto& mm) { return evaluate(mm, f, x); }, m);
}

struct SemigroupProblem {
  Manifold manifold = FlatPlane{};
  TestFunction function;
  double t = 1.0;
  double potential = 0.0;
  Point x;

  std::string id() const {
    std::string s = manifold_name(manifold) + ":" + function.name();
    if (potential != 0.0) s += ":V";
    return s;
  }
};

// ---------------------------------------------------------------------------
// Oracle registry

struct OracleEntry {
  std::string manifold;
  std::string function;
  std::string formula;
};

inline std::vector<OracleEntry> registered_oracles() {
  return {
      {"any", "constant", "exp(-V t)"},
      {"plane", "gaussian", "exp(-V t) exp(-|x|^2 / (2 (1 + t))) / (1 + t)"},
      {"torus", "cos_x:k", "exp(-V t) exp(-t (2 pi k / L1)^2 / 2) cos(2 pi k x1 / L1)"},
      {"torus", "cos_y:k", "exp(-V t) exp(-t (2 pi k / L2)^2 / 2) cos(2 pi k x2 / L2)"},
      {"sphere", "zonal_l", "exp(-V t) exp(-t l (l + 1) / (2 a^2)) P_l(cos theta)"},
  };
}

/// Exact (e^{-tH} u)(x) for registered (manifold, function) pairs.
inline std::optional<double> oracle_value(const SemigroupProblem& p) {
  using K = TestFunction::Kind;
  const double fk = oracles::potential_factor(p.t, p.potential);
  const Manifold& m = p.manifold;
  switch (p.function.kind) {
    case K::Constant: return fk;
    case K::Gaussian:
      if (std::holds_alternative<FlatPlane>(m))
        return fk * oracles::flat_plane_gaussian(p.t, p.x.x1, p.x.x2);
      break;
    case K::CosX:
    case K::CosY:
      if (const auto* tor = std::get_if<FlatTorus>(&m)) {
        const double L = p.function.kind == K::CosX ? tor->L1 : tor->L2;
        return fk * oracles::torus_cosine(p.t, L, p.function.k) * evaluate(m, p.function, p.x);
      }
      break;
    case K::Zonal:
      if (const auto* s = std::get_if<RoundSphere>(&m))
        return fk * oracles::sphere_zonal(p.t, s->radius, p.function.k) *
               evaluate(m, p.function, p.x);
      break;
    case K::ConformalExponent: break;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Normalization

/// log Z(T, m) = (m/2) sum_j log(4 pi t_j).
inline double log_zed_normalization(const Partition& P, int m) {
  if (m < 0) throw std::invalid_argument("zed_normalization: m must be >= 0");
  if (m == 0) return 0.0;
  double s = 0.0;
  for (double t : P.steps()) s += std::log(4.0 * std::numbers::pi * t);
  return 0.5 * m * s;
}

/// Z(T, m) = prod_j (4 pi t_j)^{m/2}.
inline double zed_normalization(const Partition& P, int m) {
  return std::exp(log_zed_normalization(P, m));
}

// ---------------------------------------------------------------------------
// Streaming moments

/// Welford accumulator with Chan's pairwise merge.
struct MomentAccumulator {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }

  void merge(const MomentAccumulator& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
    const double nt = na + nb;
    const double d = o.mean - mean;
    mean += d * (nb / nt);
    m2 += o.m2 + d * d * (na * nb / nt);
    n += o.n;
  }

  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double std_error() const {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

/// Merges keyed batch accumulators in ascending key order, whatever order
/// they arrive in.
inline MomentAccumulator merge_batches(std::vector<std::pair<std::uint64_t, MomentAccumulator>> b) {
  std::sort(b.begin(), b.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  MomentAccumulator total;
  for (const auto& [key, acc] : b) total.merge(acc);
  return total;
}

// ---------------------------------------------------------------------------
// Estimator

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::size_t r_steps = 0;
  std::uint64_t resamples = 0;
};

struct PathDumpRow {
  std::uint64_t sample_id;
  std::size_t j;
  double t;
  double x1;
  double x2;
  double log_weight;
};

struct EstimatorOptions {
  std::uint64_t batch_size = 4096;
  unsigned workers = 0;
  PathOptions path;
  /// When set, the first `dump_samples` paths are recorded here.
  std::vector<PathDumpRow>* dump = nullptr;
  std::uint64_t dump_samples = 100;
};

namespace detail {

template <class M>
MomentAccumulator run_batch(const M& m, const SemigroupProblem& prob, const Partition& P,
                            std::uint64_t first_id, std::uint64_t count, const RngStream& stream,
                            double potential_factor, const EstimatorOptions& opt,
                            std::uint64_t& resamples, std::vector<PathDumpRow>* dump) {
  auto eng = stream.engine();
  MomentAccumulator acc;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t id = first_id + i;
    WalkResult w;
    if (dump && id < opt.dump_samples) {
      dump->push_back({id, 0, 0.0, prob.x.x1, prob.x.x2, 0.0});
      w = walk(m, prob.x, P, eng, opt.path, [&](const WalkStep& s) {
        dump->push_back({id, s.j, s.t, s.vertex.x1, s.vertex.x2, s.log_weight});
      });
    } else {
      w = walk(m, prob.x, P, eng, opt.path);
    }
    resamples += w.resamples;
    double weight = potential_factor * evaluate(m, prob.function, w.end);
    if constexpr (!M::is_flat) weight *= std::exp(w.log_weight);
    if (!std::isfinite(weight))
      throw NumericalFault("estimate_semigroup: non-finite sample weight (sample " +
                           std::to_string(id) + ", log_weight " + std::to_string(w.log_weight) +
                           ")");
    acc.add(weight);
  }
  return acc;
}

}  // namespace detail

/// Monte Carlo estimate of (e^{-tH} u)(x), H = Delta/2 + V, over paths
/// time-sliced by P. Deterministic in (problem, P, n_samples, master_seed,
/// batch_size); independent of the worker count.
inline McEstimate estimate_semigroup(const SemigroupProblem& prob, const Partition& P,
                                     std::uint64_t n_samples, std::uint64_t master_seed,
                                     const EstimatorOptions& opt = {}) {
  if (n_samples < 2) throw std::invalid_argument("estimate_semigroup: n_samples must be >= 2");
  if (!(prob.t > 0.0)) throw std::invalid_argument("estimate_semigroup: t must be > 0");
  if (std::abs(P.total() - prob.t) > 1e-12)
    throw std::invalid_argument("estimate_semigroup: partition length differs from t");
  if (opt.batch_size < 1) throw std::invalid_argument("estimate_semigroup: batch_size must be >= 1");
  check_defined(prob.manifold, prob.function);

  const double vfac = oracles::potential_factor(P.total(), prob.potential);
  const std::uint64_t nb = (n_samples + opt.batch_size - 1) / opt.batch_size;
  std::vector<std::pair<std::uint64_t, MomentAccumulator>> batches(nb);
  std::vector<std::uint64_t> resamples(nb, 0);
  std::vector<std::vector<PathDumpRow>> dumps(opt.dump ? nb : 0);

  std::visit(
      [&](const auto& m) {
        parallel_for(nb, opt.workers, [&](std::size_t b) {
          const std::uint64_t first = b * opt.batch_size;
          const std::uint64_t count = std::min(opt.batch_size, n_samples - first);
          batches[b] = {b, detail::run_batch(m, prob, P, first, count, RngStream{master_seed, b},
                                             vfac, opt, resamples[b],
                                             opt.dump ? &dumps[b] : nullptr)};
        });
      },
      prob.manifold);

  const MomentAccumulator total = merge_batches(std::move(batches));
  McEstimate est;
  est.mean = total.mean;
  est.std_error = total.std_error();
  est.n_samples = total.n;
  est.r_steps = P.size();
  for (auto r : resamples) est.resamples += r;
  if (opt.dump)
    for (auto& d : dumps) opt.dump->insert(opt.dump->end(), d.begin(), d.end());
  return est;
}

struct RefinementRow {
  std::size_t r = 0;
  double mesh = 0.0;
  McEstimate estimate;
  std::optional<double> oracle;
  std::optional<double> bias;
  double wall_seconds = 0.0;
};

inline std::vector<RefinementRow> refinement_study(const SemigroupProblem& prob,
                                                   const std::vector<std::size_t>& r_list,
                                                   std::uint64_t n_samples,
                                                   std::uint64_t master_seed,
                                                   const EstimatorOptions& opt = {}) {
  if (r_list.empty()) throw std::invalid_argument("refinement_study: empty r_list");
  for (std::size_t i = 1; i < r_list.size(); ++i)
    if (r_list[i] <= r_list[i - 1])
      throw std::invalid_argument("refinement_study: r_list must be increasing");
  const std::optional<double> truth = oracle_value(prob);
  std::vector<RefinementRow> rows;
  for (std::size_t r : r_list) {
    const Partition P = uniform_partition(prob.t, r);
    const auto t0 = std::chrono::steady_clock::now();
    RefinementRow row;
    row.r = r;
    row.mesh = P.mesh();
    row.estimate = estimate_semigroup(prob, P, n_samples, master_seed, opt);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.oracle = truth;
    if (truth) row.bias = row.estimate.mean - *truth;
    rows.push_back(row);
  }
  return rows;
}

/// Least-squares slope of log|bias| against log(mesh).
inline double bias_slope(const std::vector<RefinementRow>& rows) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = 0;
  for (const auto& r : rows) {
    if (!r.bias) continue;
    const double x = std::log(r.mesh), y = std::log(std::abs(*r.bias));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  if (n < 2) return std::nan("");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace stochflow
