#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochflow/heat_semigroup.hpp"
#include "stochflow/periodic_spline.hpp"

namespace stochflow {

/// Conformal exponent u on an n1 x n2 periodic grid; metric e^{2u} * flat.
struct FlowState {
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  double L1 = 1.0;
  double L2 = 1.0;
  std::vector<double> u;
  double time = 0.0;

  double h1() const { return L1 / static_cast<double>(n1); }
  double h2() const { return L2 / static_cast<double>(n2); }
  Point node(std::size_t i, std::size_t j) const {
    return {0, static_cast<double>(i) * h1(), static_cast<double>(j) * h2()};
  }

  void validate() const {
    if (n1 < 1 || n2 < 1 || u.size() != n1 * n2)
      throw std::invalid_argument("FlowState: grid size mismatch");
    if (!(L1 > 0.0) || !(L2 > 0.0)) throw std::invalid_argument("FlowState: periods must be > 0");
    for (double v : u)
      if (!std::isfinite(v)) throw std::invalid_argument("FlowState: non-finite u");
  }

  static FlowState constant(std::size_t n1, std::size_t n2, double L1, double L2, double c) {
    return {n1, n2, L1, L2, std::vector<double>(n1 * n2, c), 0.0};
  }

  /// u = amplitude * s_k1(x) * s_k2(y), where s_0 = 1 and s_k = sin(2 pi k x / L).
  static FlowState sinusoidal(std::size_t n1, std::size_t n2, double L1, double L2,
                              double amplitude, int k1, int k2) {
    FlowState s = constant(n1, n2, L1, L2, 0.0);
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j)
        s.u[i * n2 + j] = amplitude * mode_factor(k1, s.node(i, j).x1, L1) *
                          mode_factor(k2, s.node(i, j).x2, L2);
    return s;
  }

  static double mode_factor(int k, double x, double L) {
    return k == 0 ? 1.0 : std::sin(2.0 * std::numbers::pi * k * x / L);
  }

  ConformalTorus manifold() const { return ConformalTorus(u, n1, n2, L1, L2); }
};

struct FlowDiagnostics {
  double area = 0.0;
  double min_K = 0.0;
  double max_K = 0.0;
  double gauss_bonnet = 0.0;  // integral of K dA
  double time = 0.0;
};

class CflViolation : public std::runtime_error {
 public:
  CflViolation(double dt, double bound)
      : std::runtime_error("flow step dt = " + std::to_string(dt) +
                           " exceeds the admissible bound " + std::to_string(bound)),
        bound_(bound) {}
  double bound() const { return bound_; }

 private:
  double bound_;
};

/// K = -e^{-2u} Delta_0 u at every node, using the spline node Laplacian.
inline std::vector<double> curvature_field(const FlowState& s) {
  s.validate();
  std::vector<double> K = PeriodicCubicSpline::node_laplacian(s.u, s.n1, s.n2, s.h1(), s.h2());
  for (std::size_t k = 0; k < K.size(); ++k) K[k] *= -std::exp(-2.0 * s.u[k]);
  return K;
}

inline double area(const FlowState& s) {
  double a = 0.0;
  for (double v : s.u) a += std::exp(2.0 * v);
  return a * s.h1() * s.h2();
}

inline FlowDiagnostics diagnose(const FlowState& s) {
  s.validate();
  const std::vector<double> lap =
      PeriodicCubicSpline::node_laplacian(s.u, s.n1, s.n2, s.h1(), s.h2());
  FlowDiagnostics d;
  d.time = s.time;
  d.area = area(s);
  d.min_K = std::numeric_limits<double>::infinity();
  d.max_K = -std::numeric_limits<double>::infinity();
  double gb = 0.0;
  for (std::size_t k = 0; k < lap.size(); ++k) {
    const double K = -std::exp(-2.0 * s.u[k]) * lap[k];
    d.min_K = std::min(d.min_K, K);
    d.max_K = std::max(d.max_K, K);
    gb -= lap[k];  // K dA = -Delta_0 u dx
  }
  d.gauss_bonnet = gb * s.h1() * s.h2();
  return d;
}

/// Real-axis stability limit of classical RK4.
inline constexpr double kRk4StabilityLimit = 2.78;

/// Largest admissible explicit step: safety * RK4 limit over the spectral
/// radius e^{-2 min u} (12/h1^2 + 12/h2^2) of the spline Laplacian.
inline double cfl_bound(const FlowState& s, double safety = 0.5) {
  const double umin = *std::min_element(s.u.begin(), s.u.end());
  const double rho = std::exp(-2.0 * umin) * (12.0 / (s.h1() * s.h1()) + 12.0 / (s.h2() * s.h2()));
  return safety * kRk4StabilityLimit / rho;
}

namespace detail {

inline std::vector<double> flow_rhs(const FlowState& s, std::span<const double> u) {
  std::vector<double> f = PeriodicCubicSpline::node_laplacian(u, s.n1, s.n2, s.h1(), s.h2());
  for (std::size_t k = 0; k < f.size(); ++k) f[k] *= std::exp(-2.0 * u[k]);
  return f;
}

}  // namespace detail

/// One RK4 step of du/dt = e^{-2u} Delta_0 u (2D Ricci flow in conformal gauge).
inline FlowState flow_step_deterministic(const FlowState& s, double dt, double cfl_safety = 0.5) {
  s.validate();
  if (!(dt >= 0.0)) throw std::invalid_argument("flow_step_deterministic: dt must be >= 0");
  const double bound = cfl_bound(s, cfl_safety);
  if (dt > bound) throw CflViolation(dt, bound);
  FlowState out = s;
  out.time = s.time + dt;
  if (dt == 0.0) return out;
  const std::size_t n = s.u.size();
  std::vector<double> tmp(n);
  const auto k1 = detail::flow_rhs(s, s.u);
  for (std::size_t k = 0; k < n; ++k) tmp[k] = s.u[k] + 0.5 * dt * k1[k];
  const auto k2 = detail::flow_rhs(s, tmp);
  for (std::size_t k = 0; k < n; ++k) tmp[k] = s.u[k] + 0.5 * dt * k2[k];
  const auto k3 = detail::flow_rhs(s, tmp);
  for (std::size_t k = 0; k < n; ++k) tmp[k] = s.u[k] + dt * k3[k];
  const auto k4 = detail::flow_rhs(s, tmp);
  for (std::size_t k = 0; k < n; ++k)
    out.u[k] = s.u[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  return out;
}

/// Advances by dt using as many equal CFL-admissible RK4 substeps as needed.
inline FlowState flow_advance_deterministic(const FlowState& s, double dt,
                                            double cfl_safety = 0.5) {
  if (dt == 0.0) return s;
  const std::size_t nsub =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(dt / cfl_bound(s, cfl_safety))));
  const double h = dt / static_cast<double>(nsub);
  FlowState cur = s;
  for (std::size_t k = 0; k < nsub; ++k) {
    // The bound only grows (min u is non-decreasing), but re-check in case.
    const double bound = cfl_bound(cur, cfl_safety);
    if (h > bound) return flow_advance_deterministic(cur, s.time + dt - cur.time, cfl_safety);
    cur = flow_step_deterministic(cur, h, cfl_safety);
  }
  cur.time = s.time + dt;
  return cur;
}

/// Noise-free counterpart of the stochastic stepper: integrates the heat
/// equation du/dt = e^{-2 u_0} Delta_0 u of the metric frozen at the start
/// of the step. Its distance to the true flow is the splitting error of the
/// frozen-metric coupling.
inline FlowState flow_advance_frozen_metric(const FlowState& s, double dt,
                                            double cfl_safety = 0.5) {
  s.validate();
  FlowState out = s;
  out.time = s.time + dt;
  if (dt == 0.0) return out;
  const std::size_t nsub =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(dt / cfl_bound(s, cfl_safety))));
  const double h = dt / static_cast<double>(nsub);
  const std::size_t n = s.u.size();
  std::vector<double> frozen(n);
  for (std::size_t k = 0; k < n; ++k) frozen[k] = std::exp(-2.0 * s.u[k]);
  auto rhs = [&](std::span<const double> u) {
    std::vector<double> f = PeriodicCubicSpline::node_laplacian(u, s.n1, s.n2, s.h1(), s.h2());
    for (std::size_t k = 0; k < n; ++k) f[k] *= frozen[k];
    return f;
  };
  std::vector<double>& u = out.u;
  std::vector<double> tmp(n);
  for (std::size_t step = 0; step < nsub; ++step) {
    const auto k1 = rhs(u);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + 0.5 * h * k1[k];
    const auto k2 = rhs(tmp);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + 0.5 * h * k2[k];
    const auto k3 = rhs(tmp);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = u[k] + h * k3[k];
    const auto k4 = rhs(tmp);
    for (std::size_t k = 0; k < n; ++k) u[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  }
  return out;
}

struct StochasticFlowParams {
  std::size_t r = 16;
  std::uint64_t n_samples = 2000;
  std::uint64_t master_seed = 1;
  std::uint64_t step_index = 0;
  unsigned workers = 0;
  PathOptions path;
};

struct StochasticStepResult {
  FlowState state;
  std::vector<double> std_error;
};

inline std::uint64_t node_seed(std::uint64_t master, std::uint64_t step, std::uint64_t node) {
  return mix64(mix64(master ^ mix64(step + 1)) ^ mix64(node + 0x51ed270b27f1a3ULL));
}

/// One flow step as a Wiener integral: every node gets the Monte Carlo
/// estimate of e^{-2dt H} u for the frozen current metric, H = Delta_g / 2.
/// The flow runs du/dt = Delta_g u, so flow time dt is semigroup time 2 dt.
inline StochasticStepResult flow_step_stochastic(const FlowState& s, double dt,
                                                 const StochasticFlowParams& p) {
  s.validate();
  if (!(dt >= 0.0)) throw std::invalid_argument("flow_step_stochastic: dt must be >= 0");
  StochasticStepResult res{s, std::vector<double>(s.u.size(), 0.0)};
  if (dt == 0.0) return res;

  const double semigroup_time = 2.0 * dt;
  SemigroupProblem prob;
  prob.manifold = s.manifold();
  prob.function = TestFunction{TestFunction::Kind::ConformalExponent, 0};
  prob.t = semigroup_time;
  const Partition P = uniform_partition(semigroup_time, p.r);
  EstimatorOptions eo;
  eo.batch_size = p.n_samples;
  eo.workers = 1;
  eo.path = p.path;

  parallel_for(s.u.size(), p.workers, [&](std::size_t k) {
    SemigroupProblem local = prob;
    local.x = s.node(k / s.n2, k % s.n2);
    const McEstimate e = estimate_semigroup(local, P, p.n_samples,
                                            node_seed(p.master_seed, p.step_index, k), eo);
    if (!std::isfinite(e.mean))
      throw NumericalFault("flow_step_stochastic: non-finite node estimate");
    res.state.u[k] = e.mean;
    res.std_error[k] = e.std_error;
  });
  res.state.time = s.time + dt;
  return res;
}

enum class Stepper { Deterministic, Stochastic, Both };

inline Stepper parse_stepper(const std::string& s) {
  if (s == "deterministic") return Stepper::Deterministic;
  if (s == "stochastic") return Stepper::Stochastic;
  if (s == "both") return Stepper::Both;
  throw std::invalid_argument("unknown stepper '" + s + "'");
}

struct FlowRunParams {
  double t_end = 0.05;
  Stepper stepper = Stepper::Deterministic;
  /// Macro step; 0 selects the CFL bound of the initial state (deterministic only).
  double dt = 0.0;
  std::size_t output_every = 1;
  double cfl_safety = 0.5;
  /// Split a macro step into CFL-admissible substeps; if false, an
  /// inadmissible dt raises CflViolation.
  bool substep = true;
  StochasticFlowParams stochastic;
};

struct FlowRecord {
  double time = 0.0;
  std::optional<FlowDiagnostics> deterministic;
  std::optional<FlowDiagnostics> stochastic;
  std::optional<double> sup_discrepancy;   // max |u_det - u_stoch|
  std::optional<double> mean_discrepancy;  // node mean of u_stoch - u_det
  std::optional<double> max_node_stderr;
  /// Standard deviation of mean_discrepancy accumulated from the per-step
  /// node standard errors (the constant mode is never damped).
  std::optional<double> drift_sigma;
};

struct FlowRun {
  std::vector<FlowRecord> records;
  std::optional<FlowState> final_deterministic;
  std::optional<FlowState> final_stochastic;
  std::size_t steps = 0;
  double dt = 0.0;
};

using FlowObserver =
    std::function<void(const FlowRecord&, const FlowState* det, const FlowState* stoch)>;

inline FlowRun run_flow(const FlowState& initial, const FlowRunParams& p,
                        const FlowObserver& observe = {}) {
  initial.validate();
  if (!(p.t_end > 0.0)) throw std::invalid_argument("run_flow: t_end must be > 0");
  if (p.output_every < 1) throw std::invalid_argument("run_flow: output_every must be >= 1");
  const bool det = p.stepper != Stepper::Stochastic;
  const bool sto = p.stepper != Stepper::Deterministic;

  double dt = p.dt;
  if (dt <= 0.0) {
    if (sto) throw std::invalid_argument("run_flow: the stochastic stepper needs an explicit dt");
    dt = cfl_bound(initial, p.cfl_safety);
  }
  const auto steps = static_cast<std::size_t>(std::ceil(p.t_end / dt - 1e-9));
  dt = p.t_end / static_cast<double>(steps);

  FlowRun run;
  run.steps = steps;
  run.dt = dt;
  std::optional<FlowState> sd, ss;
  if (det) sd = initial;
  if (sto) ss = initial;
  std::optional<std::vector<double>> last_err;
  double drift_var = 0.0;

  auto record = [&](double time) {
    FlowRecord rec;
    rec.time = time;
    if (sd) rec.deterministic = diagnose(*sd);
    if (ss) rec.stochastic = diagnose(*ss);
    if (sd && ss) {
      double sup = 0.0, mean = 0.0;
      for (std::size_t k = 0; k < sd->u.size(); ++k) {
        const double d = ss->u[k] - sd->u[k];
        sup = std::max(sup, std::abs(d));
        mean += d;
      }
      rec.sup_discrepancy = sup;
      rec.mean_discrepancy = mean / static_cast<double>(sd->u.size());
    }
    if (ss) {
      rec.max_node_stderr =
          last_err ? *std::max_element(last_err->begin(), last_err->end()) : 0.0;
      rec.drift_sigma = std::sqrt(drift_var);
    }
    run.records.push_back(rec);
    if (observe) observe(rec, sd ? &*sd : nullptr, ss ? &*ss : nullptr);
  };

  record(initial.time);
  for (std::size_t step = 0; step < steps; ++step) {
    const double target = initial.time + static_cast<double>(step + 1) * dt;
    if (sd) {
      *sd = p.substep ? flow_advance_deterministic(*sd, dt, p.cfl_safety)
                      : flow_step_deterministic(*sd, dt, p.cfl_safety);
      sd->time = target;
    }
    if (ss) {
      StochasticFlowParams sp = p.stochastic;
      sp.step_index = step;
      StochasticStepResult r = flow_step_stochastic(*ss, dt, sp);
      *ss = std::move(r.state);
      ss->time = target;
      last_err = std::move(r.std_error);
      double ms = 0.0;
      for (double e : *last_err) ms += e * e;
      const double nn = static_cast<double>(last_err->size());
      drift_var += ms / (nn * nn);
    }
    if ((step + 1) % p.output_every == 0 || step + 1 == steps) record(target);
  }
  run.final_deterministic = sd;
  run.final_stochastic = ss;
  return run;
}

/// Projection coefficient of u on s_k1(x) s_k2(y).
inline double mode_amplitude(const FlowState& s, int k1, int k2) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.n1; ++i)
    for (std::size_t j = 0; j < s.n2; ++j) {
      const Point x = s.node(i, j);
      const double b = FlowState::mode_factor(k1, x.x1, s.L1) * FlowState::mode_factor(k2, x.x2, s.L2);
      num += b * s.u[i * s.n2 + j];
      den += b * b;
    }
  return num / den;
}

}  // namespace stochflow
