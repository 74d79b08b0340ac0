#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stochflow/harness.hpp"

namespace stochflow::acceptance {

namespace fs = std::filesystem;
using harness::CsvWriter;
using harness::num;

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  bool skipped = false;
  double measured = std::numeric_limits<double>::quiet_NaN();
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::string detail;
  double seconds = 0.0;
  std::vector<fs::path> artifacts;
};

struct Context {
  RunConfig cfg;
  std::uint64_t seed = 0;
  fs::path archive;
  unsigned workers = 0;
  std::set<int> skip;
  std::ostream* log = nullptr;

  std::uint64_t seed_for(int criterion) const { return seed + static_cast<std::uint64_t>(criterion); }
};

inline constexpr int kCriteria = 9;

inline const char* criterion_name(int id) {
  switch (id) {
    case 1: return "flat Wiener integral";
    case 2: return "flat torus exactness";
    case 3: return "curved-space time-slicing limit";
    case 4: return "curvature-weight cancellation";
    case 5: return "potential factor";
    case 6: return "holonomy and Gauss-Bonnet";
    case 7: return "deterministic flow";
    case 8: return "stochastic vs deterministic flow";
    case 9: return "reproducibility";
  }
  return "?";
}

inline CriterionResult blank(int id) {
  CriterionResult r;
  r.id = id;
  r.name = criterion_name(id);
  return r;
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

inline EstimatorOptions estimator(const Context& c) {
  EstimatorOptions o;
  o.workers = c.workers;
  return o;
}

inline RefinementRow estimate(const Context& c, const SemigroupProblem& p, std::size_t r,
                              std::uint64_t n, std::uint64_t seed) {
  return refinement_study(p, {r}, n, seed, estimator(c)).front();
}

inline SemigroupProblem problem(Manifold m, TestFunction f, double t, double V = 0.0,
                                Point x = {}) {
  SemigroupProblem p;
  p.manifold = std::move(m);
  p.function = f;
  p.t = t;
  p.potential = V;
  p.x = x;
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Criteria

inline CriterionResult criterion_1(const Context& c) {
  CriterionResult res = blank(1);
  detail::Stopwatch sw;
  const auto p = detail::problem(FlatPlane{}, {TestFunction::Kind::Gaussian, 0}, 1.0);
  const RefinementRow row = detail::estimate(c, p, 1, 100000, c.seed_for(1));
  res.seconds = sw.seconds();
  CsvWriter w(c.archive / "c1_plane_gaussian.csv", c.cfg, c.seed_for(1), harness::refinement_columns());
  w.row(harness::refinement_cells(p, row));
  res.artifacts.push_back(w.path());

  const double err = std::abs(row.estimate.mean - 0.5);
  const double se = row.estimate.std_error;
  res.measured = err;
  res.threshold = 3.0 * se;
  res.passed = err <= 3.0 * se && se < 0.005 && res.seconds < 5.0;
  res.detail = "mean " + detail::fmt(row.estimate.mean) + " se " + detail::fmt(se) +
               " (oracle 0.5; need |err| <= 3 se, se < 0.005, runtime < 5 s)";
  return res;
}

inline CriterionResult criterion_2(const Context& c) {
  CriterionResult res = blank(2);
  detail::Stopwatch sw;
  const auto p = detail::problem(FlatTorus(1.0, 1.0), {TestFunction::Kind::CosX, 1}, 0.05);
  const auto rows = refinement_study(p, {1, 8, 64}, 100000, c.seed_for(2), detail::estimator(c));
  res.seconds = sw.seconds();
  CsvWriter w(c.archive / "c2_torus_cosine.csv", c.cfg, c.seed_for(2), harness::refinement_columns());
  bool ok = true;
  double worst = 0.0;
  std::string d;
  for (const auto& row : rows) {
    w.row(harness::refinement_cells(p, row));
    const double z = std::abs(*row.bias) / row.estimate.std_error;
    worst = std::max(worst, z);
    ok = ok && std::abs(*row.bias) <= 3.0 * row.estimate.std_error;
    d += "r=" + std::to_string(row.r) + ": " + detail::fmt(row.estimate.mean) + " ± " +
         detail::fmt(row.estimate.std_error) + "; ";
  }
  res.artifacts.push_back(w.path());
  res.measured = worst;
  res.threshold = 3.0;
  res.passed = ok && res.seconds < 10.0;
  res.detail = d + "oracle " + detail::fmt(*rows.front().oracle) + " (max |bias|/se shown)";
  return res;
}

inline CriterionResult criterion_3(const Context& c) {
  CriterionResult res = blank(3);
  detail::Stopwatch sw;
  const auto p = detail::problem(RoundSphere(1.0), {TestFunction::Kind::Zonal, 1}, 0.5);
  const RefinementRow main = detail::estimate(c, p, 64, 100000, c.seed_for(3));
  // The refinement needs |bias| well above the noise at r = 64 (bias ~ 5e-4).
  const auto rows = refinement_study(p, {4, 8, 16, 32, 64}, 1000000, c.seed_for(3) + 100,
                                     detail::estimator(c));
  res.seconds = sw.seconds();

  CsvWriter w1(c.archive / "c3_sphere_estimate.csv", c.cfg, c.seed_for(3),
               harness::refinement_columns());
  w1.row(harness::refinement_cells(p, main));
  CsvWriter w2(c.archive / "c3_sphere_refinement.csv", c.cfg, c.seed_for(3) + 100,
               harness::refinement_columns());
  for (const auto& row : rows) w2.row(harness::refinement_cells(p, row));
  res.artifacts = {w1.path(), w2.path()};

  const double err = std::abs(*main.bias);
  const double tol = std::max(3.0 * main.estimate.std_error, 0.01);
  const double slope = bias_slope(rows);
  const bool decreasing = std::abs(*rows.back().bias) < std::abs(*rows.front().bias);
  res.measured = slope;
  res.threshold = 0.5;
  res.passed = err <= tol && std::abs(slope - 1.0) <= 0.5 && decreasing && res.seconds < 60.0;
  std::string biases;
  for (const auto& row : rows) biases += " " + detail::fmt(*row.bias, 3);
  res.detail = "r=64 mean " + detail::fmt(main.estimate.mean) + " ± " +
               detail::fmt(main.estimate.std_error) + " vs " + detail::fmt(*main.oracle) +
               "; bias(r=4..64)" + biases + "; log-log slope " + detail::fmt(slope, 4) +
               " (need 1 ± 0.5)";
  return res;
}

inline CriterionResult criterion_4(const Context& c) {
  CriterionResult res = blank(4);
  detail::Stopwatch sw;
  const auto p = detail::problem(RoundSphere(1.0), {TestFunction::Kind::Constant, 0}, 0.5);
  const RefinementRow row = detail::estimate(c, p, 64, 100000, c.seed_for(4));
  res.seconds = sw.seconds();
  CsvWriter w(c.archive / "c4_sphere_constant.csv", c.cfg, c.seed_for(4), harness::refinement_columns());
  w.row(harness::refinement_cells(p, row));
  res.artifacts.push_back(w.path());
  res.measured = std::abs(row.estimate.mean - 1.0);
  res.threshold = std::max(5.0 * row.estimate.std_error, 0.01);
  res.passed = res.measured <= res.threshold;
  res.detail = "mean " + detail::fmt(row.estimate.mean) + " ± " + detail::fmt(row.estimate.std_error);
  return res;
}

inline CriterionResult criterion_5(const Context& c) {
  CriterionResult res = blank(5);
  detail::Stopwatch sw;
  const double target = std::exp(-0.35);
  const std::vector<std::pair<Manifold, std::size_t>> cases = {{FlatTorus(1.0, 1.0), 16},
                                                               {RoundSphere(1.0), 64}};
  CsvWriter w(c.archive / "c5_potential.csv", c.cfg, c.seed_for(5), harness::refinement_columns());
  bool ok = true;
  double worst = 0.0;
  for (const auto& [m, r] : cases) {
    const auto p = detail::problem(m, {TestFunction::Kind::Constant, 0}, 0.5, 0.7);
    const RefinementRow row = detail::estimate(c, p, r, 100000, c.seed_for(5));
    w.row(harness::refinement_cells(p, row));
    const double err = std::abs(row.estimate.mean - target);
    const double tol = 3.0 * row.estimate.std_error + 1e-12;
    worst = std::max(worst, err / tol);
    ok = ok && err <= tol;
    res.detail += manifold_name(m) + " " + detail::fmt(row.estimate.mean, 8) + " ± " +
                  detail::fmt(row.estimate.std_error) + "; ";
  }
  res.seconds = sw.seconds();
  res.artifacts.push_back(w.path());
  res.measured = worst;
  res.threshold = 1.0;
  res.passed = ok;
  res.detail += "target " + detail::fmt(target, 8) + " (max |err| / (3 se) shown)";
  return res;
}

inline CriterionResult criterion_6(const Context& c) {
  CriterionResult res = blank(6);
  detail::Stopwatch sw;
  const RoundSphere s(1.0);
  CsvWriter w(c.archive / "c6_holonomy.csv", c.cfg, c.seed_for(6),
              {"loop", "chart", "x1", "x2", "size", "value", "expected", "abs_error"});

  const auto tri = harness::octant_triangle();
  const auto segs = geodesic_polygon(s, std::span<const Point>(tri));
  const double angle = holonomy_angle(s, std::span<const GeodesicSegment>(segs));
  const double angle_err = std::abs(angle - std::numbers::pi / 2.0);
  w.row({"octant", "0", "0", "0", "", num(angle), num(std::numbers::pi / 2.0), num(angle_err)});

  const std::vector<Point> centres = {{0, 0.0, 0.0}, {0, 0.4, -0.3}, {1, 0.2, 0.5}, {0, 0.9, 0.6}};
  const double delta = 0.1;
  double worst = 0.0;
  for (const Point& x : centres) {
    const double K = holonomy_curvature(s, x, delta);
    const double e = std::abs(K - 1.0);
    worst = std::max(worst, e);
    w.row({"square", std::to_string(x.chart), num(x.x1), num(x.x2), num(delta), num(K), "1", num(e)});
  }
  res.seconds = sw.seconds();
  res.artifacts.push_back(w.path());
  res.measured = angle_err;
  res.threshold = 1e-3;
  res.passed = angle_err <= 1e-3 && worst <= 0.01;
  res.detail = "octant angle " + detail::fmt(angle, 10) + "; worst shrinking-loop K error " +
               detail::fmt(worst, 3) + " (need <= 1e-3 and <= 1%)";
  return res;
}

inline CriterionResult criterion_7(const Context& c) {
  CriterionResult res = blank(7);
  detail::Stopwatch sw;
  const FlowState init = FlowState::sinusoidal(64, 64, 1.0, 1.0, 0.1, 1, 1);
  FlowRunParams p;
  p.t_end = 0.05;
  p.stepper = Stepper::Deterministic;
  p.dt = cfl_bound(init, p.cfl_safety);
  const auto steps = static_cast<std::size_t>(std::ceil(p.t_end / p.dt - 1e-9));
  p.output_every = std::max<std::size_t>(1, steps / 100);

  CsvWriter w(c.archive / "c7_flow.csv", c.cfg, c.seed_for(7),
              {"time", "area", "min_K", "max_K", "gauss_bonnet", "mode_amplitude"});
  const double area0 = area(init);
  double worst_area = 0.0, worst_gb = 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  run_flow(init, p, [&](const FlowRecord& r, const FlowState* s, const FlowState*) {
    const FlowDiagnostics& d = *r.deterministic;
    const double a = mode_amplitude(*s, 1, 1);
    w.row({num(r.time), num(d.area), num(d.min_K), num(d.max_K), num(d.gauss_bonnet), num(a)});
    worst_area = std::max(worst_area, std::abs(d.area - area0) / area0);
    const double kmax = std::max(std::abs(d.min_K), std::abs(d.max_K));
    if (kmax > 0.0) worst_gb = std::max(worst_gb, std::abs(d.gauss_bonnet) / (d.area * kmax));
    const double y = std::log(std::abs(a));
    sx += r.time;
    sy += y;
    sxx += r.time * r.time;
    sxy += r.time * y;
    n += 1;
  });
  res.seconds = sw.seconds();
  res.artifacts.push_back(w.path());

  const double rate = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double expected = 8.0 * std::numbers::pi * std::numbers::pi;
  const double rel = std::abs(rate / expected - 1.0);
  res.measured = rel;
  res.threshold = 0.05;
  res.passed = worst_area < 1e-4 && worst_gb < 1e-6 && rel <= 0.05 && res.seconds < 10.0;
  res.detail = "area drift " + detail::fmt(worst_area, 3) + "; max |gauss_bonnet|/(area max|K|) " +
               detail::fmt(worst_gb, 3) + "; mode decay rate " + detail::fmt(rate) + " vs 8 pi^2 = " +
               detail::fmt(expected) + " (" + std::to_string(steps) + " steps)";
  return res;
}

inline CriterionResult criterion_8(const Context& c) {
  CriterionResult res = blank(8);
  detail::Stopwatch sw;
  const FlowState init = FlowState::sinusoidal(32, 32, 1.0, 1.0, 0.1, 1, 1);
  FlowRunParams p;
  p.t_end = 0.05;
  p.dt = 1e-3;
  p.stepper = Stepper::Both;
  p.stochastic.r = 16;
  p.stochastic.n_samples = 2000;
  p.stochastic.master_seed = c.seed_for(8);
  p.stochastic.workers = c.workers;

  CsvWriter w(c.archive / "c8_flow_compare.csv", c.cfg, c.seed_for(8),
              harness::flow_columns(Stepper::Both),
              {harness::reproducibility_line(init, p, c.seed_for(8))});
  double worst_ratio = 0.0;
  bool bounded = true;
  std::size_t first_violation = 0;
  std::size_t k = 0;
  const FlowRun run = run_flow(init, p, [&](const FlowRecord& r, const FlowState*, const FlowState*) {
    w.row(harness::flow_cells(Stepper::Both, r));
    const double bound = 5.0 * *r.max_node_stderr;
    if (*r.sup_discrepancy > bound) {
      if (bounded) first_violation = k;
      bounded = false;
    }
    if (bound > 0.0) worst_ratio = std::max(worst_ratio, *r.sup_discrepancy / bound);
    if (c.log && k % 10 == 0 && k > 0)
      *c.log << "  [8] t=" << detail::fmt(r.time, 3) << " sup " << detail::fmt(*r.sup_discrepancy, 3)
             << " 5se " << detail::fmt(bound, 3) << " mean " << detail::fmt(*r.mean_discrepancy, 3)
             << " ± " << detail::fmt(*r.drift_sigma, 3) << " (" << detail::fmt(sw.seconds(), 4)
             << " s)\n"
             << std::flush;
    ++k;
  });
  res.seconds = sw.seconds();
  res.artifacts.push_back(w.path());

  // Noise-free reference for the splitting itself: the same schedule with the
  // metric frozen over each step and the semigroup solved on the grid.
  CsvWriter wr(c.archive / "c8_frozen_metric_reference.csv", c.cfg, c.seed_for(8),
               {"time", "mean_offset", "sup_offset"});
  FlowState det = init, frozen = init;
  wr.row({num(0.0), num(0.0), num(0.0)});
  for (std::size_t s = 0; s < run.steps; ++s) {
    det = flow_advance_deterministic(det, run.dt, p.cfl_safety);
    frozen = flow_advance_frozen_metric(frozen, run.dt, p.cfl_safety);
    double mean = 0.0, sup = 0.0;
    for (std::size_t i = 0; i < det.u.size(); ++i) {
      mean += frozen.u[i] - det.u[i];
      sup = std::max(sup, std::abs(frozen.u[i] - det.u[i]));
    }
    mean /= static_cast<double>(det.u.size());
    wr.row({num(static_cast<double>(s + 1) * run.dt), num(mean), num(sup)});
    if (s + 1 == run.steps)
      res.detail += "frozen-metric splitting offset at t_end: mean " + detail::fmt(mean, 3) +
                    " sup " + detail::fmt(sup, 3) + "; ";
  }
  res.artifacts.push_back(wr.path());

  const FlowRecord& last = run.records.back();
  const double z = *last.mean_discrepancy / *last.drift_sigma;
  const bool no_drift = std::abs(z) <= 3.0;
  res.measured = worst_ratio;
  res.threshold = 1.0;
  res.passed = bounded && no_drift && res.seconds < 900.0;
  res.detail = "max sup/(5 max se) " + detail::fmt(worst_ratio, 4) +
               (bounded ? "" : " (first exceeded at output " + std::to_string(first_violation) + ")") +
               "; final mean discrepancy " + detail::fmt(*last.mean_discrepancy, 3) + " ± " +
               detail::fmt(*last.drift_sigma, 3) + " (z = " + detail::fmt(z, 3) + "); " + res.detail +
               "runtime " + detail::fmt(res.seconds, 4) + " s";
  return res;
}

/// CSV body below the comment header with every wall_seconds column removed.
inline std::vector<std::string> csv_body(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::vector<bool> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      for (const auto& h : cells) keep.push_back(h != "wall_seconds");
      header = false;
    }
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (i >= keep.size() || keep[i]) out += (out.empty() ? "" : ",") + cells[i];
    lines.push_back(out);
  }
  return lines;
}

using CriterionFn = CriterionResult (*)(const Context&);
inline constexpr CriterionFn kRunners[] = {criterion_1, criterion_2, criterion_3, criterion_4,
                                           criterion_5, criterion_6, criterion_7, criterion_8};

inline CriterionResult run_one(const Context& c, int id) {
  if (c.skip.count(id)) {
    CriterionResult r = blank(id);
    r.skipped = true;
    r.detail = "skipped by configuration";
    return r;
  }
  fs::create_directories(c.archive);
  return kRunners[id - 1](c);
}

inline CriterionResult criterion_9(const Context& c, const std::vector<CriterionResult>& first) {
  CriterionResult res = blank(9);
  detail::Stopwatch sw;
  Context again = c;
  again.archive = c.archive / "rerun";
  again.log = nullptr;
  std::size_t files = 0, differing = 0;
  std::string diffs;
  for (const auto& r : first) {
    if (r.skipped) continue;
    const CriterionResult r2 = run_one(again, r.id);
    for (const auto& a : r.artifacts) {
      ++files;
      const fs::path b = again.archive / a.filename();
      if (!fs::exists(b) || csv_body(a) != csv_body(b)) {
        ++differing;
        diffs += " " + a.filename().string();
      }
    }
    (void)r2;
  }
  res.seconds = sw.seconds();
  res.measured = static_cast<double>(differing);
  res.threshold = 0.0;
  res.passed = files > 0 && differing == 0;
  res.detail = std::to_string(files) + " CSV bodies compared (wall_seconds columns excluded), " +
               std::to_string(differing) + " differ" + diffs;
  return res;
}

inline Context make_context(const RunConfig& cfg, std::ostream* log) {
  Context c;
  c.cfg = cfg;
  c.seed = cfg.seed("acceptance.seed");
  c.archive = harness::output_path(cfg.str("acceptance.archive"));
  c.workers = static_cast<unsigned>(cfg.count("run.workers"));
  c.log = log;
  std::stringstream ss(cfg.str("acceptance.skip"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const int id = std::stoi(item);
    if (id < 1 || id > kCriteria) throw ConfigError("acceptance.skip: no criterion " + item);
    c.skip.insert(id);
  }
  return c;
}

inline std::string status(const CriterionResult& r) {
  return r.skipped ? "SKIP" : r.passed ? "PASS" : "FAIL";
}

inline std::string summary_line(const CriterionResult& r) {
  std::ostringstream os;
  os << "[" << status(r) << "] criterion " << r.id << " (" << r.name << "): " << r.detail;
  if (!r.skipped) os << " [" << detail::fmt(r.seconds, 3) << " s]";
  return os.str();
}

/// Runs every criterion in order, reporting each line to `out` as it finishes.
inline std::vector<CriterionResult> run_suite(const Context& c, std::ostream& out) {
  std::vector<CriterionResult> results;
  for (int id = 1; id < kCriteria; ++id) {
    results.push_back(run_one(c, id));
    out << summary_line(results.back()) << "\n" << std::flush;
  }
  if (c.skip.count(9)) {
    results.push_back(run_one(c, 9));
  } else {
    results.push_back(criterion_9(c, results));
  }
  out << summary_line(results.back()) << "\n" << std::flush;
  return results;
}

inline void write_results(const fs::path& path, const Context& c,
                          const std::vector<CriterionResult>& results) {
  CsvWriter w(path, c.cfg, c.seed,
              {"criterion", "name", "status", "measured", "threshold", "wall_seconds", "detail"});
  for (const auto& r : results) {
    std::string d = r.detail;
    for (char& ch : d)
      if (ch == ',') ch = ';';
    w.row({std::to_string(r.id), r.name, status(r), num(r.measured), num(r.threshold),
           num(r.seconds), d});
  }
}

/// Full suite with pinned seeds; exit code 0 iff every criterion passes.
inline int run_acceptance(const RunConfig& cfg, std::ostream& out) {
  const Context c = make_context(cfg, &out);
  const auto results = run_suite(c, out);
  write_results(harness::output_path(cfg.str("acceptance.output")), c, results);
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.passed ? 1 : 0;
  out << passed << "/" << results.size() << " criteria passed\n";
  return passed == results.size() ? harness::kOk : harness::kCriteriaFailed;
}

}  // namespace stochflow::acceptance
