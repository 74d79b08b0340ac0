#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stochflow/config.hpp"
#include "stochflow/geometry.hpp"
#include "stochflow/heat_semigroup.hpp"
#include "stochflow/ricci_flow.hpp"

namespace stochflow::harness {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kCriteriaFailed = 1, kInvalid = 2, kNumerical = 3 };

class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative paths are resolved against $STOCHFLOW_OUTPUT_DIR when it is set.
inline std::filesystem::path output_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* dir = std::getenv("STOCHFLOW_OUTPUT_DIR"); dir && *dir)
    return std::filesystem::path(dir) / path;
  return path;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// CSV file with a '#' comment header (version, timestamp, seed, config echo).
/// Everything below the header depends only on config and seed. An empty
/// column list writes no column row and leaves the row width unchecked.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const RunConfig& cfg, std::uint64_t seed,
            const std::vector<std::string>& columns, const std::vector<std::string>& notes = {})
      : path_(path), columns_(columns.size()) {
    if (path.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path.parent_path(), ec);
    }
    out_.open(path, std::ios::out | std::ios::trunc);
    if (!out_) throw OutputError("cannot write '" + path.string() + "'");
    out_ << "# stochflow " << kVersion << "\n";
    out_ << "# generated " << utc_timestamp() << "\n";
    out_ << "# master_seed " << seed << "\n";
    for (const auto& n : notes) out_ << "# " << n << "\n";
    out_ << cfg.dump("# ");
    if (!columns.empty()) write_line(columns);
  }

  void row(const std::vector<std::string>& cells) {
    if (columns_ != 0 && cells.size() != columns_) throw std::logic_error("CsvWriter: wrong number of cells");
    write_line(cells);
  }

  const std::filesystem::path& path() const { return path_; }

  ~CsvWriter() { out_.flush(); }

 private:
  void write_line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
    if (!out_) throw OutputError("write failed on '" + path_.string() + "'");
  }

  std::filesystem::path path_;
  std::size_t columns_;
  std::ofstream out_;
};

/// Rows of a numeric grid CSV; '#' lines are skipped, cells are separated by
/// commas or whitespace. Every row must have the same length.
inline std::vector<double> load_grid_csv(const std::string& path, std::size_t& n1,
                                         std::size_t& n2) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file '" + path + "'");
  std::vector<double> values;
  std::string line;
  n1 = 0;
  n2 = 0;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ss(line);
    std::size_t count = 0;
    double v;
    while (ss >> v) {
      values.push_back(v);
      ++count;
    }
    if (!ss.eof()) throw ConfigError("grid file '" + path + "': unparseable cell");
    if (n1 == 0) n2 = count;
    if (count != n2) throw ConfigError("grid file '" + path + "': ragged rows");
    ++n1;
  }
  if (n1 == 0 || n2 == 0) throw ConfigError("grid file '" + path + "' is empty");
  return values;
}

/// Initial conformal exponent from manifold.u_csv or manifold.u_init.
inline FlowState initial_state(const RunConfig& cfg) {
  const double L1 = cfg.real("manifold.L1"), L2 = cfg.real("manifold.L2");
  if (!cfg.str("manifold.u_csv").empty()) {
    FlowState s;
    s.u = load_grid_csv(cfg.str("manifold.u_csv"), s.n1, s.n2);
    s.L1 = L1;
    s.L2 = L2;
    s.validate();
    return s;
  }
  const std::size_t n1 = cfg.count("manifold.n1"), n2 = cfg.count("manifold.n2");
  if (n1 < 1 || n2 < 1) throw ConfigError("manifold.n1 and manifold.n2 must be >= 1");
  if (!(L1 > 0.0) || !(L2 > 0.0)) throw ConfigError("torus periods must be > 0");
  const double a = cfg.real("manifold.amplitude");
  const std::string& init = cfg.str("manifold.u_init");
  if (init == "constant") return FlowState::constant(n1, n2, L1, L2, a);
  if (init == "sin_x") return FlowState::sinusoidal(n1, n2, L1, L2, a, 1, 0);
  if (init == "sinsin") return FlowState::sinusoidal(n1, n2, L1, L2, a, 1, 1);
  throw ConfigError("unknown manifold.u_init '" + init + "'");
}

inline Manifold make_manifold(const RunConfig& cfg) {
  const std::string& type = cfg.str("manifold.type");
  if (type == "plane") return FlatPlane{};
  if (type == "torus") {
    const double L1 = cfg.real("manifold.L1"), L2 = cfg.real("manifold.L2");
    if (!(L1 > 0.0) || !(L2 > 0.0)) throw ConfigError("torus periods must be > 0");
    return FlatTorus(L1, L2);
  }
  if (type == "sphere") {
    const double a = cfg.real("manifold.radius");
    if (!(a > 0.0)) throw ConfigError("manifold.radius must be > 0");
    return RoundSphere(a);
  }
  if (type == "conformal_torus") return initial_state(cfg).manifold();
  throw ConfigError("unknown manifold.type '" + type + "'");
}

inline GeodesicOptions geodesic_options(const RunConfig& cfg) {
  GeodesicOptions g;
  g.h_geo = cfg.real("manifold.h_geo");
  if (!(g.h_geo > 0.0)) throw ConfigError("manifold.h_geo must be > 0");
  return g;
}

inline SemigroupProblem semigroup_problem(const RunConfig& cfg) {
  SemigroupProblem p;
  p.manifold = make_manifold(cfg);
  try {
    p.function = TestFunction::parse(cfg.str("semigroup.function"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("semigroup.function: ") + e.what());
  }
  p.t = cfg.real("semigroup.t");
  p.potential = cfg.real("semigroup.V");
  p.x = Point{static_cast<int>(cfg.integer("semigroup.chart")), cfg.real("semigroup.x1"),
              cfg.real("semigroup.x2")};
  return p;
}

inline EstimatorOptions estimator_options(const RunConfig& cfg) {
  EstimatorOptions o;
  o.batch_size = cfg.count("semigroup.batch");
  o.workers = static_cast<unsigned>(cfg.count("run.workers"));
  o.path.geodesic = geodesic_options(cfg);
  o.dump_samples = cfg.count("run.dump_samples");
  return o;
}

inline const std::vector<std::string>& refinement_columns() {
  static const std::vector<std::string> c = {"problem_id", "r",        "mesh", "t",
                                             "n_samples",  "mean",     "std_error",
                                             "oracle",     "bias",     "wall_seconds"};
  return c;
}

inline std::vector<std::string> refinement_cells(const SemigroupProblem& p, const RefinementRow& r) {
  return {p.id(),
          std::to_string(r.r),
          num(r.mesh),
          num(p.t),
          std::to_string(r.estimate.n_samples),
          num(r.estimate.mean),
          num(r.estimate.std_error),
          num(r.oracle),
          num(r.bias),
          num(r.wall_seconds)};
}

inline void write_path_dump(const std::filesystem::path& path, const RunConfig& cfg,
                            std::uint64_t seed, const std::vector<PathDumpRow>& rows) {
  CsvWriter w(path, cfg, seed, {"sample_id", "j", "t_j", "x1", "x2", "log_weight_cumulative"});
  for (const auto& r : rows)
    w.row({std::to_string(r.sample_id), std::to_string(r.j), num(r.t), num(r.x1), num(r.x2),
           num(r.log_weight)});
}

/// Grid CSV: n1 rows of n2 values, loadable through manifold.u_csv.
inline void write_grid(const std::filesystem::path& path, const RunConfig& cfg, std::uint64_t seed,
                       const FlowState& s, const std::vector<std::string>& notes = {}) {
  std::vector<std::string> all = notes;
  all.push_back("time " + num(s.time) + " grid " + std::to_string(s.n1) + "x" +
                std::to_string(s.n2) + " L " + num(s.L1) + "x" + num(s.L2));
  CsvWriter w(path, cfg, seed, {}, all);
  std::vector<std::string> cells(s.n2);
  for (std::size_t i = 0; i < s.n1; ++i) {
    for (std::size_t j = 0; j < s.n2; ++j) cells[j] = num(s.u[i * s.n2 + j]);
    w.row(cells);
  }
}

// ---------------------------------------------------------------------------
// Experiments

inline int run_semigroup(const RunConfig& cfg, std::ostream& out) {
  const SemigroupProblem prob = semigroup_problem(cfg);
  const std::uint64_t seed = cfg.seed("run.seed");
  const std::size_t r = cfg.count("semigroup.r");
  if (r < 1) throw ConfigError("semigroup.r must be >= 1");
  const std::uint64_t n = cfg.count("semigroup.n");
  EstimatorOptions eo = estimator_options(cfg);
  std::vector<PathDumpRow> dump;
  if (!cfg.str("run.dump_paths").empty()) eo.dump = &dump;

  const auto rows = refinement_study(prob, {r}, n, seed, eo);
  const RefinementRow& row = rows.front();
  CsvWriter w(output_path(cfg.str("run.output")), cfg, seed, refinement_columns());
  w.row(refinement_cells(prob, row));
  if (eo.dump) write_path_dump(output_path(cfg.str("run.dump_paths")), cfg, seed, dump);

  out << "semigroup " << prob.id() << " t=" << prob.t << " r=" << r << " n=" << n
      << ": mean = " << num(row.estimate.mean) << " ± " << num(row.estimate.std_error);
  if (row.oracle) out << " (oracle " << num(*row.oracle) << ", bias " << num(*row.bias) << ")";
  out << "\n";
  return kOk;
}

inline int run_refinement(const RunConfig& cfg, std::ostream& out) {
  const SemigroupProblem prob = semigroup_problem(cfg);
  const std::uint64_t seed = cfg.seed("run.seed");
  const auto r_list = cfg.count_list("semigroup.r_list");
  const std::uint64_t n = cfg.count("semigroup.n");
  const EstimatorOptions eo = estimator_options(cfg);
  const auto rows = refinement_study(prob, r_list, n, seed, eo);
  CsvWriter w(output_path(cfg.str("run.output")), cfg, seed, refinement_columns());
  for (const auto& row : rows) w.row(refinement_cells(prob, row));
  out << "refinement " << prob.id() << " t=" << prob.t << " n=" << n << ":";
  for (const auto& row : rows) out << " r=" << row.r << ":" << num(row.estimate.mean);
  if (rows.front().oracle) out << " bias log-log slope = " << num(bias_slope(rows));
  out << "\n";
  return kOk;
}

inline FlowRunParams flow_params(const RunConfig& cfg, bool compare) {
  FlowRunParams p;
  p.t_end = cfg.real("flow.t_end");
  p.dt = cfg.real("flow.dt");
  try {
    p.stepper = compare ? Stepper::Both : parse_stepper(cfg.str("flow.stepper"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("flow.stepper: ") + e.what());
  }
  p.output_every = cfg.count("flow.output_every");
  p.cfl_safety = cfg.real("flow.cfl_safety");
  p.substep = cfg.boolean("flow.substep");
  p.stochastic.r = cfg.count("flow.r");
  p.stochastic.n_samples = cfg.count("flow.n");
  p.stochastic.master_seed = cfg.seed("run.seed");
  p.stochastic.workers = static_cast<unsigned>(cfg.count("run.workers"));
  p.stochastic.path.geodesic = geodesic_options(cfg);
  return p;
}

inline std::vector<std::string> flow_columns(Stepper s) {
  std::vector<std::string> c = {"time", "area", "min_K", "max_K", "gauss_bonnet"};
  if (s == Stepper::Stochastic) c.push_back("max_node_stderr");
  if (s == Stepper::Both)
    c.insert(c.end(), {"sup_discrepancy", "max_node_stderr", "mean_discrepancy", "drift_sigma",
                       "stochastic_area", "stochastic_gauss_bonnet"});
  return c;
}

inline std::vector<std::string> flow_cells(Stepper s, const FlowRecord& r) {
  const FlowDiagnostics& d = r.deterministic ? *r.deterministic : *r.stochastic;
  std::vector<std::string> c = {num(r.time), num(d.area), num(d.min_K), num(d.max_K),
                                num(d.gauss_bonnet)};
  if (s == Stepper::Stochastic) c.push_back(num(r.max_node_stderr));
  if (s == Stepper::Both)
    c.insert(c.end(), {num(r.sup_discrepancy), num(r.max_node_stderr), num(r.mean_discrepancy),
                       num(r.drift_sigma), num(r.stochastic->area),
                       num(r.stochastic->gauss_bonnet)});
  return c;
}

inline std::string reproducibility_line(const FlowState& s, const FlowRunParams& p,
                                        std::uint64_t seed) {
  std::ostringstream os;
  os << "seed=" << seed << " grid=" << s.n1 << "x" << s.n2 << " r=" << p.stochastic.r
     << " n=" << p.stochastic.n_samples << " dt=" << num(p.dt)
     << " stepper=" << (p.stepper == Stepper::Deterministic ? "deterministic"
                        : p.stepper == Stepper::Stochastic  ? "stochastic"
                                                             : "both");
  return os.str();
}

inline int run_flow_experiment(const RunConfig& cfg, std::ostream& out, bool compare) {
  const FlowState init = initial_state(cfg);
  FlowRunParams p = flow_params(cfg, compare);
  const std::uint64_t seed = cfg.seed("run.seed");
  if (p.dt <= 0.0 && p.stepper == Stepper::Deterministic) p.dt = cfl_bound(init, p.cfl_safety);
  if (!p.substep && p.stepper != Stepper::Stochastic) {
    const double bound = cfl_bound(init, p.cfl_safety);
    if (p.dt > bound) throw CflViolation(p.dt, bound);
  }

  CsvWriter w(output_path(cfg.str("run.output")), cfg, seed, flow_columns(p.stepper),
              {reproducibility_line(init, p, seed)});
  const FlowRun run = run_flow(init, p, [&](const FlowRecord& r, const FlowState*, const FlowState*) {
    w.row(flow_cells(p.stepper, r));
  });

  const std::string final_path = cfg.str("flow.final_state");
  if (!final_path.empty()) {
    const std::string note = reproducibility_line(init, p, seed);
    if (run.final_deterministic)
      write_grid(output_path(final_path), cfg, seed, *run.final_deterministic,
                 {note, "deterministic"});
    if (run.final_stochastic) {
      std::filesystem::path sp = output_path(final_path);
      if (run.final_deterministic)
        sp.replace_filename(sp.stem().string() + "_stochastic" + sp.extension().string());
      write_grid(sp, cfg, seed, *run.final_stochastic, {note, "stochastic"});
    }
  }

  const FlowRecord& last = run.records.back();
  const FlowDiagnostics& d = last.deterministic ? *last.deterministic : *last.stochastic;
  out << "flow t=" << num(last.time) << " steps=" << run.steps << " dt=" << num(run.dt)
      << ": area=" << num(d.area) << " K in [" << num(d.min_K) << ", " << num(d.max_K)
      << "] gauss_bonnet=" << num(d.gauss_bonnet);
  if (last.sup_discrepancy)
    out << " sup_discrepancy=" << num(*last.sup_discrepancy)
        << " max_node_stderr=" << num(*last.max_node_stderr)
        << " mean_discrepancy=" << num(*last.mean_discrepancy) << " ± "
        << num(*last.drift_sigma);
  out << "\n";
  return kOk;
}

/// Vertices of the geodesic triangle cut out by the first octant: the north
/// pole and two equator points 90 degrees apart, counter-clockwise in chart 0.
inline std::vector<Point> octant_triangle() {
  return {Point{0, 0.0, 0.0}, Point{0, 1.0, 0.0}, Point{0, 0.0, 1.0}};
}

inline int run_holonomy(const RunConfig& cfg, std::ostream& out) {
  const Manifold m = make_manifold(cfg);
  const GeodesicOptions opt = geodesic_options(cfg);
  const std::uint64_t seed = cfg.seed("run.seed");
  const std::string& loop = cfg.str("holonomy.loop");
  CsvWriter w(output_path(cfg.str("run.output")), cfg, seed,
              {"loop", "chart", "x1", "x2", "size", "angle", "expected_angle", "curvature_estimate",
               "curvature"});
  if (loop == "octant") {
    const auto* s = std::get_if<RoundSphere>(&m);
    if (!s) throw ConfigError("holonomy.loop = octant needs manifold.type = sphere");
    const auto v = octant_triangle();
    const auto segs = geodesic_polygon(*s, std::span<const Point>(v), opt);
    const double angle = holonomy_angle(*s, std::span<const GeodesicSegment>(segs), opt);
    const double expected = std::numbers::pi / 2.0;
    const double K = s->gaussian_curvature(v[0]);
    w.row({"octant", "0", "0", "0", "", num(angle), num(expected),
           num(angle / (std::numbers::pi / 2.0 * s->radius * s->radius)), num(K)});
    out << "holonomy octant: angle = " << num(angle) << " (expected " << num(expected) << ")\n";
    return kOk;
  }
  if (loop == "square") {
    const Point x{static_cast<int>(cfg.integer("holonomy.chart")), cfg.real("holonomy.x1"),
                  cfg.real("holonomy.x2")};
    const double delta = cfg.real("holonomy.size");
    if (!(delta > 0.0)) throw ConfigError("holonomy.size must be > 0");
    const auto [angle, Kest, K] = std::visit(
        [&](const auto& mm) {
          mm.check(x);
          return std::tuple{square_holonomy(mm, x, delta, opt), holonomy_curvature(mm, x, delta, opt),
                            mm.gaussian_curvature(x)};
        },
        m);
    const double area = 4.0 * delta * delta * std::exp(2.0 * std::visit([&](const auto& mm) {
                                                          return mm.conformal(x).phi;
                                                        }, m));
    w.row({"square", std::to_string(x.chart), num(x.x1), num(x.x2), num(delta), num(angle),
           num(K * area), num(Kest), num(K)});
    out << "holonomy square at (" << x.x1 << ", " << x.x2 << ") size " << delta
        << ": angle = " << num(angle) << ", curvature estimate = " << num(Kest) << " (K = " << num(K)
        << ")\n";
    return kOk;
  }
  throw ConfigError("unknown holonomy.loop '" + loop + "'");
}

inline int run_list_oracles(std::ostream& out) {
  out << "manifold  function  exact value of (e^{-tH} u)(x), H = Delta/2 + V\n";
  for (const auto& e : registered_oracles()) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-9s %-9s %s\n", e.manifold.c_str(), e.function.c_str(),
                  e.formula.c_str());
    out << buf;
  }
  return kOk;
}

/// Dispatches on run.experiment. acceptance lives in acceptance.hpp.
inline int run_experiment(const RunConfig& cfg, std::ostream& out) {
  const std::string& e = cfg.str("run.experiment");
  if (e == "semigroup") return run_semigroup(cfg, out);
  if (e == "refinement") return run_refinement(cfg, out);
  if (e == "flow") return run_flow_experiment(cfg, out, false);
  if (e == "flow-compare") return run_flow_experiment(cfg, out, true);
  if (e == "holonomy") return run_holonomy(cfg, out);
  if (e == "list-oracles") return run_list_oracles(out);
  if (e == "print-config") {
    out << cfg.annotated();
    return kOk;
  }
  throw ConfigError("unknown experiment '" + e + "'");
}

/// Runs `body` and maps exceptions onto exit codes.
template <class F>
int guarded(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const CflViolation& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const OutputError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const GeometryError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const NumericalFault& e) {
    err << "numerical fault: " << e.what() << "\n";
    return kNumerical;
  } catch (const PathError& e) {
    err << "numerical fault: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "numerical fault: " << e.what() << "\n";
    return kNumerical;
  }
}

inline int run(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded([&] { return run_experiment(cfg, out); }, err);
}

}  // namespace stochflow::harness
