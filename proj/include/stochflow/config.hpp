#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochflow {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string default_value;
  std::string help;
};

/// Every recognised key with its default. Unknown keys are rejected.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"run.experiment", "semigroup",
       "semigroup | refinement | flow | flow-compare | holonomy | list-oracles | print-config | acceptance"},
      {"run.seed", "20261015", "master seed of every random stream"},
      {"run.workers", "0", "worker threads (0 = hardware concurrency)"},
      {"run.output", "stochflow.csv", "main CSV output (relative to $STOCHFLOW_OUTPUT_DIR)"},
      {"run.dump_paths", "", "optional path-dump CSV (sample_id, j, t_j, x1, x2, log_weight)"},
      {"run.dump_samples", "100", "number of paths written to the dump"},

      {"manifold.type", "sphere", "plane | torus | sphere | conformal_torus"},
      {"manifold.radius", "1", "sphere radius a"},
      {"manifold.L1", "1", "torus period along x1"},
      {"manifold.L2", "1", "torus period along x2"},
      {"manifold.n1", "64", "conformal torus grid points along x1"},
      {"manifold.n2", "64", "conformal torus grid points along x2"},
      {"manifold.u_csv", "", "conformal torus u grid (n1 rows of n2 reals); overrides u_init"},
      {"manifold.u_init", "sinsin", "constant | sin_x | sinsin (amplitude * sin(2pi x) sin(2pi y))"},
      {"manifold.amplitude", "0.1", "amplitude (or constant value) of u_init"},
      {"manifold.h_geo", "0.05", "maximum metric length of one geodesic RK4 substep"},

      {"semigroup.function", "zonal_1",
       "constant | gaussian | cos_x[:k] | cos_y[:k] | zonal_l | conformal_u"},
      {"semigroup.t", "0.5", "semigroup time"},
      {"semigroup.V", "0", "constant potential"},
      {"semigroup.r", "64", "number of time slices"},
      {"semigroup.r_list", "4,8,16,32,64", "slice counts of the refinement study"},
      {"semigroup.n", "100000", "Monte Carlo samples"},
      {"semigroup.batch", "4096", "samples per random stream"},
      {"semigroup.chart", "0", "chart of the evaluation point"},
      {"semigroup.x1", "0", "evaluation point, first chart coordinate"},
      {"semigroup.x2", "0", "evaluation point, second chart coordinate"},

      {"flow.t_end", "0.05", "final flow time"},
      {"flow.dt", "0.001", "macro step (0 = CFL bound, deterministic only)"},
      {"flow.stepper", "deterministic", "deterministic | stochastic | both"},
      {"flow.r", "16", "time slices per stochastic step"},
      {"flow.n", "2000", "samples per grid node per stochastic step"},
      {"flow.cfl_safety", "0.5", "safety factor on the RK4 stability bound"},
      {"flow.substep", "true", "split macro steps into admissible RK4 substeps"},
      {"flow.output_every", "1", "diagnostics cadence in macro steps"},
      {"flow.final_state", "", "optional CSV for the final u grid(s)"},

      {"holonomy.loop", "octant", "octant (unit-sphere octant triangle) | square"},
      {"holonomy.size", "0.1", "square half-width in chart coordinates"},
      {"holonomy.chart", "0", "square centre chart"},
      {"holonomy.x1", "0", "square centre x1"},
      {"holonomy.x2", "0", "square centre x2"},

      {"acceptance.seed", "20261015", "pinned seed of the acceptance suite"},
      {"acceptance.output", "acceptance.csv", "pass/fail CSV"},
      {"acceptance.archive", "acceptance_artifacts", "directory for per-criterion CSVs"},
      {"acceptance.skip", "", "comma-separated criterion numbers to skip"},
  };
  return keys;
}

/// Flat key = value configuration with [section] headers.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.default_value;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    RunConfig cfg;
    cfg.merge_text(in, path);
    return cfg;
  }

  void merge_text(std::istream& in, const std::string& origin = "<config>") {
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      set(key, trim(line.substr(eq + 1)));
    }
  }

  /// Applies "section.key=value".
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
    }
  }

  std::int64_t integer(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
    }
  }

  std::uint64_t count(const std::string& key) const {
    const std::int64_t v = integer(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be >= 0");
    return static_cast<std::uint64_t>(v);
  }

  std::uint64_t seed(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(s, &pos, 0);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a seed");
    }
  }

  bool boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
  }

  std::vector<std::size_t> count_list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        const long long v = std::stoll(item);
        if (v < 1) throw std::invalid_argument(item);
        out.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad entry '" + item + "'");
      }
    }
    return out;
  }

  /// One "key = value" per line, grouped by section; parseable by merge_text.
  std::string dump(const std::string& prefix = "") const {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_schema()) {
      const auto dot = k.name.find('.');
      const std::string sec = k.name.substr(0, dot);
      if (sec != section) {
        if (prefix.empty() && !section.empty()) os << "\n";
        os << prefix << "[" << sec << "]\n";
        section = sec;
      }
      os << prefix << k.name.substr(dot + 1) << " = " << values_.at(k.name) << "\n";
    }
    return os.str();
  }

  /// Current values annotated with the help text of each key.
  std::string annotated() const {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_schema()) {
      const auto dot = k.name.find('.');
      const std::string sec = k.name.substr(0, dot);
      if (sec != section) {
        if (!section.empty()) os << "\n";
        os << "[" << sec << "]\n";
        section = sec;
      }
      os << "# " << k.help << " (default: " << (k.default_value.empty() ? "none" : k.default_value)
         << ")\n"
         << k.name.substr(dot + 1) << " = " << values_.at(k.name) << "\n";
    }
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace stochflow
