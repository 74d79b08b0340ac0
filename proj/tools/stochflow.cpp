// Command-line driver for the stochflow experiments.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stochflow/acceptance.hpp"
#include "stochflow/harness.hpp"

namespace {

const char* kExperiments =
    "semigroup | refinement | flow | flow-compare | holonomy | list-oracles | print-config | "
    "acceptance";

}  // namespace

int main(int argc, char** argv) {
  using namespace stochflow;

  CLI::App app{"Monte Carlo path integrals for heat semigroups and 2D Ricci flow"};
  app.set_version_flag("--version", std::string(harness::kVersion));

  std::string experiment;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output, dump_paths, seed, workers;

  app.add_option("experiment", experiment, kExperiments);
  app.add_option("-c,--config", config_path, "key = value config file with [sections]");
  app.add_option("-s,--set", overrides, "override one key, e.g. -s flow.dt=0.002")
      ->type_name("KEY=VALUE");
  app.add_option("-o,--output", output, "main CSV output (run.output)");
  app.add_option("--seed", seed, "master seed (run.seed)");
  app.add_option("--workers", workers, "worker threads, 0 = all cores (run.workers)");
  app.add_option("--dump-paths", dump_paths, "write sampled paths to this CSV (run.dump_paths)");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg;
  const int rc = harness::guarded(
      [&] {
        if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
        for (const auto& kv : overrides) cfg.set_assignment(kv);
        if (!output.empty()) cfg.set("run.output", output);
        if (!seed.empty()) cfg.set("run.seed", seed);
        if (!workers.empty()) cfg.set("run.workers", workers);
        if (!dump_paths.empty()) cfg.set("run.dump_paths", dump_paths);
        if (!experiment.empty()) cfg.set("run.experiment", experiment);
        return 0;
      },
      std::cerr);
  if (rc != 0) return rc;

  if (cfg.str("run.experiment") == "acceptance")
    return harness::guarded([&] { return acceptance::run_acceptance(cfg, std::cout); }, std::cerr);
  return harness::run(cfg);
}
