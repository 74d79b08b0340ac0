// Runs the acceptance suite once, then reports one test per criterion.
// STOCHFLOW_ACCEPTANCE_CONFIG may name a config file (e.g. to set
// acceptance.skip during development).

#include <gtest/gtest.h>

#include <cstdlib>
#include <iostream>
#include <vector>

#include "stochflow/acceptance.hpp"

using namespace stochflow;

namespace {

std::vector<acceptance::CriterionResult> g_results;

class Criterion : public ::testing::TestWithParam<int> {};

TEST_P(Criterion, Passes) {
  const int id = GetParam();
  ASSERT_EQ(g_results.size(), static_cast<std::size_t>(acceptance::kCriteria));
  const auto& r = g_results[static_cast<std::size_t>(id - 1)];
  ASSERT_EQ(r.id, id);
  std::cout << acceptance::summary_line(r) << "\n";
  if (r.skipped) GTEST_SKIP() << "criterion " << id << " skipped by configuration";
  EXPECT_TRUE(r.passed) << "criterion " << id << " (" << r.name << "): " << r.detail;
}

INSTANTIATE_TEST_SUITE_P(Acceptance, Criterion, ::testing::Range(1, acceptance::kCriteria + 1),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return "Criterion" + std::to_string(info.param);
                         });

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  RunConfig cfg;
  const int rc = harness::guarded(
      [&] {
        if (const char* path = std::getenv("STOCHFLOW_ACCEPTANCE_CONFIG"); path && *path)
          cfg = RunConfig::from_file(path);
        const auto ctx = acceptance::make_context(cfg, &std::cout);
        g_results = acceptance::run_suite(ctx, std::cout);
        acceptance::write_results(harness::output_path(cfg.str("acceptance.output")), ctx,
                                  g_results);
        return 0;
      },
      std::cerr);
  if (rc != 0) return rc;
  return RUN_ALL_TESTS();
}
