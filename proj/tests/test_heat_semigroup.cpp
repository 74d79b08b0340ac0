#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "stochflow/heat_semigroup.hpp"

using namespace stochflow;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::uint64_t kSeed = 20261015;

SemigroupProblem sphere_zonal_problem(double t = 0.5) {
  SemigroupProblem p;
  p.manifold = RoundSphere(1.0);
  p.function = TestFunction::parse("zonal_1");
  p.t = t;
  return p;
}

}  // namespace

// Z normalization

TEST(ZedNormalization, Examples) {
  EXPECT_NEAR(zed_normalization(Partition({1.0}), 2), 4 * kPi, 1e-12);
  EXPECT_NEAR(zed_normalization(Partition({0.5, 0.5}), 2), 4 * kPi * kPi, 1e-11);
  EXPECT_EQ(zed_normalization(Partition({0.3, 0.2, 0.9}), 0), 1.0);
}

TEST(ZedNormalization, LogSpaceAvoidsOverflow) {
  const Partition P = uniform_partition(1e4, 2000);
  const double lz = log_zed_normalization(P, 4);
  EXPECT_TRUE(std::isfinite(lz));
  EXPECT_NEAR(lz, 2.0 * 2000 * std::log(4 * kPi * 5.0), 1e-8 * lz);
  EXPECT_THROW(log_zed_normalization(P, -1), std::invalid_argument);
}

TEST(ZedNormalization, LiteralProduct) {
  const Partition P({0.1, 0.25, 0.65});
  double prod = 1.0;
  for (double t : P.steps()) prod *= 4 * kPi * t;
  EXPECT_NEAR(zed_normalization(P, 2), prod, 1e-12 * prod);
  EXPECT_NEAR(zed_normalization(P, 3), std::pow(prod, 1.5), 1e-12 * std::pow(prod, 1.5));
}

// estimate_semigroup

TEST(EstimateSemigroup, PlaneGaussian) {
  SemigroupProblem p;
  p.manifold = FlatPlane{};
  p.function = TestFunction::parse("gaussian");
  p.t = 1.0;
  const auto e = estimate_semigroup(p, uniform_partition(1.0, 1), 100000, kSeed);
  EXPECT_NEAR(e.mean, 0.5, 3 * e.std_error);
  EXPECT_LT(e.std_error, 0.005);
  EXPECT_EQ(e.n_samples, 100000u);
  EXPECT_EQ(e.r_steps, 1u);
}

TEST(EstimateSemigroup, ConstantWithPotentialIsExactOnFlatManifolds) {
  for (const Manifold& m : {Manifold(FlatPlane{}), Manifold(FlatTorus(1.0, 2.0))}) {
    SemigroupProblem p;
    p.manifold = m;
    p.t = 0.7;
    p.potential = 0.4;
    const auto e = estimate_semigroup(p, uniform_partition(0.7, 5), 5000, kSeed);
    EXPECT_DOUBLE_EQ(e.mean, std::exp(-0.4 * 0.7));
    EXPECT_EQ(e.std_error, 0.0);
  }
}

TEST(EstimateSemigroup, FlatWeightsAreOneInTheDump) {
  SemigroupProblem p;
  p.manifold = FlatTorus(1.0, 1.0);
  p.function = TestFunction::parse("cos_x");
  p.t = 0.05;
  std::vector<PathDumpRow> dump;
  EstimatorOptions opt;
  opt.dump = &dump;
  opt.dump_samples = 20;
  estimate_semigroup(p, uniform_partition(0.05, 8), 100, kSeed, opt);
  ASSERT_EQ(dump.size(), 20u * 9u);
  for (const auto& row : dump) EXPECT_EQ(row.log_weight, 0.0);
}

TEST(EstimateSemigroup, SphereZonalAtNorthPole) {
  const auto p = sphere_zonal_problem();
  const auto e = estimate_semigroup(p, uniform_partition(0.5, 64), 100000, kSeed);
  EXPECT_NEAR(std::exp(-0.5), 0.6065, 5e-5);
  EXPECT_NEAR(e.mean, std::exp(-0.5), 3 * e.std_error);
}

TEST(EstimateSemigroup, ZonalInSouthChart) {
  // The south pole is the origin of chart 1, where cos(theta) = -1.
  auto p = sphere_zonal_problem();
  p.x = Point{1, 0, 0};
  EXPECT_NEAR(*oracle_value(p), -std::exp(-0.5), 1e-15);
  const auto e = estimate_semigroup(p, uniform_partition(0.5, 32), 40000, kSeed);
  EXPECT_NEAR(e.mean, -std::exp(-0.5), 3 * e.std_error + 0.005);
}

TEST(EstimateSemigroup, ConstantCalibrationOnSphere) {
  SemigroupProblem p;
  p.manifold = RoundSphere(1.0);
  p.t = 0.5;
  const auto e = estimate_semigroup(p, uniform_partition(0.5, 64), 100000, kSeed);
  EXPECT_LT(std::abs(e.mean - 1.0), std::max(5 * e.std_error, 1e-12));
}

TEST(EstimateSemigroup, WorkerCountDoesNotChangeTheResult) {
  const auto p = sphere_zonal_problem();
  const Partition P = uniform_partition(0.5, 16);
  EstimatorOptions one, four;
  one.workers = 1;
  four.workers = 4;
  one.batch_size = four.batch_size = 1000;
  const auto a = estimate_semigroup(p, P, 9000, kSeed, one);
  const auto b = estimate_semigroup(p, P, 9000, kSeed, four);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(EstimateSemigroup, DeterministicForFixedSeed) {
  const auto p = sphere_zonal_problem();
  const Partition P = uniform_partition(0.5, 8);
  const auto a = estimate_semigroup(p, P, 3000, 7);
  const auto b = estimate_semigroup(p, P, 3000, 7);
  const auto c = estimate_semigroup(p, P, 3000, 8);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_NE(a.mean, c.mean);
}

TEST(EstimateSemigroup, StdErrorHalvesWhenSamplesQuadruple) {
  SemigroupProblem p;
  p.manifold = FlatPlane{};
  p.function = TestFunction::parse("gaussian");
  p.t = 1.0;
  const Partition P = uniform_partition(1.0, 1);
  const auto a = estimate_semigroup(p, P, 20000, kSeed);
  const auto b = estimate_semigroup(p, P, 80000, kSeed + 1);
  EXPECT_NEAR(b.std_error / a.std_error, 0.5, 0.1);
}

TEST(EstimateSemigroup, NonFiniteWeightIsANumericalFault) {
  SemigroupProblem p;
  p.manifold = FlatPlane{};
  p.t = 1.0;
  p.potential = -1e6;
  EXPECT_THROW(estimate_semigroup(p, uniform_partition(1.0, 2), 10, kSeed), NumericalFault);
}

TEST(EstimateSemigroup, RejectsInvalidInput) {
  const auto p = sphere_zonal_problem();
  EXPECT_THROW(estimate_semigroup(p, uniform_partition(0.4, 4), 100, kSeed),
               std::invalid_argument);
  EXPECT_THROW(estimate_semigroup(p, uniform_partition(0.5, 4), 1, kSeed), std::invalid_argument);
  auto q = p;
  q.function = TestFunction::parse("gaussian");
  EXPECT_THROW(estimate_semigroup(q, uniform_partition(0.5, 4), 100, kSeed),
               std::invalid_argument);
}

// Moments

TEST(MomentAccumulator, MatchesTwoPassMoments) {
  std::mt19937_64 eng(5);
  std::normal_distribution<double> N(3.0, 2.0);
  std::vector<double> xs(10000);
  for (auto& x : xs) x = N(eng);
  MomentAccumulator acc;
  for (double x : xs) acc.add(x);
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(acc.mean, mean, 1e-12);
  EXPECT_NEAR(acc.variance(), ss / (xs.size() - 1), 1e-9);
}

TEST(MomentAccumulator, MergeOrderIndependence) {
  std::mt19937_64 eng(6);
  std::exponential_distribution<double> E(1.5);
  std::vector<std::pair<std::uint64_t, MomentAccumulator>> batches;
  MomentAccumulator whole;
  for (std::uint64_t b = 0; b < 12; ++b) {
    MomentAccumulator acc;
    for (int i = 0; i < 100 + 37 * static_cast<int>(b); ++i) {
      const double x = E(eng);
      acc.add(x);
      whole.add(x);
    }
    batches.emplace_back(b, acc);
  }
  const auto ref = merge_batches(batches);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(batches.begin(), batches.end(), eng);
    const auto m = merge_batches(batches);
    EXPECT_EQ(m.n, ref.n);
    EXPECT_EQ(m.mean, ref.mean);
    EXPECT_EQ(m.m2, ref.m2);
  }
  EXPECT_EQ(ref.n, whole.n);
  EXPECT_NEAR(ref.mean, whole.mean, 1e-13);
  EXPECT_NEAR(ref.std_error(), whole.std_error(), 1e-13);
}

TEST(MomentAccumulator, EmptyAndSingle) {
  MomentAccumulator a;
  EXPECT_EQ(a.std_error(), 0.0);
  a.add(2.5);
  EXPECT_EQ(a.mean, 2.5);
  EXPECT_EQ(a.std_error(), 0.0);
  MomentAccumulator b;
  b.merge(a);
  EXPECT_EQ(b.mean, 2.5);
  EXPECT_EQ(b.n, 1u);
}

// refinement_study

TEST(RefinementStudy, FlatTorusBiasIsStatisticallyZero) {
  SemigroupProblem p;
  p.manifold = FlatTorus(1.0, 1.0);
  p.function = TestFunction::parse("cos_x");
  p.t = 0.05;
  const auto rows = refinement_study(p, {1, 4, 16}, 20000, kSeed);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_TRUE(r.bias.has_value());
    EXPECT_LE(std::abs(*r.bias), 3 * r.estimate.std_error) << "r = " << r.r;
  }
}

TEST(RefinementStudy, SphereBiasDecreasesWithMesh) {
  const auto rows = refinement_study(sphere_zonal_problem(), {8, 64}, 400000, kSeed);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].mesh, 0.5 / 8);
  EXPECT_GT(std::abs(*rows[0].bias), std::abs(*rows[1].bias));
}

TEST(RefinementStudy, SingleEntryGivesOneRow) {
  SemigroupProblem p;
  p.manifold = FlatPlane{};
  p.function = TestFunction::parse("gaussian");
  const auto rows = refinement_study(p, {3}, 100, kSeed);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].r, 3u);
  EXPECT_TRUE(std::isnan(bias_slope(rows)));
}

TEST(RefinementStudy, UnregisteredPairsHaveNoBias) {
  SemigroupProblem p;
  p.manifold = ConformalTorus(std::vector<double>(16 * 16, 0.0), 16, 16, 1.0, 1.0);
  p.function = TestFunction::parse("conformal_u");
  p.t = 0.1;
  const auto rows = refinement_study(p, {2}, 100, kSeed);
  EXPECT_FALSE(rows[0].oracle.has_value());
  EXPECT_FALSE(rows[0].bias.has_value());
}

TEST(RefinementStudy, RejectsNonIncreasingList) {
  EXPECT_THROW(refinement_study(sphere_zonal_problem(), {8, 8}, 100, kSeed),
               std::invalid_argument);
  EXPECT_THROW(refinement_study(sphere_zonal_problem(), {}, 100, kSeed), std::invalid_argument);
}

TEST(BiasSlope, RecoversPowerLaw) {
  std::vector<RefinementRow> rows;
  for (std::size_t r : {4, 8, 16, 32}) {
    RefinementRow row;
    row.r = r;
    row.mesh = 1.0 / r;
    row.bias = -0.3 * row.mesh;
    rows.push_back(row);
  }
  EXPECT_NEAR(bias_slope(rows), 1.0, 1e-12);
}

// Test functions and oracles

TEST(TestFunction, ParseAndName) {
  for (const char* s : {"constant", "gaussian", "cos_x", "cos_y:3", "zonal_2", "conformal_u"})
    EXPECT_EQ(TestFunction::parse(s).name(), s);
  EXPECT_EQ(TestFunction::parse("cos_x:1").name(), "cos_x");
  EXPECT_THROW(TestFunction::parse("sin_x"), std::invalid_argument);
  EXPECT_THROW(TestFunction::parse("zonal_-1"), std::invalid_argument);
}

TEST(TestFunction, DefinedOnlyWhereRegistered) {
  EXPECT_NO_THROW(check_defined(FlatPlane{}, TestFunction::parse("gaussian")));
  EXPECT_THROW(check_defined(RoundSphere(1.0), TestFunction::parse("gaussian")),
               std::invalid_argument);
  EXPECT_THROW(check_defined(FlatPlane{}, TestFunction::parse("cos_x")), std::invalid_argument);
  EXPECT_THROW(check_defined(FlatTorus(1, 1), TestFunction::parse("zonal_1")),
               std::invalid_argument);
  EXPECT_NO_THROW(check_defined(RoundSphere(2.0), TestFunction::parse("constant")));
}

TEST(Oracle, RegistryValues) {
  SemigroupProblem p;
  p.manifold = FlatTorus(2.0, 1.0);
  p.function = TestFunction::parse("cos_x:2");
  p.t = 0.3;
  p.potential = 0.5;
  p.x = Point{0, 0.25, 0.0};
  const double expect =
      std::exp(-0.15) * std::exp(-0.3 * std::pow(2 * kPi * 2 / 2.0, 2) / 2) * std::cos(kPi / 2);
  EXPECT_NEAR(*oracle_value(p), expect, 1e-15);
  p.manifold = FlatPlane{};
  EXPECT_FALSE(oracle_value(p).has_value());
  EXPECT_EQ(registered_oracles().size(), 5u);
}
