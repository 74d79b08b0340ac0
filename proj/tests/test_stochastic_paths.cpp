#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "stochflow/heat_semigroup.hpp"
#include "stochflow/stochastic_paths.hpp"

using namespace stochflow;

namespace {

GeodesicPath flat_path(std::vector<double> lengths, std::vector<double> steps) {
  GeodesicPath p;
  p.partition = Partition(std::move(steps));
  p.step_lengths = std::move(lengths);
  p.curvatures.assign(p.step_lengths.size(), 0.0);
  return p;
}

ConformalTorus wavy_torus() {
  const std::size_t n = 16;
  std::vector<double> u(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      u[i * n + j] = 0.1 * std::sin(2 * std::numbers::pi * i / double(n)) *
                     std::sin(2 * std::numbers::pi * j / double(n));
  return ConformalTorus(u, n, n, 1.0, 1.0);
}

}  // namespace

TEST(Partition, UniformExamples) {
  const Partition p = uniform_partition(1.0, 4);
  ASSERT_EQ(p.size(), 4u);
  for (double t : p.steps()) EXPECT_EQ(t, 0.25);
  EXPECT_EQ(p.total(), 1.0);
  const Partition q = uniform_partition(0.5, 1);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q.steps()[0], 0.5);
}

TEST(Partition, MeshAndTotalForAnyUniformFamily) {
  std::mt19937_64 eng(1);
  std::uniform_real_distribution<double> T(1e-3, 10.0);
  for (int k = 0; k < 100; ++k) {
    const double t = T(eng);
    const std::size_t r = 1 + static_cast<std::size_t>(k * 7 % 97);
    const Partition p = uniform_partition(t, r);
    EXPECT_EQ(p.mesh(), t / r);
    EXPECT_EQ(p.total(), t);
    EXPECT_EQ(p.sigma(0), 0.0);
    EXPECT_EQ(p.sigma(r), t);
  }
}

TEST(Partition, CompensatedTotal) {
  const Partition p(std::vector<double>(10, 0.1));
  EXPECT_EQ(p.total(), 1.0);
  EXPECT_NEAR(p.sigma(3), 0.3, 1e-16);
}

TEST(Partition, RejectsBadSteps) {
  EXPECT_THROW(Partition(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(Partition(std::vector<double>{0.1, 0.0}), std::invalid_argument);
  EXPECT_THROW(Partition(std::vector<double>{0.1, -1.0}), std::invalid_argument);
  EXPECT_THROW(uniform_partition(0.0, 3), std::invalid_argument);
  EXPECT_THROW(uniform_partition(1.0, 0), std::invalid_argument);
}

TEST(SamplePath, FlatTorusHasZeroLogWeight) {
  const Manifold m = FlatTorus(1, 1);
  const Partition P = uniform_partition(0.3, 12);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const GeodesicPath path = sample_path(m, Point{0, 0.2, 0.9}, P, RngStream{42, s});
    EXPECT_EQ(path.log_weight, 0.0);
    for (const auto& x : path.vertices) {
      EXPECT_GE(x.x1, 0.0);
      EXPECT_LT(x.x1, 1.0);
      EXPECT_GE(x.x2, 0.0);
      EXPECT_LT(x.x2, 1.0);
    }
  }
}

TEST(SamplePath, VertexCountIsStepsPlusOne) {
  const std::vector<Manifold> catalog = {FlatPlane{}, FlatTorus(2, 1), RoundSphere(1.0), wavy_torus()};
  for (const auto& m : catalog)
    for (std::size_t r : {1u, 5u, 17u}) {
      const GeodesicPath p = sample_path(m, Point{0, 0.1, 0.2}, uniform_partition(0.2, r), RngStream{1, r});
      EXPECT_EQ(p.vertices.size(), r + 1);
      EXPECT_EQ(p.tangents.size(), r);
      EXPECT_EQ(p.step_lengths.size(), r);
      EXPECT_TRUE(std::isfinite(p.log_weight));
    }
}

TEST(SamplePath, VerticesFollowExpMap) {
  const RoundSphere s(1.0);
  const GeodesicPath p = sample_path(s, Point{0, 0.3, -0.2}, uniform_partition(0.5, 8), RngStream{7, 0});
  for (std::size_t j = 0; j < p.tangents.size(); ++j) {
    const Point e = exp_map(s, p.tangents[j]);
    const Point v = to_chart(s, p.vertices[j + 1], e.chart);
    EXPECT_NEAR(e.x1, v.x1, 1e-12);
    EXPECT_NEAR(e.x2, v.x2, 1e-12);
    EXPECT_NEAR(metric_norm(s, p.tangents[j]), p.step_lengths[j], 1e-12);
  }
}

TEST(SamplePath, BitIdenticalForSameStream) {
  const Manifold m = wavy_torus();
  const Partition P = uniform_partition(0.1, 10);
  const GeodesicPath a = sample_path(m, Point{0, 0.4, 0.4}, P, RngStream{99, 3});
  const GeodesicPath b = sample_path(m, Point{0, 0.4, 0.4}, P, RngStream{99, 3});
  const GeodesicPath c = sample_path(m, Point{0, 0.4, 0.4}, P, RngStream{99, 4});
  ASSERT_EQ(a.vertices.size(), b.vertices.size());
  for (std::size_t j = 0; j < a.vertices.size(); ++j) {
    EXPECT_EQ(a.vertices[j].x1, b.vertices[j].x1);
    EXPECT_EQ(a.vertices[j].x2, b.vertices[j].x2);
  }
  EXPECT_EQ(a.log_weight, b.log_weight);
  EXPECT_NE(a.vertices.back().x1, c.vertices.back().x1);
}

TEST(SamplePath, SphereSingleStepMeanLogWeightNearZero) {
  const RoundSphere s(1.0);
  const Partition P = uniform_partition(0.01, 1);
  auto eng = RngStream{2024, 0}.engine();
  MomentAccumulator acc;
  for (int i = 0; i < 1000000; ++i) acc.add(walk(s, Point{0, 0.2, 0.1}, P, eng).log_weight);
  EXPECT_LT(std::abs(acc.mean), 1e-4);
}

TEST(SamplePath, SphereMeanLogWeightDecaysQuadratically) {
  // E[log theta + t K / 3] = -2 t^2 / 45 + O(t^3) for unit curvature.
  const RoundSphere s(1.0);
  std::vector<double> lt, lm;
  for (double t : {0.04, 0.02, 0.01}) {
    auto eng = RngStream{77, 1}.engine();
    MomentAccumulator acc;
    for (int i = 0; i < 4000000; ++i)
      acc.add(walk(s, Point{0, 0, 0}, uniform_partition(t, 1), eng).log_weight);
    EXPECT_LT(acc.mean, 0.0);
    lt.push_back(std::log(t));
    lm.push_back(std::log(std::abs(acc.mean)));
  }
  const double mx = (lt[0] + lt[1] + lt[2]) / 3, my = (lm[0] + lm[1] + lm[2]) / 3;
  double sxy = 0, sxx = 0;
  for (int k = 0; k < 3; ++k) {
    sxy += (lt[k] - mx) * (lm[k] - my);
    sxx += (lt[k] - mx) * (lt[k] - mx);
  }
  EXPECT_NEAR(sxy / sxx, 2.0, 0.3);
}

TEST(SamplePath, FlatStepLaw) {
  const FlatTorus t(1, 1);
  const double dt = 1e-3;
  const Partition P = uniform_partition(dt, 1);
  MomentAccumulator a, b;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const GeodesicPath p = sample_path(t, Point{0, 0.5, 0.5}, P, RngStream{5, static_cast<std::uint64_t>(i)});
    a.add(p.tangents[0].v1 * p.tangents[0].v1);
    b.add(p.tangents[0].v2 * p.tangents[0].v2);
  }
  EXPECT_LE(std::abs(a.mean - dt), 3 * a.std_error());
  EXPECT_LE(std::abs(b.mean - dt), 3 * b.std_error());
}

TEST(SamplePath, GuardResamplesAndAborts) {
  // A tiny torus with large steps keeps violating the guard radius.
  const ConformalTorus tiny(std::vector<double>(4, 0.0), 2, 2, 1e-3, 1e-3);
  PathOptions opt;
  opt.max_resamples = 5;
  EXPECT_THROW(sample_path(tiny, Point{0, 0, 0}, uniform_partition(1.0, 1), RngStream{1, 1}, opt),
               PathError);

  const ConformalTorus small(std::vector<double>(4, 0.0), 2, 2, 0.5, 0.5);
  std::size_t resamples = 0;
  for (std::uint64_t s = 0; s < 200; ++s)
    resamples += sample_path(small, Point{0, 0, 0}, uniform_partition(0.02, 1), RngStream{3, s}).resamples;
  EXPECT_GT(resamples, 0u);
}

TEST(Energy, Examples) {
  EXPECT_EQ(energy(flat_path({1.0}, {1.0})), 1.0);
  EXPECT_EQ(energy(flat_path({0.5, 0.5}, {0.5, 0.5})), 1.0);
  const double e = energy(flat_path({0.3, 0.7, 0.2}, {0.1, 0.4, 0.3}));
  EXPECT_NEAR(energy(flat_path({0.6, 1.4, 0.4}, {0.2, 0.8, 0.6})), 2 * e, 1e-14);
}

TEST(Energy, NonNegativeAndZeroOnlyForZeroSteps) {
  const Manifold m = RoundSphere(1.0);
  for (std::uint64_t s = 0; s < 30; ++s) {
    const GeodesicPath p = sample_path(m, Point{0, 0, 0}, uniform_partition(0.3, 6), RngStream{8, s});
    EXPECT_GT(energy(p), 0.0);
  }
  EXPECT_EQ(energy(flat_path({0.0, 0.0}, {0.5, 0.5})), 0.0);
}

TEST(LFunctional, FlatIsHalfEnergy) {
  const Manifold m = FlatTorus(1, 1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GeodesicPath p = sample_path(m, Point{0, 0.1, 0.1}, uniform_partition(0.4, 5), RngStream{4, s});
    EXPECT_EQ(l_functional(p), 0.5 * energy(p));
  }
  EXPECT_EQ(l_functional(flat_path({0.0, 0.0, 0.0}, {0.1, 0.1, 0.1})), 0.0);
}

TEST(LFunctional, SphereSubtractsLengthOverThree) {
  const Manifold m = RoundSphere(1.0);
  const Partition P = uniform_partition(0.6, 9);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GeodesicPath p = sample_path(m, Point{0, 0.4, 0.1}, P, RngStream{6, s});
    EXPECT_NEAR(l_functional(p), 0.5 * energy(p) - P.total() / 3.0, 1e-14);
  }
}

TEST(RngStream, DistinctStreamsAndChildren) {
  const RngStream a{1, 0}, b{1, 1}, c{2, 0};
  EXPECT_NE(a.engine()(), b.engine()());
  EXPECT_NE(a.engine()(), c.engine()());
  const RngStream a2{1, 0};
  EXPECT_EQ(a.engine()(), a2.engine()());
  EXPECT_NE(a.child(0).engine()(), a.engine()());
}
