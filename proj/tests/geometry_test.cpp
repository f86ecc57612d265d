#include "stabkit/geometry.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "support/test_util.hpp"

using stabkit::CameraPath;
using stabkit::Homography;
using stabkit::PerturbationRange;
using stabkit::Rng;
using stabkit::Vec2;
using testutil::Mat3;

namespace {

Homography random_h(Rng& rng) {
  return testutil::small_random_h(rng, 0.4, 0.15, 0.05);
}

}  // namespace

TEST(Apply, IdentityKeepsPoint) {
  const Vec2 p{0.37, -0.81};
  const Vec2 q = stabkit::apply(Homography::identity(), p);
  EXPECT_EQ(q.x, p.x);
  EXPECT_EQ(q.y, p.y);
}

TEST(Apply, PureTranslationShiftsPoint) {
  Homography g;
  g[2] = 0.25;
  const Vec2 q = stabkit::apply(g, {0.1, 0.2});
  EXPECT_DOUBLE_EQ(q.x, 0.35);
  EXPECT_DOUBLE_EQ(q.y, 0.2);
}

TEST(Apply, MatchesMatrixOracleOnGrid) {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const Homography g = random_h(rng);
    const Mat3 m = Mat3::from_h(g);
    for (double y = -1.0; y <= 1.0; y += 0.5)
      for (double x = -1.0; x <= 1.0; x += 0.5) {
        const Vec2 a = stabkit::apply(g, {x, y});
        const Vec2 b = m.apply({x, y});
        EXPECT_NEAR(a.x, b.x, 1e-13);
        EXPECT_NEAR(a.y, b.y, 1e-13);
      }
  }
}

TEST(Apply, DegenerateDenominatorThrows) {
  Homography g;
  g[6] = 1.0;  // denominator = x + 1 vanishes at x = -1
  EXPECT_THROW(stabkit::apply(g, {-1.0, 0.0}), stabkit::NumericError);
}

TEST(Compose, AgreesWithSequentialApplication) {
  Rng rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const Homography a = random_h(rng);
    const Homography b = random_h(rng);
    const Homography ab = stabkit::compose(a, b);
    const Vec2 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    const Vec2 expect = stabkit::apply(a, stabkit::apply(b, p));
    const Vec2 got = stabkit::apply(ab, p);
    EXPECT_NEAR(got.x, expect.x, 1e-12);
    EXPECT_NEAR(got.y, expect.y, 1e-12);
  }
}

TEST(Compose, WithInverseGivesIdentity) {
  Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const Homography g = random_h(rng);
    const Homography id = stabkit::compose(g, stabkit::invert(g));
    const Homography ref = Homography::identity();
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(id[i], ref[i], 1e-12);
  }
}

TEST(Invert, MatchesMatrixOracle) {
  Rng rng(104);
  for (int trial = 0; trial < 100; ++trial) {
    const Homography g = random_h(rng);
    const Homography gi = stabkit::invert(g);
    const Homography oracle = Mat3::from_h(g).inv().to_h();
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(gi[i], oracle[i], 1e-11);
  }
}

TEST(Invert, DoubleInversionRoundTrips) {
  Rng rng(105);
  for (int trial = 0; trial < 100; ++trial) {
    const Homography g = random_h(rng);
    const Homography gg = stabkit::invert(stabkit::invert(g));
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(gg[i], g[i], 1e-12);
  }
}

TEST(Invert, SingularThrows) {
  Homography g;
  g[0] = 0.0;
  g[1] = 0.0;
  g[2] = 0.0;  // first row zero
  EXPECT_THROW(stabkit::invert(g), stabkit::NumericError);
}

TEST(DltFit, RecoversPlantedHomographyFromFourPairs) {
  Rng rng(106);
  for (int trial = 0; trial < 100; ++trial) {
    const Homography truth = random_h(rng);
    std::vector<Vec2> src{{-0.7, -0.6}, {0.8, -0.5}, {0.6, 0.7}, {-0.5, 0.8}};
    for (Vec2& p : src) {
      p.x += rng.uniform(-0.1, 0.1);
      p.y += rng.uniform(-0.1, 0.1);
    }
    std::vector<Vec2> dst;
    for (const Vec2& p : src) dst.push_back(stabkit::apply(truth, p));
    const Homography fit = stabkit::dlt_fit(src, dst);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(fit[i], truth[i], 1e-9);
  }
}

TEST(DltFit, RecoversPlantedHomographyLeastSquares) {
  Rng rng(107);
  for (int trial = 0; trial < 50; ++trial) {
    const Homography truth = random_h(rng);
    std::vector<Vec2> src, dst;
    for (int i = 0; i < 40; ++i) {
      const Vec2 p{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
      src.push_back(p);
      dst.push_back(stabkit::apply(truth, p));
    }
    const Homography fit = stabkit::dlt_fit(src, dst);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(fit[i], truth[i], 1e-9);
  }
}

TEST(DltFit, InsufficientPairsThrows) {
  std::vector<Vec2> src{{0, 0}, {1, 0}, {0, 1}};
  std::vector<Vec2> dst = src;
  EXPECT_THROW(stabkit::dlt_fit(src, dst), stabkit::ConfigError);
}

TEST(DltFit, CollinearPointsThrow) {
  std::vector<Vec2> src{{-0.5, -0.5}, {0.0, 0.0}, {0.5, 0.5}, {0.9, 0.9}};
  std::vector<Vec2> dst = src;
  EXPECT_THROW(stabkit::dlt_fit(src, dst), stabkit::NumericError);
}

TEST(SamplePerturbation, StaysInsideDefaultBounds) {
  const PerturbationRange range = PerturbationRange::defaults();
  EXPECT_DOUBLE_EQ(range.lo[0], 0.9);
  EXPECT_DOUBLE_EQ(range.hi[0], 1.1);
  EXPECT_DOUBLE_EQ(range.lo[2], -0.5);
  EXPECT_DOUBLE_EQ(range.hi[2], 0.5);
  EXPECT_DOUBLE_EQ(range.lo[7], -0.1);
  EXPECT_DOUBLE_EQ(range.hi[7], 0.1);
  Rng rng(108);
  for (int trial = 0; trial < 1000; ++trial) {
    const Homography g = stabkit::sample_perturbation(range, rng);
    for (int i = 0; i < 8; ++i) {
      EXPECT_GE(g[i], range.lo[i]);
      EXPECT_LE(g[i], range.hi[i]);
    }
  }
}

TEST(SamplePerturbation, DeterministicPerSeed) {
  const PerturbationRange range = PerturbationRange::defaults();
  Rng a(42), b(42);
  for (int trial = 0; trial < 32; ++trial) {
    const Homography ga = stabkit::sample_perturbation(range, a);
    const Homography gb = stabkit::sample_perturbation(range, b);
    EXPECT_TRUE(ga == gb);
  }
}

TEST(AccumulatePath, EmptyStepsGiveIdentityOnly) {
  const CameraPath path = stabkit::accumulate_path({});
  ASSERT_EQ(path.size(), 1u);
  EXPECT_TRUE(path[0] == Homography::identity());
}

TEST(AccumulatePath, MatchesMatrixOracleProduct) {
  Rng rng(109);
  std::vector<Homography> steps;
  for (int i = 0; i < 24; ++i)
    steps.push_back(testutil::small_random_h(rng, 0.05, 0.02, 0.005));
  const CameraPath path = stabkit::accumulate_path(steps);
  ASSERT_EQ(path.size(), steps.size() + 1);
  Mat3 prod = Mat3::identity();
  for (std::size_t t = 0; t < steps.size(); ++t) {
    prod = prod.mul(Mat3::from_h(steps[t]));
    const Homography expect = prod.to_h();
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(path[t + 1][i], expect[i], 1e-10);
  }
}

TEST(Decompose, IdentityIsNeutral) {
  const auto d = stabkit::decompose(Homography::identity());
  EXPECT_DOUBLE_EQ(d.scale, 1.0);
  EXPECT_DOUBLE_EQ(d.rotation_angle, 0.0);
  EXPECT_DOUBLE_EQ(d.sigma1, 1.0);
  EXPECT_DOUBLE_EQ(d.sigma2, 1.0);
  EXPECT_DOUBLE_EQ(d.translation.x, 0.0);
}

TEST(Decompose, PureRotationRecoversAngle) {
  for (double theta : {-1.2, -0.3, 0.2, 0.9}) {
    Homography g;
    g[0] = std::cos(theta);
    g[1] = -std::sin(theta);
    g[3] = std::sin(theta);
    g[4] = std::cos(theta);
    const auto d = stabkit::decompose(g);
    EXPECT_NEAR(d.rotation_angle, theta, 1e-12);
    EXPECT_NEAR(d.scale, 1.0, 1e-12);
    EXPECT_NEAR(d.sigma1, 1.0, 1e-12);
    EXPECT_NEAR(d.sigma2, 1.0, 1e-12);
  }
}

TEST(Decompose, AnisotropicScaleSplitsSingularValues) {
  Homography g;
  g[0] = 2.0;
  g[4] = 0.5;
  const auto d = stabkit::decompose(g);
  EXPECT_NEAR(d.scale, 1.0, 1e-12);
  EXPECT_NEAR(d.sigma1, 2.0, 1e-12);
  EXPECT_NEAR(d.sigma2, 0.5, 1e-12);
}

TEST(Decompose, UniformScaleAndTranslation) {
  Homography g;
  g[0] = 0.9;
  g[4] = 0.9;
  g[2] = 0.1;
  g[5] = -0.2;
  const auto d = stabkit::decompose(g);
  EXPECT_NEAR(d.scale, 0.9, 1e-12);
  EXPECT_DOUBLE_EQ(d.translation.x, 0.1);
  EXPECT_DOUBLE_EQ(d.translation.y, -0.2);
}

TEST(Decompose, SimilarityTransformMatchesParts) {
  Rng rng(110);
  for (int trial = 0; trial < 100; ++trial) {
    const double s = rng.uniform(0.5, 1.5);
    const double theta = rng.uniform(-1.0, 1.0);
    Homography g;
    g[0] = s * std::cos(theta);
    g[1] = -s * std::sin(theta);
    g[3] = s * std::sin(theta);
    g[4] = s * std::cos(theta);
    g[2] = rng.uniform(-0.5, 0.5);
    g[5] = rng.uniform(-0.5, 0.5);
    const auto d = stabkit::decompose(g);
    EXPECT_NEAR(d.scale, s, 1e-12);
    EXPECT_NEAR(d.rotation_angle, theta, 1e-12);
    EXPECT_NEAR(d.sigma1, s, 1e-12);
    EXPECT_NEAR(d.sigma2, s, 1e-12);
  }
}
