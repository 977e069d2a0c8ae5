#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "v1g/feature_space.hpp"

using namespace v1g;

TEST(WrapAngle, Examples) {
  EXPECT_DOUBLE_EQ(wrap_angle(kTwoPi), 0.0);
  EXPECT_NEAR(wrap_angle(-kPi / 2), 3 * kPi / 2, 1e-15);
  // modular oracle: 7 - 2pi
  EXPECT_NEAR(wrap_angle(7.0), 0.7168146928204138, 1e-12);
  EXPECT_DOUBLE_EQ(wrap_angle(0.0), 0.0);
  EXPECT_LT(wrap_angle(-1e-18), kTwoPi);
}

TEST(WrapAngle, RejectsNonFinite) {
  EXPECT_THROW(wrap_angle(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
  EXPECT_THROW(wrap_angle(std::numeric_limits<double>::infinity()), std::invalid_argument);
}

TEST(WrapAngle, IdempotentAndPeriodic) {
  for (int i = -500; i <= 500; ++i) {
    const double th = 0.0173 * i * i - 3.1 * i;
    const double w = wrap_angle(th);
    ASSERT_GE(w, 0.0);
    ASSERT_LT(w, kTwoPi);
    EXPECT_EQ(wrap_angle(w), w);
    for (int k : {-3, -1, 1, 4}) {
      const double d = angular_distance(wrap_angle(th + kTwoPi * k), w, AngleMode::direction);
      EXPECT_LT(d, 1e-9);
    }
  }
}

TEST(AngularDistance, Examples) {
  EXPECT_NEAR(angular_distance(0.0, kPi, AngleMode::direction), kPi, 1e-15);
  EXPECT_NEAR(angular_distance(0.0, kPi, AngleMode::orientation), 0.0, 1e-15);
  EXPECT_NEAR(angular_distance(0.1, kTwoPi - 0.1, AngleMode::direction), 0.2, 1e-12);
  EXPECT_NEAR(angular_distance(0.0, kPi / 2, AngleMode::orientation), kPi / 2, 1e-15);
}

TEST(AngularDistance, IsAMetricAtGridResolution) {
  const int n = 72;
  std::vector<double> a;
  for (int i = 0; i < n; ++i) a.push_back(kTwoPi * i / n);
  for (AngleMode mode : {AngleMode::direction, AngleMode::orientation}) {
    const double bound = mode == AngleMode::direction ? kPi : kPi / 2;
    for (double x : a)
      for (double y : a) {
        const double dxy = angular_distance(x, y, mode);
        ASSERT_GE(dxy, 0.0);
        ASSERT_LE(dxy, bound + 1e-12);
        ASSERT_NEAR(dxy, angular_distance(y, x, mode), 1e-12);
        for (double z : a) ASSERT_LE(dxy, angular_distance(x, z, mode) + angular_distance(z, y, mode) + 1e-12);
      }
  }
}

TEST(FeaturePoint, InvariantsAndManifold) {
  const auto p = FeaturePoint::m3(1, 2, -kPi / 2);
  EXPECT_NEAR(p.theta(), 3 * kPi / 2, 1e-15);
  EXPECT_EQ(p.manifold(), Manifold::M3);
  EXPECT_EQ(FeaturePoint::m0(0, 0, 0, 1).manifold(), Manifold::M0);
  EXPECT_EQ(FeaturePoint::mt(0, 0, 3, 0, 1).manifold(), Manifold::MT);
  EXPECT_EQ(*FeaturePoint::m0(0, 0, 0, -1).v(), -1.0);  // signed normal speed
  EXPECT_THROW(FeaturePoint::m0(0, 0, 0, std::nan("")), std::invalid_argument);
  EXPECT_THROW(FeaturePoint::mt(0, 0, -1, 0, 1), std::invalid_argument);
}

TEST(Quantize, Examples) {
  GridSpec g = GridSpec::for_domain(Manifold::M3, 200, 200);
  g.theta = Axis{0.0, kPi / 18, 36};
  const CellIndex c = quantize(FeaturePoint::m3(10.4, 3.7, 1.2), g);
  EXPECT_EQ(c.x, 10);
  EXPECT_EQ(c.y, 3);
  EXPECT_EQ(c.theta, 6);
  EXPECT_EQ(quantize(FeaturePoint::m3(0, 0, kTwoPi - 1e-12), g).theta, 35);
  EXPECT_THROW(quantize(FeaturePoint::m3(200.0, 3, 0), g), std::out_of_range);
  EXPECT_THROW(quantize(FeaturePoint::m3(-0.1, 3, 0), g), std::out_of_range);
}

TEST(Quantize, VelocityAndTimeBounds) {
  const GridSpec g = GridSpec::for_domain(Manifold::MT, 50, 50, 8, 10.0);
  EXPECT_THROW(quantize(FeaturePoint::mt(1, 1, 9, 0, 1), g), std::out_of_range);
  EXPECT_THROW(quantize(FeaturePoint::mt(1, 1, 2, 0, 10.5), g), std::out_of_range);
  EXPECT_THROW(quantize(FeaturePoint::m3(1, 1, 0), g), std::invalid_argument);
  EXPECT_THROW(quantize(FeaturePoint::mt(1, 1, 2, 0, -10.5), g), std::out_of_range);
  EXPECT_EQ(quantize(FeaturePoint::mt(1, 1, 2, 0, 3.3), g).v, 26);
  EXPECT_EQ(quantize(FeaturePoint::mt(1, 1, 2, 0, -0.2), g).v, 19);
}

TEST(Quantize, CellCenterIsAFixedPoint) {
  GridSpec g;
  g.x = Axis{-5.5, 1.0, 11};
  g.y = Axis{-5.5, 1.0, 11};
  g.theta = Axis{-kPi / 36, kPi / 18, 36};
  g.v = Axis{0.0, 0.5, 6};
  g.t = Axis{-0.5, 1.0, 4};
  g.validate();
  for (int x = 0; x < g.x.count; x += 3)
    for (int y = 0; y < g.y.count; y += 2)
      for (int th = 0; th < g.theta.count; ++th)
        for (int v = 0; v < g.v->count; ++v)
          for (int t = 0; t < g.t->count; ++t) {
            const CellIndex c{x, y, t, th, v};
            ASSERT_EQ(quantize(cell_center(c, g), g), c);
            ASSERT_EQ(unpack(pack(c, g), g), c);
          }
}

TEST(GridSpec, ValidationAndJson) {
  GridSpec g = GridSpec::for_domain(Manifold::M0, 100, 80, 1, 6.0);
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(grid_from_json(to_json(g)), g);
  GridSpec bad = g;
  bad.theta = Axis{0.0, kTwoPi / 3, 3};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = g;
  bad.x.width = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Compatibility, DetectsSharedCell) {
  const GridSpec g = GridSpec::for_domain(Manifold::M3);
  std::vector<FeaturePoint> pts{FeaturePoint::m3(1.2, 1.2, 0.1), FeaturePoint::m3(5, 5, 0.1),
                                FeaturePoint::m3(1.7, 1.4, 0.15)};
  auto hit = find_collision(pts, g);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->first, 0u);
  EXPECT_EQ(hit->second, 2u);
  pts[2] = FeaturePoint::m3(1.7, 1.4, 1.0);  // different angular bin
  EXPECT_FALSE(find_collision(pts, g));
}
