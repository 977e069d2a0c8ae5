#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "v1g/stimuli.hpp"

using namespace v1g;

namespace {

std::array<double, 2> x1(double th) { return {-std::sin(th), std::cos(th)}; }

double cyclic(double a) {
  a = std::fmod(a, kTwoPi);
  if (a > kPi) a -= kTwoPi;
  if (a < -kPi) a += kTwoPi;
  return a;
}

std::filesystem::path tmp(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / "v1g_stimuli_test";
  std::filesystem::create_directories(d);
  return d / name;
}

}  // namespace

TEST(Clouds, CountsLabelsAndDeterminism) {
  const Domain d{};
  const auto clouds = triangle_clouds(d, 60.0, 40);
  const auto a = gen_gaussian_clouds(clouds, 5.0, 30, d, 7);
  const auto b = gen_gaussian_clouds(clouds, 5.0, 30, d, 7);
  const auto c = gen_gaussian_clouds(clouds, 5.0, 30, d, 8);
  ASSERT_EQ(a.size(), 150u);
  EXPECT_EQ(a.units(), 3);
  EXPECT_EQ(std::count(a.truth.begin(), a.truth.end(), 0), 30);
  EXPECT_EQ(dataset_csv(a), dataset_csv(b));
  EXPECT_NE(dataset_csv(a), dataset_csv(c));
  // pairwise centre distance
  EXPECT_NEAR(std::hypot(clouds[0].cx - clouds[1].cx, clouds[0].cy - clouds[1].cy), 60.0, 1e-9);
  // sample means near the centres
  for (int u = 1; u <= 3; ++u) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.truth[i] == u) mx += a.points[i].x() / 40, my += a.points[i].y() / 40;
    EXPECT_NEAR(mx, clouds[u - 1].cx, 3.0);
    EXPECT_NEAR(my, clouds[u - 1].cy, 3.0);
  }
}

TEST(Clouds, ZeroSpreadCoincides) {
  const auto clouds = triangle_clouds({}, 60.0, 5);
  const auto ds = gen_gaussian_clouds(clouds, 0.0, 0, {}, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = clouds[ds.truth[i] - 1];
    EXPECT_EQ(ds.points[i].x(), c.cx);
    EXPECT_EQ(ds.points[i].y(), c.cy);
  }
}

TEST(Arc, SamplesLieOnCircleWithTangentX1) {
  const ArcSpec a{0.02, 120.0, 100.0, 90.0, 0.7, 25};
  const double r = 1.0 / a.curvature;
  // centre: midpoint minus r times the left normal of the tangent
  const auto t = x1(a.theta_mid);
  const double ccx = a.cx - r * t[1], ccy = a.cy + r * t[0];
  const double step = a.length / (a.samples - 1);
  for (int i = 0; i < a.samples; ++i) {
    const double s = step * i;
    const auto p = a.point_at(s);
    EXPECT_NEAR(std::hypot(p[0] - ccx, p[1] - ccy), r, 1e-9);
    const auto q = a.point_at(s + 1e-6), o = a.point_at(s - 1e-6);
    const auto tan = x1(a.theta_at(s));
    EXPECT_NEAR((q[0] - o[0]) / 2e-6, tan[0], 1e-6);
    EXPECT_NEAR((q[1] - o[1]) / 2e-6, tan[1], 1e-6);
    if (i) {
      const auto prev = a.point_at(s - step);
      const double chord = 2 * r * std::sin(step / (2 * r));
      EXPECT_NEAR(std::hypot(p[0] - prev[0], p[1] - prev[1]), chord, 1e-9);
    }
  }
  const auto mid = a.point_at(a.length / 2);
  EXPECT_NEAR(mid[0], a.cx, 1e-12);
  EXPECT_NEAR(mid[1], a.cy, 1e-12);
}

TEST(Arc, StraightLine) {
  const ArcSpec a{0.0, 100.0, 100.0, 50.0, -kPi / 2, 11};
  const auto p0 = a.point_at(0), p1 = a.point_at(100);
  EXPECT_NEAR(p0[0], 50.0, 1e-12);
  EXPECT_NEAR(p1[0], 150.0, 1e-12);
  EXPECT_NEAR(p0[1], 50.0, 1e-12);
}

TEST(Arc, Invalid) {
  EXPECT_THROW((ArcSpec{0.1, 70.0, 0, 0, 0, 10}.validate()), std::invalid_argument);
  EXPECT_THROW((ArcSpec{0.0, 70.0, 0, 0, 0, 1}.validate()), std::invalid_argument);
}

TEST(SegmentField, SizesCollisionsDeterminism) {
  const auto units = sk_units(0.01, 120.0, 20);
  const auto a = gen_segment_field(units, 120, {}, 3);
  EXPECT_EQ(a.meta["dropped_background"], 0);
  ASSERT_EQ(a.size(), 160u);
  EXPECT_EQ(a.units(), 2);
  EXPECT_FALSE(find_collision(a.points, centred_lattice(Manifold::M3)).has_value());
  for (const auto& p : a.points) EXPECT_TRUE((Domain{}.contains(p.x(), p.y())));
  EXPECT_EQ(dataset_csv(a), dataset_csv(gen_segment_field(units, 120, {}, 3)));
  EXPECT_NE(dataset_csv(a), dataset_csv(gen_segment_field(units, 120, {}, 4)));
  // units come first, unchanged by r
  const auto b = gen_segment_field(units, 0, {}, 3);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
}

TEST(SegmentField, CrowdedDomainDropsAndRecords) {
  const auto ds = gen_segment_field({}, 2000, Domain{3.0, 3.0}, 1);
  // 3 x 3 pixels x 72 angles = 648 cells
  const int dropped = ds.meta["dropped_background"];
  EXPECT_GT(dropped, 0);
  EXPECT_EQ(ds.size() + static_cast<std::size_t>(dropped), 2000u);
  EXPECT_LE(ds.size(), 648u);
  EXPECT_FALSE(find_collision(ds.points, centred_lattice(Manifold::M3)).has_value());
}

TEST(SegmentField, UnitOutsideDomainThrows) {
  EXPECT_THROW(gen_segment_field({ArcSpec{0.0, 100.0, 190.0, 100.0, kPi / 2, 10}}, 0, {}, 1), std::invalid_argument);
}

TEST(SemicircleAndLine, Geometry) {
  const auto u = semicircle_and_line(0.014, 30, 140.0, 20, 185.0, 40.0);
  const auto ds = gen_segment_field(u, 0, {}, 1);
  ASSERT_EQ(ds.size(), 50u);
  // semicircle ends sit one diameter apart at the same height
  EXPECT_NEAR(ds.points[0].y(), ds.points[29].y(), 1e-9);
  EXPECT_NEAR(std::abs(ds.points[0].x() - ds.points[29].x()), 2 / 0.014, 1e-9);
  EXPECT_NEAR(std::abs(cyclic(ds.points[29].theta() - ds.points[0].theta())), kPi, 1e-9);
  for (int i = 30; i < 50; ++i) EXPECT_NEAR(ds.points[i].y(), 40.0, 1e-12);
}

TEST(Lemniscate, ClosedCurveEvenSpacing) {
  const auto ds = gen_lemniscate(80.0, 40, 0, {}, 1);
  ASSERT_EQ(ds.size(), 40u);
  const double len = ds.meta["length"];
  // lemniscate of Bernoulli: perimeter ~ 5.2441 * a
  EXPECT_NEAR(len, 5.24411510858 * 80.0, 1e-3);
  for (int i = 0; i < 40; ++i) {
    const auto& p = ds.points[i];
    const auto& q = ds.points[(i + 1) % 40];
    const double d = std::hypot(q.x() - p.x(), q.y() - p.y());
    EXPECT_LT(d, len / 40 + 1e-6);
    EXPECT_GT(d, 0.9 * len / 40);
    // heading towards the next sample roughly along X1
    const auto t = x1(p.theta());
    EXPECT_GT((t[0] * (q.x() - p.x()) + t[1] * (q.y() - p.y())) / d, 0.9);
  }
  const auto with_bg = gen_lemniscate(80.0, 40, 80, {}, 2);
  EXPECT_EQ(with_bg.size(), 120u);
}

TEST(Velocity, SinusoidalProfile) {
  const ArcSpec a{0.0, 100.0, 100.0, 100.0, 0.0, 21};
  const auto base = gen_segment_field({a}, 50, {}, 5);
  const auto ds = assign_velocity_sinusoidal(base, 5.0, 9);
  ASSERT_EQ(ds.size(), base.size());
  EXPECT_NEAR(*ds.points[0].v(), 0.0, 1e-12);
  EXPECT_NEAR(*ds.points[10].v(), 5.0, 1e-12);
  EXPECT_NEAR(*ds.points[20].v(), 0.0, 1e-12);
  EXPECT_NEAR(*ds.points[5].v(), 5.0 * std::sin(kPi / 4), 1e-12);
  for (std::size_t i = 21; i < ds.size(); ++i) {
    EXPECT_GE(*ds.points[i].v(), 0.0);
    EXPECT_LE(*ds.points[i].v(), 5.0);
    EXPECT_EQ(ds.points[i].x(), base.points[i].x());
  }
  EXPECT_EQ(ds.points[3].manifold(), Manifold::M0);
}

TEST(MovingScene, UnitsPerFrameAndVelocities) {
  const SceneParams sp;
  const auto ds = gen_moving_scene(50, 4, sp);
  EXPECT_EQ(ds.meta["dropped_background"], 0);
  ASSERT_EQ(ds.size(), static_cast<std::size_t>(32 * (56 + 50)));
  std::map<int, int> per_frame_units;
  int trailing = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& p = ds.points[i];
    ASSERT_TRUE(p.t().has_value());
    if (ds.truth[i] > 0) ++per_frame_units[static_cast<int>(*p.t())];
    if (ds.truth[i] >= 2) {
      EXPECT_DOUBLE_EQ(*p.v(), 3.75);
      EXPECT_NEAR(cyclic(p.theta() - kPi), 0.0, 1e-12);  // normal points along -x
    }
    if (ds.truth[i] == 1) {
      // normal component of (7.5, 0) along (cos, sin) of theta
      // signed, so the trailing half moves against its normal
      EXPECT_NEAR(*p.v(), 7.5 * std::cos(p.theta()), 1e-9);
      if (*p.v() < -1.0) ++trailing;
    }
  }
  EXPECT_EQ(per_frame_units.size(), 32u);
  for (auto [f, c] : per_frame_units) EXPECT_EQ(c, 56);
  EXPECT_GT(trailing, 32 * 10);
  EXPECT_FALSE(find_collision(ds.points, centred_lattice(Manifold::MT, 400, 300, 32)).has_value());
}

TEST(MovingScene, NoiseFractions) {
  auto frac = [](int r) { return static_cast<double>(r) / (r + 56); };
  EXPECT_NEAR(frac(50), 0.47, 0.005);
  EXPECT_NEAR(frac(100), 0.64, 0.005);
}

TEST(MovingScene, BackgroundMovesAlongNormal) {
  SceneParams sp;
  sp.frames = 6;
  const auto ds = gen_moving_scene(30, 11, sp);
  const std::size_t units = 6 * 56;
  ASSERT_EQ(ds.size(), units + 6 * 30);
  for (std::size_t e = 0; e < 30; ++e) {
    const auto& first = ds.points[units + 6 * e];
    for (int f = 1; f < 6; ++f) {
      const auto& p = ds.points[units + 6 * e + f];
      EXPECT_EQ(ds.truth[units + 6 * e + f], 0);
      EXPECT_EQ(*p.t(), f);
      EXPECT_EQ(p.theta(), first.theta());
      EXPECT_EQ(*p.v(), *first.v());
      const auto& prev = ds.points[units + 6 * e + f - 1];
      // displacement modulo the torus
      double dx = std::remainder(p.x() - prev.x(), 400.0), dy = std::remainder(p.y() - prev.y(), 300.0);
      EXPECT_NEAR(dx, *p.v() * std::cos(p.theta()), 1e-9);
      EXPECT_NEAR(dy, *p.v() * std::sin(p.theta()), 1e-9);
    }
  }
}

TEST(MovingScene, Deterministic) {
  SceneParams sp;
  sp.frames = 4;
  EXPECT_EQ(dataset_csv(gen_moving_scene(20, 1, sp)), dataset_csv(gen_moving_scene(20, 1, sp)));
  EXPECT_NE(dataset_csv(gen_moving_scene(20, 1, sp)), dataset_csv(gen_moving_scene(20, 2, sp)));
}

TEST(Serialise, RoundTripAndHash) {
  const auto base = assign_velocity_sinusoidal(gen_segment_field(sk_units(0.01, 100.0, 10), 30, {}, 2), 5.0, 3);
  const auto csv = tmp("field.csv"), meta = tmp("field.json");
  write_dataset(base, csv.string(), meta.string());
  const auto back = read_dataset(csv.string(), meta.string());
  ASSERT_EQ(back.size(), base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(back.points[i], base.points[i]);
    EXPECT_EQ(back.truth[i], base.truth[i]);
  }
  EXPECT_EQ(dataset_hash(back), dataset_hash(base));
  EXPECT_EQ(back.meta["generator"], "segment_field");
  // arc positions survive, so velocities can be reassigned
  EXPECT_EQ(dataset_csv(assign_velocity_sinusoidal(back, 5.0, 3)), dataset_csv(base));

  SceneParams sp;
  sp.frames = 3;
  const auto scene = gen_moving_scene(10, 1, sp);
  write_dataset(scene, csv.string(), meta.string());
  const auto sb = read_dataset(csv.string(), meta.string());
  for (std::size_t i = 0; i < scene.size(); ++i) EXPECT_EQ(sb.points[i], scene.points[i]);
}

TEST(Serialise, TamperedCsvRejected) {
  const auto ds = gen_segment_field(sk_units(0.01, 100.0, 10), 5, {}, 2);
  const auto csv = tmp("t.csv"), meta = tmp("t.json");
  write_dataset(ds, csv.string(), meta.string());
  {
    std::ofstream os(csv, std::ios::app);
    os << "1,1,,0,,0\n";
  }
  EXPECT_THROW(read_dataset(csv.string(), meta.string()), std::runtime_error);
}
