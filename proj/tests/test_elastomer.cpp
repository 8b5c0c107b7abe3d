#include "tactwin/elastomer.hpp"
#include "tactwin/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace tactwin;
using namespace tactwin::elastomer;

namespace {

Indenter at(HeightMap shape, double x, double y, double force, double yaw = 0.0) {
  Indenter ind;
  ind.shape = std::move(shape);
  ind.pose.translation = Vec3(x, y, 0.0);
  ind.pose.rotation = Vec3(0.0, 0.0, yaw);
  ind.force = force;
  return ind;
}

double field_sum(const HeightMap& h) {
  double s = 0.0;
  for (double v : h.values()) s += v;
  return s;
}

Params small_grid(Params p) {
  p.grid_width = 80;
  p.grid_height = 40;
  return p;
}

}  // namespace

TEST(Indent, ForceBalanceAcrossShapesAndPoses) {
  const Params p;
  Pcg32 rng(17);
  const std::vector<HeightMap> shapes{sphere_shape(5.0), flat_shape(10.0, 10.0), edge_shape(20.0, 1.5), sphere_shape(3.5)};
  for (const auto& shape : shapes) {
    for (int k = 0; k < 8; ++k) {
      const double force = rng.uniform(0.05, 1.5);
      const auto ind = at(shape, rng.uniform(20.0, 80.0), rng.uniform(8.0, 17.0), force, rng.uniform(-1.5, 1.5));
      const auto r = quasi_static_indent(p, ind);
      ASSERT_TRUE(r.in_contact);
      ASSERT_FALSE(r.saturated);
      // Independent of winkler_force: integrate the overlap field directly.
      EXPECT_NEAR(p.stiffness * field_sum(r.raw) * p.cell_area(), force, 1e-4);
    }
  }
}

TEST(Indent, FlatPunchPenetrationClosedForm) {
  const Params p;
  // 10 x 10 mm punch aligned with the grid covers exactly 40 x 40 cells.
  for (double force : {0.25, 1.0, 2.5}) {
    const auto r = quasi_static_indent(p, at(flat_shape(10.0, 10.0), 50.0, 12.5, force));
    EXPECT_NEAR(r.penetration, force / (p.stiffness * 100.0), 1e-6);
    std::size_t touched = 0;
    for (double v : r.raw.values()) touched += v > 0.0 ? 1 : 0;
    EXPECT_EQ(touched, 1600u);
  }
}

TEST(Indent, SpherePenetrationMatchesCapVolume) {
  const Params p;
  const double R = 5.0;
  for (double force : {0.2, 0.8, 2.0}) {
    const auto r = quasi_static_indent(p, at(sphere_shape(R), 50.0, 12.5, force));
    const double d = r.penetration;
    const double cap = std::numbers::pi * d * d * (R - d / 3.0);
    EXPECT_NEAR(p.stiffness * cap, force, 0.02 * force) << "d=" << d;
  }
}

TEST(Indent, ForceInvariantUnderYawForSphere) {
  const Params p;
  const auto a = quasi_static_indent(p, at(sphere_shape(4.0), 50.0, 12.5, 1.0, 0.0));
  const auto b = quasi_static_indent(p, at(sphere_shape(4.0), 50.0, 12.5, 1.0, 0.7));
  EXPECT_NEAR(a.penetration, b.penetration, 0.01 * a.penetration);
}

TEST(Indent, EdgeFootprintFollowsYaw) {
  const Params p;
  const auto along = quasi_static_indent(p, at(edge_shape(16.0, 1.5), 50.0, 12.5, 1.0, 0.0));
  const auto across = quasi_static_indent(p, at(edge_shape(16.0, 1.5), 50.0, 12.5, 1.0, std::numbers::pi / 2));
  auto span = [](const IndentResult& r) { return std::pair<long, long>(r.footprint.x1 - r.footprint.x0, r.footprint.y1 - r.footprint.y0); };
  EXPECT_GT(span(along).first, span(along).second);
  EXPECT_LT(span(across).first, span(across).second);
}

TEST(Indent, SphereContactRadiusMatchesFineGridOracle) {
  const Params p;
  const double R = 5.0, force = 1.0, cx = 50.0, cy = 12.5;
  // Analytic gaps on a 4x finer grid, own bisection on the force balance.
  const double fine = p.resolution / 4.0;
  std::vector<std::pair<double, double>> cells;  // (radius, gap)
  for (double y = fine / 2; y < 25.0; y += fine) {
    for (double x = 40.0 + fine / 2; x < 60.0; x += fine) {
      const double r = std::hypot(x - cx, y - cy);
      if (r < R) cells.emplace_back(r, R - std::sqrt(R * R - r * r));
    }
  }
  auto load = [&](double d) {
    double sum = 0.0;
    for (const auto& c : cells) sum += std::max(0.0, d - c.second);
    return p.stiffness * sum * fine * fine;
  };
  double lo = 0.0, hi = p.thickness;
  for (int it = 0; it < 100; ++it) (load(0.5 * (lo + hi)) < force ? lo : hi) = 0.5 * (lo + hi);
  double oracle_radius = 0.0;
  for (const auto& c : cells)
    if (c.second < lo) oracle_radius = std::max(oracle_radius, c.first);

  const auto r = quasi_static_indent(p, at(sphere_shape(R), cx, cy, force));
  double radius = 0.0;
  for (std::size_t j = 0; j < p.grid_height; ++j) {
    for (std::size_t i = 0; i < p.grid_width; ++i) {
      if (r.raw.at(i, j) > 0.0) radius = std::max(radius, std::hypot((i + 0.5) * p.resolution - cx, (j + 0.5) * p.resolution - cy));
    }
  }
  EXPECT_NEAR(radius, oracle_radius, p.resolution);
  EXPECT_GT(radius, 1.0);
}

TEST(Indent, ZeroForceAndOffPlateAreNoContact) {
  const Params p;
  EXPECT_FALSE(quasi_static_indent(p, at(sphere_shape(5.0), 50.0, 12.5, 0.0)).in_contact);
  EXPECT_FALSE(quasi_static_indent(p, at(sphere_shape(5.0), 500.0, 500.0, 1.0)).in_contact);
  EXPECT_THROW((void)quasi_static_indent(p, at(sphere_shape(5.0), 50.0, 12.5, -1.0)), std::invalid_argument);
}

TEST(Indent, SaturatesAtThickness) {
  const Params p;
  const auto r = quasi_static_indent(p, at(sphere_shape(5.0), 50.0, 12.5, 1000.0));
  EXPECT_TRUE(r.saturated);
  EXPECT_DOUBLE_EQ(r.penetration, p.thickness);
  for (double v : r.displacement.values()) ASSERT_LE(v, p.thickness);
  const auto ok = quasi_static_indent(p, at(sphere_shape(5.0), 50.0, 12.5, 1.0));
  EXPECT_FALSE(ok.saturated);
}

TEST(Indent, DisplacementIsSmoothedAndBounded) {
  const Params p;
  const auto r = quasi_static_indent(p, at(flat_shape(10.0, 10.0), 50.0, 12.5, 1.0));
  double peak = 0.0;
  for (double v : r.displacement.values()) {
    ASSERT_GE(v, 0.0);
    peak = std::max(peak, v);
  }
  EXPECT_LE(peak, r.penetration + 1e-12);
  // The membrane spreads load past the punch edge (x = 45 mm).
  EXPECT_EQ(r.raw.at(175, 50), 0.0);
  EXPECT_GT(r.displacement.at(175, 50), 0.0);
  EXPECT_NEAR(field_sum(r.displacement), field_sum(r.raw), 1e-9 * field_sum(r.raw));
}

// ---------------------------------------------------------------------------
// Smoothing

TEST(Smoothing, MatchesBruteForceReflectedConvolution) {
  HeightMap f(23, 17, 0.25, 0.0);
  Pcg32 rng(5);
  const Box box{0, 0, 8, 6};  // touches the lower-left border
  for (std::size_t j = box.y0; j <= box.y1; ++j)
    for (std::size_t i = box.x0; i <= box.x1; ++i) f.at(i, j) = rng.uniform();
  const HeightMap in = f;
  const double sigma = 0.6;
  gaussian_smooth(f, sigma, box);

  const long w = 23, h = 17;
  auto mirror = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
    return i;
  };
  const int r = static_cast<int>(std::ceil(3.0 * sigma / 0.25));
  double norm = 0.0;
  for (int k = -r; k <= r; ++k) norm += std::exp(-0.5 * std::pow(k * 0.25 / sigma, 2));
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky) {
        for (int kx = -r; kx <= r; ++kx) {
          const double wgt = std::exp(-0.5 * (std::pow(kx * 0.25 / sigma, 2) + std::pow(ky * 0.25 / sigma, 2))) / (norm * norm);
          acc += wgt * in.at(static_cast<std::size_t>(mirror(x + kx, w)), static_cast<std::size_t>(mirror(y + ky, h)));
        }
      }
      ASSERT_NEAR(f.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)), acc, 1e-12) << x << "," << y;
    }
  }
}

TEST(Smoothing, PreservesMassEverywhere) {
  Pcg32 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    HeightMap f(60, 30, 0.25, 0.0);
    const auto x0 = static_cast<std::size_t>(rng.uniform(0, 50)), y0 = static_cast<std::size_t>(rng.uniform(0, 20));
    const Box box{x0, y0, x0 + 9, y0 + 9};
    for (std::size_t j = box.y0; j <= box.y1; ++j)
      for (std::size_t i = box.x0; i <= box.x1; ++i) f.at(i, j) = rng.uniform();
    const double before = field_sum(f);
    gaussian_smooth(f, rng.uniform(0.3, 1.5), box);
    EXPECT_NEAR(field_sum(f), before, 1e-10 * before);
  }
}

// ---------------------------------------------------------------------------
// Viscoelastic dynamics

TEST(Dynamics, RecoveryFollowsExponentialClosedForm) {
  for (const Params& p : {small_grid(Params::vhb()), small_grid(Params::silicone())}) {
    auto s = DeformationState::rest(p);
    for (double& v : s.displacement.values()) v = 1.2;
    const HeightMap zero = zero_field(p);
    const double dt = 0.002;
    for (int n = 1; n <= 400; ++n) {
      s = step_dynamics(s, zero, dt, p);
      if (n % 25 == 0) {
        EXPECT_NEAR(s.displacement.at(3, 3), 1.2 * std::exp(-n * dt / p.tau_recover), 1e-6) << n;
      }
    }
    EXPECT_NEAR(s.time, 400 * dt, 1e-12);
  }
}

TEST(Dynamics, LoadingUsesLoadTimeConstant) {
  const Params p = small_grid(Params::vhb());
  auto s = DeformationState::rest(p);
  HeightMap target = zero_field(p);
  target.at(10, 10) = 0.8;
  for (int n = 1; n <= 20; ++n) {
    s = step_dynamics(s, target, 0.002, p);
    EXPECT_NEAR(s.displacement.at(10, 10), 0.8 * (1.0 - std::exp(-n * 0.002 / p.tau_load)), 1e-9);
  }
  EXPECT_EQ(s.displacement.at(11, 10), 0.0);
  EXPECT_THROW((void)step_dynamics(s, target, 0.0, p), std::invalid_argument);
}

TEST(Dynamics, FixedPointAndConvergence) {
  const Params p = small_grid(Params::silicone());
  HeightMap target = zero_field(p);
  Pcg32 rng(4);
  for (double& v : target.values()) v = rng.uniform(0.0, p.thickness);
  DeformationState s = DeformationState::rest(p);
  s.displacement = target;
  EXPECT_EQ(step_dynamics(s, target, 0.002, p).displacement.values(), target.values());
  s = DeformationState::rest(p);
  for (double& v : s.displacement.values()) v = rng.uniform(0.0, p.thickness);
  double worst = 1.0;
  for (int n = 0; n < 2000 && worst >= 1e-6; ++n) {
    s = step_dynamics(s, target, 0.002, p);
    worst = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) worst = std::max(worst, std::abs(s.displacement.values()[k] - target.values()[k]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Dynamics, VhbResidualExceedsSiliconeAfterThreeSiliconeTaus) {
  const Params vhb = small_grid(Params::vhb()), sil = small_grid(Params::silicone());
  auto residual = [&](const Params& p) {
    const auto target = quasi_static_indent(p, at(sphere_shape(4.0, 0.25), 10.0, 5.0, 0.5)).displacement;
    auto s = DeformationState::rest(p);
    for (int n = 0; n < 100; ++n) s = step_dynamics(s, target, 0.002, p);
    const HeightMap zero = zero_field(p);
    const int steps = static_cast<int>(std::lround(3.0 * sil.tau_recover / 0.002));
    for (int n = 0; n < steps; ++n) s = step_dynamics(s, zero, 0.002, p);
    return field_sum(s.displacement);
  };
  EXPECT_GT(residual(vhb), residual(sil));
}

TEST(Dynamics, VhbRecoversSlowerThanSiliconeOnRandomScripts) {
  Pcg32 rng(2718);
  const Params vhb = small_grid(Params::vhb()), sil = small_grid(Params::silicone());
  const double dt = 0.002;
  for (int script = 0; script < 100; ++script) {
    const double x = rng.uniform(5.0, 15.0), y = rng.uniform(3.0, 7.0);
    const double force = rng.uniform(0.1, 2.0), radius = rng.uniform(2.0, 6.0);
    const int hold = static_cast<int>(rng.uniform(10, 150));
    auto residual_after_release = [&](const Params& p, std::vector<double>& trace) {
      const auto target = quasi_static_indent(p, at(sphere_shape(radius, 0.25), x, y, force)).displacement;
      auto s = DeformationState::rest(p);
      for (int n = 0; n < hold; ++n) s = step_dynamics(s, target, dt, p);
      double peak = 0.0;
      for (double v : s.displacement.values()) peak = std::max(peak, v);
      const HeightMap zero = zero_field(p);
      for (int n = 0; n < 60; ++n) {
        s = step_dynamics(s, zero, dt, p);
        double m = 0.0;
        for (double v : s.displacement.values()) m = std::max(m, v);
        trace.push_back(m / peak);
      }
    };
    std::vector<double> tv, ts;
    residual_after_release(vhb, tv);
    residual_after_release(sil, ts);
    for (std::size_t n = 0; n < tv.size(); ++n) ASSERT_GT(tv[n], ts[n]) << "script " << script << " step " << n;
  }
}

// ---------------------------------------------------------------------------
// Stick-slip

TEST(StickSlip, OnsetAtCoulombLimit) {
  const Params p = small_grid(Params::vhb());
  HeightMap pressure = zero_field(p);
  for (std::size_t j = 10; j < 20; ++j)
    for (std::size_t i = 10; i < 30; ++i) pressure.at(i, j) = 0.01;
  auto s = DeformationState::rest(p);
  const double limit = p.friction * 0.01 / p.shear_stiffness;  // 0.45 mm
  const Vec2 step(0.06, 0.08);                                 // 0.1 mm per step
  int first_slip = -1;
  for (int n = 1; n <= 10; ++n) {
    auto r = tangential_update(s, step, p, pressure, 0.002);
    EXPECT_EQ(r.report.contact_area, 200 * p.cell_area());
    EXPECT_NEAR(r.report.normal_force, 200 * 0.01 * p.cell_area(), 1e-15);
    if (!r.report.slip_events.empty() && first_slip < 0) {
      first_slip = n;
      const auto& e = r.report.slip_events.front();
      EXPECT_NEAR(e.speed, 0.1 / 0.002, 1e-9);
      EXPECT_NEAR(e.area, 200 * p.cell_area(), 1e-12);
      EXPECT_NEAR(e.pressure, 0.01, 1e-15);
      EXPECT_NEAR(r.report.slip_distance, 0.5 - limit, 1e-12);
    }
    s = r.state;
    const double mag = std::hypot(s.shear_x.at(15, 15), s.shear_y.at(15, 15));
    EXPECT_LE(mag, limit + 1e-12);
  }
  EXPECT_EQ(first_slip, 5);
  // Direction of the stored shear follows the motion.
  EXPECT_NEAR(s.shear_y.at(15, 15) / s.shear_x.at(15, 15), 0.08 / 0.06, 1e-12);
}

TEST(StickSlip, ZeroMotionLeavesShearUnchanged) {
  const Params p = small_grid(Params::vhb());
  HeightMap pressure = zero_field(p);
  pressure.at(4, 4) = 0.01;
  auto s = tangential_update(DeformationState::rest(p), Vec2(0.2, 0.1), p, pressure, 0.002).state;
  const auto r = tangential_update(s, Vec2(0.0, 0.0), p, pressure, 0.002);
  EXPECT_TRUE(r.report.slip_events.empty());
  EXPECT_EQ(r.state.shear_x.values(), s.shear_x.values());
  EXPECT_EQ(r.state.shear_y.values(), s.shear_y.values());
}

TEST(StickSlip, RandomWalkMatchesScalarOracle) {
  const Params p = small_grid(Params::vhb());
  // Flat punch: uniform pressure F / A inside the footprint.
  const auto ind = quasi_static_indent(p, at(flat_shape(5.0, 5.0), 10.0, 5.0, 0.5));
  const HeightMap pressure = pressure_field(ind.raw, p);
  const double pr = 0.5 / 25.0;
  const double limit = p.friction * pr / p.shear_stiffness;

  Pcg32 rng(77);
  auto s = DeformationState::rest(p);
  Vec2 shear = Vec2::Zero();
  double slipped = 0.0, oracle = 0.0;
  for (int n = 0; n < 3000; ++n) {
    const Vec2 delta(rng.normal() * 0.05, rng.normal() * 0.05 + 0.01);
    auto r = tangential_update(s, delta, p, pressure, 0.002);
    slipped += r.report.slip_distance;
    s = std::move(r.state);
    shear += delta;
    if (shear.norm() > limit) {
      oracle += shear.norm() - limit;
      shear *= limit / shear.norm();
    }
  }
  ASSERT_GT(oracle, 1.0);
  EXPECT_NEAR(slipped, oracle, 0.02 * oracle);
}

TEST(StickSlip, ShearReleasedOutOfContact) {
  const Params p = small_grid(Params::vhb());
  HeightMap pressure = zero_field(p);
  pressure.at(5, 5) = 0.02;
  auto s = tangential_update(DeformationState::rest(p), Vec2(0.1, 0.0), p, pressure, 0.002).state;
  EXPECT_NEAR(s.shear_x.at(5, 5), 0.1, 1e-15);
  s = tangential_update(s, Vec2(0.1, 0.0), p, zero_field(p), 0.002).state;
  EXPECT_EQ(s.shear_x.at(5, 5), 0.0);
}

TEST(StickSlip, HigherPressureHoldsLonger) {
  const Params p = small_grid(Params::vhb());
  auto onset = [&](double pr) {
    HeightMap pressure = zero_field(p);
    pressure.at(5, 5) = pr;
    auto s = DeformationState::rest(p);
    for (int n = 1; n < 1000; ++n) {
      auto r = tangential_update(s, Vec2(0.01, 0.0), p, pressure, 0.002);
      if (!r.report.slip_events.empty()) return n;
      s = r.state;
    }
    return -1;
  };
  EXPECT_LT(onset(0.005), onset(0.01));
  EXPECT_LT(onset(0.01), onset(0.02));
}

// ---------------------------------------------------------------------------
// Parameters and heightmap images

TEST(ParamsTest, KindDefaultsAndValidation) {
  EXPECT_GT(Params::vhb().tau_recover, 10 * Params::silicone().tau_recover);
  EXPECT_EQ(Params::for_kind(Kind::Silicone).kind, Kind::Silicone);
  Params bad;
  bad.sigma = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = Params{};
  bad.grid_height = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(Params::silicone().validate());
}

TEST(ImageShape, ReadsAsciiGreymap) {
  const auto path = std::filesystem::temp_directory_path() / "tactwin_bump.pgm";
  {
    std::ofstream f(path);
    f << "P2\n# bump\n3 2\n10\n0 10 0\n5 10 5\n";
  }
  const HeightMap h = image_shape(path.string(), 0.5, 2.0);
  EXPECT_EQ(h.width(), 3u);
  EXPECT_DOUBLE_EQ(h.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(h.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(h.at(0, 1), 1.0);
  {
    std::ofstream f(path);
    f << "P2\n3 2\n10\n0 10\n";
  }
  EXPECT_THROW((void)image_shape(path.string(), 0.5, 2.0), ConfigError);
  EXPECT_THROW((void)image_shape("/nonexistent.pgm", 0.5, 2.0), ConfigError);
  std::filesystem::remove(path);
}
