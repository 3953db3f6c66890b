#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "gixd/geometry.hpp"
#include "gixd/random.hpp"
#include "gixd/twin.hpp"

using namespace gixd;

namespace {

ExperimentGeometry small_geometry() {
  ExperimentGeometry g;
  g.energy_kev = 10.0;
  g.alpha_i_deg = 0.2;
  g.distance_mm = 150.0;
  g.pixel_mm = 0.1;
  g.beam_center = {40.0, 90.0};
  g.width_px = 120;
  g.height_px = 100;
  g.polarization = 0.7;
  return g;
}

// Q = k (u - e_x) in the lab, projected onto the tilted surface normal.
QPoint oracle_q(const ExperimentGeometry &g, PixelCoord p) {
  const Eigen::Vector3d r(g.distance_mm, (p.x - g.beam_center.x) * g.pixel_mm, (g.beam_center.y - p.y) * g.pixel_mm);
  const double k = 2 * kPi * g.energy_kev / kHcKeVAngstrom;
  const Eigen::Vector3d q = k * (r.normalized() - Eigen::Vector3d::UnitX());
  const double a = g.alpha_i_deg * kDeg;
  const Eigen::Vector3d n(-std::sin(a), 0, std::cos(a));
  const double qz = q.dot(n);
  return {(q - qz * n).norm(), qz};
}

}  // namespace

TEST(Geometry, MatchesVectorOracle) {
  for (const auto &g : {small_geometry(), twin_geometry()}) {
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
      const PixelCoord p{rng.uniform(0, double(g.width_px - 1)), rng.uniform(0, double(g.height_px - 1))};
      const auto got = pixel_to_q(g, p), ref = oracle_q(g, p);
      EXPECT_NEAR(got.q_par, ref.q_par, 1e-10 * std::max(1.0, ref.q_par));
      EXPECT_NEAR(got.q_z, ref.q_z, 1e-10 * std::max(1.0, std::abs(ref.q_z)));
    }
  }
}

TEST(Geometry, DirectBeamIsOrigin) {
  const auto g = small_geometry();
  const auto q = pixel_to_q(g, g.beam_center);
  EXPECT_NEAR(q.q_par, 0.0, 1e-12);
  EXPECT_NEAR(q.q_z, 0.0, 1e-12);
  EXPECT_NEAR(lp_correction(g, g.beam_center), 1.0, 1e-12);
}

TEST(Geometry, PolarPoint) {
  const auto pp = to_polar_point({1.0, 1.0});
  EXPECT_NEAR(pp.q, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(pp.phi_deg, 45.0, 1e-12);
  EXPECT_NEAR(to_polar_point({0.0, 2.0}).phi_deg, 90.0, 1e-12);
}

TEST(Geometry, InverseMapping) {
  const auto g = small_geometry();
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const PixelCoord p{rng.uniform(0, double(g.width_px - 1)), rng.uniform(0, double(g.height_px - 1))};
    const auto cands = q_to_pixels(g, pixel_to_q(g, p));
    ASSERT_FALSE(cands.empty());
    double best = 1e9;
    for (const auto &c : cands)
      best = std::min(best, std::hypot(c.x - p.x, c.y - p.y));
    EXPECT_LT(best, 1e-6);
  }
}

TEST(Geometry, LorentzPolarizationOracle) {
  const auto g = small_geometry();
  for (const PixelCoord p : {PixelCoord{0, 0}, PixelCoord{119, 3}, PixelCoord{60, 50}}) {
    const double dx = (p.x - g.beam_center.x) * g.pixel_mm, dz = (g.beam_center.y - p.y) * g.pixel_mm;
    const double r = std::sqrt(g.distance_mm * g.distance_mm + dx * dx + dz * dz);
    const double uy = dx / r, uz = dz / r;
    const double P = g.polarization * (1 - uy * uy) + (1 - g.polarization) * (1 - uz * uz);
    EXPECT_NEAR(lp_correction(g, p), std::pow(r / g.distance_mm, 3) / P, 1e-12);
  }
}

TEST(Geometry, OutOfBoundsThrows) {
  const auto g = small_geometry();
  EXPECT_THROW(pixel_to_q(g, {-1.0, 0.0}), std::out_of_range);
  EXPECT_THROW(pixel_to_q(g, {0.0, 100.0}), std::out_of_range);
}

TEST(Geometry, ConfigRoundTrip) {
  const auto g = small_geometry();
  const auto back = ExperimentGeometry::from_config(KeyValueFile::parse(g.to_config()));
  EXPECT_EQ(back.to_config(), g.to_config());
  EXPECT_THROW(ExperimentGeometry::from_config(KeyValueFile::parse("energy_kev = 10\n")), ConfigError);
}

TEST(Geometry, RemapKeepsConstantImage) {
  const auto g = small_geometry();
  DetectorImage img{Raster(g.height_px, g.width_px)};
  std::fill(img.raster.values.begin(), img.raster.values.end(), 5.0);
  const auto grid = default_reciprocal_grid(g, 64, 48);
  const auto rec = ReciprocalMap(g, grid).apply(img);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < rec.raster.size(); ++i)
    if (!rec.raster.masked(i)) {
      ++covered;
      EXPECT_NEAR(rec.raster.values[i], 5.0, 1e-9);
    }
  EXPECT_GT(covered, rec.raster.size() / 4);
  const auto polar = to_polar(rec, 32, 40);
  for (std::size_t i = 0; i < polar.raster.size(); ++i)
    if (!polar.raster.masked(i)) {
      EXPECT_NEAR(polar.raster.values[i], 5.0, 1e-9);
    }
}

TEST(Geometry, ArcExtent) {
  // a ring inside both limits spans the full quarter circle
  EXPECT_NEAR(max_arc_extent(0.5, 2.0, 2.0), 90.0, 1e-9);
  EXPECT_LT(max_arc_extent(2.5, 2.0, 2.0), 90.0);
}
