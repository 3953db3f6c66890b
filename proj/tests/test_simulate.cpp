#include <gtest/gtest.h>

#include "gixd/io.hpp"
#include "gixd/perlin.hpp"
#include "gixd/simulate.hpp"
#include "helpers.hpp"

using namespace gixd;

TEST(Simulate, DeterministicPerSeed) {
  const SimulationConfig cfg;
  const auto a = simulate_pattern(cfg, 42), b = simulate_pattern(cfg, 42), c = simulate_pattern(cfg, 43);
  EXPECT_EQ(a.image.values, b.image.values);
  EXPECT_EQ(format_annotations(a.truth), format_annotations(b.truth));
  EXPECT_NE(a.image.values, c.image.values);
}

// Frozen outputs of the default configuration; a change here changes every
// generated dataset.
TEST(Simulate, GoldenPatterns) {
  const SimulationConfig cfg;
  struct Gold {
    std::uint64_t seed;
    std::size_t n;
    double q0, w0, sum;
  };
  for (const auto &g : {Gold{12345, 27, 22.254261526422482, 1.8663167939891372, 122638.52973969698},
                        Gold{777, 24, 322.96310997415742, 3.727009297760782, 106503.79276247376}}) {
    const auto s = simulate_pattern(cfg, g.seed);
    ASSERT_EQ(s.truth.size(), g.n);
    EXPECT_DOUBLE_EQ(s.truth[0].q_center, g.q0);
    EXPECT_DOUBLE_EQ(s.truth[0].w_sim, g.w0);
    double sum = 0;
    for (double v : s.image.values)
      sum += v;
    EXPECT_NEAR(sum, g.sum, 1e-9 * g.sum);
  }
}

TEST(Simulate, TruthIsConsistent) {
  const SimulationConfig cfg;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = simulate_pattern(cfg, seed);
    EXPECT_LE(s.truth.size(), 45u);
    for (double v : s.image.values) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (const auto &p : s.truth) {
      EXPECT_GE(p.padded_box.q_lo, 0.0);
      EXPECT_LE(p.padded_box.q_hi, double(cfg.cols));
      EXPECT_GE(p.padded_box.phi_lo, 0.0);
      EXPECT_LE(p.padded_box.phi_hi, double(cfg.rows));
      EXPECT_LT(p.padded_box.q_lo, p.q_center);
      EXPECT_GT(p.padded_box.q_hi, p.q_center);
      EXPECT_GE(p.w_sim, cfg.width_min);
      EXPECT_LE(p.w_sim, cfg.width_max);
    }
  }
}

TEST(Simulate, CleanPatternHasPeaksAtTruth) {
  const auto cfg = SimulationConfig::clean();
  const auto s = simulate_pattern(cfg, 9);
  double mx = 0;
  for (double v : s.raw_image.values)
    mx = std::max(mx, v);
  for (const auto &p : s.truth) {
    const auto r = std::size_t(std::clamp(std::round(p.phi_center), 0.0, double(cfg.rows - 1)));
    const auto c = std::size_t(std::round(p.q_center));
    EXPECT_GE(s.raw_image(r, c), 0.5 * p.amplitude);
    EXPECT_GE(p.amplitude, cfg.visibility_floor * mx * 0.999);
  }
}

TEST(Simulate, PaddedBoxWidth) {
  EXPECT_DOUBLE_EQ(box_half_width(2.0), 3.7);
}

TEST(Simulate, AnnotationsRoundTrip) {
  const auto s = simulate_pattern(SimulationConfig{}, 5);
  const auto parsed = parse_annotations(format_annotations(s.truth));
  ASSERT_EQ(parsed.size(), s.truth.size());
  for (std::size_t i = 0; i < parsed.size(); ++i)
    EXPECT_EQ(parsed[i], to_annotation(s.truth[i]));
  EXPECT_THROW(parse_annotations("1 2 3\n"), DataError);
}

TEST(Simulate, ConfigRoundTripAndValidation) {
  SimulationConfig cfg;
  cfg.p_gaps = 0.1;
  cfg.peak_count_max = 30;
  const auto back = SimulationConfig::from_config(KeyValueFile::parse(cfg.to_config()));
  EXPECT_EQ(back.to_config(), cfg.to_config());
  cfg.p_gaps = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Simulate, DatasetLayout) {
  testing_util::TempDir dir("dataset");
  export_dataset(SimulationConfig{}, 3, 11, dir.path(), 2);
  EXPECT_EQ(dataset_stem(3), "img_00003");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto stem = dir.path() / dataset_stem(i);
    ASSERT_TRUE(std::filesystem::exists(stem.string() + ".tif"));
    const auto img = read_raster(stem.string() + ".tif");
    const auto ref = simulate_pattern(SimulationConfig{}, derive_seed(11, i));
    ASSERT_EQ(img.values.size(), ref.image.values.size());
    for (std::size_t k = 0; k < img.values.size(); k += 97)
      EXPECT_FLOAT_EQ(float(img.values[k]), float(ref.image.values[k]));
    EXPECT_EQ(detail::read_text(stem.string() + ".txt"), format_annotations(ref.truth));
  }
  const auto manifest = KeyValueFile::load(dir / "manifest.txt");
  EXPECT_EQ(manifest.number("count"), 3);
  EXPECT_EQ(manifest.number("seed"), 11);
  EXPECT_EQ(manifest.number("seed.img_00002"), double(derive_seed(11, 2)));
}

TEST(Perlin, DeterministicAndBounded) {
  const auto a = perlin(64, 64, 16, 5), b = perlin(64, 64, 16, 5);
  EXPECT_EQ(a.values, b.values);
  EXPECT_DOUBLE_EQ(a.values[100], 0.051294487069135343);
  EXPECT_DOUBLE_EQ(a.values[4000], -0.15291204506586661);
  for (double v : a.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  const PerlinNoise noise(5);
  for (std::size_t r = 0; r < 64; r += 7)
    for (std::size_t c = 0; c < 64; c += 5)
      EXPECT_DOUBLE_EQ(a(r, c), noise(double(c) / 16, double(r) / 16));
  // zero at lattice points
  EXPECT_DOUBLE_EQ(noise(3.0, 4.0), 0.0);
  EXPECT_THROW(perlin(4, 4, 1.0, 1), std::invalid_argument);
}
