#include <gtest/gtest.h>

#include "gixd/benchmark.hpp"
#include "gixd/detect.hpp"
#include "gixd/simulate.hpp"

using namespace gixd;

namespace {

Detection det_at(const TruthPeak &t, double dq = 0) {
  Detection d;
  d.q_center = t.q_center + dq;
  d.q_width = 2 * box_half_width(t.w_sim);
  d.phi_center = t.phi_center;
  d.phi_extent = t.phi_extent;
  d.score = 0.9;
  return d;
}

std::vector<TruthPeak> three_peaks() {
  return {{40, 2, 100, 30}, {120, 4, 50, 20}, {300, 3, 200, 40}};
}

}  // namespace

TEST(Benchmark, PerfectDetectionsScoreOne) {
  const auto truth = three_peaks();
  std::vector<Detection> dets;
  for (const auto &t : truth)
    dets.push_back(det_at(t));
  const auto r = benchmark({dets, dets}, {truth, truth});
  EXPECT_EQ(r.images, 2u);
  EXPECT_EQ(r.matched, 6u);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.fp_per_image, 0.0);
  EXPECT_DOUBLE_EQ(r.dq_p95, 0.0);
  EXPECT_EQ(r.missed_hist.at(0), 2u);
}

TEST(Benchmark, NoDetectionsScoreZero) {
  const auto r = benchmark({{}}, {three_peaks()});
  EXPECT_DOUBLE_EQ(r.recall, 0.0);
  EXPECT_DOUBLE_EQ(r.fp_per_image, 0.0);
  EXPECT_EQ(r.missed_hist.at(3), 1u);
}

TEST(Benchmark, SpuriousAndShiftedDetections) {
  const auto truth = three_peaks();
  std::vector<Detection> dets{det_at(truth[0], 1.5), det_at(truth[1], -0.5)};
  Detection far = det_at(truth[2]);
  far.q_center = 500;
  dets.push_back(far);
  const auto r = benchmark({dets}, {truth});
  EXPECT_EQ(r.matched, 2u);
  EXPECT_NEAR(r.recall, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.fp_per_image, 1.0);
  EXPECT_NEAR(r.fp_share, 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.dq_p95, 1.5);
  EXPECT_DOUBLE_EQ(r.dq_p50, 0.5);
  EXPECT_EQ(r.per_image[0].det_to_truth[2], -1);
}

TEST(Benchmark, MatchingIsOneToOne) {
  const auto truth = three_peaks();
  // two detections on the same peak: one match, one false positive
  const auto r = benchmark({{det_at(truth[0]), det_at(truth[0], 0.2)}}, {{truth[0]}});
  EXPECT_EQ(r.matched, 1u);
  EXPECT_EQ(r.per_image[0].truth_to_det[0], 0);
  EXPECT_DOUBLE_EQ(r.fp_per_image, 1.0);
}

TEST(Benchmark, MismatchedImageCountsThrow) {
  EXPECT_THROW(benchmark({{}, {}}, {{}}), DataError);
}

TEST(Benchmark, NearestRankPercentile) {
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 50), 3);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 95), 5);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 0), 1);
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i)
    v.push_back(i);
  EXPECT_DOUBLE_EQ(percentile(v, 95), 95);
  EXPECT_TRUE(std::isnan(percentile({}, 50)));
}

TEST(Benchmark, AnnotationTruthUsesPaddedBox) {
  Annotation a;
  a.q_center = 50;
  a.w_sim = 2;
  a.box = {45, 55, 10, 30};
  const auto t = truth_from(a);
  EXPECT_DOUBLE_EQ(t.phi_center, 20);
  EXPECT_DOUBLE_EQ(t.phi_extent, 20);
}

TEST(Benchmark, ReportListsAllKeys) {
  const auto s = format_report(benchmark({{}}, {three_peaks()}));
  for (const char *k : {"images", "truth", "detections", "matched", "recall", "fp_per_image", "dq_p95"})
    EXPECT_NE(s.find(std::string(k) + " = "), std::string::npos) << k;
}

// Frozen regression value of the classical detector on clean simulations.
TEST(Benchmark, ClassicalDetectorGolden) {
  const auto cfg = SimulationConfig::clean();
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<TruthPeak>> truth;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto sim = simulate_pattern(cfg, derive_seed(7, i));
    const PolarImage img{sim.image, Axis{0, 1, cfg.cols}, Axis{0, 1, cfg.rows}, Units::px};
    dets.push_back(classical_detect(img, ClassicalParams{}, long(i)).detections);
    truth.push_back(truth_from(sim.truth));
  }
  const auto r = benchmark(dets, truth);
  EXPECT_EQ(r.truth, 397u);
  EXPECT_EQ(r.detections, 335u);
  EXPECT_EQ(r.matched, 322u);
  EXPECT_DOUBLE_EQ(r.dq_p95, 0.81207668780137965);
}
