#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "gixd/postprocess.hpp"
#include "gixd/random.hpp"
#include "helpers.hpp"

using namespace gixd;

namespace {

Detection box(long long frame, double q_lo, double q_hi, double p_lo, double p_hi, double score) {
  return Detection::from_box(frame, {q_lo, q_hi, p_lo, p_hi}, score);
}

Detection random_detection(Rng &rng, long long frame) {
  return {frame, rng.uniform(0, 10), rng.uniform(0.5, 4), rng.uniform(0, 10), rng.uniform(0.5, 4),
          rng.uniform(0, 1)};
}

bool conflicts(const std::vector<Detection> &d, unsigned mask, double thr) {
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j)
      if ((mask >> i & 1) && (mask >> j & 1) && iou(d[i], d[j]) > thr)
        return true;
  return false;
}

std::vector<double> gauss_profile(const std::vector<double> &q, double I0, double Q, double w, double B, double C) {
  std::vector<double> y;
  for (double x : q)
    y.push_back(I0 * std::exp(-0.5 * std::pow((x - Q) / w, 2)) + B * x + C);
  return y;
}

}  // namespace

TEST(Iou, KnownValues) {
  const auto a = box(0, 0, 2, 0, 2, 1), b = box(0, 1, 3, 0, 2, 1), c = box(0, 5, 6, 5, 6, 1);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(iou(a, c), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, box(0, 2, 4, 0, 2, 1)), 0.0);  // touching edges
  EXPECT_DOUBLE_EQ(iou(a, box(0, 0.5, 1.5, 0.5, 1.5, 1)), 0.25);
}

TEST(Nms, GreedyIsMaximalAntichainAndOptimalWhenUnambiguous) {
  Rng rng(10);
  std::size_t optimal = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    const double thr = rng.uniform(0.05, 0.6);
    DetectionSet in{0, Units::px, {}, {}, {}};
    const auto n = std::size_t(rng.uniform_int(1, 6));
    for (std::size_t i = 0; i < n; ++i)
      in.detections.push_back(random_detection(rng, 0));
    const auto out = nms(in, thr).detections;
    unsigned kept = 0;
    for (const auto &d : out)
      for (std::size_t i = 0; i < n; ++i)
        if (in.detections[i] == d)
          kept |= 1u << i;
    ASSERT_EQ(std::size_t(std::popcount(kept)), out.size());
    ASSERT_FALSE(conflicts(in.detections, kept, thr));
    for (std::size_t i = 0; i < n; ++i)
      if (!(kept >> i & 1)) {
        ASSERT_TRUE(conflicts(in.detections, kept | 1u << i, thr));
      }
    // the top-scored box always survives
    const auto top = std::max_element(in.detections.begin(), in.detections.end(),
                                      [](auto &a, auto &b) { return a.score < b.score; });
    EXPECT_EQ(out.front(), *top);
    double best = 0, greedy = 0;
    unsigned best_mask = 0;
    for (unsigned m = 0; m < (1u << n); ++m) {
      if (conflicts(in.detections, m, thr))
        continue;
      double s = 0;
      for (std::size_t i = 0; i < n; ++i)
        s += (m >> i & 1) ? in.detections[i].score : 0;
      if (s > best) {
        best = s;
        best_mask = m;
      }
    }
    for (const auto &d : out)
      greedy += d.score;
    if (greedy >= best - 1e-12) {
      ++optimal;
      EXPECT_EQ(kept, best_mask);
    }
  }
  EXPECT_GT(optimal, 2000u);
}

TEST(Nms, OrderAndErrors) {
  DetectionSet in{0, Units::px, {}, {}, {}};
  in.detections = {box(0, 0, 1, 0, 1, 0.5), box(0, 5, 6, 0, 1, 0.9), box(0, 0.1, 1.1, 0, 1, 0.7)};
  const auto out = nms(in, 0.1).detections;
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out[1].score, 0.7);
  in.detections[0].score = std::nan("");
  EXPECT_THROW(nms(in), DataError);
}

TEST(FilterScore, KeepsAtThreshold) {
  DetectionSet in{0, Units::px, {}, {}, {}};
  in.detections = {box(0, 0, 1, 0, 1, 0.8), box(0, 0, 1, 0, 1, 0.79), box(0, 0, 1, 0, 1, 1.0)};
  EXPECT_EQ(filter_score(in, 0.8).detections.size(), 2u);
}

TEST(Link, MatchesExhaustiveGreedyOrder) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    DetectionSet a{0, Units::px, {}, {}, {}}, b{1, Units::px, {}, {}, {}};
    const auto na = std::size_t(rng.uniform_int(0, 3)), nb = std::size_t(rng.uniform_int(0, 3));
    for (std::size_t i = 0; i < na; ++i)
      a.detections.push_back(random_detection(rng, 0));
    for (std::size_t i = 0; i < nb; ++i)
      b.detections.push_back(random_detection(rng, 1));
    const double thr = rng.uniform(0.05, 0.5);
    // oracle: among all matchings, keep the one whose IoUs sorted in
    // descending order are lexicographically largest (IoUs are distinct)
    std::vector<std::size_t> perm(nb);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<double> best_key;
    std::set<std::pair<std::size_t, std::size_t>> best;
    for (unsigned ma = 0; ma < (1u << na); ++ma) {
      do {
        std::set<std::pair<std::size_t, std::size_t>> m;
        std::vector<double> key;
        bool ok = true;
        std::size_t k = 0;
        for (std::size_t i = 0; i < na; ++i) {
          if (!(ma >> i & 1))
            continue;
          if (k >= nb) {
            ok = false;
            break;
          }
          const double v = iou(a.detections[i], b.detections[perm[k]]);
          if (v < thr || v <= 0) {
            ok = false;
            break;
          }
          m.insert({i, perm[k]});
          key.push_back(v);
          ++k;
        }
        if (!ok)
          continue;
        std::sort(key.rbegin(), key.rend());
        if (key > best_key) {
          best_key = key;
          best = m;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
    const auto tracks = link_frames({a, b}, thr);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto &t : tracks)
      if (t.points.size() == 2) {
        const auto ia = std::find(a.detections.begin(), a.detections.end(), t.points[0].detection) - a.detections.begin();
        const auto ib = std::find(b.detections.begin(), b.detections.end(), t.points[1].detection) - b.detections.begin();
        got.insert({std::size_t(ia), std::size_t(ib)});
      }
    ASSERT_EQ(got, best) << "trial " << trial;
    EXPECT_EQ(tracks.size(), na + nb - got.size());
  }
}

TEST(Link, GapStartsNewTrack) {
  const auto d = box(0, 0, 1, 0, 1, 1);
  std::vector<DetectionSet> sets;
  for (long long f : {0, 1, 3}) {
    auto x = d;
    x.frame_id = f;
    sets.push_back({f, Units::px, {}, {}, {x}});
  }
  const auto tracks = link_frames(sets);
  ASSERT_EQ(tracks.size(), 2u);
  EXPECT_EQ(tracks[0].duration(), 2u);
  EXPECT_EQ(tracks[1].first_frame(), 3);
  std::swap(sets[0], sets[1]);
  EXPECT_THROW(link_frames(sets), DataError);
}

// A peak present in 1015 frames except one: linking splits it at the blip
// and the duration filter keeps both halves.
TEST(Link, LongSeriesWithBlip) {
  std::vector<DetectionSet> sets;
  for (long long f = 0; f < 1015; ++f) {
    DetectionSet s{f, Units::invA, {}, {}, {}};
    const double drift = 1e-5 * double(f);
    s.detections.push_back({f, 1.0 + drift, 0.02, 45, 20, 0.9});
    if (f != 600)
      s.detections.push_back({f, 1.5, 0.02, 30, 10, 0.95});
    if (f % 100 == 7)
      s.detections.push_back({f, 0.4, 0.01, 10, 2, 0.85});  // single-frame noise
    sets.push_back(std::move(s));
  }
  const auto tracks = filter_duration(link_frames(sets), 3);
  ASSERT_EQ(tracks.size(), 3u);
  std::vector<std::pair<long long, long long>> spans;
  for (const auto &t : tracks)
    spans.emplace_back(t.first_frame(), t.last_frame());
  std::sort(spans.begin(), spans.end());
  EXPECT_EQ(spans[0], std::make_pair(0LL, 599LL));
  EXPECT_EQ(spans[1], std::make_pair(0LL, 1014LL));
  EXPECT_EQ(spans[2], std::make_pair(601LL, 1014LL));
}

TEST(Fit, ExactDataRecoversParameters) {
  std::vector<double> q;
  for (int i = 0; i < 41; ++i)
    q.push_back(0.96 + 0.002 * i);
  const auto y = gauss_profile(q, 250, 1.0031, 0.006, -30, 80);
  const auto fit = fit_gaussian_linear(q, y, 1.002, 0.02, 0.002);
  EXPECT_FALSE(fit.flagged) << fit.flag_reason;
  EXPECT_NEAR(fit.Q_fit, 1.0031, 1e-9);
  EXPECT_NEAR(fit.w, 0.006, 1e-9);
  EXPECT_NEAR(fit.I0, 250, 1e-6);
  EXPECT_NEAR(fit.B, -30, 1e-5);
  EXPECT_NEAR(fit.C, 80, 1e-5);
}

TEST(Fit, LinearRampIsFlagged) {
  std::vector<double> q, y;
  Rng rng(3);
  for (int i = 0; i < 41; ++i) {
    q.push_back(0.96 + 0.002 * i);
    y.push_back(5 + 20 * q.back() + rng.normal(0, 0.5));
  }
  EXPECT_TRUE(fit_gaussian_linear(q, y, 1.0, 0.02, 0.002).flagged);
  EXPECT_THROW(fit_gaussian_linear({1, 2, 3}, {1, 2, 3}, 2, 1, 0.1), DataError);
}

TEST(Fit, CoverageOfReportedSigma) {
  std::vector<double> q;
  for (int i = -30; i <= 30; ++i)
    q.push_back(2.0 + 0.003 * i);
  int inside = 0;
  const int runs = 200;
  for (int s = 0; s < runs; ++s) {
    Rng rng(std::uint64_t(s) + 77);
    auto y = gauss_profile(q, 300, 2.001, 0.012, 10, 30);
    for (auto &v : y)
      v = double(rng.poisson(v));
    const auto fit = fit_gaussian_linear(q, y, 2.0, 0.03, 0.003);
    inside += !fit.flagged && std::abs(fit.Q_fit - 2.001) <= 2.0 * fit.sigma(1);
  }
  // nominal 2-sigma coverage is 95.4 %
  EXPECT_GE(inside, int(0.9 * runs));
  EXPECT_LE(inside, int(0.99 * runs));
}

TEST(Fit, PeakProfileOnPolarImage) {
  PolarImage img{Raster(90, 400), Axis{0.5, 0.005, 400}, Axis{0, 1, 90}, Units::invA};
  for (std::size_t r = 0; r < 90; ++r)
    for (std::size_t c = 0; c < 400; ++c) {
      const double q = img.q.at(double(c));
      img.raster(r, c) = 50 + 10 * q + (r >= 30 && r < 60 ? 400 * std::exp(-0.5 * std::pow((q - 1.2042) / 0.011, 2)) : 0);
    }
  const Detection d{0, 1.205, 0.06, 45, 20, 1};
  const auto fit = fit_peak_profile(img, d);
  EXPECT_FALSE(fit.flagged);
  EXPECT_NEAR(fit.Q_fit, 1.2042, 1e-6);
  img.raster.mask.assign(img.raster.size(), 1);
  EXPECT_THROW(fit_peak_profile(img, d), DataError);
}

TEST(Tracks, FileRoundTrip) {
  std::vector<Track> tracks(2);
  tracks[0].track_id = 0;
  tracks[1].track_id = 1;
  for (long long f = 0; f < 3; ++f) {
    tracks[0].points.push_back({f, {f, 1.1, 0.02, 40, 10, 0.9}, std::nullopt});
    GaussianLinearFit fit;
    fit.Q_fit = 1.5 + 0.001 * double(f);
    fit.w = 0.01;
    fit.I0 = 100;
    fit.flagged = false;
    tracks[1].points.push_back({f + 1, {f + 1, 1.5, 0.02, 20, 10, 0.95}, fit});
  }
  testing_util::TempDir dir("tracks");
  write_tracks(tracks, Units::invA, dir / "t.txt");
  const auto back = read_tracks(dir / "t.txt");
  EXPECT_EQ(back.units, Units::invA);
  ASSERT_EQ(back.tracks.size(), 2u);
  EXPECT_EQ(format_tracks(back.tracks, Units::invA), format_tracks(tracks, Units::invA));
  EXPECT_DOUBLE_EQ(back.tracks[1].points[2].q_position(), 1.502);
  EXPECT_DOUBLE_EQ(back.tracks[0].points[0].q_position(), 1.1);
  EXPECT_THROW(parse_tracks("#units px\n0 1 1 1 1 1 1\n0 1 1 1 1 1 1\n"), DataError);
}
