#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gixd/lbfgsb.hpp"
#include "gixd/lm.hpp"
#include "gixd/random.hpp"
#include "gixd/refine.hpp"

using namespace gixd;

namespace {

std::vector<RefinementPeak> exact_peaks(const UnitCell &cell) {
  const std::vector<Hkl> hkls{{1, 0, 0}, {0, 2, 0}, {0, 0, 1}, {1, 1, 1}, {1, 4, 1},
                              {0, 6, 1}, {1, 3, 0}, {2, 0, 1}, {0, 8, 0}};
  std::vector<RefinementPeak> out;
  for (const auto &h : hkls)
    out.push_back({h, q_of_hkl(cell, h)});
  return out;
}

// Closed-form orthorhombic |Q| for the oracle below.
double q_ortho(double a, double b, double c, const Hkl &h) {
  return 2 * M_PI * std::sqrt(h[0] * h[0] / (a * a) + h[1] * h[1] / (b * b) + h[2] * h[2] / (c * c));
}

}  // namespace

TEST(Refine, RecoversExactCell) {
  const UnitCell truth = perovskite_cell(3);
  UnitCell start = truth;
  start.a *= 1.03;
  start.b *= 0.97;
  start.c *= 1.02;
  const auto r = refine_cell(exact_peaks(truth), start);
  EXPECT_TRUE(r.ok()) << r.flags;
  EXPECT_NEAR(r.cell.a, truth.a, 1e-6);
  EXPECT_NEAR(r.cell.b, truth.b, 1e-6);
  EXPECT_NEAR(r.cell.c, truth.c, 1e-6);
  EXPECT_LT(r.chi2, 1e-12);
  EXPECT_EQ(r.n_peaks, 9u);
}

TEST(Refine, SigmaOnlyRescalesChi2AndErrors) {
  const UnitCell truth = perovskite_cell(2);
  auto peaks = exact_peaks(truth);
  Rng rng(5);
  for (auto &p : peaks)
    p.q += 0.002 * rng.normal();
  const auto r1 = refine_cell(peaks, truth, 0.01);
  const auto r5 = refine_cell(peaks, truth, 0.05);
  EXPECT_EQ(std::memcmp(&r1.cell.a, &r5.cell.a, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&r1.cell.b, &r5.cell.b, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&r1.cell.c, &r5.cell.c, sizeof(double)), 0);
  EXPECT_NEAR(r5.chi2 * 25, r1.chi2, 1e-12 * r1.chi2);
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(r5.std_errors[i], 5 * r1.std_errors[i], 1e-12 * r5.std_errors[i]);
}

TEST(Refine, GradientAndHessianMatchFiniteDifferences) {
  const UnitCell truth = perovskite_cell(3);
  auto peaks = exact_peaks(truth);
  Rng rng(9);
  for (auto &p : peaks)
    p.q += 0.01 * rng.normal();
  const UnitCell at{8.8, 52.3, 8.95, 90, 90, 90};
  const double sigma = 0.02;
  auto f = [&](double a, double b, double c) {
    double s = 0;
    for (const auto &p : peaks) {
      const double d = (p.q - q_ortho(a, b, c, p.hkl)) / sigma;
      s += d * d;
    }
    return s;
  };
  EXPECT_NEAR(chi2_of(peaks, at, sigma), f(at.a, at.b, at.c), 1e-10 * f(at.a, at.b, at.c));
  const auto g = chi2_gradient(peaks, at, sigma);
  const auto H = chi2_hessian(peaks, at, sigma);
  const double h = 1e-5;
  std::array<double, 3> x{at.a, at.b, at.c};
  auto eval = [&](std::array<double, 3> y) { return f(y[0], y[1], y[2]); };
  for (int i = 0; i < 3; ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (eval(xp) - eval(xm)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    for (int j = 0; j < 3; ++j) {
      auto pp = x, pm = x, mp = x, mm = x;
      pp[i] += h, pp[j] += h;
      pm[i] += h, pm[j] -= h;
      mp[i] -= h, mp[j] += h;
      mm[i] -= h, mm[j] -= h;
      const double fdh = (eval(pp) - eval(pm) - eval(mp) + eval(mm)) / (4 * h * h);
      EXPECT_NEAR(H(i, j), fdh, 1e-3 * std::max(1.0, std::abs(fdh)));
    }
  }
}

TEST(Refine, OnlyStackingPeaksLeaveHessianSingular) {
  const UnitCell truth = perovskite_cell(2);
  std::vector<RefinementPeak> peaks;
  for (int k = 2; k <= 8; k += 2)
    peaks.push_back({{0, k, 0}, q_of_hkl(truth, {0, k, 0})});
  const auto r = refine_cell(peaks, truth);
  EXPECT_NE(r.flags.find("singular_hessian"), std::string::npos);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(std::isinf(r.std_errors[0]));
  EXPECT_NEAR(r.cell.b, truth.b, 1e-6);
}

TEST(Refine, FewerThanFourPeaksThrow) {
  const UnitCell truth = perovskite_cell(2);
  auto peaks = exact_peaks(truth);
  peaks.resize(3);
  EXPECT_THROW(refine_cell(peaks, truth), DataError);
  IndexedPeak ip;
  ip.assignments.push_back({0, "n2", {1, 0, 0}, 1, 0});
  EXPECT_THROW(select_nonoverlapping({ip, ip, ip}, 0), DataError);
}

TEST(Refine, RejectsBadInputs) {
  const auto peaks = exact_peaks(perovskite_cell(2));
  EXPECT_THROW(refine_cell(peaks, {8, 39, 8, 90, 95, 90}), ConfigError);
  EXPECT_THROW(refine_cell(peaks, perovskite_cell(2), 0.0), ConfigError);
}

TEST(Refine, FlagsSolutionOnTheBound) {
  const UnitCell truth = perovskite_cell(2);
  UnitCell start = truth;
  start.a = truth.a * 1.5;  // the truth lies outside +-20%
  const auto r = refine_cell(exact_peaks(truth), start);
  EXPECT_NE(r.flags.find("at_bound"), std::string::npos);
  EXPECT_NEAR(r.cell.a, start.a * 0.8, 1e-9);
}

TEST(Refine, StandardErrorsMatchMonteCarloScatter) {
  const UnitCell truth = perovskite_cell(3);
  const auto clean = exact_peaks(truth);
  const double sigma = 0.005;
  const int runs = 400;
  std::array<double, 3> sum{}, sum2{}, reported{};
  Rng rng(2024);
  for (int k = 0; k < runs; ++k) {
    auto peaks = clean;
    for (auto &p : peaks)
      p.q += sigma * rng.normal();
    const auto r = refine_cell(peaks, truth, sigma);
    ASSERT_TRUE(r.ok()) << r.flags;
    const std::array<double, 3> v{r.cell.a, r.cell.b, r.cell.c};
    for (int i = 0; i < 3; ++i) {
      sum[i] += v[i];
      sum2[i] += v[i] * v[i];
      reported[i] += r.std_errors[i] / runs;
    }
  }
  for (int i = 0; i < 3; ++i) {
    const double mean = sum[i] / runs;
    const double sd = std::sqrt((sum2[i] - runs * mean * mean) / (runs - 1));
    EXPECT_GT(sd / reported[i], 0.85) << i;
    EXPECT_LT(sd / reported[i], 1.15) << i;
  }
}

TEST(Refine, SeriesFollowsDriftingStackingLength) {
  const PhaseCard card = perovskite_card(2);
  const std::vector<Hkl> hkls{{1, 0, 1}, {0, 2, 0}, {1, 1, 0}, {0, 4, 1}, {1, 4, 1}, {1, 0, 0}};
  std::vector<Track> tracks(hkls.size());
  const int frames = 30;
  for (std::size_t j = 0; j < hkls.size(); ++j) {
    tracks[j].track_id = long(j);
    for (int t = 0; t < frames; ++t) {
      UnitCell c = card.cell;
      c.b = 40.5 - 0.5 * t / (frames - 1.0);
      TrackPoint p;
      p.frame_id = t;
      p.detection.frame_id = t;
      p.detection.q_center = q_of_hkl(c, hkls[j]);
      tracks[j].points.push_back(p);
    }
  }
  std::vector<IndexedTrack> indexed;
  for (std::size_t j = 0; j < hkls.size(); ++j)
    indexed.push_back({&tracks[j], {{0, "n2", hkls[j], 0, 0}}});
  // a track shared with another card drops out of the fit
  indexed[5].assignments.push_back({1, "n3", {0, 0, 1}, 0, 0});
  const auto series = refine_series(indexed, 0, card.cell);
  ASSERT_EQ(series.size(), std::size_t(frames));
  for (const auto &e : series) {
    ASSERT_TRUE(e.result) << e.error;
    EXPECT_EQ(e.n_peaks, 5u);
    EXPECT_NEAR(e.result->cell.b, 40.5 - 0.5 * e.frame_id / (frames - 1.0), 1e-6);
  }
  EXPECT_NEAR(b_slope(series), -0.5 / (frames - 1.0), 1e-8);
  const auto table = format_series(series);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), frames + 1);

  indexed.resize(3);
  const auto refused = refine_series(indexed, 0, card.cell);
  ASSERT_EQ(refused.size(), std::size_t(frames));
  EXPECT_FALSE(refused.front().result);
  EXPECT_NE(format_series(refused).find("refused"), std::string::npos);
  EXPECT_TRUE(std::isnan(b_slope(refused)));
}

TEST(Lbfgsb, BoundedRosenbrock) {
  auto rosen = [](const Eigen::VectorXd &x, Eigen::VectorXd &g) {
    g.resize(2);
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    g[0] = -2 * a - 400 * x[0] * b;
    g[1] = 200 * b;
    return a * a + 100 * b * b;
  };
  const Eigen::Vector2d lo(-2, -2), hi(2, 2);
  auto r = lbfgsb_minimize(rosen, Eigen::Vector2d(-1.2, 1), lo, hi);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1, 1e-6);
  EXPECT_NEAR(r.x[1], 1, 1e-6);

  // with x0 <= 0.5 the constrained minimum sits on the bound: x = (0.5, 0.25)
  const Eigen::Vector2d hi2(0.5, 2);
  r = lbfgsb_minimize(rosen, Eigen::Vector2d(-1.2, 1), lo, hi2);
  EXPECT_TRUE(r.converged);
  EXPECT_DOUBLE_EQ(r.x[0], 0.5);
  EXPECT_NEAR(r.x[1], 0.25, 1e-7);
  EXPECT_LT(r.projected_gradient_norm, 1e-8);
}

TEST(Lm, FitsExponentialDecay) {
  std::vector<double> t, y;
  for (int i = 0; i < 40; ++i) {
    t.push_back(0.1 * i);
    y.push_back(3.0 * std::exp(-1.7 * t.back()) + 0.4);
  }
  auto model = [&](const Eigen::VectorXd &p, Eigen::VectorXd &r, Eigen::MatrixXd &J) {
    r.resize(Eigen::Index(t.size()));
    J.resize(Eigen::Index(t.size()), 3);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto k = Eigen::Index(i);
      const double e = std::exp(-p[1] * t[i]);
      r[k] = p[0] * e + p[2] - y[i];
      J(k, 0) = e;
      J(k, 1) = -p[0] * t[i] * e;
      J(k, 2) = 1;
    }
  };
  const auto r = levenberg_marquardt(model, Eigen::Vector3d(1, 0.5, 0));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 3.0, 1e-8);
  EXPECT_NEAR(r.x[1], 1.7, 1e-8);
  EXPECT_NEAR(r.x[2], 0.4, 1e-8);
  EXPECT_LT(r.cost, 1e-20);
}
