#include <gtest/gtest.h>

#include <set>

#include "gixd/crystallography.hpp"
#include "gixd/random.hpp"
#include "helpers.hpp"

using namespace gixd;

namespace {

ReciprocalRange range_to(double q_max) {
  ReciprocalRange r;
  r.q_min = 0.2;
  r.q_max = q_max;
  return r;
}

Detection at(const Reflection &r, double w = 0.02, double extent = 6.0) {
  const double phi = r.powder ? 45.0 : r.phi;
  const double e = r.powder ? 80.0 : extent;
  return {0, r.q, w, std::clamp(phi, e / 2, 90 - e / 2), e, 1.0};
}

}  // namespace

TEST(Cell, MonoclinicSpacingOracle) {
  const UnitCell cell{7.1, 9.3, 5.2, 90, 104.5, 90};
  const double b = cell.beta * kDeg;
  for (const Hkl h : {Hkl{1, 0, 0}, Hkl{1, 1, 1}, Hkl{2, -1, 3}, Hkl{-1, 0, 2}, Hkl{0, 4, -1}}) {
    const double inv_d2 = (h[0] * h[0] / (cell.a * cell.a) + h[1] * h[1] * std::pow(std::sin(b), 2) / (cell.b * cell.b) +
                           h[2] * h[2] / (cell.c * cell.c) - 2.0 * h[0] * h[2] * std::cos(b) / (cell.a * cell.c)) /
                          std::pow(std::sin(b), 2);
    EXPECT_NEAR(q_of_hkl(cell, h), 2 * kPi * std::sqrt(inv_d2), 1e-12);
    EXPECT_NEAR((cell.reciprocal_basis() * hkl_vector(h)).norm(), 2 * kPi * std::sqrt(inv_d2), 1e-12);
  }
  EXPECT_THROW(q_of_hkl(cell, {0, 0, 0}), std::invalid_argument);
}

TEST(Reflections, CubicPowderCountMatchesTripleLoop) {
  PhaseCard card;
  card.name = "cubic";
  card.cell = {5.0, 5.0, 5.0, 90, 90, 90};
  card.powder = true;
  const auto refl = enumerate_reflections(card, range_to(3.0));
  std::set<int> shells;
  std::map<int, int> mult;
  for (int h = -20; h <= 20; ++h)
    for (int k = -20; k <= 20; ++k)
      for (int l = -20; l <= 20; ++l) {
        const int s = h * h + k * k + l * l;
        const double q = 2 * kPi * std::sqrt(double(s)) / 5.0;
        if (s > 0 && q >= 0.2 && q <= 3.0) {
          shells.insert(s);
          ++mult[s];
        }
      }
  ASSERT_EQ(refl.size(), shells.size());
  auto it = shells.begin();
  for (const auto &r : refl) {
    EXPECT_NEAR(r.q, 2 * kPi * std::sqrt(double(*it)) / 5.0, 1e-12);
    EXPECT_EQ(r.multiplicity, mult[*it]);
    EXPECT_DOUBLE_EQ(r.intensity, double(mult[*it]));
    EXPECT_TRUE(std::isnan(r.phi));
    ++it;
  }
}

TEST(Reflections, OrientedAngles) {
  auto card = perovskite_card(2);
  card.reflections = {{{0, 2, 0}, 1}, {{1, 0, 1}, 1}, {{1, 1, 0}, 1}};
  const auto refl = enumerate_reflections(card, range_to(5.0));
  ASSERT_EQ(refl.size(), 3u);
  for (const auto &r : refl) {
    const auto [qpar, qz] = oriented_components(card, r.hkl);
    EXPECT_NEAR(std::hypot(qpar, qz), r.q, 1e-12);
    if (r.hkl == Hkl{0, 2, 0}) {
      EXPECT_NEAR(r.phi, 90.0, 1e-9);
    } else if (r.hkl == Hkl{1, 0, 1}) {
      EXPECT_NEAR(r.phi, 0.0, 1e-9);
    } else {
      EXPECT_NEAR(r.phi, std::atan2(1 / card.cell.b, 1 / card.cell.a) / kDeg, 1e-9);
    }
  }
}

TEST(Reflections, RangeLimitsOrientedComponents) {
  auto card = perovskite_card(2);
  ReciprocalRange r = range_to(2.0);
  r.q_z_max = 0.5;
  for (const auto &x : enumerate_reflections(card, r))
    EXPECT_LE(oriented_components(card, x.hkl).second, 0.5);
}

TEST(PerovskiteCard, ReflectionTable) {
  for (int n = 1; n <= 7; ++n) {
    const auto card = perovskite_card(n);
    EXPECT_EQ(card.metadata.at("layers"), std::to_string(n));
    double top = 0;
    for (const auto &r : card.reflections) {
      EXPECT_TRUE(r.hkl[0] == 0 || r.hkl[0] == 1);
      EXPECT_TRUE(r.hkl[2] == 0 || r.hkl[2] == 1);
      EXPECT_EQ((r.hkl[0] + r.hkl[1] + r.hkl[2]) % 2, 0);
      EXPECT_LE(q_of_hkl(card.cell, r.hkl), 2.0);
      EXPECT_GE(r.intensity, 0.03);
      top = std::max(top, r.intensity);
    }
    EXPECT_DOUBLE_EQ(top, 1.0);
  }
  // two-layer slab: |F(0k0)| ratio follows |cos(pi k d / b)|, damped in q
  const auto n2 = perovskite_card(2);
  auto weight = [&](Hkl h) {
    for (const auto &r : n2.reflections)
      if (r.hkl == h)
        return r.intensity;
    return -1.0;
  };
  const double b = n2.cell.b;
  auto model = [&](int k) {
    const double q = 2 * kPi * k / b;
    return std::abs(std::cos(kPi * k * 6.3 / b)) * std::exp(-q * q / 4);
  };
  EXPECT_NEAR(weight({0, 2, 0}) / weight({0, 4, 0}), model(2) / model(4), 1e-12);
  EXPECT_EQ(perovskite_cell(5).b, 39.347 + 3 * 12.612);
}

TEST(Coverage, InvariantToIntensityScale) {
  const auto card = perovskite_card(3);
  const auto refl = enumerate_reflections(card, range_to(2.0));
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < refl.size(); i += 3)
    dets.push_back(at(refl[i]));
  const double s = coverage(refl, dets);
  auto scaled = refl;
  for (auto &r : scaled)
    r.intensity *= 7.5;
  EXPECT_NEAR(coverage(scaled, dets), s, 1e-14);
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, 1.0);
  std::vector<Detection> all;
  for (const auto &r : refl)
    all.push_back(at(r));
  EXPECT_DOUBLE_EQ(coverage(refl, all), 1.0);
  EXPECT_TRUE(std::isnan(coverage({}, all)));
}

TEST(Matching, Conditions) {
  Reflection r{{0, 2, 0}, 1.0, 40.0, 1, false, 1};
  EXPECT_TRUE(matches({0, 1.019, 0.02, 45, 5, 1}, r));
  EXPECT_FALSE(matches({0, 1.03, 0.02, 45, 5, 1}, r));
  EXPECT_FALSE(matches({0, 1.0, 0.02, 46, 5, 1}, r));
  r.powder = true;
  EXPECT_TRUE(matches({0, 1.0, 0.02, 10, 5, 1}, r));
}

TEST(Identify, RanksTrueCardFirstDespiteSpuriousPeaks) {
  const auto range = range_to(2.0);
  std::vector<PhaseModel> models;
  for (int n = 1; n <= 7; ++n)
    models.emplace_back(perovskite_card(n), range);
  AngularClusters cl;
  cl.oriented.units = Units::invA;
  for (const auto &r : models[1].reflections)
    cl.oriented.detections.push_back(at(r));
  for (double q : {0.33, 0.77, 1.61})
    cl.oriented.detections.push_back({0, q, 0.01, 30, 4, 0.9});
  const auto ranking = identify_phases(models, cl);
  EXPECT_EQ(ranking[0].name, "n2");
  EXPECT_DOUBLE_EQ(ranking[0].score, 1.0);
  std::size_t pos3 = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].name == "n3")
      pos3 = i;
  EXPECT_GT(pos3, 0u);
  EXPECT_THROW(identify_phases({}, cl), ConfigError);
}

TEST(Accept, FurtherCardsMustExplainNewPeaks) {
  const auto range = range_to(2.0);
  std::vector<PhaseModel> models;
  for (int n = 1; n <= 7; ++n)
    models.emplace_back(perovskite_card(n), range);
  AngularClusters cl;
  for (int m : {1, 2})  // n2 and n3 present
    for (const auto &r : models[std::size_t(m)].reflections)
      cl.oriented.detections.push_back(at(r, 0.004, 3.0));
  const auto ranking = identify_phases(models, cl);
  const auto acc = accept_phases(models, ranking, cl, 0.5, 2);
  std::set<std::string> names;
  for (auto i : acc)
    names.insert(models[i].card.name);
  EXPECT_EQ(names, (std::set<std::string>{"n2", "n3"}));
  EXPECT_EQ(acc.size(), 2u);
  // without the novelty rule every card above the score is taken
  std::size_t above = 0;
  for (const auto &s : ranking)
    above += s.score >= 0.5;
  EXPECT_EQ(accept_phases(models, ranking, cl, 0.5, 0).size(), above);
  EXPECT_EQ(accept_phases(models, ranking, cl, 0.5, 1000).size(), 1u);
}

TEST(Index, OverlappingDetectionCarriesBothCards) {
  const auto range = range_to(2.0);
  const std::vector<PhaseModel> models{PhaseModel(perovskite_card(2), range), PhaseModel(perovskite_card(3), range)};
  // closest pair of reflections across the two cards
  double best = 1e9;
  Detection d;
  for (const auto &a : models[0].reflections)
    for (const auto &b : models[1].reflections) {
      const double dist = std::abs(a.q - b.q) + std::abs(a.phi - b.phi) / 100;
      if (dist < best && std::abs(a.phi - b.phi) < 2) {
        best = dist;
        d = {0, 0.5 * (a.q + b.q), std::abs(a.q - b.q) + 0.005, 0.5 * (a.phi + b.phi), 4.0, 1};
      }
    }
  const auto idx = index_peaks(models, {d});
  ASSERT_EQ(idx[0].assignments.size(), 2u);
  EXPECT_TRUE(idx[0].assigned_to(0));
  EXPECT_TRUE(idx[0].assigned_to(1));
  // (020) of n2 and nothing from a powder-only filter
  const Reflection *r020 = nullptr;
  for (const auto &r : models[0].reflections)
    if (r.hkl == Hkl{0, 2, 0})
      r020 = &r;
  ASSERT_NE(r020, nullptr);
  const auto one = index_peaks({models[0]}, {at(*r020, 0.002, 2.0)});
  ASSERT_EQ(one[0].assignments.size(), 1u);
  EXPECT_EQ(one[0].assignments[0].hkl, (Hkl{0, 2, 0}));
  EXPECT_TRUE(index_peaks({models[0]}, {at(*r020)}, {true})[0].assignments.empty());
}

TEST(Cluster, MatchesExhaustiveTwoMeansOnSeparatedGroups) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n_lo = std::size_t(rng.uniform_int(1, 6)), n_hi = std::size_t(rng.uniform_int(1, 6));
    DetectionSet set{0, Units::invA, {}, {}, {}};
    std::vector<double> ratio;
    for (std::size_t i = 0; i < n_lo + n_hi; ++i) {
      const double x = i < n_lo ? rng.uniform(0.02, 0.2) : rng.uniform(0.7, 1.0);
      ratio.push_back(x);
      set.detections.push_back({0, 1.0 + 0.01 * double(i), 0.02, 45, 90 * x, 1});
    }
    // exhaustive: the bipartition with the smallest within-group sum of squares
    const std::size_t n = ratio.size();
    double best = 1e300;
    unsigned best_mask = 0;
    for (unsigned m = 1; m + 1 < (1u << n); ++m) {
      double s0 = 0, s1 = 0, c0 = 0, c1 = 0;
      for (std::size_t i = 0; i < n; ++i)
        ((m >> i & 1) ? s1 : s0) += ratio[i], ((m >> i & 1) ? c1 : c0) += 1;
      double ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double mu = (m >> i & 1) ? s1 / c1 : s0 / c0;
        ss += (ratio[i] - mu) * (ratio[i] - mu);
      }
      const bool hi_is_powder = s1 / c1 > s0 / c0;
      if (ss < best - 1e-15 && hi_is_powder) {
        best = ss;
        best_mask = m;
      }
    }
    const auto cl = cluster_angular(set, [](double) { return 90.0; });
    for (std::size_t i = 0; i < n; ++i)
      ASSERT_EQ(cl.is_powder[i], bool(best_mask >> i & 1));
    EXPECT_EQ(cl.oriented.detections.size() + cl.powder.detections.size(), n);
  }
}

TEST(Cluster, SingleDetection) {
  DetectionSet set{0, Units::invA, {}, {}, {{0, 1, 0.02, 45, 80, 1}}};
  EXPECT_TRUE(cluster_angular(set, [](double) { return 90.0; }).is_powder[0]);
  set.detections[0].phi_extent = 10;
  EXPECT_FALSE(cluster_angular(set, [](double) { return 90.0; }).is_powder[0]);
}

TEST(Cards, FileRoundTrip) {
  testing_util::TempDir dir("cards");
  const auto a = perovskite_card(3), b = ito_card();
  detail::write_text(dir / "b.card", format_phase_card(b));
  detail::write_text(dir / "a.card", format_phase_card(a));
  detail::write_text(dir / "notes.txt", "ignored");
  const auto cards = load_phase_cards(dir.path());
  ASSERT_EQ(cards.size(), 2u);
  EXPECT_EQ(format_phase_card(cards[0]), format_phase_card(a));
  EXPECT_EQ(format_phase_card(cards[1]), format_phase_card(b));
  EXPECT_TRUE(cards[1].powder);
  EXPECT_THROW(parse_phase_card(KeyValueFile::parse("name = x\na = 1\nb = 1\nc = 1\n1 2\n")), ConfigError);
  EXPECT_THROW(parse_phase_card(KeyValueFile::parse("name = x\na = 1\nb = 1\nc = 1\n0 0 0 1\n")), ConfigError);
  EXPECT_THROW(parse_phase_card(KeyValueFile::parse("name = x\na = -1\nb = 1\nc = 1\n")), ConfigError);
  EXPECT_THROW(load_phase_cards(dir / "missing"), ConfigError);
}

TEST(Ito, RingPosition) {
  EXPECT_NEAR(q_of_hkl(ito_card().cell, {3, 3, 2}), 2.913, 5e-4);
}

TEST(Wedge, ProlongsBoxesEndingAtTheEdge) {
  const Axis q{0.0, 0.01, 200};
  std::vector<double> boundary(200, 90.0);
  for (std::size_t c = 100; c < 200; ++c)
    boundary[c] = 70.0;
  DetectionSet in{0, Units::invA, q, Axis{0, 0.2, 451}, {}};
  in.detections = {{0, 1.5, 0.04, 65, 10, 1}, {0, 1.5, 0.04, 40, 10, 1}, {0, 0.5, 0.04, 85, 10, 1}};
  const auto out = prolong_to_wedge(in, boundary, q, 0.2);
  EXPECT_DOUBLE_EQ(out.detections[0].phi_hi(), 90.0);
  EXPECT_DOUBLE_EQ(out.detections[0].phi_lo(), 60.0);
  EXPECT_EQ(out.detections[1], in.detections[1]);
  EXPECT_EQ(out.detections[2], in.detections[2]);
}
