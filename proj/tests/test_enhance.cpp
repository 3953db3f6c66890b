#include <gtest/gtest.h>

#include <set>

#include "gixd/enhance.hpp"
#include "gixd/random.hpp"

using namespace gixd;

namespace {

Raster random_raster(std::size_t rows, std::size_t cols, std::uint64_t seed, double mask_share = 0.0) {
  Raster r(rows, cols);
  Rng rng(seed);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.values[i] = std::pow(rng.uniform(), 3.0) * 100.0;
    if (rng.uniform() < mask_share)
      r.mask[i] = 1;
  }
  return r;
}

// Straightforward CLAHE: per-pixel search of the bracketing tile centres and
// per-tile histograms rebuilt from scratch.
Raster naive_clahe(const Raster &in, std::size_t tiles_y, std::size_t tiles_x, double clip, std::size_t nb) {
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!in.masked(i)) {
      lo = std::min(lo, in.values[i]);
      hi = std::max(hi, in.values[i]);
    }
  const std::size_t th = (in.rows + tiles_y - 1) / tiles_y, tw = (in.cols + tiles_x - 1) / tiles_x;
  const std::size_t ny = (in.rows + th - 1) / th, nx = (in.cols + tw - 1) / tw;
  auto bin = [&](double v) {
    const double t = (v - lo) / (hi - lo) * double(nb);
    return std::min<std::size_t>(nb - 1, t > 0 ? std::size_t(t) : 0);
  };
  auto map = [&](std::size_t ti, std::size_t tj, double v) {
    std::vector<double> h(nb, 0.0);
    double n = 0;
    std::set<double> distinct;
    for (std::size_t r = ti * th; r < std::min(in.rows, (ti + 1) * th); ++r)
      for (std::size_t c = tj * tw; c < std::min(in.cols, (tj + 1) * tw); ++c)
        if (!in.masked(r, c)) {
          h[bin(in(r, c))] += 1;
          n += 1;
          distinct.insert(in(r, c));
        }
    if (distinct.size() <= 1)
      return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    const double limit = clip * n / double(nb);
    double excess = 0;
    for (auto &x : h)
      if (x > limit) {
        excess += x - limit;
        x = limit;
      }
    double acc = 0;
    for (std::size_t j = 0; j <= bin(v); ++j)
      acc += h[j] + excess / double(nb);
    return std::min(1.0, acc / n);
  };
  auto centre = [](std::size_t k, std::size_t size, std::size_t len) {
    return 0.5 * double(k * size + std::min(len, (k + 1) * size) - 1);
  };
  auto bracket = [&](double x, std::size_t n, std::size_t size, std::size_t len) {
    std::size_t k0 = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (centre(k, size, len) <= x)
        k0 = k;
    if (x <= centre(0, size, len) || k0 + 1 >= n)
      return std::tuple<std::size_t, std::size_t, double>{k0, k0, 0.0};
    const double c0 = centre(k0, size, len), c1 = centre(k0 + 1, size, len);
    return std::tuple<std::size_t, std::size_t, double>{k0, k0 + 1, (x - c0) / (c1 - c0)};
  };
  Raster out = in;
  for (std::size_t r = 0; r < in.rows; ++r)
    for (std::size_t c = 0; c < in.cols; ++c) {
      if (in.masked(r, c))
        continue;
      const auto [y0, y1, wy] = bracket(double(r), ny, th, in.rows);
      const auto [x0, x1, wx] = bracket(double(c), nx, tw, in.cols);
      const double v = in(r, c);
      const double top = (1 - wx) * map(y0, x0, v) + wx * map(y0, x1, v);
      const double bot = (1 - wx) * map(y1, x0, v) + wx * map(y1, x1, v);
      out(r, c) = std::clamp((1 - wy) * top + wy * bot, 0.0, 1.0);
    }
  return out;
}

}  // namespace

TEST(Normalize, MapsOntoUnitInterval) {
  auto r = random_raster(20, 30, 1, 0.1);
  const auto n = normalize_unit(r);
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (r.masked(i)) {
      EXPECT_EQ(n.values[i], r.values[i]);
      continue;
    }
    lo = std::min(lo, n.values[i]);
    hi = std::max(hi, n.values[i]);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Normalize, ConstantImageIsZero) {
  Raster r(4, 4);
  std::fill(r.values.begin(), r.values.end(), 3.0);
  for (double v : normalize_unit(r).values)
    EXPECT_EQ(v, 0.0);
}

TEST(Equalize, MonotoneAndEndsAtOne) {
  const auto r = random_raster(32, 32, 2);
  const auto e = equalize_histogram(r, 64);
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < r.size(); ++i)
    pairs.emplace_back(r.values[i], e.values[i]);
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i)
    EXPECT_LE(pairs[i - 1].second, pairs[i].second);
  EXPECT_DOUBLE_EQ(pairs.back().second, 1.0);
}

TEST(Clahe, MatchesNaiveImplementation) {
  for (const auto &[rows, cols, ty, tx, clip, seed] :
       {std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double, std::uint64_t>{37, 53, 4, 5, 2.0, 5},
        {64, 64, 8, 8, 4.0, 6},
        {17, 9, 3, 2, 1.5, 7},
        {40, 40, 1, 1, 1e9, 8}}) {
    const auto in = random_raster(rows, cols, seed, 0.05);
    const ClaheParams p{ty, tx, clip, 32};
    const auto got = clahe(in, p);
    const auto ref = naive_clahe(in, ty, tx, clip, 32);
    for (std::size_t i = 0; i < in.size(); ++i)
      ASSERT_NEAR(got.values[i], ref.values[i], 1e-12) << "cell " << i;
  }
}

TEST(Clahe, SingleTileWithoutClipIsGlobalEqualization) {
  const auto in = random_raster(30, 40, 9);
  const auto a = clahe(in, ClaheParams{1, 1, std::numeric_limits<double>::infinity(), 128});
  const auto b = equalize_histogram(in, 128);
  for (std::size_t i = 0; i < in.size(); ++i)
    EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Clahe, RejectsBadParameters) {
  const auto in = random_raster(8, 8, 1);
  EXPECT_THROW(clahe(in, ClaheParams{0, 8, 4.0, 256}), ConfigError);
  EXPECT_THROW(clahe(in, ClaheParams{8, 8, 4.0, 1}), ConfigError);
  EXPECT_THROW(clahe(in, ClaheParams{8, 8, 1e-5, 256}), ConfigError);
}
