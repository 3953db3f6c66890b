#pragma once

// Contrast enhancement for the detection input: unit normalization, global
// histogram equalization and CLAHE. Masked cells never enter a histogram
// and are copied through unchanged.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gixd/core.hpp"

namespace gixd {

/// Affine map of unmasked values onto [0, 1]; a constant image maps to 0.
inline Raster normalize_unit(const Raster &in) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in.masked(i))
      continue;
    lo = std::min(lo, in.values[i]);
    hi = std::max(hi, in.values[i]);
  }
  Raster out = in;
  if (!(hi >= lo))
    return out;
  const double span = hi - lo;
  // the affine map can land a hair outside [0, 1], so the result is pinned
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!in.masked(i))
      out.values[i] = span > 0.0 ? std::clamp((in.values[i] - lo) / span, 0.0, 1.0) : 0.0;
  return out;
}

inline PolarImage normalize_unit(const PolarImage &in) {
  return {normalize_unit(in.raster), in.q, in.phi, in.units};
}

namespace detail {

/// Histogram bin of a value over [lo, hi] with nb bins.
struct Binner {
  double lo, inv;
  std::size_t nb;
  Binner(double lo_, double hi_, std::size_t nb_)
      : lo(lo_), inv(hi_ > lo_ ? static_cast<double>(nb_) / (hi_ - lo_) : 0.0), nb(nb_) {}
  std::size_t operator()(double v) const {
    const double t = (v - lo) * inv;
    return t > 0.0 ? std::min(static_cast<std::size_t>(t), nb - 1) : 0;
  }
};

}  // namespace detail

/// Cumulative mapping built from a (possibly clipped) histogram over
/// [lo, hi]: a value in bin j maps to the fraction of samples in bins 0..j,
/// so the map is monotone and sends hi -> 1. A degenerate histogram (no
/// samples or a single occupied value) yields the identity on the
/// normalized value (v - lo) / (hi - lo).
class EqualizationLut {
 public:
  EqualizationLut() = default;

  EqualizationLut(double lo, double hi, const std::vector<double> &hist, bool identity)
      : lo_(lo), hi_(hi), identity_(identity), bin_(lo, hi, std::max<std::size_t>(hist.size(), 1)) {
    double total = 0.0;
    for (double h : hist)
      total += h;
    if (total <= 0.0)
      identity_ = true;
    cdf_.assign(hist.size(), 0.0);
    double acc = 0.0;
    for (std::size_t j = 0; j < hist.size() && !identity_; ++j) {
      acc += hist[j] / total;
      cdf_[j] = acc;
    }
  }

  double operator()(double v) const {
    if (!(hi_ > lo_))
      return 0.0;
    if (identity_)
      return std::clamp((v - lo_) / (hi_ - lo_), 0.0, 1.0);
    return std::min(1.0, cdf_[bin_(v)]);
  }

  /// Same as operator() given the value's bin and its normalized position.
  double at(std::size_t bin, double t) const {
    if (!(hi_ > lo_))
      return 0.0;
    return identity_ ? t : std::min(1.0, cdf_[bin]);
  }

 private:
  double lo_ = 0.0, hi_ = 0.0;
  bool identity_ = true;
  detail::Binner bin_{0.0, 0.0, 1};
  std::vector<double> cdf_;
};

namespace detail {

inline std::pair<double, double> unmasked_range(const Raster &r) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.masked(i))
      continue;
    lo = std::min(lo, r.values[i]);
    hi = std::max(hi, r.values[i]);
  }
  if (!(hi >= lo))
    return {0.0, 0.0};
  return {lo, hi};
}

}  // namespace detail

/// Global histogram equalization onto [0, 1].
inline Raster equalize_histogram(const Raster &in, std::size_t num_bins = 256) {
  if (num_bins < 2)
    throw std::invalid_argument("equalize_histogram: num_bins must be >= 2");
  const auto [lo, hi] = detail::unmasked_range(in);
  std::vector<double> hist(num_bins, 0.0);
  const detail::Binner bin(lo, hi, num_bins);
  bool single_value = true;
  bool seen = false;
  double first = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in.masked(i))
      continue;
    const double v = in.values[i];
    hist[bin(v)] += 1.0;
    if (!seen) {
      first = v;
      seen = true;
    } else if (v != first) {
      single_value = false;
    }
  }
  const EqualizationLut lut(lo, hi, hist, single_value);
  Raster out = in;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!in.masked(i))
      out.values[i] = lut(in.values[i]);
  return out;
}

struct ClaheParams {
  std::size_t tiles_y = 8;
  std::size_t tiles_x = 8;
  /// Histogram clip as a multiple of the mean bin count; +inf disables it.
  double clip_limit = 4.0;
  std::size_t num_bins = 256;

  void validate() const {
    if (tiles_y == 0 || tiles_x == 0)
      throw ConfigError("clahe: tile grid must be at least 1x1");
    if (num_bins < 2)
      throw ConfigError("clahe: num_bins must be >= 2");
    if (!(clip_limit >= 1.0 / static_cast<double>(num_bins)))
      throw ConfigError("clahe: clip_limit must be >= 1/num_bins");
  }
};

/// Contrast-limited adaptive histogram equalization. The image is cut into
/// tiles_y x tiles_x tiles of ceil(rows/tiles_y) x ceil(cols/tiles_x) cells
/// (the last row/column of tiles absorbs the remainder). Each tile's
/// histogram over the global value range is clipped at
/// clip_limit * n_tile / num_bins, the excess spread evenly over all bins,
/// and turned into an EqualizationLut. Every cell is mapped through the LUTs
/// of the (up to) four nearest tile centres and blended bilinearly; beyond
/// the outermost centres the nearest LUT is used.
inline Raster clahe(const Raster &in, const ClaheParams &p) {
  p.validate();
  Raster out = in;
  if (in.rows == 0 || in.cols == 0)
    return out;
  const std::size_t ty = std::min(p.tiles_y, in.rows), tx = std::min(p.tiles_x, in.cols);
  const std::size_t th = (in.rows + ty - 1) / ty, tw = (in.cols + tx - 1) / tx;
  const std::size_t ny = (in.rows + th - 1) / th, nx = (in.cols + tw - 1) / tw;
  const auto [lo, hi] = detail::unmasked_range(in);
  const std::size_t nb = p.num_bins;
  const detail::Binner bin(lo, hi, nb);

  std::vector<EqualizationLut> luts(ny * nx);
  std::vector<double> hist(nb);
  for (std::size_t i = 0; i < ny; ++i) {
    for (std::size_t j = 0; j < nx; ++j) {
      std::fill(hist.begin(), hist.end(), 0.0);
      double n = 0.0, first = 0.0;
      bool single_value = true;
      for (std::size_t r = i * th; r < std::min(in.rows, (i + 1) * th); ++r) {
        const std::size_t c1 = std::min(in.cols, (j + 1) * tw);
        for (std::size_t c = j * tw; c < c1; ++c) {
          if (in.masked(r, c))
            continue;
          const double v = in(r, c);
          hist[bin(v)] += 1.0;
          if (n == 0.0)
            first = v;
          single_value = single_value && v == first;
          n += 1.0;
        }
      }
      if (std::isfinite(p.clip_limit) && n > 0.0) {
        const double limit = p.clip_limit * n / static_cast<double>(nb);
        double excess = 0.0;
        for (double &h : hist) {
          if (h > limit) {
            excess += h - limit;
            h = limit;
          }
        }
        const double share = excess / static_cast<double>(nb);
        for (double &h : hist)
          h += share;
      }
      luts[i * nx + j] = EqualizationLut(lo, hi, hist, single_value || n == 0.0);
    }
  }

  auto centre = [](std::size_t k, std::size_t size, std::size_t len) {
    const std::size_t a = k * size, b = std::min(len, (k + 1) * size);
    return 0.5 * static_cast<double>(a + b - 1);
  };
  // Neighbouring tile pair and weight along one axis.
  auto locate = [&](std::size_t x, std::size_t n_tiles, std::size_t size, std::size_t len) {
    struct Where {
      std::size_t k0, k1;
      double w;
    };
    const double xd = static_cast<double>(x);
    if (xd <= centre(0, size, len))
      return Where{0, 0, 0.0};
    if (xd >= centre(n_tiles - 1, size, len))
      return Where{n_tiles - 1, n_tiles - 1, 0.0};
    std::size_t k = std::min(x / size, n_tiles - 1);
    if (xd < centre(k, size, len))
      --k;
    const double c0 = centre(k, size, len), c1 = centre(k + 1, size, len);
    return Where{k, k + 1, (xd - c0) / (c1 - c0)};
  };

  using Where = decltype(locate(0, 1, 1, 1));
  std::vector<Where> col_at(in.cols);
  for (std::size_t c = 0; c < in.cols; ++c)
    col_at[c] = locate(c, nx, tw, in.cols);
  const double span = hi - lo;
  for (std::size_t r = 0; r < in.rows; ++r) {
    const auto wy = locate(r, ny, th, in.rows);
    const EqualizationLut *row0 = &luts[wy.k0 * nx], *row1 = &luts[wy.k1 * nx];
    for (std::size_t c = 0; c < in.cols; ++c) {
      if (in.masked(r, c))
        continue;
      const auto &wx = col_at[c];
      const double v = in(r, c);
      const std::size_t b = bin(v);
      const double t = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
      const double top = (1.0 - wx.w) * row0[wx.k0].at(b, t) + wx.w * row0[wx.k1].at(b, t);
      const double bot = (1.0 - wx.w) * row1[wx.k0].at(b, t) + wx.w * row1[wx.k1].at(b, t);
      out(r, c) = std::clamp((1.0 - wy.w) * top + wy.w * bot, 0.0, 1.0);
    }
  }
  return out;
}

inline PolarImage clahe(const PolarImage &in, const ClaheParams &p) {
  return {clahe(in.raster, p), in.q, in.phi, in.units};
}

/// Detection-stage enhancement: normalize to [0, 1], then CLAHE.
inline PolarImage enhance_for_detection(const PolarImage &in, const ClaheParams &p) {
  return clahe(normalize_unit(in), p);
}

}  // namespace gixd
