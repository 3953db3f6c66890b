#pragma once

// Detections in polar space, the classical band-profile detector, and the
// line-oriented exchange format shared with external detectors.
//
// Exchange format (UTF-8):
//   #units px|invA
//   #frame <id> <q0> <dq> <phi0> <dphi>        (axes, 17 significant digits)
//   <frame_id> <q_center> <q_width> <phi_center> <phi_extent> <score>
// Records use 9 significant digits and follow their frame header.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/io.hpp"

namespace gixd {

/// Rounds to the 9 significant digits of the exchange format.
inline double round9(double v) {
  if (!std::isfinite(v) || v == 0.0)
    return v;
  return std::stod(detail::fmt9(v));
}

/// Axis-aligned box in polar space; q along columns, phi along rows.
struct Box {
  double q_lo = 0, q_hi = 0, phi_lo = 0, phi_hi = 0;

  double width() const { return q_hi - q_lo; }
  double height() const { return phi_hi - phi_lo; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
};

struct Detection {
  long long frame_id = 0;
  double q_center = 0;    // px or 1/A
  double q_width = 0;     // full radial size of the box
  double phi_center = 0;  // px or degrees
  double phi_extent = 0;  // full angular size of the box
  double score = 0;       // in [0, 1]

  Box box() const {
    return {q_center - 0.5 * q_width, q_center + 0.5 * q_width, phi_center - 0.5 * phi_extent,
            phi_center + 0.5 * phi_extent};
  }
  double phi_lo() const { return phi_center - 0.5 * phi_extent; }
  double phi_hi() const { return phi_center + 0.5 * phi_extent; }

  static Detection from_box(long long frame, const Box &b, double score) {
    return {frame, 0.5 * (b.q_lo + b.q_hi), b.width(), 0.5 * (b.phi_lo + b.phi_hi), b.height(),
            score};
  }

  friend bool operator==(const Detection &, const Detection &) = default;
};

struct DetectionSet {
  long long frame_id = 0;
  Units units = Units::px;
  Axis q;    // polar axes of the frame the detections refer to
  Axis phi;
  std::vector<Detection> detections;

  // The exchange format carries axis origin and step only, so equality
  // ignores the axis lengths.
  friend bool operator==(const DetectionSet &a, const DetectionSet &b) {
    return a.frame_id == b.frame_id && a.units == b.units && a.q.start == b.q.start &&
           a.q.step == b.q.step && a.phi.start == b.phi.start && a.phi.step == b.phi.step &&
           a.detections == b.detections;
  }
};

inline DetectionSet empty_set_for(const PolarImage &img, long long frame_id) {
  return {frame_id, img.units, img.q, img.phi, {}};
}

/// Checks the per-detection invariants; throws DataError naming `where`.
inline void validate_detection(const Detection &d, Units units, const std::string &where) {
  if (!(std::isfinite(d.q_center) && std::isfinite(d.phi_center)))
    throw DataError(where + ": non-finite position");
  if (!(d.q_width > 0.0 && d.phi_extent > 0.0))
    throw DataError(where + ": widths must be > 0");
  if (!(d.score >= 0.0 && d.score <= 1.0))
    throw DataError(where + ": score must lie in [0, 1]");
  // centre and extent carry 9 significant digits, so their sum may overshoot
  // the wedge by a few 1e-8 degrees
  if (units == Units::invA && (d.phi_lo() < -1e-6 || d.phi_hi() > 90.0 + 1e-6))
    throw DataError(where + ": phi bounds must lie within [0, 90] degrees");
}

// ---------------------------------------------------------------------------
// Classical reference detector.

struct ClassicalParams {
  std::size_t band_rows = 16;
  double k_sigma = 4.0;
  std::size_t median_window = 41;  // columns, odd
  double merge_overlap = 0.5;      // fraction of the narrower width
  double merge_shift = 1.5;        // max centre change between bands, columns
  double min_prominence = 0.05;    // floor on the threshold (normalized units)
};

namespace detail {

struct BandHit {
  double center;      // column, fractional
  double fwhm;        // columns
  double prominence;
  double threshold;
  std::size_t top;    // column of the profile maximum
};

inline double median_of(std::vector<double> &v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

/// Peaks of one band profile. `valid[c]` is false where the band has no
/// unmasked cell in column c.
inline std::vector<BandHit> band_hits(const std::vector<double> &profile,
                                      const std::vector<bool> &valid, const ClassicalParams &p) {
  const std::size_t n = profile.size();
  std::vector<double> resid(n, 0.0);
  // rolling median over the valid columns of [c - half, c + half], kept as
  // a sorted window
  std::vector<double> window;
  const std::size_t half = p.median_window / 2;
  for (std::size_t k = 0; k <= std::min(n - 1, half); ++k)
    if (valid[k])
      window.insert(std::upper_bound(window.begin(), window.end(), profile[k]), profile[k]);
  for (std::size_t c = 0; c < n; ++c) {
    if (c > 0) {
      if (c + half < n && valid[c + half])
        window.insert(std::upper_bound(window.begin(), window.end(), profile[c + half]),
                      profile[c + half]);
      if (c > half && valid[c - half - 1])
        window.erase(std::lower_bound(window.begin(), window.end(), profile[c - half - 1]));
    }
    if (!valid[c])
      continue;
    const std::size_t mid = window.size() / 2;
    double med = window[mid];
    if (window.size() % 2 == 0)
      med = 0.5 * (med + window[mid - 1]);
    resid[c] = profile[c] - med;
  }

  // Noise scale from first differences: smooth peaks barely move it, while
  // pixel-to-pixel noise of variance s^2 gives differences of variance 2 s^2.
  std::vector<double> vals;
  for (std::size_t c = 1; c < n; ++c)
    if (valid[c] && valid[c - 1])
      vals.push_back(resid[c] - resid[c - 1]);
  if (vals.size() < 3)
    return {};
  const double med = median_of(vals);
  for (double &v : vals)
    v = std::abs(v - med);
  const double sigma = 1.4826 * median_of(vals) / std::sqrt(2.0);
  const double thr = std::max(p.k_sigma * sigma, p.min_prominence);

  std::vector<BandHit> hits;
  for (std::size_t c = 1; c + 1 < n; ++c) {
    if (!valid[c] || !valid[c - 1] || !valid[c + 1])
      continue;
    const double h = resid[c];
    if (!(h > resid[c - 1] && h >= resid[c + 1]) || h < thr)
      continue;
    // topographic prominence
    double min_l = h, min_r = h;
    std::size_t k = c;
    while (k > 0 && valid[k - 1] && resid[k - 1] <= h) {
      --k;
      min_l = std::min(min_l, resid[k]);
    }
    k = c;
    while (k + 1 < n && valid[k + 1] && resid[k + 1] <= h) {
      ++k;
      min_r = std::min(min_r, resid[k]);
    }
    const double base = std::max(min_l, min_r);
    const double prom = h - std::max(base, 0.0);
    if (prom < thr)
      continue;
    const double level = h - 0.5 * prom;
    // interpolated half-level crossings
    std::size_t l = c;
    while (l > 0 && valid[l - 1] && resid[l - 1] > level)
      --l;
    double left = static_cast<double>(l);
    if (l > 0 && valid[l - 1])
      left = static_cast<double>(l - 1) + (level - resid[l - 1]) / (resid[l] - resid[l - 1]);
    std::size_t r = c;
    while (r + 1 < n && valid[r + 1] && resid[r + 1] > level)
      ++r;
    double right = static_cast<double>(r);
    if (r + 1 < n && valid[r + 1])
      right = static_cast<double>(r) + (resid[r] - level) / (resid[r] - resid[r + 1]);
    // The baseline can tilt the residual, so the position comes from the
    // profile itself, starting at its local maximum inside the
    // half-prominence region.
    std::size_t m = c;
    while (m > l && m > 0 && profile[m - 1] > profile[m])
      --m;
    while (m < r && m + 1 < n && valid[m + 1] && profile[m + 1] > profile[m])
      ++m;
    // Broad or flat tops (quantized equalization) use the midpoint of the
    // crossings 10% of the prominence below the top; sharp tops a parabola.
    const double top_level = profile[m] - 0.1 * prom;
    std::size_t tl = m, tr = m;
    while (tl > 0 && valid[tl - 1] && profile[tl - 1] > top_level)
      --tl;
    while (tr + 1 < n && valid[tr + 1] && profile[tr + 1] > top_level)
      ++tr;
    double center = static_cast<double>(m);
    if (tr - tl >= 2) {
      double xl = static_cast<double>(tl), xr = static_cast<double>(tr);
      if (tl > 0 && valid[tl - 1])
        xl -= (profile[tl] - top_level) / (profile[tl] - profile[tl - 1]);
      if (tr + 1 < n && valid[tr + 1])
        xr += (profile[tr] - top_level) / (profile[tr] - profile[tr + 1]);
      center = 0.5 * (xl + xr);
    } else if (m > 0 && m + 1 < n && valid[m - 1] && valid[m + 1]) {
      const double a = profile[m - 1], b0 = profile[m + 1];
      const double curv = a - 2.0 * profile[m] + b0;
      if (curv < 0.0)
        center += std::clamp(0.5 * (a - b0) / curv, -0.5, 0.5);
    }
    const BandHit hit{center, std::max(right - left, 1.0), prom, thr, m};
    // shoulders of the residual can climb to an already reported maximum
    if (!hits.empty() && hits.back().top == hit.top) {
      if (hit.prominence > hits.back().prominence)
        hits.back() = hit;
      continue;
    }
    hits.push_back(hit);
  }
  return hits;
}

}  // namespace detail

/// Band-profile detector over an enhanced, unit-normalized polar image.
///
/// The phi axis is cut into bands of `band_rows` rows. For each band the
/// mean radial profile (unmasked cells) has a rolling median subtracted;
/// local maxima whose topographic prominence exceeds
/// max(k_sigma * noise, min_prominence) become hits, where the noise scale is
/// the MAD of first differences. A hit is centred on the profile's own top
/// and its width is the full width at half prominence. Hits in consecutive
/// bands are chained when their half-prominence intervals overlap by at least
/// `merge_overlap` of the narrower one and the centre moves by no more than
/// max(merge_shift, FWHM / 4). Each chain becomes one box with
///   q_width = 2 (1.1 sigma + 1.5 dq),  sigma = FWHM / 2.3548,
/// matching the annotation padding. The score is 1 - 1 / (2 z) clipped to
/// [0, 1], with z the summed prominence-to-threshold ratio over the chain
/// divided by sqrt(number of hits): 0.5 for a single hit at threshold.
inline DetectionSet classical_detect(const PolarImage &img, const ClassicalParams &p = {},
                                     long long frame_id = 0) {
  DetectionSet out = empty_set_for(img, frame_id);
  const auto &r = img.raster;
  if (r.rows == 0 || r.cols < 3 || p.band_rows == 0)
    return out;

  struct Chain {
    std::size_t first_band, last_band;
    double weight_sum, center_sum, fwhm_sum;
    double last_center, last_fwhm;
    double snr_sum;
    std::size_t n_hits;
  };
  std::vector<Chain> done, open;

  const std::size_t n_bands = (r.rows + p.band_rows - 1) / p.band_rows;
  std::vector<double> profile(r.cols);
  std::vector<bool> valid(r.cols);
  std::vector<std::size_t> count(r.cols);
  for (std::size_t b = 0; b < n_bands; ++b) {
    std::fill(profile.begin(), profile.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t row = b * p.band_rows; row < std::min(r.rows, (b + 1) * p.band_rows); ++row)
      for (std::size_t c = 0; c < r.cols; ++c)
        if (!r.masked(row, c)) {
          profile[c] += r(row, c);
          ++count[c];
        }
    for (std::size_t c = 0; c < r.cols; ++c) {
      valid[c] = count[c] > 0;
      if (valid[c])
        profile[c] /= static_cast<double>(count[c]);
    }
    auto hits = detail::band_hits(profile, valid, p);
    // strongest hits claim their chains first
    std::stable_sort(hits.begin(), hits.end(), [](const auto &a, const auto &b) {
      return a.prominence > b.prominence;
    });

    std::vector<Chain> next_open;
    std::vector<bool> used(open.size(), false);
    auto overlap = [](const detail::BandHit &h, const Chain &ch) {
      const double lo = std::max(h.center - h.fwhm / 2, ch.last_center - ch.last_fwhm / 2);
      const double hi = std::min(h.center + h.fwhm / 2, ch.last_center + ch.last_fwhm / 2);
      return (hi - lo) / std::min(h.fwhm, ch.last_fwhm);
    };
    for (const auto &h : hits) {
      // best-overlapping chain still open from the previous band
      std::size_t best = open.size();
      double best_overlap = 0.0;
      for (std::size_t k = 0; k < open.size(); ++k) {
        if (used[k])
          continue;
        const auto &ch = open[k];
        const double ov = overlap(h, ch);
        if (ov >= p.merge_overlap && ov > best_overlap &&
            std::abs(h.center - ch.last_center) <=
                std::max(p.merge_shift, 0.25 * std::min(h.fwhm, ch.last_fwhm))) {
          best_overlap = ov;
          best = k;
        }
      }
      Chain ch;
      if (best < open.size()) {
        used[best] = true;
        ch = open[best];
      } else {
        ch = {b, b, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0};
      }
      ch.last_band = b;
      ch.weight_sum += h.prominence;
      ch.center_sum += h.prominence * h.center;
      ch.fwhm_sum += h.prominence * h.fwhm;
      ch.last_center = h.center;
      ch.last_fwhm = h.fwhm;
      ch.snr_sum += h.prominence / h.threshold;
      ++ch.n_hits;
      next_open.push_back(ch);
    }
    // A chain touched by another peak's hit in this band stays open without
    // growing, so a ring crossed by another reflection is not cut in two.
    for (std::size_t k = 0; k < open.size(); ++k) {
      if (used[k])
        continue;
      const bool shadowed = std::any_of(hits.begin(), hits.end(), [&](const auto &h) {
        return overlap(h, open[k]) > 0.0;
      });
      (shadowed ? next_open : done).push_back(open[k]);
    }
    open = std::move(next_open);
  }
  done.insert(done.end(), open.begin(), open.end());

  std::sort(done.begin(), done.end(), [](const Chain &a, const Chain &b) {
    if (a.first_band != b.first_band)
      return a.first_band < b.first_band;
    return a.center_sum / a.weight_sum < b.center_sum / b.weight_sum;
  });

  const double dq = std::abs(img.q.step), dphi = std::abs(img.phi.step);
  for (const auto &ch : done) {
    const double center_col = ch.center_sum / ch.weight_sum;
    const double sigma_cols = ch.fwhm_sum / ch.weight_sum / 2.3548;
    const std::size_t row_lo = ch.first_band * p.band_rows;
    const std::size_t row_hi = std::min(r.rows, (ch.last_band + 1) * p.band_rows) - 1;
    const double phi_lo = std::max(img.phi.at(double(row_lo)) - 0.5 * dphi, img.phi.start);
    const double phi_hi = std::min(img.phi.at(double(row_hi)) + 0.5 * dphi, img.phi.last());
    Detection d;
    d.frame_id = frame_id;
    d.q_center = round9(img.q.at(center_col));
    d.q_width = round9(2.0 * (1.1 * sigma_cols + 1.5) * dq);
    d.phi_center = round9(0.5 * (phi_lo + phi_hi));
    d.phi_extent = round9(phi_hi - phi_lo);
    const double z = ch.snr_sum / std::sqrt(static_cast<double>(ch.n_hits));
    d.score = round9(std::clamp(1.0 - 0.5 / z, 0.0, 1.0));
    out.detections.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exchange format.

inline std::string format_detections(const std::vector<DetectionSet> &sets, Units units) {
  using detail::fmt17;
  using detail::fmt9;
  std::string s = std::string("#units ") + to_string(units) + "\n";
  for (const auto &set : sets) {
    if (set.units != units)
      throw DataError("detection sets with mixed units cannot share a file");
    s += "#frame " + std::to_string(set.frame_id) + " " + fmt17(set.q.start) + " " +
         fmt17(set.q.step) + " " + fmt17(set.phi.start) + " " + fmt17(set.phi.step) + "\n";
    for (const auto &d : set.detections) {
      if (d.frame_id != set.frame_id)
        throw DataError("detection frame_id does not match its set");
      s += std::to_string(d.frame_id) + " " + fmt9(d.q_center) + " " + fmt9(d.q_width) + " " +
           fmt9(d.phi_center) + " " + fmt9(d.phi_extent) + " " + fmt9(d.score) + "\n";
    }
  }
  return s;
}

inline void write_detections(const std::vector<DetectionSet> &sets,
                             const std::filesystem::path &path,
                             std::optional<Units> units = std::nullopt) {
  const Units u = units ? *units : (sets.empty() ? Units::px : sets.front().units);
  detail::write_text(path, format_detections(sets, u));
}

struct DetectionFile {
  Units units = Units::px;
  std::vector<DetectionSet> sets;
};

inline DetectionFile parse_detections(const std::string &text,
                                      const std::string &name = "<detections>") {
  DetectionFile f;
  bool have_units = false;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string ctx = name + ":" + std::to_string(no);
    const auto tok = detail::split_ws(line);
    if (tok.empty())
      continue;
    if (tok[0] == "#units") {
      if (tok.size() != 2)
        throw DataError(ctx + ": malformed #units line");
      f.units = parse_units(tok[1]);
      have_units = true;
      continue;
    }
    if (tok[0] == "#frame") {
      if (tok.size() != 6)
        throw DataError(ctx + ": malformed #frame line");
      DetectionSet set;
      set.frame_id = detail::parse_int(tok[1], ctx);
      set.units = f.units;
      set.q = {detail::parse_double(tok[2], ctx), detail::parse_double(tok[3], ctx), 0};
      set.phi = {detail::parse_double(tok[4], ctx), detail::parse_double(tok[5], ctx), 0};
      f.sets.push_back(std::move(set));
      continue;
    }
    if (tok[0][0] == '#')
      continue;
    if (!have_units)
      throw DataError(ctx + ": record before #units header");
    if (f.sets.empty())
      throw DataError(ctx + ": record before any #frame header");
    if (tok.size() != 6)
      throw DataError(ctx + ": expected 6 columns");
    Detection d;
    d.frame_id = detail::parse_int(tok[0], ctx);
    d.q_center = detail::parse_double(tok[1], ctx);
    d.q_width = detail::parse_double(tok[2], ctx);
    d.phi_center = detail::parse_double(tok[3], ctx);
    d.phi_extent = detail::parse_double(tok[4], ctx);
    d.score = detail::parse_double(tok[5], ctx);
    if (d.frame_id != f.sets.back().frame_id)
      throw DataError(ctx + ": frame_id differs from the current #frame header");
    validate_detection(d, f.units, ctx);
    f.sets.back().detections.push_back(d);
  }
  if (!have_units)
    throw DataError(name + ": missing #units header");
  return f;
}

inline DetectionFile read_detections(const std::filesystem::path &path) {
  return parse_detections(detail::read_text(path), path.string());
}

}  // namespace gixd
