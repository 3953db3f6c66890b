#pragma once

// Grazing-incidence geometry: detector pixel -> reciprocal space -> polar
// coordinates, and the Lorentz-polarization intensity correction.
//
// Conventions
//   * Pixel coordinates are (x, y) = (column, row) of pixel centres, row 0 at
//     the top of the detector. The flat detector is normal to the incident
//     beam at `distance_mm`; the direct beam hits `beam_center_px`.
//   * The sample surface is tilted by alpha_i about the horizontal axis so
//     the incident beam arrives from above at grazing angle alpha_i.
//   * A pixel at lab offset (dx, dz) = ((x - x0) p, (y0 - y) p) receives the
//     ray u = (D, dx, dz) / |r|. In the sample frame
//         sin(alpha_f) = -sin(alpha_i) u_x + cos(alpha_i) u_z
//         2theta_f     = atan2(u_y, cos(alpha_i) u_x + sin(alpha_i) u_z)
//     and
//         Q_x = k (cos a_f cos 2t_f - cos a_i)
//         Q_y = k  cos a_f sin 2t_f
//         Q_z = k (sin a_f + sin a_i),      Q_par = sqrt(Q_x^2 + Q_y^2).
//   * Refraction is not corrected.
//
// Lorentz-polarization correction (multiplicative, 1 at the direct beam):
//     C = (|r| / D)^3 / P,   P = f (1 - u_y^2) + (1 - f) (1 - u_z^2)
// where the first factor undoes the cos^3 solid-angle fall-off of a flat
// detector and f is the horizontal polarization fraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/io.hpp"

namespace gixd {

inline constexpr double kHcKeVAngstrom = 12.3984;

struct PixelCoord {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

struct QPoint {
  double q_par = 0.0;
  double q_z = 0.0;
};

struct ExperimentGeometry {
  double energy_kev = 18.0;
  double alpha_i_deg = 0.5;
  double distance_mm = 400.0;
  double pixel_mm = 0.2;
  PixelCoord beam_center{};
  std::size_t width_px = 0;   // detector columns
  std::size_t height_px = 0;  // detector rows
  double polarization = 1.0;

  double wavelength() const { return kHcKeVAngstrom / energy_kev; }
  double wavenumber() const { return 2.0 * kPi / wavelength(); }

  void validate() const {
    if (!(energy_kev > 0.0))
      throw ConfigError("geometry: energy_kev must be > 0");
    if (!(distance_mm > 0.0))
      throw ConfigError("geometry: distance_mm must be > 0");
    if (!(pixel_mm > 0.0))
      throw ConfigError("geometry: pixel_mm must be > 0");
    if (!(alpha_i_deg >= 0.0 && alpha_i_deg < 90.0))
      throw ConfigError("geometry: alpha_i_deg must be in [0, 90)");
    if (width_px == 0 || height_px == 0)
      throw ConfigError("geometry: shape_px must be positive");
    if (!(polarization >= 0.0 && polarization <= 1.0))
      throw ConfigError("geometry: polarization must be in [0, 1]");
    const double w = static_cast<double>(width_px), h = static_cast<double>(height_px);
    if (!(beam_center.x >= -w && beam_center.x <= 2.0 * w && beam_center.y >= -h &&
          beam_center.y <= 2.0 * h))
      throw ConfigError("geometry: beam_center_px too far outside the detector");
  }

  bool contains(PixelCoord p) const {
    return p.x >= -0.5 && p.y >= -0.5 && p.x <= static_cast<double>(width_px) - 0.5 &&
           p.y <= static_cast<double>(height_px) - 0.5;
  }

  /// Keys: energy_kev, alpha_i_deg, distance_mm, pixel_mm,
  /// beam_center_px = "x y", shape_px = "width height", polarization.
  static ExperimentGeometry from_config(const KeyValueFile &kv) {
    ExperimentGeometry g;
    g.energy_kev = kv.number("energy_kev");
    g.alpha_i_deg = kv.number("alpha_i_deg");
    g.distance_mm = kv.number("distance_mm");
    g.pixel_mm = kv.number("pixel_mm");
    auto [bx, by] = kv.pair("beam_center_px");
    g.beam_center = {bx, by};
    auto [w, h] = kv.pair("shape_px");
    if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h))
      throw ConfigError(kv.source() + ": shape_px must be positive integers");
    g.width_px = static_cast<std::size_t>(w);
    g.height_px = static_cast<std::size_t>(h);
    g.polarization = kv.number_or("polarization", 1.0);
    g.validate();
    return g;
  }

  std::string to_config() const {
    using detail::fmt17;
    std::string s;
    s += "energy_kev = " + fmt17(energy_kev) + "\n";
    s += "alpha_i_deg = " + fmt17(alpha_i_deg) + "\n";
    s += "distance_mm = " + fmt17(distance_mm) + "\n";
    s += "pixel_mm = " + fmt17(pixel_mm) + "\n";
    s += "beam_center_px = " + fmt17(beam_center.x) + " " + fmt17(beam_center.y) + "\n";
    s += "shape_px = " + std::to_string(width_px) + " " + std::to_string(height_px) + "\n";
    s += "polarization = " + fmt17(polarization) + "\n";
    return s;
  }
};

namespace detail {

struct LabRay {
  double ux, uy, uz;  // unit vector, x along the beam, z up
  double path_ratio;  // |r| / D
};

inline LabRay lab_ray(const ExperimentGeometry &g, PixelCoord p) {
  const double dx = (p.x - g.beam_center.x) * g.pixel_mm;
  const double dz = (g.beam_center.y - p.y) * g.pixel_mm;
  const double d = g.distance_mm;
  const double r = std::sqrt(d * d + dx * dx + dz * dz);
  return {d / r, dx / r, dz / r, r / d};
}

inline QPoint pixel_to_q_unchecked(const ExperimentGeometry &g, PixelCoord p) {
  const auto ray = lab_ray(g, p);
  const double ai = g.alpha_i_deg * kDeg;
  const double sin_ai = std::sin(ai), cos_ai = std::cos(ai);
  const double sin_af = std::clamp(-sin_ai * ray.ux + cos_ai * ray.uz, -1.0, 1.0);
  const double cos_af = std::sqrt(1.0 - sin_af * sin_af);
  const double two_theta = std::atan2(ray.uy, cos_ai * ray.ux + sin_ai * ray.uz);
  const double k = g.wavenumber();
  const double qx = k * (cos_af * std::cos(two_theta) - cos_ai);
  const double qy = k * cos_af * std::sin(two_theta);
  const double qz = k * (sin_af + sin_ai);
  return {std::hypot(qx, qy), qz};
}

}  // namespace detail

/// Scattering vector (Q_par, Q_z) in 1/Angstrom for a detector pixel.
inline QPoint pixel_to_q(const ExperimentGeometry &g, PixelCoord p) {
  if (!g.contains(p))
    throw std::out_of_range("pixel_to_q: pixel outside detector bounds");
  return detail::pixel_to_q_unchecked(g, p);
}

struct PolarPoint {
  double q = 0.0;        // |Q|
  double phi_deg = 0.0;  // atan2(Q_z, Q_par)
};

inline PolarPoint to_polar_point(QPoint q) {
  return {std::hypot(q.q_par, q.q_z), std::atan2(q.q_z, q.q_par) / kDeg};
}

/// Detector positions that scatter to (q_par, q_z); the two candidates are
/// the mirror images at +-2theta_f. Empty when the point is unreachable.
inline std::vector<PixelCoord> q_to_pixels(const ExperimentGeometry &g, QPoint q) {
  std::vector<PixelCoord> out;
  const double k = g.wavenumber();
  const double ai = g.alpha_i_deg * kDeg;
  const double sin_ai = std::sin(ai), cos_ai = std::cos(ai);
  const double sin_af = q.q_z / k - sin_ai;
  if (sin_af < -1.0 || sin_af > 1.0)
    return out;
  const double cos_af = std::sqrt(1.0 - sin_af * sin_af);
  if (cos_af <= 0.0)
    return out;
  const double qk = q.q_par / k;
  const double c2t = (cos_af * cos_af + cos_ai * cos_ai - qk * qk) / (2.0 * cos_af * cos_ai);
  if (c2t < -1.0 || c2t > 1.0)
    return out;
  const double s2t = std::sqrt(std::max(0.0, 1.0 - c2t * c2t));
  for (double sign : {1.0, -1.0}) {
    if (sign < 0.0 && s2t == 0.0)
      break;
    const double sx = cos_af * c2t, sy = sign * cos_af * s2t, sz = sin_af;
    const double ux = cos_ai * sx - sin_ai * sz;
    const double uz = sin_ai * sx + cos_ai * sz;
    if (ux <= 0.0)
      continue;
    out.push_back({g.beam_center.x + g.distance_mm * sy / ux / g.pixel_mm,
                   g.beam_center.y - g.distance_mm * uz / ux / g.pixel_mm});
  }
  return out;
}

/// Multiplicative Lorentz-polarization correction at a pixel.
inline double lp_correction(const ExperimentGeometry &g, PixelCoord p) {
  const auto ray = detail::lab_ray(g, p);
  const double f = g.polarization;
  const double pol = f * (1.0 - ray.uy * ray.uy) + (1.0 - f) * (1.0 - ray.uz * ray.uz);
  return ray.path_ratio * ray.path_ratio * ray.path_ratio / pol;
}

inline std::vector<double> lp_correction_field(const ExperimentGeometry &g) {
  std::vector<double> field(g.width_px * g.height_px);
  for (std::size_t r = 0; r < g.height_px; ++r)
    for (std::size_t c = 0; c < g.width_px; ++c)
      field[r * g.width_px + c] =
          lp_correction(g, {static_cast<double>(c), static_cast<double>(r)});
  return field;
}

inline void check_frame(const DetectorImage &img, const ExperimentGeometry &g) {
  if (img.raster.rows != g.height_px || img.raster.cols != g.width_px)
    throw DataError("frame shape does not match geometry shape_px");
}

inline DetectorImage correct_lp(const DetectorImage &img, const ExperimentGeometry &g) {
  g.validate();
  check_frame(img, g);
  DetectorImage out = img;
  const auto field = lp_correction_field(g);
  for (std::size_t i = 0; i < field.size(); ++i)
    out.raster.values[i] *= field[i];
  return out;
}

/// Area in (Q_par, Q_z) covered by one detector pixel (|Jacobian|).
inline double pixel_q_area(const ExperimentGeometry &g, PixelCoord p, double h = 1e-3) {
  auto at = [&](double dx, double dy) {
    return detail::pixel_to_q_unchecked(g, {p.x + dx, p.y + dy});
  };
  const auto xp = at(h, 0), xm = at(-h, 0), yp = at(0, h), ym = at(0, -h);
  const double a = (xp.q_par - xm.q_par) / (2 * h), b = (yp.q_par - ym.q_par) / (2 * h);
  const double c = (xp.q_z - xm.q_z) / (2 * h), d = (yp.q_z - ym.q_z) / (2 * h);
  return std::abs(a * d - b * c);
}

// ---------------------------------------------------------------------------
// Resampling. Bilinear taps are precomputed once per geometry so a stream of
// frames only pays for the gathers.

namespace detail {

struct BilinearTap {
  std::uint32_t index = 0;  // top-left source sample
  float fx = 0.f, fy = 0.f;
};

/// Bilinear tap at fractional (row, col); nullopt when the 2x2 stencil
/// leaves the source.
inline std::optional<BilinearTap> make_tap(std::size_t rows, std::size_t cols, double r,
                                           double c) {
  if (!(r >= 0.0 && c >= 0.0 && r <= double(rows - 1) && c <= double(cols - 1)))
    return std::nullopt;
  if (rows < 2 || cols < 2)
    return std::nullopt;
  auto r0 = static_cast<std::size_t>(r), c0 = static_cast<std::size_t>(c);
  if (r0 == rows - 1)
    --r0;
  if (c0 == cols - 1)
    --c0;
  return BilinearTap{static_cast<std::uint32_t>(r0 * cols + c0), static_cast<float>(c - c0),
                     static_cast<float>(r - r0)};
}

/// Mask-aware bilinear evaluation: nullopt when any corner is masked.
inline std::optional<double> apply_tap(const Raster &src, const BilinearTap &t) {
  const std::size_t i = t.index, j = t.index + src.cols;
  if (src.mask[i] | src.mask[i + 1] | src.mask[j] | src.mask[j + 1])
    return std::nullopt;
  const double fx = t.fx, fy = t.fy;
  const double top = src.values[i] + fx * (src.values[i + 1] - src.values[i]);
  const double bot = src.values[j] + fx * (src.values[j + 1] - src.values[j]);
  return top + fy * (bot - top);
}

}  // namespace detail

struct ReciprocalGrid {
  Axis q_par;  // columns
  Axis q_z;    // rows
};

/// Grid covering Q_par in [0, max] and Q_z in [0, max] reached by the detector.
inline ReciprocalGrid default_reciprocal_grid(const ExperimentGeometry &g, std::size_t n_par,
                                              std::size_t n_z) {
  g.validate();
  double qpar_max = 0.0, qz_max = 0.0;
  const std::size_t stride = std::max<std::size_t>(1, std::max(g.width_px, g.height_px) / 256);
  auto visit = [&](std::size_t r, std::size_t c) {
    const auto q = pixel_to_q(g, {double(c), double(r)});
    qpar_max = std::max(qpar_max, q.q_par);
    qz_max = std::max(qz_max, q.q_z);
  };
  for (std::size_t r = 0; r < g.height_px; r += stride)
    for (std::size_t c = 0; c < g.width_px; c += stride)
      visit(r, c);
  for (std::size_t r = 0; r < g.height_px; ++r) {
    visit(r, 0);
    visit(r, g.width_px - 1);
  }
  for (std::size_t c = 0; c < g.width_px; ++c) {
    visit(0, c);
    visit(g.height_px - 1, c);
  }
  if (!(qpar_max > 0.0 && qz_max > 0.0))
    throw ConfigError("detector does not reach Q_z > 0 and Q_par > 0");
  return {Axis::span(0.0, qpar_max, n_par), Axis::span(0.0, qz_max, n_z)};
}

/// Precomputed detector -> (Q_par, Q_z) resampling. Negative-Q_par half
/// planes are folded onto Q_par >= 0: cells reachable from both sides of the
/// beam take the mean of the two interpolated values.
class ReciprocalMap {
 public:
  ReciprocalMap(const ExperimentGeometry &g, ReciprocalGrid grid) : grid_(grid) {
    g.validate();
    width_ = g.width_px;
    height_ = g.height_px;
    const std::size_t n = grid.q_par.size * grid.q_z.size;
    taps_.resize(2 * n);
    count_.assign(n, 0);
    for (std::size_t r = 0; r < grid.q_z.size; ++r) {
      for (std::size_t c = 0; c < grid.q_par.size; ++c) {
        const std::size_t cell = r * grid.q_par.size + c;
        for (const auto &p : q_to_pixels(g, {grid.q_par.at(double(c)), grid.q_z.at(double(r))})) {
          if (auto t = detail::make_tap(height_, width_, p.y, p.x))
            taps_[2 * cell + count_[cell]++] = *t;
        }
      }
    }
    if (std::all_of(count_.begin(), count_.end(), [](auto n) { return n == 0; }))
      throw DataError("reciprocal grid does not overlap the detector");
  }

  const ReciprocalGrid &grid() const { return grid_; }

  ReciprocalImage apply(const DetectorImage &img) const {
    if (img.raster.rows != height_ || img.raster.cols != width_)
      throw DataError("frame shape does not match geometry shape_px");
    ReciprocalImage out{Raster(grid_.q_z.size, grid_.q_par.size), grid_.q_par, grid_.q_z};
    for (std::size_t cell = 0; cell < count_.size(); ++cell) {
      double sum = 0.0;
      int used = 0;
      for (int k = 0; k < count_[cell]; ++k) {
        if (auto v = detail::apply_tap(img.raster, taps_[2 * cell + k])) {
          sum += *v;
          ++used;
        }
      }
      if (used == 0)
        out.raster.mask[cell] = 1;
      else
        out.raster.values[cell] = sum / used;
    }
    return out;
  }

 private:
  ReciprocalGrid grid_;
  std::size_t width_ = 0, height_ = 0;
  std::vector<detail::BilinearTap> taps_;
  std::vector<std::uint8_t> count_;
};

inline ReciprocalImage to_reciprocal(const DetectorImage &img, const ExperimentGeometry &g,
                                     const ReciprocalGrid &grid) {
  check_frame(img, g);
  return ReciprocalMap(g, grid).apply(img);
}

/// Precomputed (Q_par, Q_z) -> (|Q|, phi) resampling onto phi in [0, 90] deg
/// (rows) and |Q| in [0, corner radius of the input grid] (columns).
class PolarMap {
 public:
  PolarMap(const ReciprocalGrid &src, std::size_t phi_rows, std::size_t q_cols) : src_(src) {
    const double q_max = std::hypot(src.q_par.last(), src.q_z.last());
    q_ = Axis::span(0.0, q_max, q_cols);
    phi_ = Axis::span(0.0, 90.0, phi_rows);
    taps_.resize(phi_rows * q_cols);
    valid_.assign(phi_rows * q_cols, 0);
    for (std::size_t r = 0; r < phi_rows; ++r) {
      const double phi = phi_.at(double(r)) * kDeg;
      const double cp = r + 1 == phi_rows ? 0.0 : std::cos(phi);
      const double sp = std::sin(phi);
      for (std::size_t c = 0; c < q_cols; ++c) {
        const double q = q_.at(double(c));
        const double col = src.q_par.index_of(q * cp), row = src.q_z.index_of(q * sp);
        if (auto t = detail::make_tap(src.q_z.size, src.q_par.size, row, col)) {
          taps_[r * q_cols + c] = *t;
          valid_[r * q_cols + c] = 1;
        }
      }
    }
  }

  const Axis &q_axis() const { return q_; }
  const Axis &phi_axis() const { return phi_; }

  PolarImage apply(const ReciprocalImage &img) const {
    if (img.raster.rows != src_.q_z.size || img.raster.cols != src_.q_par.size)
      throw DataError("reciprocal image does not match the polar map grid");
    PolarImage out{Raster(phi_.size, q_.size), q_, phi_, Units::invA};
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      std::optional<double> v;
      if (valid_[i])
        v = detail::apply_tap(img.raster, taps_[i]);
      if (v)
        out.raster.values[i] = *v;
      else
        out.raster.mask[i] = 1;
    }
    return out;
  }

 private:
  ReciprocalGrid src_;
  Axis q_, phi_;
  std::vector<detail::BilinearTap> taps_;
  std::vector<std::uint8_t> valid_;
};

inline PolarImage to_polar(const ReciprocalImage &img, std::size_t phi_rows = 512,
                           std::size_t q_cols = 1024) {
  return PolarMap({img.q_par, img.q_z}, phi_rows, q_cols).apply(img);
}

/// Largest angular extent (deg) a ring of radius |Q| can have inside the
/// rectangle Q_par <= q_par_max, 0 <= Q_z <= q_z_max.
inline double max_arc_extent(double q, double q_z_max, double q_par_max) {
  if (q < 0.0)
    throw std::invalid_argument("max_arc_extent: |Q| must be >= 0");
  if (q * q > q_z_max * q_z_max + q_par_max * q_par_max)
    return 0.0;
  const double phi_max = q <= q_z_max ? 90.0 : std::asin(q_z_max / q) / kDeg;
  const double phi_min = q <= q_par_max ? 0.0 : std::acos(q_par_max / q) / kDeg;
  return std::max(0.0, phi_max - phi_min);
}

/// Upper edge (deg) of the measured region below the missing wedge, per |Q|
/// column: the phi of the highest unmasked row when every row above it is
/// masked and the column's top cell would be inside the grid
/// (|Q| <= q_z_max). 90 where the column has no wedge, NaN where the column
/// is fully masked.
inline std::vector<double> wedge_boundary(const PolarImage &img, double q_z_max) {
  const auto &r = img.raster;
  std::vector<double> out(r.cols, 90.0);
  for (std::size_t c = 0; c < r.cols; ++c) {
    std::size_t top = r.rows;
    for (std::size_t k = r.rows; k-- > 0;) {
      if (!r.masked(k, c)) {
        top = k;
        break;
      }
    }
    if (top == r.rows)
      out[c] = std::nan("");
    else if (top + 1 == r.rows || img.q.at(double(c)) > q_z_max)
      out[c] = img.phi.last();
    else
      out[c] = img.phi.at(double(top));
  }
  return out;
}

}  // namespace gixd
