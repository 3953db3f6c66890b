#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gixd {

/// Invalid or inconsistent configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or out-of-contract data (CLI exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDeg = kPi / 180.0;

/// Regular sampling axis: coordinate of sample i is start + i * step.
struct Axis {
  double start = 0.0;
  double step = 1.0;
  std::size_t size = 0;

  double at(double i) const { return start + i * step; }
  double last() const { return at(static_cast<double>(size) - 1.0); }
  /// Fractional sample index of coordinate v.
  double index_of(double v) const { return (v - start) / step; }

  /// Axis spanning [lo, hi] inclusive with n samples.
  static Axis span(double lo, double hi, std::size_t n) {
    if (n < 2 || !(hi > lo))
      throw std::invalid_argument("Axis::span needs n >= 2 and hi > lo");
    return Axis{lo, (hi - lo) / static_cast<double>(n - 1), n};
  }

  friend bool operator==(const Axis &, const Axis &) = default;
};

/// Row-major 2D array of intensities with a parallel mask (1 = masked).
struct Raster {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;

  Raster() = default;
  Raster(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill), mask(r * c, 0) {}

  std::size_t size() const { return values.size(); }
  double &operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool masked(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }
  bool masked(std::size_t i) const { return mask[i] != 0; }

  friend bool operator==(const Raster &, const Raster &) = default;
};

/// Raw detector frame; row 0 is the top of the detector.
struct DetectorImage {
  Raster raster;
};

/// Intensities over (Q_par, Q_z): rows follow q_z, columns follow q_par.
struct ReciprocalImage {
  Raster raster;
  Axis q_par;
  Axis q_z;
};

enum class Units { px, invA };

inline const char *to_string(Units u) { return u == Units::px ? "px" : "invA"; }

/// Intensities over (|Q|, phi): rows follow phi, columns follow |Q|.
struct PolarImage {
  Raster raster;
  Axis q;
  Axis phi;
  Units units = Units::invA;
};

inline bool all_finite_nonnegative(const Raster &r) {
  for (double v : r.values)
    if (!std::isfinite(v) || v < 0.0)
      return false;
  return true;
}

}  // namespace gixd
