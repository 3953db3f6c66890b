#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/random.hpp"

namespace gixd {

/// Classic 2D gradient-lattice noise. Lattice nodes sit every `cell_size`
/// pixels, carry seeded unit gradients and evaluate to exactly 0; in between
/// the quintic fade keeps the field C2. Output is scaled by sqrt(2), the
/// reciprocal of the 2D bound, so values lie in [-1, 1].
class PerlinNoise {
 public:
  explicit PerlinNoise(std::uint64_t seed) {
    Rng rng(seed);
    std::iota(perm_.begin(), perm_.begin() + 256, 0);
    for (int i = 255; i > 0; --i)
      std::swap(perm_[i], perm_[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    for (int i = 0; i < 256; ++i)
      perm_[256 + i] = perm_[i];
    for (auto &g : grad_) {
      const double a = rng.uniform(0.0, 2.0 * kPi);
      g = {std::cos(a), std::sin(a)};
    }
  }

  /// Noise at continuous lattice coordinates (x along columns, y along rows).
  double operator()(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const int ix = static_cast<int>(fx) & 255, iy = static_cast<int>(fy) & 255;
    const double tx = x - fx, ty = y - fy;
    const auto &g00 = grad_[hash(ix, iy)], &g10 = grad_[hash(ix + 1, iy)];
    const auto &g01 = grad_[hash(ix, iy + 1)], &g11 = grad_[hash(ix + 1, iy + 1)];
    const double n00 = g00[0] * tx + g00[1] * ty;
    const double n10 = g10[0] * (tx - 1) + g10[1] * ty;
    const double n01 = g01[0] * tx + g01[1] * (ty - 1);
    const double n11 = g11[0] * (tx - 1) + g11[1] * (ty - 1);
    const double u = fade(tx), v = fade(ty);
    const double nx0 = n00 + u * (n10 - n00), nx1 = n01 + u * (n11 - n01);
    return std::clamp(std::sqrt(2.0) * (nx0 + v * (nx1 - nx0)), -1.0, 1.0);
  }

  /// Samples on a rows x cols pixel grid with `cell_size` pixels per
  /// lattice cell; same values as operator()(c / cell, r / cell).
  Raster sample_grid(std::size_t rows, std::size_t cols, double cell_size) const {
    struct Coord {
      int i;
      double t, f;
    };
    auto coords = [&](std::size_t n) {
      std::vector<Coord> out(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double x = static_cast<double>(k) / cell_size, fx = std::floor(x);
        out[k] = {static_cast<int>(fx) & 255, x - fx, fade(x - fx)};
      }
      return out;
    };
    const auto cx = coords(cols), cy = coords(rows);
    Raster out(rows, cols);
    const double scale = std::sqrt(2.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto [iy, ty, v] = cy[r];
      double *row = out.values.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        const auto [ix, tx, u] = cx[c];
        const auto &g00 = grad_[hash(ix, iy)], &g10 = grad_[hash(ix + 1, iy)];
        const auto &g01 = grad_[hash(ix, iy + 1)], &g11 = grad_[hash(ix + 1, iy + 1)];
        const double n00 = g00[0] * tx + g00[1] * ty;
        const double n10 = g10[0] * (tx - 1) + g10[1] * ty;
        const double n01 = g01[0] * tx + g01[1] * (ty - 1);
        const double n11 = g11[0] * (tx - 1) + g11[1] * (ty - 1);
        const double nx0 = n00 + u * (n10 - n00), nx1 = n01 + u * (n11 - n01);
        row[c] = std::clamp(scale * (nx0 + v * (nx1 - nx0)), -1.0, 1.0);
      }
    }
    return out;
  }

 private:
  static double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
  std::size_t hash(int x, int y) const {
    return static_cast<std::size_t>(perm_[static_cast<std::size_t>(perm_[x & 255] + (y & 255))]);
  }

  std::array<int, 512> perm_{};
  std::array<std::array<double, 2>, 256> grad_{};
};

/// rows x cols noise map with lattice spacing `cell_size` pixels.
inline Raster perlin(std::size_t rows, std::size_t cols, double cell_size, std::uint64_t seed) {
  if (!(cell_size >= 2.0))
    throw std::invalid_argument("perlin: cell_size must be >= 2");
  return PerlinNoise(seed).sample_grid(rows, cols, cell_size);
}

}  // namespace gixd
