#pragma once

// Synthetic detector-frame series standing in for the two in-situ use cases.
//
// Case 1 (layered perovskite annealing): 60 frames, 18 keV, alpha_i 0.5 deg,
// 512 x 512 detector. (010)-oriented n = 2 and n = 3 phases appear at frame
// 20 on top of an indium tin oxide powder. The n = 2 stacking length b
// drifts linearly during the run; n = 3 stays constant.
//
// Case 2 (3D perovskite formation): 1015 frames of powder rings in which a
// precursor phase converts into the perovskite between frames 220 and 300.
//
// Card weights are structure-factor magnitudes, so a reflection is drawn
// with height proportional to the squared weight. Peaks are Gaussian in |Q|
// and phi, divided by the Lorentz-polarization correction so a corrected
// frame shows them at their nominal height, on a smooth background, with
// Poisson counting noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/crystallography.hpp"
#include "gixd/geometry.hpp"
#include "gixd/random.hpp"

namespace gixd {

struct TwinPeak {
  std::string card;
  Hkl hkl{};
  double q = 0;
  double phi = 0;  // NaN: powder ring
  double amplitude = 0;  // counts at the maximum, after correction
  double sigma_q = 0, sigma_phi = 0;
};

struct TwinSpec {
  int use_case = 1;
  std::size_t n_frames = 60;
  std::uint64_t seed = 1;
  ExperimentGeometry geometry;
  std::vector<PhaseCard> cards;        // every candidate card
  std::vector<std::string> present;    // card names rendered in the frames
  double sigma_q = 0.004;              // 1/A
  double sigma_phi = 2.5;              // deg, mosaic spread of oriented phases
  double q_max_oriented = 2.0;

  // case 1
  std::size_t emerge_frame = 20;
  double b_n2_start = 39.60, b_n2_end = 39.35;
  double b_n3 = 51.959;

  // case 2
  std::size_t transition_start = 220, transition_end = 300;

  /// Cell of a phase in frame t (only n2 changes with time).
  UnitCell cell_at(const PhaseCard &card, std::size_t t) const {
    UnitCell c = card.cell;
    if (use_case == 1 && card.name == "n2") {
      const double f = n_frames > 1 ? double(t) / double(n_frames - 1) : 0.0;
      c.b = b_n2_start + (b_n2_end - b_n2_start) * f;
    } else if (use_case == 1 && card.name == "n3") {
      c.b = b_n3;
    }
    return c;
  }

  /// Amplitude multiplier of a phase in frame t.
  double presence(const std::string &name, std::size_t t) const {
    auto ramp = [](double x) { return std::clamp(x, 0.0, 1.0); };
    if (use_case == 1) {
      if (name == "n2" || name == "n3")
        return ramp((double(t) - double(emerge_frame) + 1.0) / 3.0);
      return 1.0;
    }
    const double f = (double(t) - double(transition_start)) /
                     double(std::max<std::size_t>(1, transition_end - transition_start));
    if (name == "MAPbI3")
      return ramp(f);
    if (name == "precursor")
      return ramp(1.0 - f);
    return 1.0;
  }

  const PhaseCard &card(const std::string &name) const {
    for (const auto &c : cards)
      if (c.name == name)
        return c;
    throw ConfigError("twin: unknown card " + name);
  }
};

inline ExperimentGeometry twin_geometry() {
  ExperimentGeometry g;
  g.energy_kev = 18.0;
  g.alpha_i_deg = 0.5;
  g.distance_mm = 200.0;
  g.pixel_mm = 0.172;
  g.beam_center = {10.0, 500.0};
  g.width_px = 512;
  g.height_px = 512;
  g.polarization = 1.0;
  return g;
}

/// Pseudo-cubic perovskite powder.
inline PhaseCard mapbi3_card() {
  PhaseCard c;
  c.name = "MAPbI3";
  c.cell = {6.33, 6.33, 6.33, 90, 90, 90};
  c.powder = true;
  c.reflections = {{{1, 0, 0}, 10}, {{1, 1, 0}, 6.3}, {{1, 1, 1}, 3.9}, {{2, 0, 0}, 7.1}, {{2, 1, 0}, 4.5}};
  return c;
}

/// Solvate precursor powder with a long-period cell.
inline PhaseCard precursor_card() {
  PhaseCard c;
  c.name = "precursor";
  c.cell = {17.9, 13.3, 7.5, 90, 90, 90};
  c.powder = true;
  c.reflections = {{{0, 1, 0}, 10}, {{2, 0, 0}, 7.7}, {{1, 1, 1}, 5.5}, {{0, 2, 1}, 6.3}};
  return c;
}

inline TwinSpec twin_case1(std::uint64_t seed = 1) {
  TwinSpec s;
  s.use_case = 1;
  s.n_frames = 60;
  s.seed = seed;
  s.geometry = twin_geometry();
  for (int n = 1; n <= 7; ++n)
    s.cards.push_back(perovskite_card(n, s.q_max_oriented));
  s.cards.push_back(ito_card());
  s.present = {"n2", "n3", "ITO"};
  return s;
}

inline TwinSpec twin_case2(std::uint64_t seed = 2) {
  TwinSpec s;
  s.use_case = 2;
  s.n_frames = 1015;
  s.seed = seed;
  s.geometry = twin_geometry();
  s.cards = {precursor_card(), mapbi3_card(), ito_card()};
  s.present = {"precursor", "MAPbI3", "ITO"};
  return s;
}

/// Measured region of a geometry: |Q| up to the corner of the reciprocal
/// grid, and its Q_par / Q_z reach.
inline ReciprocalRange measured_range(const ReciprocalGrid &grid, double q_min = 0.2) {
  ReciprocalRange r;
  r.q_min = q_min;
  r.q_par_max = grid.q_par.last();
  r.q_z_max = grid.q_z.last();
  r.q_max = std::hypot(r.q_par_max, r.q_z_max);
  return r;
}

/// Peaks drawn in frame t (amplitude 0 entries are omitted).
inline std::vector<TwinPeak> twin_peaks(const TwinSpec &s, std::size_t t, const ReciprocalRange &range) {
  std::vector<TwinPeak> out;
  for (const auto &name : s.present) {
    const double w = s.presence(name, t);
    if (w <= 0.0)
      continue;
    PhaseCard card = s.card(name);
    card.cell = s.cell_at(card, t);
    const auto refl = enumerate_reflections(card, range);
    double f_max = 0;
    for (const auto &r : refl)
      f_max = std::max(f_max, r.intensity);
    for (const auto &r : refl) {
      TwinPeak p;
      p.card = name;
      p.hkl = r.hkl;
      p.q = r.q;
      p.phi = r.phi;
      p.sigma_q = s.sigma_q;
      p.sigma_phi = s.sigma_phi;
      // oriented peaks are compact and bright; powder rings spread the same
      // scattering over the whole arc
      const double f = r.intensity / f_max;
      p.amplitude = w * (card.powder ? 600.0 : 1500.0) * f * f;
      out.push_back(p);
    }
  }
  return out;
}

/// Per-pixel |Q|, phi and inverse LP factor, with pixels ordered by |Q| so a
/// peak only visits its radial neighbourhood.
class TwinRenderer {
 public:
  explicit TwinRenderer(const TwinSpec &spec) : spec_(spec) {
    const auto &g = spec.geometry;
    g.validate();
    const std::size_t n = g.width_px * g.height_px;
    q_.resize(n);
    phi_.resize(n);
    inv_lp_.resize(n);
    for (std::size_t r = 0; r < g.height_px; ++r)
      for (std::size_t c = 0; c < g.width_px; ++c) {
        const PixelCoord px{double(c), double(r)};
        const auto pp = to_polar_point(detail::pixel_to_q_unchecked(g, px));
        const std::size_t i = r * g.width_px + c;
        q_[i] = pp.q;
        phi_[i] = pp.phi_deg;
        inv_lp_[i] = 1.0 / lp_correction(g, px);
      }
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    std::stable_sort(order_.begin(), order_.end(), [&](auto a, auto b) { return q_[a] < q_[b]; });
    sorted_q_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      sorted_q_[i] = q_[order_[i]];
  }

  DetectorImage render(std::size_t t, const std::vector<TwinPeak> &peaks) const {
    const auto &g = spec_.geometry;
    std::vector<double> clean(q_.size());
    for (std::size_t i = 0; i < q_.size(); ++i)
      clean[i] = 40.0 * std::exp(-q_[i] / 1.5) + 15.0;
    for (const auto &p : peaks) {
      const double reach = 5.0 * p.sigma_q;
      auto lo = std::lower_bound(sorted_q_.begin(), sorted_q_.end(), p.q - reach);
      auto hi = std::upper_bound(lo, sorted_q_.end(), p.q + reach);
      const bool powder = std::isnan(p.phi);
      for (auto it = lo; it != hi; ++it) {
        const std::size_t i = order_[static_cast<std::size_t>(it - sorted_q_.begin())];
        const double dq = (q_[i] - p.q) / p.sigma_q;
        double v = p.amplitude * std::exp(-0.5 * dq * dq);
        if (!powder) {
          const double dp = (phi_[i] - p.phi) / p.sigma_phi;
          if (std::abs(dp) > 6.0)
            continue;
          v *= std::exp(-0.5 * dp * dp);
        }
        clean[i] += v;
      }
    }
    Rng rng(spec_.seed * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(t));
    DetectorImage img{Raster(g.height_px, g.width_px)};
    for (std::size_t i = 0; i < clean.size(); ++i)
      img.raster.values[i] = static_cast<double>(rng.poisson(clean[i] * inv_lp_[i]));
    return img;
  }

 private:
  const TwinSpec &spec_;
  std::vector<double> q_, phi_, inv_lp_;
  std::vector<std::uint32_t> order_;
  std::vector<double> sorted_q_;
};

}  // namespace gixd
