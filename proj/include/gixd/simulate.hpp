#pragma once

// Seeded generator of polar-space diffraction patterns with ground truth.
//
// Pipeline for one pattern (each optional stage fires with its probability):
//   1. sample the peak count and per-peak parameters
//   2. render 2D Gaussian peaks (radial sigma w_sim, angular sigma extent/4)
//   3. angular modulation: multiply by a rescaled Perlin map
//   4. background: linear ramp, Perlin field, broad Gaussians
//   5. Poisson counting noise at a sampled exposure
//   6. detector gaps (zeroed bands) and wedge-shaped dark areas
//   7. histogram equalization (global, or CLAHE) and unit normalization
// A rendered peak is annotated when its post-modulation maximum reaches
// `visibility_floor` times the image maximum before noise.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/enhance.hpp"
#include "gixd/io.hpp"
#include "gixd/perlin.hpp"
#include "gixd/random.hpp"

namespace gixd {

struct SimulationConfig {
  std::size_t rows = 512;  // angular axis
  std::size_t cols = 512;  // radial axis

  std::int64_t peak_count_min = 8;
  std::int64_t peak_count_max = 45;
  double q_center_min = 16.0, q_center_max = 496.0;
  double width_min = 0.8, width_max = 6.0;      // log-uniform
  double extent_min = 8.0, extent_max = 512.0;  // uniform
  double amplitude_min = 1e-3, amplitude_max = 1.0;  // log-uniform
  double visibility_floor = 0.01;

  double p_modulation = 0.7;
  double p_linear_bg = 0.5;
  double p_perlin_bg = 0.5;
  double p_broad_gaussians = 0.5;
  double p_poisson = 0.8;
  double p_gaps = 0.3;
  double p_dark_areas = 0.3;

  std::size_t equalization_bins = 1024;
  bool use_clahe = false;
  ClaheParams clahe{};

  /// Every optional stage disabled: Gaussian peaks on zero background.
  static SimulationConfig clean() {
    SimulationConfig c;
    c.p_modulation = c.p_linear_bg = c.p_perlin_bg = c.p_broad_gaussians = 0.0;
    c.p_poisson = c.p_gaps = c.p_dark_areas = 0.0;
    return c;
  }

  void validate() const {
    for (double p : {p_modulation, p_linear_bg, p_perlin_bg, p_broad_gaussians, p_poisson,
                     p_gaps, p_dark_areas})
      if (!(p >= 0.0 && p <= 1.0))
        throw ConfigError("simulation: probabilities must lie in [0, 1]");
    if (rows < 8 || cols < 8)
      throw ConfigError("simulation: image must be at least 8x8");
    if (peak_count_min < 0 || peak_count_max < peak_count_min)
      throw ConfigError("simulation: invalid peak count range");
    if (!(q_center_min >= 0 && q_center_max >= q_center_min))
      throw ConfigError("simulation: invalid q_center range");
    if (!(width_min > 0 && width_max >= width_min))
      throw ConfigError("simulation: invalid width range");
    if (!(extent_min > 0 && extent_max >= extent_min))
      throw ConfigError("simulation: invalid extent range");
    if (!(amplitude_min > 0 && amplitude_max >= amplitude_min))
      throw ConfigError("simulation: invalid amplitude range");
    if (equalization_bins < 2)
      throw ConfigError("simulation: equalization_bins must be >= 2");
  }

  static SimulationConfig from_config(const KeyValueFile &kv) {
    SimulationConfig c;
    auto num = [&](const char *key, double &v) { v = kv.number_or(key, v); };
    auto range = [&](const char *key, double &lo, double &hi) {
      if (kv.has(key))
        std::tie(lo, hi) = kv.pair(key);
    };
    if (kv.has("peak_count")) {
      auto [lo, hi] = kv.pair("peak_count");
      c.peak_count_min = static_cast<std::int64_t>(lo);
      c.peak_count_max = static_cast<std::int64_t>(hi);
    }
    range("q_center", c.q_center_min, c.q_center_max);
    range("width", c.width_min, c.width_max);
    range("extent", c.extent_min, c.extent_max);
    range("amplitude", c.amplitude_min, c.amplitude_max);
    num("visibility_floor", c.visibility_floor);
    num("p_modulation", c.p_modulation);
    num("p_linear_bg", c.p_linear_bg);
    num("p_perlin_bg", c.p_perlin_bg);
    num("p_broad_gaussians", c.p_broad_gaussians);
    num("p_poisson", c.p_poisson);
    num("p_gaps", c.p_gaps);
    num("p_dark_areas", c.p_dark_areas);
    c.equalization_bins = static_cast<std::size_t>(
        kv.number_or("equalization_bins", static_cast<double>(c.equalization_bins)));
    c.use_clahe = kv.str_or("equalization", "global") == "clahe";
    c.validate();
    return c;
  }

  std::string to_config() const {
    using detail::fmt17;
    std::ostringstream s;
    s << "peak_count = " << peak_count_min << " " << peak_count_max << "\n"
      << "q_center = " << fmt17(q_center_min) << " " << fmt17(q_center_max) << "\n"
      << "width = " << fmt17(width_min) << " " << fmt17(width_max) << "\n"
      << "extent = " << fmt17(extent_min) << " " << fmt17(extent_max) << "\n"
      << "amplitude = " << fmt17(amplitude_min) << " " << fmt17(amplitude_max) << "\n"
      << "visibility_floor = " << fmt17(visibility_floor) << "\n"
      << "p_modulation = " << fmt17(p_modulation) << "\n"
      << "p_linear_bg = " << fmt17(p_linear_bg) << "\n"
      << "p_perlin_bg = " << fmt17(p_perlin_bg) << "\n"
      << "p_broad_gaussians = " << fmt17(p_broad_gaussians) << "\n"
      << "p_poisson = " << fmt17(p_poisson) << "\n"
      << "p_gaps = " << fmt17(p_gaps) << "\n"
      << "p_dark_areas = " << fmt17(p_dark_areas) << "\n"
      << "equalization_bins = " << equalization_bins << "\n"
      << "equalization = " << (use_clahe ? "clahe" : "global") << "\n";
    return s.str();
  }
};

struct PaddedBox {
  double q_lo = 0, q_hi = 0, phi_lo = 0, phi_hi = 0;
  friend bool operator==(const PaddedBox &, const PaddedBox &) = default;
};

/// Radial half-width of the annotation box around a peak of width w_sim.
inline double box_half_width(double w_sim) { return 1.1 * w_sim + 1.5; }

struct GroundTruthPeak {
  double q_center = 0;     // px
  double w_sim = 0;        // px
  double phi_center = 0;   // px
  double phi_extent = 0;   // px
  double amplitude = 0;    // peak maximum after modulation
  PaddedBox padded_box{};  // clipped to the image
};

struct SimulatedPattern {
  Raster image;      // equalized, in [0, 1]
  Raster raw_image;  // before equalization
  std::vector<GroundTruthPeak> truth;
  std::uint64_t seed = 0;
};

namespace detail {

struct PeakDraw {
  double q, w, phi, extent, amp;
};

inline void add_perlin(Raster &dst, double cell, double scale, double offset, Rng &rng,
                       bool multiply) {
  const auto noise = PerlinNoise(rng.bits()).sample_grid(dst.rows, dst.cols, cell);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double v = offset + scale * 0.5 * (noise.values[i] + 1.0);
    if (multiply)
      dst.values[i] *= v;
    else
      dst.values[i] += v;
  }
}

}  // namespace detail

inline SimulatedPattern simulate_pattern(const SimulationConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t rows = cfg.rows, cols = cfg.cols;

  // 1. peak parameters
  const auto n = static_cast<std::size_t>(rng.uniform_int(cfg.peak_count_min, cfg.peak_count_max));
  std::vector<detail::PeakDraw> draws(n);
  for (auto &d : draws) {
    d.q = rng.uniform(cfg.q_center_min, cfg.q_center_max);
    d.w = rng.log_uniform(cfg.width_min, cfg.width_max);
    d.phi = rng.uniform(0.0, static_cast<double>(rows));
    d.extent = rng.uniform(cfg.extent_min, cfg.extent_max);
    d.amp = rng.log_uniform(cfg.amplitude_min, cfg.amplitude_max);
  }

  // 3. modulation map (drawn before rendering so each peak knows its maximum)
  Raster modulation;
  if (rng.bernoulli(cfg.p_modulation)) {
    modulation = Raster(rows, cols, 1.0);
    const double cell = static_cast<double>(rng.uniform_int(16, 128));
    const double floor_level = rng.uniform(0.0, 0.6);
    detail::add_perlin(modulation, cell, 1.0 - floor_level, floor_level, rng, true);
  }

  // 2. render separable Gaussians, tracking each peak's post-modulation max
  std::vector<double> col_profile, row_profile;
  auto render = [&](const detail::PeakDraw &d, Raster *dst) {
    const double sig_phi = d.extent / 4.0;
    const auto c0 = static_cast<std::size_t>(std::max(0.0, std::floor(d.q - 6.0 * d.w)));
    const auto c1 = static_cast<std::size_t>(
        std::min(static_cast<double>(cols - 1), std::ceil(d.q + 6.0 * d.w)));
    const auto r0 = static_cast<std::size_t>(std::max(0.0, std::floor(d.phi - 6.0 * sig_phi)));
    const auto r1 = static_cast<std::size_t>(
        std::min(static_cast<double>(rows - 1), std::ceil(d.phi + 6.0 * sig_phi)));
    col_profile.resize(c1 - c0 + 1);
    row_profile.resize(r1 - r0 + 1);
    for (std::size_t c = c0; c <= c1; ++c) {
      const double t = (static_cast<double>(c) - d.q) / d.w;
      col_profile[c - c0] = d.amp * std::exp(-0.5 * t * t);
    }
    for (std::size_t r = r0; r <= r1; ++r) {
      const double t = (static_cast<double>(r) - d.phi) / sig_phi;
      row_profile[r - r0] = std::exp(-0.5 * t * t);
    }
    double mx = 0.0;
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        double v = row_profile[r - r0] * col_profile[c - c0];
        if (!modulation.values.empty())
          v *= modulation(r, c);
        if (dst)
          (*dst)(r, c) += v;
        mx = std::max(mx, v);
      }
    }
    return mx;
  };
  Raster peaks(rows, cols);
  std::vector<double> peak_max(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    peak_max[i] = render(draws[i], &peaks);

  // 4. background, kept apart so that sub-floor peaks can be dropped below
  Raster image(rows, cols);
  if (rng.bernoulli(cfg.p_linear_bg)) {
    const double level = rng.uniform(0.0, 0.3);
    const double slope = rng.uniform(-1.0, 1.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double t = static_cast<double>(c) / static_cast<double>(cols - 1);
        image(r, c) += level * (slope >= 0 ? 1.0 - slope * t : 1.0 + slope * (1.0 - t));
      }
  }
  if (rng.bernoulli(cfg.p_perlin_bg)) {
    const double cell = static_cast<double>(rng.uniform_int(32, 256));
    detail::add_perlin(image, cell, rng.uniform(0.0, 0.3), 0.0, rng, false);
  }
  if (rng.bernoulli(cfg.p_broad_gaussians)) {
    const auto count = rng.uniform_int(1, 4);
    for (std::int64_t k = 0; k < count; ++k) {
      const double amp = rng.uniform(0.05, 0.4);
      const double qc = rng.uniform(0.0, static_cast<double>(cols));
      const double pc = rng.uniform(0.0, static_cast<double>(rows));
      const double sq = rng.uniform(20.0, 120.0), sp = rng.uniform(50.0, 400.0);
      col_profile.resize(cols);
      for (std::size_t c = 0; c < cols; ++c) {
        const double t = (static_cast<double>(c) - qc) / sq;
        col_profile[c] = amp * std::exp(-0.5 * t * t);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const double t = (static_cast<double>(r) - pc) / sp;
        const double g = std::exp(-0.5 * t * t);
        for (std::size_t c = 0; c < cols; ++c)
          image(r, c) += g * col_profile[c];
      }
    }
  }
  double image_max = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i)
    image_max = std::max(image_max, image.values[i] + peaks.values[i]);
  // Peaks under the visibility floor are left out of the image as well as
  // the truth list, so the annotations describe everything that was drawn.
  const double floor_value = cfg.visibility_floor * image_max;
  std::vector<bool> visible(n);
  for (std::size_t i = 0; i < n; ++i)
    visible[i] = peak_max[i] >= floor_value && peak_max[i] > 0.0;
  if (std::find(visible.begin(), visible.end(), false) != visible.end()) {
    peaks = Raster(rows, cols);
    for (std::size_t i = 0; i < n; ++i)
      if (visible[i])
        render(draws[i], &peaks);
  }
  for (std::size_t i = 0; i < image.size(); ++i)
    image.values[i] += peaks.values[i];

  // 5. counting noise
  if (rng.bernoulli(cfg.p_poisson)) {
    const double exposure = rng.log_uniform(20.0, 2000.0);
    for (double &v : image.values)
      v = static_cast<double>(rng.poisson(v * exposure)) / exposure;
  }

  // 6. gaps and dark areas
  if (rng.bernoulli(cfg.p_gaps)) {
    const auto count = rng.uniform_int(1, 3);
    for (std::int64_t k = 0; k < count; ++k) {
      const bool horizontal = rng.bernoulli(0.5);
      const auto width = static_cast<std::size_t>(rng.uniform_int(2, 16));
      const std::size_t extent = horizontal ? rows : cols;
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(extent - 1)));
      for (std::size_t a = start; a < std::min(extent, start + width); ++a)
        for (std::size_t b = 0; b < (horizontal ? cols : rows); ++b)
          (horizontal ? image(a, b) : image(b, a)) = 0.0;
    }
  }
  if (rng.bernoulli(cfg.p_dark_areas)) {
    // wedge anchored at the top-left corner, like an unmeasured sector
    const double c_end = rng.uniform(40.0, 200.0);
    const double height = rng.uniform(20.0, 150.0);
    for (std::size_t c = 0; c < cols && static_cast<double>(c) < c_end; ++c) {
      const double h = height * (1.0 - static_cast<double>(c) / c_end);
      for (std::size_t r = 0; r < rows; ++r)
        if (static_cast<double>(rows - r) <= h)
          image(r, c) = 0.0;
    }
  }

  // 7. equalization
  SimulatedPattern out;
  out.seed = seed;
  out.raw_image = image;
  if (cfg.use_clahe)
    out.image = clahe(normalize_unit(image), cfg.clahe);
  else
    out.image = normalize_unit(equalize_histogram(image, cfg.equalization_bins));

  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i])
      continue;
    const auto &d = draws[i];
    GroundTruthPeak t;
    t.q_center = d.q;
    t.w_sim = d.w;
    t.phi_center = d.phi;
    t.phi_extent = d.extent;
    t.amplitude = peak_max[i];
    const double hw = box_half_width(d.w);
    const double last_c = static_cast<double>(cols - 1), last_r = static_cast<double>(rows - 1);
    t.padded_box = {std::clamp(d.q - hw, 0.0, last_c), std::clamp(d.q + hw, 0.0, last_c),
                    std::clamp(d.phi - d.extent / 2, 0.0, last_r),
                    std::clamp(d.phi + d.extent / 2, 0.0, last_r)};
    out.truth.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation files: one peak per line, "q_lo q_hi phi_lo phi_hi q_center w_sim"
// in pixels, written with 17 significant digits so they parse back exactly.

struct Annotation {
  PaddedBox box;
  double q_center = 0, w_sim = 0;
  friend bool operator==(const Annotation &, const Annotation &) = default;
};

inline Annotation to_annotation(const GroundTruthPeak &p) {
  return {p.padded_box, p.q_center, p.w_sim};
}

inline std::string format_annotations(const std::vector<GroundTruthPeak> &truth) {
  std::string s;
  for (const auto &p : truth) {
    using detail::fmt17;
    s += fmt17(p.padded_box.q_lo) + " " + fmt17(p.padded_box.q_hi) + " " +
         fmt17(p.padded_box.phi_lo) + " " + fmt17(p.padded_box.phi_hi) + " " +
         fmt17(p.q_center) + " " + fmt17(p.w_sim) + "\n";
  }
  return s;
}

inline std::vector<Annotation> parse_annotations(const std::string &text,
                                                 const std::string &name = "<annotations>") {
  std::vector<Annotation> out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0][0] == '#')
      continue;
    const std::string ctx = name + ":" + std::to_string(no);
    if (tok.size() != 6)
      throw DataError(ctx + ": expected 6 columns");
    Annotation a;
    a.box.q_lo = detail::parse_double(tok[0], ctx);
    a.box.q_hi = detail::parse_double(tok[1], ctx);
    a.box.phi_lo = detail::parse_double(tok[2], ctx);
    a.box.phi_hi = detail::parse_double(tok[3], ctx);
    a.q_center = detail::parse_double(tok[4], ctx);
    a.w_sim = detail::parse_double(tok[5], ctx);
    out.push_back(a);
  }
  return out;
}

/// Per-image seed inside a dataset.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

inline std::string dataset_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu", index);
  return buf;
}

/// Writes n patterns as `img_NNNNN.tif` + `img_NNNNN.txt` and a
/// `manifest.txt` holding the configuration and every per-image seed.
inline void export_dataset(const SimulationConfig &cfg, std::size_t n, std::uint64_t seed,
                           const std::filesystem::path &dir, unsigned jobs = 1,
                           const std::string &image_ext = ".tif") {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create " + dir.string() + ": " + ec.message());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const auto p = simulate_pattern(cfg, derive_seed(seed, i));
        const auto stem = dir / dataset_stem(i);
        write_raster(stem.string() + image_ext, p.image);
        detail::write_text(stem.string() + ".txt", format_annotations(p.truth));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure)
          failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < std::max(1u, jobs); ++j)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  if (failure)
    std::rethrow_exception(failure);

  std::string manifest = "# simulated dataset\n";
  manifest += "count = " + std::to_string(n) + "\n";
  manifest += "seed = " + std::to_string(seed) + "\n";
  manifest += "image_format = " + image_ext.substr(1) + "\n";
  manifest += cfg.to_config();
  for (std::size_t i = 0; i < n; ++i)
    manifest += "seed." + dataset_stem(i) + " = " + std::to_string(derive_seed(seed, i)) + "\n";
  detail::write_text(dir / "manifest.txt", manifest);
}

}  // namespace gixd
