#pragma once

// End-to-end processing of a frame series.
//
// Per frame (parallel): LP correction -> reciprocal map -> polar map ->
// normalize + CLAHE -> classical detection (or ingested detections) -> NMS
// -> score filter -> profile fit on the unenhanced polar frame -> wedge
// prolongation.
// Across frames: linking -> duration filter -> angular clustering of track
// representatives -> phase identification -> indexing -> per-frame
// refinement of every accepted orthorhombic card.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/crystallography.hpp"
#include "gixd/detect.hpp"
#include "gixd/enhance.hpp"
#include "gixd/geometry.hpp"
#include "gixd/io.hpp"
#include "gixd/postprocess.hpp"
#include "gixd/refine.hpp"

namespace gixd {

struct PipelineConfig {
  ExperimentGeometry geometry;
  std::size_t reciprocal_rows = 512, reciprocal_cols = 512;  // Q_z x Q_par
  std::size_t polar_rows = 512, polar_cols = 1024;           // phi x |Q|
  ClaheParams clahe{};
  ClassicalParams classical{};
  std::string detector = "classical";  // or "file"
  std::filesystem::path detections_file;
  double nms_iou = 0.1;
  double score_threshold = 0.8;
  double link_iou = 0.3;
  std::size_t min_frames = 3;
  std::filesystem::path cards_dir;  // empty: no identification
  std::vector<PhaseCard> cards;     // used when cards_dir is empty
  double q_min = 0.2;               // 1/A, lower end of the matched range
  double accept_score = 0.5;
  std::size_t min_new_peaks = 2;  // detections a further card must newly explain
  double sigma = 0.01;
  unsigned jobs = 1;
  std::filesystem::path out;

  void validate() const {
    geometry.validate();
    clahe.validate();
    if (detector != "classical" && detector != "file")
      throw ConfigError("detector must be 'classical' or 'file'");
    if (detector == "file" && !std::filesystem::exists(detections_file))
      throw ConfigError("detections file not found: " + detections_file.string());
    if (!(nms_iou >= 0 && nms_iou <= 1) || !(score_threshold >= 0 && score_threshold <= 1) ||
        !(link_iou > 0 && link_iou <= 1))
      throw ConfigError("nms_iou, score_threshold and link_iou must lie in [0, 1]");
    if (min_frames < 1)
      throw ConfigError("min_frames must be >= 1");
    if (!(accept_score >= 0 && accept_score <= 1))
      throw ConfigError("accept_score must lie in [0, 1]");
    if (!(sigma > 0))
      throw ConfigError("sigma must be > 0");
    if (reciprocal_rows < 2 || reciprocal_cols < 2 || polar_rows < 2 || polar_cols < 2)
      throw ConfigError("grid shapes must be at least 2 x 2");
    if (!cards_dir.empty() && !std::filesystem::is_directory(cards_dir))
      throw ConfigError("phase card directory not found: " + cards_dir.string());
  }

  /// Keys (paths relative to the config file): geometry, reciprocal_shape,
  /// polar_shape, clahe_tiles, clahe_clip, clahe_bins, detector,
  /// detections, band_rows, k_sigma, median_window, min_prominence, nms_iou,
  /// score_threshold, link_iou, min_frames, cards, q_min, accept_score,
  /// min_new_peaks, sigma, jobs, out.
  static PipelineConfig from_config(const KeyValueFile &kv) {
    PipelineConfig c;
    const auto base = std::filesystem::path(kv.source()).parent_path();
    auto path = [&](const std::string &key) {
      std::filesystem::path p = kv.str(key);
      return p.is_absolute() ? p : base / p;
    };
    auto size_pair = [&](const char *key, std::size_t &a, std::size_t &b) {
      if (!kv.has(key))
        return;
      auto [x, y] = kv.pair(key);
      if (x < 1 || y < 1 || x != std::floor(x) || y != std::floor(y))
        throw ConfigError(kv.source() + ": " + key + " expects two positive integers");
      a = static_cast<std::size_t>(x);
      b = static_cast<std::size_t>(y);
    };
    auto count = [&](const char *key, std::size_t fallback) {
      const double v = kv.number_or(key, double(fallback));
      if (v < 0 || v != std::floor(v))
        throw ConfigError(kv.source() + ": " + key + " expects a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    c.geometry = ExperimentGeometry::from_config(KeyValueFile::load(path("geometry")));
    size_pair("reciprocal_shape", c.reciprocal_rows, c.reciprocal_cols);
    size_pair("polar_shape", c.polar_rows, c.polar_cols);
    size_pair("clahe_tiles", c.clahe.tiles_y, c.clahe.tiles_x);
    c.clahe.clip_limit = kv.number_or("clahe_clip", c.clahe.clip_limit);
    c.clahe.num_bins = count("clahe_bins", c.clahe.num_bins);
    c.detector = kv.str_or("detector", c.detector);
    if (kv.has("detections"))
      c.detections_file = path("detections");
    c.classical.band_rows = count("band_rows", c.classical.band_rows);
    c.classical.k_sigma = kv.number_or("k_sigma", c.classical.k_sigma);
    c.classical.median_window = count("median_window", c.classical.median_window);
    c.classical.min_prominence = kv.number_or("min_prominence", c.classical.min_prominence);
    c.nms_iou = kv.number_or("nms_iou", c.nms_iou);
    c.score_threshold = kv.number_or("score_threshold", c.score_threshold);
    c.link_iou = kv.number_or("link_iou", c.link_iou);
    c.min_frames = count("min_frames", c.min_frames);
    if (kv.has("cards"))
      c.cards_dir = path("cards");
    c.q_min = kv.number_or("q_min", c.q_min);
    c.accept_score = kv.number_or("accept_score", c.accept_score);
    c.min_new_peaks = count("min_new_peaks", c.min_new_peaks);
    c.sigma = kv.number_or("sigma", c.sigma);
    c.jobs = static_cast<unsigned>(count("jobs", c.jobs));
    if (kv.has("out"))
      c.out = path("out");
    c.validate();
    return c;
  }
};

/// Geometry-dependent resampling prepared once and reused for every frame.
class Preprocessor {
 public:
  Preprocessor(const ExperimentGeometry &g, std::size_t rec_rows, std::size_t rec_cols,
               std::size_t polar_rows, std::size_t polar_cols, ClaheParams clahe = {})
      : geometry_(g),
        grid_(default_reciprocal_grid(g, rec_cols, rec_rows)),
        lp_(lp_correction_field(g)),
        reciprocal_(g, grid_),
        polar_(grid_, polar_rows, polar_cols),
        clahe_(clahe) {}

  explicit Preprocessor(const PipelineConfig &c)
      : Preprocessor(c.geometry, c.reciprocal_rows, c.reciprocal_cols, c.polar_rows, c.polar_cols,
                     c.clahe) {}

  /// LP-corrected frame on the polar grid (the input of profile fits).
  PolarImage polar(const DetectorImage &frame) const {
    check_frame(frame, geometry_);
    DetectorImage corrected = frame;
    for (std::size_t i = 0; i < lp_.size(); ++i)
      corrected.raster.values[i] *= lp_[i];
    return polar_.apply(reciprocal_.apply(corrected));
  }

  /// Detection input: normalized and contrast-enhanced.
  PolarImage enhance(const PolarImage &polar) const { return enhance_for_detection(polar, clahe_); }

  const ReciprocalGrid &grid() const { return grid_; }
  const Axis &q_axis() const { return polar_.q_axis(); }
  const Axis &phi_axis() const { return polar_.phi_axis(); }
  double q_z_max() const { return grid_.q_z.last(); }
  double q_par_max() const { return grid_.q_par.last(); }

 private:
  ExperimentGeometry geometry_;
  ReciprocalGrid grid_;
  std::vector<double> lp_;
  ReciprocalMap reciprocal_;
  PolarMap polar_;
  ClaheParams clahe_;
};

/// Output of the per-frame stage.
struct FrameResult {
  long long frame_id = 0;
  DetectionSet detections;                 // after NMS, score filter, prolongation
  std::vector<std::optional<GaussianLinearFit>> fits;  // parallel to detections
  std::string error;                       // non-empty: the frame was skipped
};

struct TrackSummary {
  std::size_t track_index = 0;
  Detection representative;
  bool powder = false;
  double ratio = 0;
  std::vector<Assignment> assignments;
};

struct PipelineResult {
  std::vector<FrameResult> frames;
  std::vector<Track> tracks;  // after the duration filter, fitted
  std::vector<TrackSummary> summaries;
  std::vector<PhaseScore> ranking;
  std::vector<std::size_t> accepted;  // indices into models
  std::vector<PhaseModel> models;
  std::map<std::string, std::vector<SeriesEntry>> series;  // per accepted card
  std::map<std::string, double> seconds;                    // stage timings
};

/// Source of frames by position: frame id and image. Frames are requested
/// concurrently from the worker threads.
struct FrameSource {
  std::size_t count = 0;
  std::function<long long(std::size_t)> id;
  std::function<DetectorImage(std::size_t)> load;
};

inline FrameSource frames_from(const std::vector<DetectorImage> &frames) {
  return {frames.size(), [](std::size_t i) { return static_cast<long long>(i); },
          [&frames](std::size_t i) { return frames[i]; }};
}

/// Runs `fn(i)` for i in [0, n) on `jobs` threads.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)> &fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure)
          failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < std::max(1u, jobs) && j < n; ++j)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  if (failure)
    std::rethrow_exception(failure);
}

/// Median of a track's detections, box by box: centre and size of q, phi
/// extents, and the best score.
inline Detection track_representative(const Track &t) {
  std::vector<double> qc, qw, lo, hi;
  double score = 0;
  for (const auto &p : t.points) {
    qc.push_back(p.q_position());
    qw.push_back(p.detection.q_width);
    lo.push_back(p.detection.phi_lo());
    hi.push_back(p.detection.phi_hi());
    score = std::max(score, p.detection.score);
  }
  const double l = detail::median_of(lo), h = detail::median_of(hi);
  return {t.first_frame(), round9(detail::median_of(qc)), round9(detail::median_of(qw)),
          round9(0.5 * (l + h)), round9(h - l), score};
}

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), pre_(cfg_) {
    cfg_.validate();
    if (!cfg_.cards_dir.empty())
      cfg_.cards = load_phase_cards(cfg_.cards_dir);
    range_ = ReciprocalRange{};
    range_.q_min = cfg_.q_min;
    range_.q_par_max = pre_.q_par_max();
    range_.q_z_max = pre_.q_z_max();
    range_.q_max = std::hypot(range_.q_par_max, range_.q_z_max);
    for (const auto &c : cfg_.cards)
      models_.emplace_back(c, range_);
  }

  const PipelineConfig &config() const { return cfg_; }
  const Preprocessor &preprocessor() const { return pre_; }
  const ReciprocalRange &range() const { return range_; }

  FrameResult process_frame(long long id, const DetectorImage &frame,
                            const std::optional<DetectionSet> &ingested = std::nullopt) const {
    FrameResult fr;
    fr.frame_id = id;
    const PolarImage polar = pre_.polar(frame);
    DetectionSet raw;
    if (ingested) {
      raw = *ingested;
      if (raw.units != Units::invA)
        throw DataError("ingested detections must be in invA for experimental frames");
    } else {
      raw = classical_detect(pre_.enhance(polar), cfg_.classical, id);
    }
    DetectionSet kept = filter_score(nms(raw, cfg_.nms_iou), cfg_.score_threshold);
    for (const auto &d : kept.detections) {
      try {
        fr.fits.push_back(fit_peak_profile(polar, d));
      } catch (const DataError &) {
        fr.fits.emplace_back();
      }
    }
    fr.detections = prolong_to_wedge(kept, wedge_boundary(polar, pre_.q_z_max()), polar.q,
                                     polar.phi.step);
    return fr;
  }

  PipelineResult run(const FrameSource &src) const {
    if (src.count == 0)
      throw ConfigError("no frames to process");
    PipelineResult res;
    res.models = models_;
    std::map<long long, DetectionSet> ingested;
    if (cfg_.detector == "file") {
      for (auto &s : read_detections(cfg_.detections_file).sets)
        ingested[s.frame_id] = std::move(s);
    }
    auto t0 = std::chrono::steady_clock::now();
    res.frames.resize(src.count);
    parallel_for(src.count, cfg_.jobs, [&](std::size_t i) {
      const long long id = src.id(i);
      try {
        std::optional<DetectionSet> in;
        if (cfg_.detector == "file") {
          auto it = ingested.find(id);
          in = it != ingested.end() ? it->second : DetectionSet{id, Units::invA, {}, {}, {}};
        }
        res.frames[i] = process_frame(id, src.load(i), in);
      } catch (const DataError &e) {
        res.frames[i].frame_id = id;
        res.frames[i].error = e.what();
      }
    });
    auto t1 = std::chrono::steady_clock::now();
    res.seconds["frames"] = std::chrono::duration<double>(t1 - t0).count();

    std::vector<DetectionSet> sets;
    std::vector<const FrameResult *> by_set;
    for (const auto &f : res.frames)
      if (f.error.empty()) {
        sets.push_back(f.detections);
        by_set.push_back(&f);
      }
    std::sort(by_set.begin(), by_set.end(),
              [](auto *a, auto *b) { return a->frame_id < b->frame_id; });
    std::sort(sets.begin(), sets.end(),
              [](const auto &a, const auto &b) { return a.frame_id < b.frame_id; });
    for (std::size_t i = 1; i < sets.size(); ++i)
      if (sets[i].frame_id == sets[i - 1].frame_id)
        throw DataError("duplicate frame id " + std::to_string(sets[i].frame_id));

    auto linked = link_frames(sets, cfg_.link_iou);
    // attach the per-frame fits to the track points
    std::map<long long, const FrameResult *> frame_of;
    for (auto *f : by_set)
      frame_of[f->frame_id] = f;
    std::map<long long, std::vector<bool>> taken;
    for (auto &t : linked)
      for (auto &p : t.points) {
        const auto *f = frame_of.at(p.frame_id);
        auto &used = taken[p.frame_id];
        used.resize(f->detections.detections.size(), false);
        for (std::size_t k = 0; k < used.size(); ++k)
          if (!used[k] && f->detections.detections[k] == p.detection) {
            used[k] = true;
            p.fit = f->fits[k];
            break;
          }
      }
    res.tracks = filter_duration(linked, cfg_.min_frames);
    analyze(res);
    res.seconds["tracks"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    return res;
  }

  /// Cross-frame stages on `res.tracks` (already linked, fitted and
  /// duration-filtered): track ids are renumbered, then representatives,
  /// angular clustering, identification, indexing and refinement fill the
  /// remaining fields of `res`.
  void analyze(PipelineResult &res) const {
    res.models = models_;
    res.summaries.clear();
    res.ranking.clear();
    res.accepted.clear();
    res.series.clear();
    for (std::size_t i = 0; i < res.tracks.size(); ++i)
      res.tracks[i].track_id = static_cast<long long>(i);

    // identification on one representative detection per track
    DetectionSet reps{0, Units::invA, pre_.q_axis(), pre_.phi_axis(), {}};
    for (const auto &t : res.tracks)
      reps.detections.push_back(track_representative(t));
    const double qz = pre_.q_z_max(), qp = pre_.q_par_max();
    const auto clusters =
        cluster_angular(reps, [&](double q) { return max_arc_extent(q, qz, qp); });
    for (std::size_t i = 0; i < res.tracks.size(); ++i)
      res.summaries.push_back({i, reps.detections[i], clusters.is_powder[i], clusters.ratio[i], {}});
    if (!res.models.empty()) {
      res.ranking = identify_phases(res.models, clusters);
      res.accepted = accept_phases(res.models, res.ranking, clusters, cfg_.accept_score, cfg_.min_new_peaks);
      std::sort(res.accepted.begin(), res.accepted.end());
      std::vector<PhaseModel> acc;
      for (auto i : res.accepted)
        acc.push_back(res.models[i]);
      const auto indexed = index_peaks(acc, reps.detections, clusters.is_powder);
      for (std::size_t i = 0; i < indexed.size(); ++i) {
        res.summaries[i].assignments = indexed[i].assignments;
        for (auto &a : res.summaries[i].assignments)
          a.card_index = res.accepted[a.card_index];
      }
      std::vector<IndexedTrack> it;
      for (std::size_t i = 0; i < res.tracks.size(); ++i)
        it.push_back({&res.tracks[i], res.summaries[i].assignments});
      for (auto ci : res.accepted) {
        const auto &card = res.models[ci].card;
        if (card.powder || !card.cell.orthorhombic())
          continue;
        res.series[card.name] = refine_series(it, ci, card.cell, cfg_.sigma);
      }
    }
  }

 private:
  PipelineConfig cfg_;
  Preprocessor pre_;
  ReciprocalRange range_;
  std::vector<PhaseModel> models_;
};

// ---------------------------------------------------------------------------
// Artifacts.

inline std::string format_identification(const PipelineResult &r) {
  using detail::fmt9;
  std::string s = "# rank card score n_reflections accepted\n";
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    const auto &p = r.ranking[i];
    const bool acc = std::find(r.accepted.begin(), r.accepted.end(), p.card_index) != r.accepted.end();
    s += std::to_string(i + 1) + " " + p.name + " " + (std::isnan(p.score) ? "nan" : fmt9(p.score)) +
         " " + std::to_string(p.n_reflections) + " " + (acc ? "yes" : "no") + "\n";
  }
  return s;
}

inline std::string format_indexing(const PipelineResult &r) {
  using detail::fmt9;
  std::string s = "# track q_center phi_center phi_extent ratio cluster assignments(card:h,k,l)\n";
  for (const auto &t : r.summaries) {
    const auto &d = t.representative;
    s += std::to_string(t.track_index) + " " + fmt9(d.q_center) + " " + fmt9(d.phi_center) + " " +
         fmt9(d.phi_extent) + " " + fmt9(t.ratio) + " " + (t.powder ? "powder" : "oriented");
    if (t.assignments.empty())
      s += " unidentified";
    for (const auto &a : t.assignments)
      s += " " + a.card + ":" + std::to_string(a.hkl[0]) + "," + std::to_string(a.hkl[1]) + "," +
           std::to_string(a.hkl[2]);
    s += "\n";
  }
  return s;
}

/// Frames in which an accepted card is seen: the first frame of its
/// earliest track and the last frame of its latest one. Only tracks that
/// carry this card alone count, so shared peaks do not stretch the window.
struct PhaseWindow {
  std::string card;
  long long first_frame = 0, last_frame = 0;
  std::size_t n_tracks = 0;
};

inline std::vector<PhaseWindow> phase_windows(const PipelineResult &r) {
  std::vector<PhaseWindow> out;
  for (auto ci : r.accepted) {
    PhaseWindow w{r.models[ci].card.name, 0, 0, 0};
    for (std::size_t i = 0; i < r.tracks.size(); ++i) {
      const auto &a = r.summaries[i].assignments;
      if (a.size() != 1 || a.front().card_index != ci)
        continue;
      const auto &t = r.tracks[i];
      w.first_frame = w.n_tracks ? std::min(w.first_frame, t.first_frame()) : t.first_frame();
      w.last_frame = w.n_tracks ? std::max(w.last_frame, t.last_frame()) : t.last_frame();
      ++w.n_tracks;
    }
    out.push_back(w);
  }
  return out;
}

inline std::string format_phase_windows(const std::vector<PhaseWindow> &w) {
  std::string s = "# card first_frame last_frame n_tracks\n";
  for (const auto &p : w) {
    s += p.card + " ";
    s += p.n_tracks ? std::to_string(p.first_frame) + " " + std::to_string(p.last_frame) : "nan nan";
    s += " " + std::to_string(p.n_tracks) + "\n";
  }
  return s;
}

/// Plot table of radial positions over time: "frame track q label".
inline std::string format_positions(const PipelineResult &r) {
  using detail::fmt9;
  std::string s = "# frame track q label\n";
  for (std::size_t i = 0; i < r.tracks.size(); ++i) {
    std::string label = "unidentified";
    if (!r.summaries[i].assignments.empty()) {
      label.clear();
      for (const auto &a : r.summaries[i].assignments)
        label += (label.empty() ? "" : "+") + a.card;
    }
    for (const auto &p : r.tracks[i].points)
      s += std::to_string(p.frame_id) + " " + std::to_string(i) + " " + fmt9(p.q_position()) + " " +
           label + "\n";
  }
  return s;
}

/// Writes detections.txt, tracks.txt, identification.txt, indexing.txt,
/// positions.txt, phases.txt, refine_<card>.txt and frame_errors.txt under
/// `dir`.
inline void write_artifacts(const PipelineResult &r, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<DetectionSet> sets;
  std::string errors;
  for (const auto &f : r.frames) {
    if (f.error.empty())
      sets.push_back(f.detections);
    else
      errors += std::to_string(f.frame_id) + " " + f.error + "\n";
  }
  write_detections(sets, dir / "detections.txt", Units::invA);
  write_tracks(r.tracks, Units::invA, dir / "tracks.txt");
  detail::write_text(dir / "identification.txt", format_identification(r));
  detail::write_text(dir / "indexing.txt", format_indexing(r));
  detail::write_text(dir / "positions.txt", format_positions(r));
  detail::write_text(dir / "phases.txt", format_phase_windows(phase_windows(r)));
  detail::write_text(dir / "frame_errors.txt", errors);
  for (const auto &[name, series] : r.series)
    detail::write_text(dir / ("refine_" + name + ".txt"), format_series(series));
}

}  // namespace gixd
