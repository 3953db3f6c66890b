// Command-line front end. Exit codes: 0 success, 2 configuration or usage
// error, 3 data error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gixd/gixd.hpp"

namespace fs = std::filesystem;
using namespace gixd;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::string out;
};

std::string require_out(const Globals &g) {
  if (g.out.empty())
    throw ConfigError("--out is required");
  return g.out;
}

PipelineConfig load_config(const Globals &g, bool required = true) {
  PipelineConfig c;
  if (!g.config.empty())
    c = PipelineConfig::from_config(KeyValueFile::load(g.config));
  else if (required)
    throw ConfigError("--config is required");
  c.jobs = std::max(1u, g.jobs);
  return c;
}

bool is_image(const fs::path &p) {
  const auto e = p.extension().string();
  return e == ".tif" || e == ".tiff" || e == ".raw";
}

/// Input frames in order: files as given, directories expanded to their
/// sorted image files. Frame ids are positions in this list.
std::vector<fs::path> expand_frames(const std::vector<std::string> &args) {
  std::vector<fs::path> out;
  for (const auto &a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> in_dir;
      for (const auto &e : fs::directory_iterator(a))
        if (e.is_regular_file() && is_image(e.path()))
          in_dir.push_back(e.path());
      std::sort(in_dir.begin(), in_dir.end());
      out.insert(out.end(), in_dir.begin(), in_dir.end());
    } else if (fs::exists(a)) {
      out.emplace_back(a);
    } else {
      throw DataError("no such frame: " + a);
    }
  }
  if (out.empty())
    throw ConfigError("no input frames");
  return out;
}

FrameSource file_frames(const std::vector<fs::path> &paths) {
  return {paths.size(), [](std::size_t i) { return static_cast<long long>(i); },
          [&paths](std::size_t i) { return DetectorImage{read_raster(paths[i])}; }};
}

/// Unenhanced polar frames by id, either read directly or preprocessed.
std::map<long long, PolarImage> polar_frames(const std::vector<fs::path> &paths, bool polar_input,
                                             const Globals &g) {
  std::map<long long, PolarImage> out;
  if (polar_input) {
    for (std::size_t i = 0; i < paths.size(); ++i)
      out[static_cast<long long>(i)] = read_polar(paths[i]);
    return out;
  }
  const Preprocessor pre(load_config(g));
  for (std::size_t i = 0; i < paths.size(); ++i)
    out[static_cast<long long>(i)] = pre.polar(DetectorImage{read_raster(paths[i])});
  return out;
}

void print_timings(const PipelineResult &r, std::size_t frames) {
  for (const auto &[stage, s] : r.seconds)
    std::fprintf(stderr, "%s: %.3f s", stage.c_str(), s);
  const auto it = r.seconds.find("frames");
  if (it != r.seconds.end() && it->second > 0)
    std::fprintf(stderr, " (%.1f frames/s)", double(frames) / it->second);
  std::fprintf(stderr, "\n");
}

PipelineResult analyze_tracks(const Pipeline &pl, const std::string &tracks_path) {
  auto f = read_tracks(tracks_path);
  if (f.units != Units::invA)
    throw DataError(tracks_path + ": identification needs tracks in invA");
  PipelineResult r;
  r.tracks = std::move(f.tracks);
  pl.analyze(r);
  return r;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Peak detection, tracking and phase analysis for GIXD frame series"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "pipeline configuration file");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output file or directory");

  auto sub = [&](const char *name, const char *help) {
    auto *c = app.add_subcommand(name, help);
    c->fallthrough();
    return c;
  };

  // simulate
  std::size_t sim_count = 10;
  std::string sim_format = "tif";
  bool sim_clean = false;
  auto *simulate = sub("simulate", "export a simulated training/test dataset");
  simulate->add_option("--count", sim_count, "number of images");
  simulate->add_option("--format", sim_format, "image format")->check(CLI::IsMember({"tif", "raw"}));
  simulate->add_flag("--clean", sim_clean, "disable every background and artifact stage");

  // preprocess / detect / run
  std::vector<std::string> frames;
  bool polar_input = false;
  auto *preprocess = sub("preprocess", "write LP-corrected polar frames and their enhanced versions");
  preprocess->add_option("frames", frames, "frame files or directories")->required();
  auto *detect = sub("detect", "classical detection; writes the detection exchange file");
  detect->add_option("frames", frames, "frame files or directories")->required();
  detect->add_flag("--polar", polar_input, "inputs are detection-ready polar images");
  auto *run = sub("run", "full pipeline over a frame series");
  run->add_option("frames", frames, "frame files or directories")->required();

  // ingest / track
  std::string detections_path, tracks_path;
  auto *ingest = sub("ingest", "validate an external detection file and rewrite it normalized");
  ingest->add_option("detections", detections_path)->required();
  auto *track = sub("track", "NMS, score filter, frame linking and duration filter");
  track->add_option("detections", detections_path)->required();

  // fitpeaks
  auto *fitpeaks = sub("fitpeaks", "Gaussian + linear radial profile fit of every track point");
  fitpeaks->add_option("--tracks", tracks_path)->required();
  fitpeaks->add_option("frames", frames, "frame files or directories")->required();
  fitpeaks->add_flag("--polar", polar_input, "inputs are unenhanced polar images");

  // identify / index / refine
  std::string cards_dir, phase;
  double sigma = 0.01;
  auto *identify = sub("identify", "rank phase cards by coverage of the tracked peaks");
  auto *index = sub("index", "assign Miller indices of the accepted cards to tracks");
  auto *refine = sub("refine", "per-frame unit-cell refinement of one phase");
  for (auto *c : {identify, index, refine}) {
    c->add_option("--tracks", tracks_path)->required();
    c->add_option("--cards", cards_dir, "phase card directory");
  }
  refine->add_option("--phase", phase)->required();
  refine->add_option("--sigma", sigma)->check(CLI::PositiveNumber);

  // benchmark / report / twin
  std::string truth_dir, run_dir;
  auto *bench = sub("benchmark", "compare detections with simulated ground truth");
  bench->add_option("detections", detections_path)->required();
  bench->add_option("--truth", truth_dir, "simulated dataset directory")->required();
  auto *report = sub("report", "plots of a run directory as PPM images");
  report->add_option("--in", run_dir, "run output directory")->required();
  int twin_case = 1;
  std::size_t twin_frames = 0;
  bool twin_write_frames = false;
  auto *twin = sub("twin", "render a synthetic in-situ series and run the pipeline on it");
  twin->add_option("--case", twin_case)->check(CLI::IsMember({1, 2}));
  twin->add_option("--frames", twin_frames, "override the number of frames");
  twin->add_flag("--write-frames", twin_write_frames, "also store the rendered frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) {
      SimulationConfig cfg = sim_clean ? SimulationConfig::clean() : SimulationConfig{};
      if (!g.config.empty())
        cfg = SimulationConfig::from_config(KeyValueFile::load(g.config));
      export_dataset(cfg, sim_count, g.seed, require_out(g), g.jobs, "." + sim_format);
      std::printf("wrote %zu images to %s\n", sim_count, g.out.c_str());
    } else if (preprocess->parsed()) {
      const auto cfg = load_config(g);
      const Preprocessor pre(cfg);
      const fs::path out = require_out(g);
      fs::create_directories(out);
      const auto paths = expand_frames(frames);
      parallel_for(paths.size(), cfg.jobs, [&](std::size_t i) {
        const auto polar = pre.polar(DetectorImage{read_raster(paths[i])});
        const auto stem = paths[i].stem().string();
        write_polar(out / (stem + "_polar.tif"), polar);
        write_polar(out / (stem + "_enhanced.tif"), pre.enhance(polar));
      });
      std::printf("preprocessed %zu frames\n", paths.size());
    } else if (detect->parsed()) {
      const auto paths = expand_frames(frames);
      std::vector<DetectionSet> sets(paths.size());
      if (polar_input) {
        const auto cfg = load_config(g, false);
        parallel_for(paths.size(), cfg.jobs, [&](std::size_t i) {
          sets[i] = classical_detect(read_polar(paths[i]), cfg.classical, static_cast<long long>(i));
        });
      } else {
        const auto cfg = load_config(g);
        const Preprocessor pre(cfg);
        parallel_for(paths.size(), cfg.jobs, [&](std::size_t i) {
          const auto polar = pre.polar(DetectorImage{read_raster(paths[i])});
          sets[i] = classical_detect(pre.enhance(polar), cfg.classical, static_cast<long long>(i));
        });
      }
      write_detections(sets, require_out(g));
      std::size_t n = 0;
      for (const auto &s : sets)
        n += s.detections.size();
      std::printf("%zu detections in %zu frames\n", n, sets.size());
    } else if (ingest->parsed()) {
      const auto f = read_detections(detections_path);
      std::size_t n = 0;
      for (const auto &s : f.sets)
        n += s.detections.size();
      if (!g.out.empty())
        write_detections(f.sets, g.out, f.units);
      std::printf("%zu detections in %zu frames, units %s\n", n, f.sets.size(), to_string(f.units));
    } else if (track->parsed()) {
      const auto cfg = load_config(g, false);
      auto f = read_detections(detections_path);
      for (auto &s : f.sets)
        s = filter_score(nms(s, cfg.nms_iou), cfg.score_threshold);
      std::sort(f.sets.begin(), f.sets.end(), [](auto &a, auto &b) { return a.frame_id < b.frame_id; });
      auto tracks = filter_duration(link_frames(f.sets, cfg.link_iou), cfg.min_frames);
      for (std::size_t i = 0; i < tracks.size(); ++i)
        tracks[i].track_id = static_cast<long long>(i);
      write_tracks(tracks, f.units, require_out(g));
      std::printf("%zu tracks\n", tracks.size());
    } else if (fitpeaks->parsed()) {
      auto f = read_tracks(tracks_path);
      const auto images = polar_frames(expand_frames(frames), polar_input, g);
      std::map<long long, const PolarImage *> by_id;
      for (const auto &[id, img] : images) {
        if (img.units != f.units)
          throw DataError("track and frame units differ");
        by_id[id] = &img;
      }
      fit_tracks(f.tracks, by_id);
      write_tracks(f.tracks, f.units, require_out(g));
      std::size_t fitted = 0, total = 0;
      for (const auto &t : f.tracks)
        for (const auto &p : t.points) {
          ++total;
          fitted += p.fit && !p.fit->flagged;
        }
      std::printf("%zu of %zu points fitted\n", fitted, total);
    } else if (identify->parsed() || index->parsed() || refine->parsed()) {
      auto cfg = load_config(g);
      if (!cards_dir.empty())
        cfg.cards_dir = cards_dir;
      if (cfg.cards_dir.empty() && cfg.cards.empty())
        throw ConfigError("no phase cards: use --cards or the 'cards' config key");
      if (refine->parsed())
        cfg.sigma = sigma;
      const Pipeline pl(cfg);
      const auto r = analyze_tracks(pl, tracks_path);
      std::string text;
      if (identify->parsed()) {
        text = format_identification(r);
      } else if (index->parsed()) {
        text = format_indexing(r);
      } else {
        const auto it = r.series.find(phase);
        if (it == r.series.end())
          throw DataError("phase '" + phase + "' was not accepted or is not an oriented orthorhombic card");
        text = format_series(it->second);
      }
      if (g.out.empty())
        std::fputs(text.c_str(), stdout);
      else
        detail::write_text(g.out, text);
    } else if (run->parsed()) {
      const auto cfg = load_config(g);
      const Pipeline pl(cfg);
      const auto paths = expand_frames(frames);
      const auto r = pl.run(file_frames(paths));
      write_artifacts(r, g.out.empty() ? (cfg.out.empty() ? fs::path("gixd_out") : cfg.out) : fs::path(g.out));
      print_timings(r, paths.size());
    } else if (bench->parsed()) {
      const auto f = read_detections(detections_path);
      if (f.units != Units::px)
        throw DataError("benchmark compares pixel-unit detections with simulated truth");
      std::map<long long, const DetectionSet *> by_id;
      for (const auto &s : f.sets)
        by_id[s.frame_id] = &s;
      std::vector<std::vector<Detection>> dets;
      std::vector<std::vector<TruthPeak>> truth;
      for (std::size_t i = 0;; ++i) {
        const auto path = fs::path(truth_dir) / (dataset_stem(i) + ".txt");
        if (!fs::exists(path))
          break;
        std::vector<TruthPeak> t;
        for (const auto &a : parse_annotations(detail::read_text(path), path.string()))
          t.push_back(truth_from(a));
        truth.push_back(std::move(t));
        const auto it = by_id.find(static_cast<long long>(i));
        dets.push_back(it == by_id.end() ? std::vector<Detection>{} : it->second->detections);
      }
      if (truth.empty())
        throw DataError("no annotations in " + truth_dir);
      const auto text = format_report(benchmark(dets, truth));
      if (g.out.empty())
        std::fputs(text.c_str(), stdout);
      else
        detail::write_text(g.out, text);
    } else if (report->parsed()) {
      for (const auto &name : write_report(run_dir, require_out(g)))
        std::printf("%s\n", name.c_str());
    } else if (twin->parsed()) {
      auto spec = twin_case == 1 ? twin_case1(g.seed) : twin_case2(g.seed);
      if (twin_frames > 0)
        spec.n_frames = twin_frames;
      PipelineConfig cfg = load_config(g, false);
      if (g.config.empty()) {
        cfg.geometry = spec.geometry;
        cfg.cards = spec.cards;
      }
      const fs::path out = require_out(g);
      const Pipeline pl(cfg);
      const TwinRenderer renderer(spec);
      const auto range = pl.range();
      FrameSource src{spec.n_frames, [](std::size_t i) { return static_cast<long long>(i); },
                      [&](std::size_t i) { return renderer.render(i, twin_peaks(spec, i, range)); }};
      const auto r = pl.run(src);
      write_artifacts(r, out);
      detail::write_text(out / "geometry.cfg", spec.geometry.to_config());
      fs::create_directories(out / "cards");
      for (const auto &c : spec.cards)
        detail::write_text(out / "cards" / (c.name + ".card"), format_phase_card(c));
      if (twin_write_frames) {
        fs::create_directories(out / "frames");
        for (std::size_t i = 0; i < spec.n_frames; ++i)
          write_raster(out / "frames" / (dataset_stem(i) + ".tif"),
                       renderer.render(i, twin_peaks(spec, i, range)).raster);
      }
      std::fputs(format_identification(r).c_str(), stdout);
      std::fputs(format_phase_windows(phase_windows(r)).c_str(), stdout);
      print_timings(r, spec.n_frames);
    }
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError &e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
