#pragma once

// Duplicate suppression, score filtering, frame-to-frame linking and radial
// profile fitting of detections.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "gixd/core.hpp"
#include "gixd/detect.hpp"
#include "gixd/io.hpp"
#include "gixd/lm.hpp"

namespace gixd {

inline double iou(const Box &a, const Box &b) {
  const double w = std::min(a.q_hi, b.q_hi) - std::max(a.q_lo, b.q_lo);
  const double h = std::min(a.phi_hi, b.phi_hi) - std::max(a.phi_lo, b.phi_lo);
  if (w <= 0.0 || h <= 0.0)
    return 0.0;
  const double inter = w * h;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou(const Detection &a, const Detection &b) { return iou(a.box(), b.box()); }

/// Priority order used by NMS: score desc, then q_center asc, phi_center asc.
inline bool higher_priority(const Detection &a, const Detection &b) {
  if (a.score != b.score)
    return a.score > b.score;
  if (a.q_center != b.q_center)
    return a.q_center < b.q_center;
  return a.phi_center < b.phi_center;
}

/// Greedy non-maximum suppression. The output is in priority order.
inline DetectionSet nms(const DetectionSet &in, double iou_thresh = 0.1) {
  for (const auto &d : in.detections)
    if (!std::isfinite(d.score))
      throw DataError("nms: non-finite score");
  std::vector<Detection> order = in.detections;
  std::stable_sort(order.begin(), order.end(), higher_priority);
  DetectionSet out = in;
  out.detections.clear();
  for (const auto &d : order) {
    const bool suppressed = std::any_of(out.detections.begin(), out.detections.end(),
                                        [&](const Detection &k) { return iou(k, d) > iou_thresh; });
    if (!suppressed)
      out.detections.push_back(d);
  }
  return out;
}

inline DetectionSet filter_score(const DetectionSet &in, double thresh = 0.8) {
  DetectionSet out = in;
  std::erase_if(out.detections, [&](const Detection &d) { return !(d.score >= thresh); });
  return out;
}

// ---------------------------------------------------------------------------
// Radial profile fit: I0 exp(-(q - Q)^2 / (2 w^2)) + B q + C.

struct GaussianLinearFit {
  double I0 = 0, Q_fit = 0, w = 0, B = 0, C = 0;
  Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();
  int iterations = 0;
  bool converged = false;
  bool flagged = true;
  std::string flag_reason;
  std::size_t n_samples = 0;

  double sigma(int i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

namespace detail {

/// Model values and Jacobian columns d/d(I0, Q, w, B, C).
inline void gauss_linear_model(const Eigen::VectorXd &p, const Eigen::VectorXd &q,
                               Eigen::VectorXd &f, Eigen::MatrixXd *J) {
  const double I0 = p[0], Q = p[1], w = p[2], B = p[3], C = p[4];
  f.resize(q.size());
  if (J)
    J->resize(q.size(), 5);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double t = (q[i] - Q) / w;
    const double g = std::exp(-0.5 * t * t);
    f[i] = I0 * g + B * q[i] + C;
    if (J) {
      (*J)(i, 0) = g;
      (*J)(i, 1) = I0 * g * t / w;
      (*J)(i, 2) = I0 * g * t * t / w;
      (*J)(i, 3) = q[i];
      (*J)(i, 4) = 1.0;
    }
  }
}

inline double median_copy(std::vector<double> v) {
  if (v.empty())
    return 0.0;
  return median_of(v);
}

}  // namespace detail

/// Least-squares fit of a Gaussian on a linear background to sampled
/// profile (q, y). Initial values follow the detection: I0 = max - median,
/// Q = q_center, w = w_detected / 2, B = 0, C = median.
///
/// Covariance is the leverage-adjusted heteroscedasticity-consistent sandwich
///   (J^T J)^-1 J^T diag(r_i^2 / (1 - h_i)^2) J (J^T J)^-1,
/// h_i the diagonal of the hat matrix J (J^T J)^-1 J^T. It stays honest when
/// the noise grows with intensity (counting data) and when a narrow peak
/// rests on a handful of samples.
/// A fit is flagged when the search does not converge, w drops below
/// `min_width`, Q leaves the sampled range, or I0 is not positive and
/// significant at 3 sigma.
inline GaussianLinearFit fit_gaussian_linear(const std::vector<double> &qs,
                                             const std::vector<double> &ys, double q_center,
                                             double w_detected, double min_width,
                                             const LmOptions &opt = {}) {
  const auto n = static_cast<Eigen::Index>(qs.size());
  if (n < 7 || ys.size() != qs.size())
    throw DataError("profile fit needs at least 7 samples");
  Eigen::VectorXd q(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    q[i] = qs[static_cast<std::size_t>(i)];
    y[i] = ys[static_cast<std::size_t>(i)];
  }
  const double med = detail::median_copy(ys);
  Eigen::VectorXd p0(5);
  p0 << y.maxCoeff() - med, q_center, w_detected / 2.0, 0.0, med;

  // Work in q shifted to the window centre so B and C are not collinear.
  const double q_ref = q_center;
  const Eigen::VectorXd qc = q.array() - q_ref;
  auto to_local = [&](Eigen::VectorXd p) {
    p[1] -= q_ref;
    p[4] += p[3] * q_ref;
    return p;
  };
  Eigen::VectorXd model_f;
  auto model = [&](const Eigen::VectorXd &p, Eigen::VectorXd &r, Eigen::MatrixXd &J) {
    detail::gauss_linear_model(p, qc, model_f, &J);
    r = model_f - y;
  };
  const LmResult res = levenberg_marquardt(model, to_local(p0), opt);

  GaussianLinearFit fit;
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  fit.n_samples = static_cast<std::size_t>(n);
  Eigen::VectorXd p = res.x;
  p[2] = std::abs(p[2]);  // the model is even in w
  // back to absolute q: C_abs = C_loc - B Q_ref
  fit.I0 = p[0];
  fit.Q_fit = p[1] + q_ref;
  fit.w = p[2];
  fit.B = p[3];
  fit.C = p[4] - p[3] * q_ref;

  // Parameter transform Jacobian (local -> absolute) for the covariance.
  Eigen::Matrix<double, 5, 5> T = Eigen::Matrix<double, 5, 5>::Identity();
  T(4, 3) = -q_ref;
  Eigen::MatrixXd J;
  Eigen::VectorXd f;
  detail::gauss_linear_model(p, qc, f, &J);
  const Eigen::VectorXd r = f - y;
  const Eigen::MatrixXd A = J.transpose() * J;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (lu.isInvertible() && n > 5) {
    const Eigen::MatrixXd Ainv = lu.inverse();
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(5, 5);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = std::min((J.row(i) * Ainv * J.row(i).transpose()).value(), 1.0 - 1e-12);
      meat += (r[i] * r[i] / ((1.0 - h) * (1.0 - h))) * J.row(i).transpose() * J.row(i);
    }
    const Eigen::MatrixXd cov_local = Ainv * meat * Ainv;
    fit.covariance = T * cov_local * T.transpose();
  } else {
    fit.covariance.setConstant(std::numeric_limits<double>::infinity());
  }

  const double q_lo = q.minCoeff(), q_hi = q.maxCoeff();
  if (!fit.converged)
    fit.flag_reason = "not converged";
  else if (!fit.covariance.allFinite())
    fit.flag_reason = "singular normal matrix";
  else if (!(fit.w >= min_width))
    fit.flag_reason = "width below grid step";
  else if (!(fit.Q_fit >= q_lo && fit.Q_fit <= q_hi))
    fit.flag_reason = "centre outside window";
  else if (!(fit.I0 > 0.0) || fit.I0 < 3.0 * fit.sigma(0))
    fit.flag_reason = "no significant peak";
  fit.flagged = !fit.flag_reason.empty();
  return fit;
}

/// Fits the radial profile of a detection on the unenhanced polar image.
/// The profile is the mean over the unmasked cells of the rows inside the
/// detection's phi range, sampled over a window of three detection widths.
inline GaussianLinearFit fit_peak_profile(const PolarImage &img, const Detection &det,
                                          const LmOptions &opt = {}) {
  const auto &r = img.raster;
  const double half = 1.5 * det.q_width;
  const double c_lo = std::ceil(img.q.index_of(det.q_center - half));
  const double c_hi = std::floor(img.q.index_of(det.q_center + half));
  const double r_lo = std::ceil(img.phi.index_of(det.phi_lo()) - 1e-9);
  const double r_hi = std::floor(img.phi.index_of(det.phi_hi()) + 1e-9);
  const double last_c = static_cast<double>(r.cols) - 1, last_r = static_cast<double>(r.rows) - 1;
  if (c_hi < 0 || c_lo > last_c || r_hi < 0 || r_lo > last_r)
    throw DataError("detection box lies outside the image");
  const auto c0 = static_cast<std::size_t>(std::max(0.0, c_lo));
  const auto c1 = static_cast<std::size_t>(std::min(last_c, c_hi));
  // a box thinner than one row still samples its nearest row
  auto r0 = static_cast<std::size_t>(std::max(0.0, r_lo));
  auto r1 = static_cast<std::size_t>(std::min(last_r, r_hi));
  if (r_lo > r_hi) {
    r0 = r1 = static_cast<std::size_t>(
        std::clamp(std::round(img.phi.index_of(det.phi_center)), 0.0, last_r));
  }
  std::vector<double> qs, ys;
  for (std::size_t c = c0; c <= c1; ++c) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t row = r0; row <= r1; ++row)
      if (!r.masked(row, c)) {
        sum += r(row, c);
        ++cnt;
      }
    if (cnt > 0) {
      qs.push_back(img.q.at(static_cast<double>(c)));
      ys.push_back(sum / static_cast<double>(cnt));
    }
  }
  if (qs.size() < 7)
    throw DataError("fewer than 7 unmasked samples across the detection");
  return fit_gaussian_linear(qs, ys, det.q_center, det.q_width, std::abs(img.q.step), opt);
}

// ---------------------------------------------------------------------------
// Tracks.

struct TrackPoint {
  long long frame_id = 0;
  Detection detection;
  std::optional<GaussianLinearFit> fit;

  /// Fitted centre when a usable fit exists, otherwise the detection centre.
  double q_position() const {
    return fit && !fit->flagged ? fit->Q_fit : detection.q_center;
  }
};

struct Track {
  long long track_id = 0;
  std::vector<TrackPoint> points;  // strictly increasing frames

  long long first_frame() const { return points.front().frame_id; }
  long long last_frame() const { return points.back().frame_id; }
  std::size_t duration() const { return points.size(); }
};

/// Links detections of consecutive frames. For every pair of adjacent frames
/// (frame ids differing by one) all cross IoUs are ranked and pairs are taken
/// greedily from the top while both ends are still free and IoU >= link_iou;
/// each taken pair is mutually best among the remaining candidates.
/// Unmatched detections start new tracks.
inline std::vector<Track> link_frames(const std::vector<DetectionSet> &sets, double link_iou = 0.3) {
  for (std::size_t i = 1; i < sets.size(); ++i)
    if (sets[i].frame_id <= sets[i - 1].frame_id)
      throw DataError("link_frames: frames must be strictly increasing");
  std::vector<Track> tracks;
  std::vector<std::size_t> prev_track;  // track index per detection of the previous frame
  for (std::size_t f = 0; f < sets.size(); ++f) {
    const auto &cur = sets[f].detections;
    std::vector<std::size_t> cur_track(cur.size(), SIZE_MAX);
    if (f > 0 && sets[f].frame_id == sets[f - 1].frame_id + 1) {
      const auto &prev = sets[f - 1].detections;
      std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < prev.size(); ++i)
        for (std::size_t j = 0; j < cur.size(); ++j) {
          const double v = iou(prev[i], cur[j]);
          if (v >= link_iou && v > 0.0)
            pairs.emplace_back(v, i, j);
        }
      std::stable_sort(pairs.begin(), pairs.end(), [](const auto &a, const auto &b) {
        if (std::get<0>(a) != std::get<0>(b))
          return std::get<0>(a) > std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b))
          return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
      });
      std::vector<bool> prev_used(prev.size(), false);
      for (const auto &[v, i, j] : pairs) {
        if (prev_used[i] || cur_track[j] != SIZE_MAX)
          continue;
        prev_used[i] = true;
        cur_track[j] = prev_track[i];
      }
    }
    for (std::size_t j = 0; j < cur.size(); ++j) {
      if (cur_track[j] == SIZE_MAX) {
        cur_track[j] = tracks.size();
        tracks.push_back({static_cast<long long>(tracks.size()), {}});
      }
      tracks[cur_track[j]].points.push_back({sets[f].frame_id, cur[j], std::nullopt});
    }
    prev_track = std::move(cur_track);
  }
  return tracks;
}

inline std::vector<Track> filter_duration(const std::vector<Track> &tracks, std::size_t min_frames = 3) {
  std::vector<Track> out;
  for (const auto &t : tracks)
    if (t.duration() >= min_frames)
      out.push_back(t);
  return out;
}

/// Fits every track point against the unenhanced frame with that id.
/// Frames missing from `frames` leave their points unfitted.
inline void fit_tracks(std::vector<Track> &tracks, const std::map<long long, const PolarImage *> &frames) {
  for (auto &t : tracks)
    for (auto &p : t.points) {
      const auto it = frames.find(p.frame_id);
      if (it == frames.end())
        continue;
      try {
        p.fit = fit_peak_profile(*it->second, p.detection);
      } catch (const DataError &) {
        p.fit.reset();
      }
    }
}

// Track files: "#units <u>" then one line per track point,
//   track_id frame q_center q_width phi_center phi_extent score [Q_fit w I0 B C]
// The fit columns appear only for unflagged fits.

inline std::string format_tracks(const std::vector<Track> &tracks, Units units) {
  using detail::fmt9;
  std::string s = std::string("#units ") + to_string(units) + "\n";
  for (const auto &t : tracks)
    for (const auto &p : t.points) {
      const auto &d = p.detection;
      s += std::to_string(t.track_id) + " " + std::to_string(p.frame_id) + " " + fmt9(d.q_center) +
           " " + fmt9(d.q_width) + " " + fmt9(d.phi_center) + " " + fmt9(d.phi_extent) + " " +
           fmt9(d.score);
      if (p.fit && !p.fit->flagged)
        s += " " + fmt9(p.fit->Q_fit) + " " + fmt9(p.fit->w) + " " + fmt9(p.fit->I0) + " " +
             fmt9(p.fit->B) + " " + fmt9(p.fit->C);
      s += "\n";
    }
  return s;
}

struct TrackFile {
  Units units = Units::px;
  std::vector<Track> tracks;
};

inline TrackFile parse_tracks(const std::string &text, const std::string &name = "<tracks>") {
  TrackFile f;
  std::map<long long, std::size_t> index;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string ctx = name + ":" + std::to_string(no);
    const auto tok = detail::split_ws(line);
    if (tok.empty())
      continue;
    if (tok[0] == "#units" && tok.size() == 2) {
      f.units = parse_units(tok[1]);
      continue;
    }
    if (tok[0][0] == '#')
      continue;
    if (tok.size() != 7 && tok.size() != 12)
      throw DataError(ctx + ": expected 7 or 12 columns");
    const long long id = detail::parse_int(tok[0], ctx);
    TrackPoint p;
    p.frame_id = detail::parse_int(tok[1], ctx);
    auto &d = p.detection;
    d.frame_id = p.frame_id;
    d.q_center = detail::parse_double(tok[2], ctx);
    d.q_width = detail::parse_double(tok[3], ctx);
    d.phi_center = detail::parse_double(tok[4], ctx);
    d.phi_extent = detail::parse_double(tok[5], ctx);
    d.score = detail::parse_double(tok[6], ctx);
    validate_detection(d, f.units, ctx);
    if (tok.size() == 12) {
      GaussianLinearFit fit;
      fit.Q_fit = detail::parse_double(tok[7], ctx);
      fit.w = detail::parse_double(tok[8], ctx);
      fit.I0 = detail::parse_double(tok[9], ctx);
      fit.B = detail::parse_double(tok[10], ctx);
      fit.C = detail::parse_double(tok[11], ctx);
      fit.converged = true;
      fit.flagged = false;
      p.fit = fit;
    }
    auto [it, fresh] = index.try_emplace(id, f.tracks.size());
    if (fresh)
      f.tracks.push_back({id, {}});
    auto &t = f.tracks[it->second];
    if (!t.points.empty() && p.frame_id <= t.last_frame())
      throw DataError(ctx + ": track frames must be strictly increasing");
    t.points.push_back(std::move(p));
  }
  return f;
}

inline void write_tracks(const std::vector<Track> &tracks, Units units, const std::filesystem::path &path) {
  detail::write_text(path, format_tracks(tracks, units));
}

inline TrackFile read_tracks(const std::filesystem::path &path) {
  return parse_tracks(detail::read_text(path), path.string());
}

}  // namespace gixd
