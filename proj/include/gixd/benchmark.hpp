#pragma once

// Detection quality against simulated ground truth.
//
// A detection d can explain a truth peak t when
//   |q_d - q_t| / w_d <= 1   and   |phi_d - phi_t| / a_d <= 1,
// with w_d, a_d the detection's radial and angular sizes. Matching is
// one-to-one: admissible pairs are taken greedily by increasing cost
// |q_d - q_t| / w_d + |phi_d - phi_t| / a_d. Unmatched truth peaks are
// misses, unmatched detections false positives.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gixd/detect.hpp"
#include "gixd/io.hpp"
#include "gixd/simulate.hpp"

namespace gixd {

/// Truth as seen by the benchmark: centre and size of the padded box.
struct TruthPeak {
  double q_center = 0, w_sim = 0, phi_center = 0, phi_extent = 0;
};

inline TruthPeak truth_from(const Annotation &a) {
  return {a.q_center, a.w_sim, 0.5 * (a.box.phi_lo + a.box.phi_hi), a.box.phi_hi - a.box.phi_lo};
}

inline std::vector<TruthPeak> truth_from(const std::vector<GroundTruthPeak> &peaks) {
  std::vector<TruthPeak> out;
  for (const auto &p : peaks)
    out.push_back(truth_from(to_annotation(p)));
  return out;
}

struct ImageMatch {
  std::vector<long> truth_to_det;  // -1: missed
  std::vector<long> det_to_truth;  // -1: false positive
  std::size_t matched = 0;
};

inline ImageMatch match_detections(const std::vector<Detection> &dets,
                                   const std::vector<TruthPeak> &truth) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t j = 0; j < truth.size(); ++j)
    for (std::size_t k = 0; k < dets.size(); ++k) {
      const auto &d = dets[k];
      const double a = std::abs(d.q_center - truth[j].q_center) / d.q_width;
      const double b = std::abs(d.phi_center - truth[j].phi_center) / d.phi_extent;
      if (a <= 1.0 && b <= 1.0)
        pairs.emplace_back(a + b, j, k);
    }
  std::sort(pairs.begin(), pairs.end());
  ImageMatch m{std::vector<long>(truth.size(), -1), std::vector<long>(dets.size(), -1), 0};
  for (const auto &[c, j, k] : pairs) {
    if (m.truth_to_det[j] >= 0 || m.det_to_truth[k] >= 0)
      continue;
    m.truth_to_det[j] = static_cast<long>(k);
    m.det_to_truth[k] = static_cast<long>(j);
    ++m.matched;
  }
  return m;
}

/// Nearest-rank percentile (p in [0, 100]) of unsorted values; NaN if empty.
inline double percentile(std::vector<double> v, double p) {
  if (v.empty())
    return std::nan("");
  std::sort(v.begin(), v.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(v.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(v.size()))) - 1;
  return v[idx];
}

struct BenchmarkReport {
  std::size_t images = 0, truth = 0, detections = 0, matched = 0;
  double recall = 0;        // matched / truth
  double fp_per_image = 0;  // unmatched detections per image
  double fp_share = 0;      // unmatched / detections
  double dq_p50 = 0, dq_p95 = 0;
  std::vector<double> dq;                   // |q_d - q_t| of matched pairs
  std::map<std::size_t, std::size_t> missed_hist, fp_hist;  // per-image count -> images
  std::vector<ImageMatch> per_image;
};

inline BenchmarkReport benchmark(const std::vector<std::vector<Detection>> &dets,
                                 const std::vector<std::vector<TruthPeak>> &truth) {
  if (dets.size() != truth.size())
    throw DataError("benchmark: detection and truth image counts differ");
  BenchmarkReport r;
  r.images = dets.size();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    auto m = match_detections(dets[i], truth[i]);
    r.truth += truth[i].size();
    r.detections += dets[i].size();
    r.matched += m.matched;
    for (std::size_t j = 0; j < truth[i].size(); ++j)
      if (m.truth_to_det[j] >= 0)
        r.dq.push_back(std::abs(dets[i][static_cast<std::size_t>(m.truth_to_det[j])].q_center -
                                truth[i][j].q_center));
    ++r.missed_hist[truth[i].size() - m.matched];
    ++r.fp_hist[dets[i].size() - m.matched];
    r.per_image.push_back(std::move(m));
  }
  r.recall = r.truth ? double(r.matched) / double(r.truth) : 1.0;
  r.fp_per_image = r.images ? double(r.detections - r.matched) / double(r.images) : 0.0;
  r.fp_share = r.detections ? double(r.detections - r.matched) / double(r.detections) : 0.0;
  r.dq_p50 = r.dq.empty() ? 0.0 : percentile(r.dq, 50);
  r.dq_p95 = r.dq.empty() ? 0.0 : percentile(r.dq, 95);
  return r;
}

inline std::string format_report(const BenchmarkReport &r) {
  using detail::fmt9;
  std::string s;
  s += "images = " + std::to_string(r.images) + "\n";
  s += "truth = " + std::to_string(r.truth) + "\n";
  s += "detections = " + std::to_string(r.detections) + "\n";
  s += "matched = " + std::to_string(r.matched) + "\n";
  s += "recall = " + fmt9(r.recall) + "\n";
  s += "fp_per_image = " + fmt9(r.fp_per_image) + "\n";
  s += "fp_share = " + fmt9(r.fp_share) + "\n";
  s += "dq_p50 = " + fmt9(r.dq_p50) + "\n";
  s += "dq_p95 = " + fmt9(r.dq_p95) + "\n";
  for (const auto &[k, v] : r.missed_hist)
    s += "missed_hist." + std::to_string(k) + " = " + std::to_string(v) + "\n";
  for (const auto &[k, v] : r.fp_hist)
    s += "fp_hist." + std::to_string(k) + " = " + std::to_string(v) + "\n";
  return s;
}

}  // namespace gixd
