#pragma once

// Orthorhombic unit-cell refinement from indexed peaks:
//   chi2(a, b, c) = sum_i ((Q_i - q_hkl_i(a, b, c)) / sigma)^2
// minimized within +-20% of the initial cell. Standard errors are
// sqrt(2 [H^-1]_pp) with H the exact Hessian of chi2 at the minimum.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gixd/core.hpp"
#include "gixd/crystallography.hpp"
#include "gixd/io.hpp"
#include "gixd/lbfgsb.hpp"
#include "gixd/postprocess.hpp"

namespace gixd {

struct RefinementPeak {
  Hkl hkl{};
  double q = 0;  // measured |Q|, 1/A
};

struct RefinementResult {
  long long frame_id = 0;
  UnitCell cell;
  std::array<double, 3> std_errors{};  // sigma_a, sigma_b, sigma_c
  double chi2 = 0;
  std::size_t n_peaks = 0;
  int iterations = 0;
  std::string flags;  // empty when the result is clean

  bool ok() const { return flags.empty(); }
};

/// Peaks of card `card` that carry no assignment from any other card.
/// Throws DataError when fewer than four remain (chi2 has N - 3 degrees of
/// freedom).
inline std::vector<RefinementPeak> select_nonoverlapping(const std::vector<IndexedPeak> &peaks,
                                                         std::size_t card) {
  std::vector<RefinementPeak> out;
  for (const auto &p : peaks) {
    if (!p.assigned_to(card) || p.assignments.size() != 1)
      continue;
    out.push_back({p.assignments.front().hkl, p.detection.q_center});
  }
  if (out.size() < 4)
    throw DataError("fewer than 4 non-overlapping peaks for refinement");
  return out;
}

namespace detail {

inline constexpr double kSigmaRef = 0.01;

/// chi2 at sigma_ref with gradient and exact Hessian in (a, b, c).
struct Chi2 {
  const std::vector<RefinementPeak> &peaks;

  double operator()(const Eigen::Vector3d &p, Eigen::Vector3d *grad, Eigen::Matrix3d *hess) const {
    constexpr double s2 = kSigmaRef * kSigmaRef;
    const double tp2 = 4.0 * kPi * kPi;
    double chi = 0;
    if (grad)
      grad->setZero();
    if (hess)
      hess->setZero();
    for (const auto &pk : peaks) {
      const Eigen::Vector3d h = hkl_vector(pk.hkl);
      const Eigen::Vector3d u = h.cwiseProduct(h).cwiseQuotient(p.cwiseProduct(p).cwiseProduct(p));
      const double S = (h.cwiseQuotient(p)).squaredNorm();
      const double q = 2.0 * kPi * std::sqrt(S);
      const double r = pk.q - q;
      chi += r * r / s2;
      const Eigen::Vector3d dq = -tp2 * u / q;
      if (grad)
        *grad += -2.0 * r / s2 * dq;
      if (hess) {
        Eigen::Matrix3d d2 = tp2 * u * dq.transpose() / (q * q);
        for (int i = 0; i < 3; ++i)
          d2(i, i) += tp2 * 3.0 * h[i] * h[i] / (std::pow(p[i], 4) * q);
        *hess += 2.0 / s2 * (dq * dq.transpose() - r * d2);
      }
    }
    return chi;
  }
};

}  // namespace detail

inline double chi2_of(const std::vector<RefinementPeak> &peaks, const UnitCell &cell, double sigma) {
  const double ref = detail::Chi2{peaks}(Eigen::Vector3d(cell.a, cell.b, cell.c), nullptr, nullptr);
  return ref * (detail::kSigmaRef / sigma) * (detail::kSigmaRef / sigma);
}

inline Eigen::Vector3d chi2_gradient(const std::vector<RefinementPeak> &peaks, const UnitCell &cell,
                                     double sigma) {
  Eigen::Vector3d g;
  detail::Chi2{peaks}(Eigen::Vector3d(cell.a, cell.b, cell.c), &g, nullptr);
  return g * (detail::kSigmaRef / sigma) * (detail::kSigmaRef / sigma);
}

inline Eigen::Matrix3d chi2_hessian(const std::vector<RefinementPeak> &peaks, const UnitCell &cell,
                                    double sigma) {
  Eigen::Matrix3d h;
  detail::Chi2{peaks}(Eigen::Vector3d(cell.a, cell.b, cell.c), nullptr, &h);
  return h * (detail::kSigmaRef / sigma) * (detail::kSigmaRef / sigma);
}

struct RefineOptions {
  double bound_fraction = 0.2;
  LbfgsbOptions solver{};
};

/// Fits (a, b, c) of an orthorhombic cell. The search always runs at the
/// internal sigma of 0.01 1/A, so the minimizer does not depend on `sigma`;
/// chi2 and the standard errors are rescaled to it afterwards. Flags:
/// not_converged, singular_hessian, at_bound.
inline RefinementResult refine_cell(const std::vector<RefinementPeak> &peaks, const UnitCell &initial,
                                    double sigma = 0.01, const RefineOptions &opt = {}) {
  if (!initial.orthorhombic())
    throw ConfigError("refinement supports orthorhombic cells only");
  initial.validate();
  if (!(sigma > 0))
    throw ConfigError("refinement sigma must be > 0");
  if (peaks.size() < 4)
    throw DataError("refinement needs at least 4 peaks");
  const detail::Chi2 chi{peaks};
  const Eigen::Vector3d p0(initial.a, initial.b, initial.c);
  const Eigen::Vector3d lo = p0 * (1.0 - opt.bound_fraction), hi = p0 * (1.0 + opt.bound_fraction);
  const auto res = lbfgsb_minimize(
      [&](const Eigen::VectorXd &x, Eigen::VectorXd &g) {
        Eigen::Vector3d g3;
        const double v = chi(x, &g3, nullptr);
        g = g3;
        return v;
      },
      p0, lo, hi, opt.solver);

  RefinementResult out;
  out.cell = {res.x[0], res.x[1], res.x[2], 90, 90, 90};
  out.n_peaks = peaks.size();
  out.iterations = res.iterations;
  const double scale = (detail::kSigmaRef / sigma) * (detail::kSigmaRef / sigma);
  out.chi2 = res.f * scale;
  std::vector<std::string> flags;
  if (!res.converged)
    flags.push_back("not_converged");

  Eigen::Matrix3d H;
  chi(res.x, nullptr, &H);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(H);
  const auto ev = eig.eigenvalues();
  const bool singular = !(ev.minCoeff() > 1e-10 * std::max(ev.maxCoeff(), 0.0)) || !H.allFinite();
  if (singular) {
    flags.push_back("singular_hessian");
    out.std_errors.fill(std::numeric_limits<double>::infinity());
  } else {
    const Eigen::Matrix3d inv = H.inverse();
    // H scales with 1/sigma^2, so the errors scale linearly with sigma
    const double f = sigma / detail::kSigmaRef;
    for (int i = 0; i < 3; ++i)
      out.std_errors[i] = std::sqrt(2.0 * inv(i, i)) * f;
  }
  for (int i = 0; i < 3; ++i)
    if (res.x[i] <= lo[i] * (1 + 1e-12) || res.x[i] >= hi[i] * (1 - 1e-12)) {
      flags.push_back("at_bound");
      break;
    }
  for (std::size_t i = 0; i < flags.size(); ++i)
    out.flags += (i ? "," : "") + flags[i];
  return out;
}

// ---------------------------------------------------------------------------
// Time series over tracks.

/// Track-level indexing: the card assignments of each track.
struct IndexedTrack {
  const Track *track = nullptr;
  std::vector<Assignment> assignments;
};

struct SeriesEntry {
  long long frame_id = 0;
  std::optional<RefinementResult> result;  // empty: refinement refused
  std::size_t n_peaks = 0;
  std::string error;
};

/// Refines card `card` independently in every frame that has track points.
/// Only tracks assigned to this card alone take part; their position is the
/// fitted centre where available, else the detection centre.
inline std::vector<SeriesEntry> refine_series(const std::vector<IndexedTrack> &tracks, std::size_t card,
                                              const UnitCell &initial, double sigma = 0.01,
                                              const RefineOptions &opt = {}) {
  std::map<long long, std::vector<RefinementPeak>> per_frame;
  std::map<long long, bool> frames;
  for (const auto &t : tracks) {
    for (const auto &p : t.track->points)
      frames[p.frame_id] = true;
    if (t.assignments.size() != 1 || t.assignments.front().card_index != card)
      continue;
    for (const auto &p : t.track->points)
      per_frame[p.frame_id].push_back({t.assignments.front().hkl, p.q_position()});
  }
  std::vector<SeriesEntry> out;
  for (const auto &[frame, _] : frames) {
    SeriesEntry e;
    e.frame_id = frame;
    const auto it = per_frame.find(frame);
    e.n_peaks = it == per_frame.end() ? 0 : it->second.size();
    try {
      if (e.n_peaks < 4)
        throw DataError("fewer than 4 non-overlapping peaks");
      e.result = refine_cell(it->second, initial, sigma, opt);
      e.result->frame_id = frame;
    } catch (const DataError &err) {
      e.error = err.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Table "frame a sa b sb c sc chi2 N flags"; refused frames keep their row
/// with NaN values and the flag "refused".
inline std::string format_series(const std::vector<SeriesEntry> &series) {
  using detail::fmt9;
  std::string s = "# frame a sa b sb c sc chi2 N flags\n";
  for (const auto &e : series) {
    s += std::to_string(e.frame_id);
    if (e.result) {
      const auto &r = *e.result;
      s += " " + fmt9(r.cell.a) + " " + fmt9(r.std_errors[0]) + " " + fmt9(r.cell.b) + " " +
           fmt9(r.std_errors[1]) + " " + fmt9(r.cell.c) + " " + fmt9(r.std_errors[2]) + " " +
           fmt9(r.chi2) + " " + std::to_string(r.n_peaks) + " " + (r.ok() ? "ok" : r.flags);
    } else {
      s += " nan nan nan nan nan nan nan " + std::to_string(e.n_peaks) + " refused";
    }
    s += "\n";
  }
  return s;
}

/// Least-squares slope of b over frame id for the clean entries of a series.
inline double b_slope(const std::vector<SeriesEntry> &series) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto &e : series) {
    if (!e.result || !e.result->ok())
      continue;
    const double x = double(e.frame_id), y = e.result->cell.b;
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  return den > 0 ? (n * sxy - sx * sy) / den : std::nan("");
}

}  // namespace gixd
