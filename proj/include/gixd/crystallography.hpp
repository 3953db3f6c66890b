#pragma once

// Unit cells, phase cards, reflection enumeration, phase identification by
// intensity coverage, and peak indexing.
//
// For a card with preferred orientation (uvw) the sample normal is the
// reciprocal-lattice direction n = u a* + v b* + w c*. A reflection's
// out-of-plane component is Q_z = |Q . n^|, the in-plane remainder
// Q_par = sqrt(|Q|^2 - Q_z^2), and phi = atan2(Q_z, Q_par) in degrees.
// Powder cards only carry |Q|.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gixd/core.hpp"
#include "gixd/detect.hpp"
#include "gixd/io.hpp"

namespace gixd {

using Hkl = std::array<int, 3>;

struct UnitCell {
  double a = 1, b = 1, c = 1;              // A
  double alpha = 90, beta = 90, gamma = 90;  // degrees

  bool orthorhombic() const { return alpha == 90.0 && beta == 90.0 && gamma == 90.0; }

  Eigen::Matrix3d metric() const {
    const double ca = std::cos(alpha * kDeg), cb = std::cos(beta * kDeg),
                 cg = std::cos(gamma * kDeg);
    Eigen::Matrix3d g;
    g << a * a, a * b * cg, a * c * cb,  //
        a * b * cg, b * b, b * c * ca,   //
        a * c * cb, b * c * ca, c * c;
    return g;
  }

  void validate() const {
    if (!(a > 0 && b > 0 && c > 0))
      throw ConfigError("unit cell: lengths must be > 0");
    for (double ang : {alpha, beta, gamma})
      if (!(ang > 0 && ang < 180))
        throw ConfigError("unit cell: angles must lie in (0, 180) degrees");
    if (!(metric().determinant() > 0))
      throw ConfigError("unit cell: metric tensor is not positive definite");
  }

  /// Direct basis vectors as columns of a Cartesian matrix (a along x, b in
  /// the xy plane).
  Eigen::Matrix3d direct_basis() const {
    const double ca = std::cos(alpha * kDeg), cb = std::cos(beta * kDeg),
                 cg = std::cos(gamma * kDeg), sg = std::sin(gamma * kDeg);
    const double cx = c * cb, cy = c * (ca - cb * cg) / sg;
    const double cz = std::sqrt(std::max(0.0, c * c - cx * cx - cy * cy));
    Eigen::Matrix3d m;
    m << a, b * cg, cx,  //
        0, b * sg, cy,   //
        0, 0, cz;
    return m;
  }

  /// Reciprocal basis (with the 2 pi factor) as columns.
  Eigen::Matrix3d reciprocal_basis() const {
    return 2.0 * kPi * direct_basis().inverse().transpose();
  }

  friend bool operator==(const UnitCell &, const UnitCell &) = default;
};

inline Eigen::Vector3d hkl_vector(const Hkl &h) { return {double(h[0]), double(h[1]), double(h[2])}; }

/// |Q| of reflection (hkl); 2 pi sqrt(h^T G^-1 h) in general, which reduces to
/// 2 pi sqrt((h/a)^2 + (k/b)^2 + (l/c)^2) for orthorhombic cells.
inline double q_of_hkl(const UnitCell &cell, const Hkl &h) {
  if (h[0] == 0 && h[1] == 0 && h[2] == 0)
    throw std::invalid_argument("q_of_hkl: (000) has no reflection");
  if (cell.orthorhombic()) {
    const double x = h[0] / cell.a, y = h[1] / cell.b, z = h[2] / cell.c;
    return 2.0 * kPi * std::sqrt(x * x + y * y + z * z);
  }
  const Eigen::Vector3d v = hkl_vector(h);
  return 2.0 * kPi * std::sqrt(v.dot(cell.metric().inverse() * v));
}

struct CardReflection {
  Hkl hkl{};
  double intensity = 1.0;
};

struct PhaseCard {
  std::string name;
  UnitCell cell;
  bool powder = false;
  Hkl orientation{0, 1, 0};  // plane normal when not powder
  std::vector<CardReflection> reflections;  // empty: every hkl with weight 1
  std::map<std::string, std::string> metadata;

  void validate() const {
    cell.validate();
    if (!powder && orientation == Hkl{0, 0, 0})
      throw ConfigError("phase card " + name + ": orientation normal must be non-zero");
    for (const auto &r : reflections) {
      if (!(r.intensity >= 0.0 && std::isfinite(r.intensity)))
        throw ConfigError("phase card " + name + ": intensities must be finite and >= 0");
      if (r.hkl == Hkl{0, 0, 0})
        throw ConfigError("phase card " + name + ": (000) in the reflection table");
    }
  }
};

/// Card files are key-value text:
///   name = n2
///   a = 8.947            (b, c likewise; alpha/beta/gamma default to 90)
///   orientation = 0 1 0  (or "powder")
///   <any other key> = value   kept as metadata
/// followed by optional "h k l intensity" lines.
inline PhaseCard parse_phase_card(const KeyValueFile &kv) {
  PhaseCard card;
  card.name = kv.str("name");
  card.cell.a = kv.number("a");
  card.cell.b = kv.number("b");
  card.cell.c = kv.number("c");
  card.cell.alpha = kv.number_or("alpha", 90.0);
  card.cell.beta = kv.number_or("beta", 90.0);
  card.cell.gamma = kv.number_or("gamma", 90.0);
  const std::string orient = kv.str_or("orientation", "powder");
  if (orient == "powder") {
    card.powder = true;
  } else {
    const auto v = kv.numbers("orientation");
    if (v.size() != 3)
      throw ConfigError(kv.source() + ": orientation expects 'powder' or three integers");
    for (int i = 0; i < 3; ++i) {
      if (v[i] != std::round(v[i]))
        throw ConfigError(kv.source() + ": orientation indices must be integers");
      card.orientation[i] = static_cast<int>(v[i]);
    }
  }
  for (const auto &[key, value] : kv.entries())
    if (key != "name" && key != "a" && key != "b" && key != "c" && key != "alpha" &&
        key != "beta" && key != "gamma" && key != "orientation")
      card.metadata[key] = value;
  for (const auto &line : kv.data_lines()) {
    const std::string ctx = kv.source() + ":" + std::to_string(line.line_no);
    const auto tok = detail::split_ws(line.text);
    if (tok.size() != 4)
      throw ConfigError(ctx + ": reflection lines are 'h k l intensity'");
    try {
      CardReflection r;
      for (int i = 0; i < 3; ++i)
        r.hkl[i] = static_cast<int>(detail::parse_int(tok[i], ctx));
      r.intensity = detail::parse_double(tok[3], ctx);
      card.reflections.push_back(r);
    } catch (const DataError &e) {
      throw ConfigError(e.what());
    }
  }
  card.validate();
  return card;
}

inline PhaseCard load_phase_card(const std::filesystem::path &path) {
  return parse_phase_card(KeyValueFile::load(path));
}

inline std::string format_phase_card(const PhaseCard &card) {
  using detail::fmt17;
  std::string s = "name = " + card.name + "\n";
  s += "a = " + fmt17(card.cell.a) + "\nb = " + fmt17(card.cell.b) + "\nc = " + fmt17(card.cell.c) + "\n";
  s += "alpha = " + fmt17(card.cell.alpha) + "\nbeta = " + fmt17(card.cell.beta) +
       "\ngamma = " + fmt17(card.cell.gamma) + "\n";
  if (card.powder)
    s += "orientation = powder\n";
  else
    s += "orientation = " + std::to_string(card.orientation[0]) + " " +
         std::to_string(card.orientation[1]) + " " + std::to_string(card.orientation[2]) + "\n";
  for (const auto &[k, v] : card.metadata)
    s += k + " = " + v + "\n";
  for (const auto &r : card.reflections)
    s += std::to_string(r.hkl[0]) + " " + std::to_string(r.hkl[1]) + " " +
         std::to_string(r.hkl[2]) + " " + fmt17(r.intensity) + "\n";
  return s;
}

/// Loads every `*.card` file of a directory, sorted by file name.
inline std::vector<PhaseCard> load_phase_cards(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("phase card directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto &e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".card")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<PhaseCard> cards;
  for (const auto &f : files)
    cards.push_back(load_phase_card(f));
  if (cards.empty())
    throw ConfigError("no .card files in " + dir.string());
  return cards;
}

/// Measured region: |Q| in [q_min, q_max], phi in [phi_min, phi_max], and the
/// detector's reach along each component.
struct ReciprocalRange {
  double q_min = 0.0, q_max = std::numeric_limits<double>::infinity();
  double phi_min = 0.0, phi_max = 90.0;
  double q_par_max = std::numeric_limits<double>::infinity();
  double q_z_max = std::numeric_limits<double>::infinity();
};

struct Reflection {
  Hkl hkl{};  // representative of its symmetry-identical group
  double q = 0;
  double phi = 0;  // degrees; NaN for powder cards
  double intensity = 1;
  bool powder = false;
  int multiplicity = 1;
};

inline constexpr int kMaxMillerIndex = 20;
inline constexpr double kCoincidence = 1e-6;

/// (Q_par, Q_z) of a reflection for a card with preferred orientation.
inline std::pair<double, double> oriented_components(const PhaseCard &card, const Hkl &h) {
  const Eigen::Matrix3d rb = card.cell.reciprocal_basis();
  const Eigen::Vector3d q = rb * hkl_vector(h);
  const Eigen::Vector3d n = (rb * hkl_vector(card.orientation)).normalized();
  const double qz = std::abs(q.dot(n));
  const double qpar = std::sqrt(std::max(0.0, q.squaredNorm() - qz * qz));
  return {qpar, qz};
}

/// All reflections with indices in [-20, 20]^3 inside the range. Reflections
/// sharing |Q| (and phi) within 1e-6 are merged into one entry whose
/// intensity is the sum and whose hkl is the lexicographically largest mate.
inline std::vector<Reflection> enumerate_reflections(const PhaseCard &card,
                                                     const ReciprocalRange &range,
                                                     int max_index = kMaxMillerIndex) {
  card.validate();
  std::map<Hkl, double> table;
  for (const auto &r : card.reflections)
    table[r.hkl] += r.intensity;
  const Eigen::Matrix3d rb = card.cell.reciprocal_basis();
  const Eigen::Vector3d n = card.powder ? Eigen::Vector3d::Zero()
                                        : Eigen::Vector3d((rb * hkl_vector(card.orientation)).normalized());
  std::vector<Reflection> all;
  auto consider = [&](const Hkl &h, double intensity) {
    if (h == Hkl{0, 0, 0})
      return;
    const Eigen::Vector3d qv = rb * hkl_vector(h);
    const double q = qv.norm();
    if (q < range.q_min || q > range.q_max)
      return;
    Reflection r{h, q, std::nan(""), intensity, card.powder, 1};
    if (card.powder) {
      if (q * q > range.q_par_max * range.q_par_max + range.q_z_max * range.q_z_max)
        return;
    } else {
      const double qz = std::abs(qv.dot(n));
      const double qpar = std::sqrt(std::max(0.0, q * q - qz * qz));
      if (qz > range.q_z_max || qpar > range.q_par_max)
        return;
      r.phi = std::atan2(qz, qpar) / kDeg;
      if (r.phi < range.phi_min || r.phi > range.phi_max)
        return;
    }
    all.push_back(r);
  };
  if (table.empty()) {
    for (int h = -max_index; h <= max_index; ++h)
      for (int k = -max_index; k <= max_index; ++k)
        for (int l = -max_index; l <= max_index; ++l)
          consider({h, k, l}, 1.0);
  } else {
    for (const auto &[h, i] : table)
      if (std::abs(h[0]) <= max_index && std::abs(h[1]) <= max_index && std::abs(h[2]) <= max_index)
        consider(h, i);
  }

  auto phi_key = [](const Reflection &r) { return r.powder ? 0.0 : r.phi; };
  std::sort(all.begin(), all.end(), [&](const Reflection &x, const Reflection &y) {
    if (x.q != y.q)
      return x.q < y.q;
    if (phi_key(x) != phi_key(y))
      return phi_key(x) < phi_key(y);
    return x.hkl > y.hkl;
  });
  std::vector<Reflection> out;
  std::vector<bool> taken(all.size(), false);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (taken[i])
      continue;
    Reflection g = all[i];
    for (std::size_t j = i + 1; j < all.size() && all[j].q - all[i].q <= kCoincidence; ++j) {
      if (taken[j] || std::abs(phi_key(all[j]) - phi_key(all[i])) > kCoincidence)
        continue;
      taken[j] = true;
      g.intensity += all[j].intensity;
      g.hkl = std::max(g.hkl, all[j].hkl);
      ++g.multiplicity;
    }
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching.

/// Radial condition |q_det - q_sim| / w_det <= 1.
inline bool radial_match(const Detection &d, double q_sim) {
  return std::abs(d.q_center - q_sim) <= d.q_width;
}

/// Both conditions; powder reflections only need the radial one.
inline bool matches(const Detection &d, const Reflection &r) {
  if (!radial_match(d, r.q))
    return false;
  return r.powder || std::abs(d.phi_center - r.phi) <= d.phi_extent;
}

/// Normalized distance used to pick the closest matching reflection.
inline double match_distance(const Detection &d, const Reflection &r) {
  const double dq = (d.q_center - r.q) / d.q_width;
  if (r.powder)
    return std::abs(dq);
  const double dp = (d.phi_center - r.phi) / d.phi_extent;
  return std::hypot(dq, dp);
}

/// Share of the reflections' intensity covered by some detection; NaN when
/// there is nothing to cover.
inline double coverage(const std::vector<Reflection> &refl, const std::vector<Detection> &dets) {
  double total = 0.0, covered = 0.0;
  for (const auto &r : refl) {
    total += r.intensity;
    if (std::any_of(dets.begin(), dets.end(), [&](const Detection &d) { return matches(d, r); }))
      covered += r.intensity;
  }
  return total > 0.0 ? covered / total : std::nan("");
}

inline double match_score(const PhaseCard &card, const DetectionSet &dets,
                          const ReciprocalRange &range) {
  if (dets.units != Units::invA)
    throw DataError("phase matching needs detections in invA");
  return coverage(enumerate_reflections(card, range), dets.detections);
}

/// Moves the upper phi edge of detections that end within one row of the
/// missing wedge up to 90 degrees. `boundary` holds the wedge edge per |Q|
/// column of the frame (see wedge_boundary).
inline DetectionSet prolong_to_wedge(const DetectionSet &in, const std::vector<double> &boundary,
                                     const Axis &q_axis, double dphi) {
  DetectionSet out = in;
  if (boundary.empty())
    return out;
  const double last = static_cast<double>(boundary.size() - 1);
  for (auto &d : out.detections) {
    const auto b = d.box();
    const double c0 = std::clamp(std::floor(q_axis.index_of(b.q_lo)), 0.0, last);
    const double c1 = std::clamp(std::ceil(q_axis.index_of(b.q_hi)), 0.0, last);
    double edge = std::numeric_limits<double>::infinity();
    for (auto c = static_cast<std::size_t>(c0); c <= static_cast<std::size_t>(c1); ++c)
      if (std::isfinite(boundary[c]) && boundary[c] < 90.0)
        edge = std::min(edge, boundary[c]);
    if (!std::isfinite(edge) || d.phi_hi() < edge - std::abs(dphi) - 1e-9)
      continue;
    const double lo = std::max(d.phi_lo(), 0.0);
    d.phi_center = round9(0.5 * (lo + 90.0));
    d.phi_extent = round9(90.0 - lo);
  }
  return out;
}

struct AngularClusters {
  DetectionSet oriented, powder;
  std::vector<double> ratio;        // a_detected / H(q) per input detection
  std::vector<bool> is_powder;      // per input detection
};

/// Two-group split of a_detected / H(q_center) by 1D 2-means seeded at the
/// minimum and maximum ratio; the group with the larger mean is powder. A
/// single detection, or a set with one distinct ratio, is powder when its
/// ratio is at least 0.5. H <= 0 counts as a full ring.
template <class H>
AngularClusters cluster_angular(const DetectionSet &dets, H &&max_extent) {
  AngularClusters out;
  out.oriented = out.powder = dets;
  out.oriented.detections.clear();
  out.powder.detections.clear();
  const std::size_t n = dets.detections.size();
  for (const auto &d : dets.detections) {
    const double h = max_extent(d.q_center);
    out.ratio.push_back(h > 0.0 ? d.phi_extent / h : 1.0);
  }
  out.is_powder.assign(n, false);
  if (n == 0)
    return out;
  const auto [mn, mx] = std::minmax_element(out.ratio.begin(), out.ratio.end());
  if (n == 1 || *mx - *mn <= 1e-12) {
    for (std::size_t i = 0; i < n; ++i)
      out.is_powder[i] = out.ratio[i] >= 0.5;
  } else {
    double m0 = *mn, m1 = *mx;
    for (int it = 0; it < 100; ++it) {
      double s0 = 0, s1 = 0;
      std::size_t n0 = 0, n1 = 0;
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = std::abs(out.ratio[i] - m1) < std::abs(out.ratio[i] - m0);
        changed |= p != out.is_powder[i] || it == 0;
        out.is_powder[i] = p;
        (p ? s1 : s0) += out.ratio[i];
        ++(p ? n1 : n0);
      }
      if (n0 > 0)
        m0 = s0 / double(n0);
      if (n1 > 0)
        m1 = s1 / double(n1);
      if (!changed)
        break;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    (out.is_powder[i] ? out.powder : out.oriented).detections.push_back(dets.detections[i]);
  return out;
}

/// Card with its reflections precomputed for one measured range.
struct PhaseModel {
  PhaseCard card;
  std::vector<Reflection> reflections;

  PhaseModel(PhaseCard c, const ReciprocalRange &range)
      : card(std::move(c)), reflections(enumerate_reflections(card, range)) {}
};

struct PhaseScore {
  std::size_t card_index = 0;
  std::string name;
  double score = 0;  // NaN: nothing in range
  std::size_t n_reflections = 0;
};

/// Scores oriented cards against the oriented cluster and powder cards
/// against the powder cluster; best first, ties to the card with fewer
/// reflections, cards with nothing in range last.
inline std::vector<PhaseScore> identify_phases(const std::vector<PhaseModel> &models,
                                               const AngularClusters &clusters) {
  if (models.empty())
    throw ConfigError("identify_phases needs at least one phase card");
  std::vector<PhaseScore> out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto &m = models[i];
    const auto &dets = m.card.powder ? clusters.powder.detections : clusters.oriented.detections;
    out.push_back({i, m.card.name, coverage(m.reflections, dets), m.reflections.size()});
  }
  std::stable_sort(out.begin(), out.end(), [](const PhaseScore &a, const PhaseScore &b) {
    const bool an = std::isnan(a.score), bn = std::isnan(b.score);
    if (an != bn)
      return bn;
    if (!an && a.score != b.score)
      return a.score > b.score;
    return a.n_reflections < b.n_reflections;
  });
  return out;
}

struct Assignment {
  std::size_t card_index = 0;
  std::string card;
  Hkl hkl{};
  double q_sim = 0;
  double phi_sim = 0;
};

struct IndexedPeak {
  Detection detection;
  std::vector<Assignment> assignments;  // empty: unidentified

  bool identified() const { return !assignments.empty(); }
  bool assigned_to(std::size_t card) const {
    return std::any_of(assignments.begin(), assignments.end(),
                       [&](const Assignment &a) { return a.card_index == card; });
  }
};

/// For every detection and every accepted card, the closest reflection that
/// satisfies the matching conditions. Powder cards are matched against
/// detections flagged powder and oriented cards against the rest; without
/// flags every detection is tried against every card.
inline std::vector<IndexedPeak> index_peaks(const std::vector<PhaseModel> &accepted,
                                            const std::vector<Detection> &dets,
                                            const std::vector<bool> &is_powder = {}) {
  std::vector<IndexedPeak> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    IndexedPeak p{dets[i], {}};
    for (std::size_t c = 0; c < accepted.size(); ++c) {
      const auto &m = accepted[c];
      if (!is_powder.empty() && is_powder[i] != m.card.powder)
        continue;
      const Reflection *best = nullptr;
      double best_d = std::numeric_limits<double>::infinity();
      for (const auto &r : m.reflections) {
        if (!matches(dets[i], r))
          continue;
        const double dist = match_distance(dets[i], r);
        if (dist < best_d) {
          best_d = dist;
          best = &r;
        }
      }
      if (best)
        p.assignments.push_back({c, m.card.name, best->hkl, best->q, best->phi});
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Cards accepted from a ranking, in ranking order. The first card with
/// score >= `min_score` is taken; each further card must also reach
/// `min_score` and explain at least `min_new` detections that no card taken
/// before it explains. Related cards share most reflection positions, so
/// coverage alone would accept the whole family. Returns model indices.
inline std::vector<std::size_t> accept_phases(const std::vector<PhaseModel> &models,
                                              const std::vector<PhaseScore> &ranking,
                                              const AngularClusters &clusters, double min_score,
                                              std::size_t min_new) {
  std::vector<Detection> dets;
  std::vector<bool> powder;
  for (const auto *set : {&clusters.oriented, &clusters.powder})
    for (const auto &d : set->detections) {
      dets.push_back(d);
      powder.push_back(set == &clusters.powder);
    }
  std::vector<bool> explained(dets.size(), false);
  std::vector<std::size_t> out;
  for (const auto &s : ranking) {
    if (std::isnan(s.score) || s.score < min_score)
      continue;
    const auto hits = index_peaks({models[s.card_index]}, dets, powder);
    std::size_t fresh = 0;
    for (std::size_t i = 0; i < hits.size(); ++i)
      fresh += hits[i].identified() && !explained[i];
    if (!out.empty() && fresh < min_new)
      continue;
    out.push_back(s.card_index);
    for (std::size_t i = 0; i < hits.size(); ++i)
      explained[i] = explained[i] || hits[i].identified();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Built-in cards for the (BA)2(MA)n-1PbnI3n+1 family and an ITO-like powder.

/// Stacking length b grows by one inorganic layer (12.612 A) per n; n = 2
/// and n = 3 use the reported cells, the other members reuse the in-plane
/// lengths of n = 2.
inline UnitCell perovskite_cell(int n) {
  if (n < 1)
    throw std::invalid_argument("perovskite_cell: n must be >= 1");
  if (n == 2)
    return {8.947, 39.347, 8.8589, 90, 90, 90};
  if (n == 3)
    return {8.928, 51.959, 8.878, 90, 90, 90};
  return {8.947, 39.347 + 12.612 * (n - 2), 8.8589, 90, 90, 90};
}

/// (010)-oriented card whose reflection table holds the rods h, l in {0, 1}
/// up to `q_max`. Weights are structure-factor magnitudes from a slab model:
/// two slabs of n inorganic layers (spacing 6.3 A along b) per cell, the
/// second shifted by (1/2, 1/2, 1/2), so
///   |F| = |sum_j exp(2 pi i k y_j)| |1 + (-1)^(h+k+l)|
/// damped by exp(-q^2 / 4) and scaled to a maximum of 1. Reflections below
/// 0.03 of the strongest are left out.
inline PhaseCard perovskite_card(int n, double q_max = 2.0) {
  PhaseCard card;
  card.name = "n" + std::to_string(n);
  card.cell = perovskite_cell(n);
  card.orientation = {0, 1, 0};
  card.metadata["layers"] = std::to_string(n);
  constexpr double layer = 6.3;
  std::vector<CardReflection> all;
  for (int h = 0; h <= 1; ++h)
    for (int l = 0; l <= 1; ++l)
      for (int k = 0; k <= kMaxMillerIndex; ++k) {
        if (h == 0 && k == 0 && l == 0)
          continue;
        const double q = q_of_hkl(card.cell, {h, k, l});
        if (q > q_max)
          break;
        if ((h + k + l) % 2 != 0)
          continue;
        double re = 0, im = 0;
        for (int j = 0; j < n; ++j) {
          const double y = (j - 0.5 * (n - 1)) * layer / card.cell.b;
          re += std::cos(2 * kPi * k * y);
          im += std::sin(2 * kPi * k * y);
        }
        all.push_back({{h, k, l}, 2.0 * std::hypot(re, im) * std::exp(-0.25 * q * q)});
      }
  double top = 0;
  for (const auto &r : all)
    top = std::max(top, r.intensity);
  for (const auto &r : all)
    if (r.intensity >= 0.03 * top)
      card.reflections.push_back({r.hkl, r.intensity / top});
  return card;
}

/// Cubic powder card with the body-centred reflections of an indium tin
/// oxide film; (332) falls at |Q| = 2.913 1/A.
inline PhaseCard ito_card() {
  PhaseCard card;
  card.name = "ITO";
  card.cell = {10.118, 10.118, 10.118, 90, 90, 90};
  card.powder = true;
  card.reflections = {{{2, 1, 1}, 3.2}, {{2, 2, 2}, 10}, {{4, 0, 0}, 5.5}, {{4, 1, 1}, 2.8},
                      {{4, 2, 0}, 2.2}, {{3, 3, 2}, 3.2}, {{4, 3, 1}, 2.4}, {{4, 4, 0}, 5.9}};
  return card;
}

}  // namespace gixd
