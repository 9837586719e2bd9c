#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "lois/mask_set.hpp"
#include "lois/tensor.hpp"

namespace lois {

struct SuppressionResult {
  std::vector<double> updated_scores;     // one per input mask, input order
  std::vector<std::size_t> kept_indices;  // survivors, updated score descending
  std::vector<double> penalties;          // one per input mask
};

namespace detail {

inline void check_same_shape(const ScoredMask& a, const ScoredMask& b) {
  if (a.mask.dims() != b.mask.dims())
    throw ShapeError("mask shapes differ: " + format_dims(a.mask.dims()) + " vs " +
                     format_dims(b.mask.dims()));
}

// Ratio term of the penalty: (1 - IoU) / floor, clamped to 1. A suppressor
// whose own floor is 0 exerts no pressure (its term would be x/0).
inline double penalty_term(double iou, double floor) {
  if (floor <= 0.0) return 1.0;
  return std::min(1.0, (1.0 - iou) / floor);
}

inline std::vector<std::size_t> rank_survivors(const std::vector<double>& scores,
                                               double post_threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= post_threshold) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return kept;
}

inline void check_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("post_threshold must lie in [0,1]");
}

}  // namespace detail

/// Intersection over union of two binary masks; 0 when both are empty.
inline double mask_iou(const ScoredMask& a, const ScoredMask& b) {
  detail::check_same_shape(a, b);
  std::size_t inter = 0, uni = 0;
  const auto* pa = a.mask.data();
  const auto* pb = b.mask.data();
  for (std::size_t i = 0; i < a.mask.size(); ++i) {
    inter += pa[i] & pb[i];
    uni += pa[i] | pb[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Pairwise IoU matrix from one Gram product over flattened masks.
inline Eigen::MatrixXd iou_matrix(const MaskSet& set) {
  const auto n = static_cast<Eigen::Index>(set.size());
  if (n == 0) return {};
  const auto pixels = static_cast<Eigen::Index>(set.front().mask.size());
  Eigen::MatrixXd flat(n, pixels);
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::check_same_shape(set.front(), set[i]);
    const auto* p = set[i].mask.data();
    for (Eigen::Index k = 0; k < pixels; ++k) flat(i, k) = p[k];
  }
  const Eigen::MatrixXd inter = flat * flat.transpose();
  const Eigen::VectorXd area = inter.diagonal();
  Eigen::MatrixXd uni = area.replicate(1, n) + area.transpose().replicate(n, 1) - inter;
  return (uni.array() > 0.0).select(inter.array() / uni.array(), 0.0);
}

/// Decay floor of mask `a`: min over strictly higher-scored masks k of
/// (1 - IoU(k, a)); 1 when no such mask exists.
inline double decay_floor(const MaskSet& set, std::size_t a) {
  if (a >= set.size()) throw DomainError("mask index out of range");
  double phi = 1.0;
  for (std::size_t k = 0; k < set.size(); ++k)
    if (set[k].score > set[a].score) phi = std::min(phi, 1.0 - mask_iou(set[k], set[a]));
  return phi;
}

/// Matrix-NMS penalty for every mask, from the IoU matrix in one pass.
inline std::vector<double> penalties(const MaskSet& set) {
  const std::size_t n = set.size();
  for (const auto& m : set)
    if (!std::isfinite(m.score)) throw DomainError("mask score must be finite");
  if (n == 0) return {};
  const Eigen::MatrixXd iou = iou_matrix(set);
  Eigen::ArrayXXd higher(n, n);  // higher(k, a): s_k > s_a
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t a = 0; a < n; ++a) higher(k, a) = set[k].score > set[a].score ? 1.0 : 0.0;

  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::ArrayXXd decay = 1.0 - iou.array();
  // Column-wise minima over suppressors; masked entries become +inf.
  const Eigen::ArrayXd floors =
      (higher > 0.0).select(decay, inf).colwise().minCoeff().transpose().min(1.0);

  // terms(a, b) = min(1, (1 - IoU_ab) / floor_a); a zero floor exerts nothing.
  const Eigen::ArrayXXd floor_rows = floors.replicate(1, static_cast<Eigen::Index>(n));
  const Eigen::ArrayXXd terms =
      (floor_rows > 0.0).select((decay / floor_rows).min(1.0), 1.0);
  const Eigen::ArrayXd pen =
      (higher > 0.0).select(terms, inf).colwise().minCoeff().transpose().min(1.0);
  return std::vector<double>(pen.data(), pen.data() + pen.size());
}

/// Single simultaneous score update s_b <- s_b * penalty_b, then drops masks
/// below `post_threshold` and ranks the rest.
inline SuppressionResult suppress(const MaskSet& set, double post_threshold) {
  detail::check_threshold(post_threshold);
  SuppressionResult r;
  r.penalties = penalties(set);
  r.updated_scores.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) r.updated_scores[i] = set[i].score * r.penalties[i];
  r.kept_indices = detail::rank_survivors(r.updated_scores, post_threshold);
  return r;
}

/// Reference implementation: plain nested loops over masks and pixels.
inline SuppressionResult oracle_suppress(const MaskSet& set, double post_threshold) {
  detail::check_threshold(post_threshold);
  const std::size_t n = set.size();
  std::vector<std::vector<double>> iou(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) iou[a][b] = mask_iou(set[a], set[b]);

  std::vector<double> floors(n);
  for (std::size_t a = 0; a < n; ++a) {
    double phi = 1.0;
    for (std::size_t k = 0; k < n; ++k)
      if (set[k].score > set[a].score && 1.0 - iou[k][a] < phi) phi = 1.0 - iou[k][a];
    floors[a] = phi;
  }

  SuppressionResult r;
  r.penalties.assign(n, 1.0);
  r.updated_scores.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t a = 0; a < n; ++a) {
      if (!(set[a].score > set[b].score)) continue;
      const double t = detail::penalty_term(iou[a][b], floors[a]);
      if (t < r.penalties[b]) r.penalties[b] = t;
    }
    r.updated_scores[b] = set[b].score * r.penalties[b];
  }
  r.kept_indices = detail::rank_survivors(r.updated_scores, post_threshold);
  return r;
}

/// Survivors of a suppression pass, in ranked order, carrying updated scores.
inline MaskSet retained_masks(const MaskSet& set, const SuppressionResult& r) {
  MaskSet out;
  out.reserve(r.kept_indices.size());
  for (auto i : r.kept_indices) {
    out.push_back(set.at(i));
    out.back().score = r.updated_scores.at(i);
  }
  return out;
}

/// Inclusive instance-count band; `hi == 0` means unbounded.
struct CountBand {
  std::size_t lo = 0;
  std::size_t hi = 0;

  bool contains(std::size_t n) const { return n >= lo && (hi == 0 || n <= hi); }
  std::string label() const {
    return hi == 0 ? ">" + std::to_string(lo - 1) : std::to_string(lo) + "-" + std::to_string(hi);
  }
};

/// Bands used for the overlap statistic: [5-10], [11-20], [>20], plus a
/// leading [2-4] band so small sets are not silently discarded.
inline std::vector<CountBand> default_count_bands() { return {{2, 4}, {5, 10}, {11, 20}, {21, 0}}; }

/// IoU bucket edges partitioning [0,1]: [0,0.2), [0.2,0.6), [0.6,1].
inline std::vector<double> default_iou_edges() { return {0.0, 0.2, 0.6, 1.0}; }

struct OverlapHistogram {
  CountBand band;
  std::size_t samples = 0;
  std::vector<std::size_t> counts;  // pairs per IoU bucket

  std::size_t pairs() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  double fraction(std::size_t bucket) const {
    const auto p = pairs();
    return p == 0 ? 0.0 : static_cast<double>(counts.at(bucket)) / static_cast<double>(p);
  }
};

/// Bucket index of `iou` under half-open edges; the last bucket is closed.
inline std::size_t iou_bucket(double iou, const std::vector<double>& edges) {
  const std::size_t nb = edges.size() - 1;
  for (std::size_t b = 0; b + 1 < nb; ++b)
    if (iou < edges[b + 1]) return b;
  return nb - 1;
}

/// Pairwise IoU histogram per instance-count band.
inline std::vector<OverlapHistogram> iou_overlap_stats(const std::vector<MaskSet>& sets,
                                                       const std::vector<double>& edges = default_iou_edges(),
                                                       const std::vector<CountBand>& bands = default_count_bands()) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0 ||
      !std::is_sorted(edges.begin(), edges.end()) ||
      std::adjacent_find(edges.begin(), edges.end()) != edges.end())
    throw DomainError("IoU bucket edges must strictly increase from 0 to 1");

  std::vector<OverlapHistogram> out;
  for (const auto& b : bands) out.push_back({b, 0, std::vector<std::size_t>(edges.size() - 1, 0)});

  for (const auto& set : sets) {
    if (set.empty()) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& h) { return h.band.contains(set.size()); });
    if (it == out.end()) continue;
    const Eigen::MatrixXd iou = iou_matrix(set);
    ++it->samples;
    for (Eigen::Index a = 0; a < iou.rows(); ++a)
      for (Eigen::Index b = a + 1; b < iou.cols(); ++b) ++it->counts[iou_bucket(iou(a, b), edges)];
  }
  return out;
}

}  // namespace lois
