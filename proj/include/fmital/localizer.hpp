#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmital/boundary_head.hpp"
#include "fmital/error.hpp"

namespace fmital {

/// S[i][j] = start[i] * end[j] over the valid range.
struct ScoreMatrix {
  std::size_t size = 0;
  std::vector<double> values;  // row-major [size, size]

  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

inline ScoreMatrix score_matrix(const std::vector<double>& start, const std::vector<double>& end,
                                std::size_t t_valid) {
  if (start.size() < t_valid || end.size() < t_valid) throw ShapeError("score_matrix: vectors shorter than t_valid");
  ScoreMatrix m{t_valid, std::vector<double>(t_valid * t_valid)};
  for (std::size_t i = 0; i < t_valid; ++i) {
    for (std::size_t j = 0; j < t_valid; ++j) m.values[i * t_valid + j] = start[i] * end[j];
  }
  return m;
}

struct ScoredPair {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

/// The k highest cells with end > start; descending score, ties by smaller
/// start then smaller end.
inline std::vector<ScoredPair> top_k_pairs(const ScoreMatrix& m, std::size_t k) {
  if (k < 1) throw UsageError("top_k_pairs: k must be >= 1");
  std::vector<ScoredPair> cells;
  cells.reserve(m.size * (m.size - (m.size > 0)) / 2);
  for (std::size_t i = 0; i < m.size; ++i) {
    for (std::size_t j = i + 1; j < m.size; ++j) cells.push_back({i, j, m(i, j)});
  }
  auto better = [](const ScoredPair& a, const ScoredPair& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  };
  const std::size_t keep = std::min(k, cells.size());
  std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(keep), cells.end(), better);
  cells.resize(keep);
  return cells;
}

struct SegmentPrediction {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
  int class_id = 0;
  friend bool operator==(const SegmentPrediction&, const SegmentPrediction&) = default;
};

/// Temporal IoU of [a0, a1] and [b0, b1] on the real line.
inline double tiou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  if (uni <= 0.0) return (a0 == b0 && a1 == b1) ? 1.0 : 0.0;
  return inter / uni;
}

inline double tiou(const SegmentPrediction& a, const SegmentPrediction& b) { return tiou(a.start, a.end, b.start, b.end); }

enum class NmsMode { kGaussian, kHard };

struct NmsConfig {
  double iou_threshold = 0.9;
  double sigma = 0.5;
  double score_floor = 1e-6;
  double relative_floor = 0.2;  // fraction of the best input score
  NmsMode mode = NmsMode::kGaussian;
};

/// Greedy soft-NMS. The best remaining prediction is emitted; every other
/// prediction overlapping it with tIoU > iou_threshold has its score scaled
/// by exp(-tIoU^2 / sigma) (or is dropped in hard mode). Predictions whose
/// score falls below max(score_floor, relative_floor * best input score)
/// are discarded.
inline std::vector<SegmentPrediction> soft_nms(std::vector<SegmentPrediction> preds, const NmsConfig& cfg = {}) {
  for (const auto& p : preds) {
    if (!(p.end > p.start)) throw DataError("soft_nms: prediction with end <= start");
  }
  std::vector<SegmentPrediction> out;
  double top = 0.0;
  for (const auto& p : preds) top = std::max(top, p.score);
  const double floor = std::max(cfg.score_floor, cfg.relative_floor * top);
  std::vector<bool> alive(preds.size(), true);
  for (std::size_t i = 0; i < preds.size(); ++i) alive[i] = preds[i].score >= floor;
  while (true) {
    std::size_t best = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (alive[i] && (best == preds.size() || preds[i].score > preds[best].score)) best = i;
    }
    if (best == preds.size()) break;
    alive[best] = false;
    out.push_back(preds[best]);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!alive[i]) continue;
      const double iou = tiou(preds[best], preds[i]);
      if (iou <= cfg.iou_threshold) continue;
      if (cfg.mode == NmsMode::kHard) {
        alive[i] = false;
        continue;
      }
      preds[i].score *= std::exp(-iou * iou / cfg.sigma);
      if (preds[i].score < floor) alive[i] = false;
    }
  }
  return out;
}

struct ClusterParams {
  double eps = 3.0;
  std::size_t min_samples = 2;
};

using Point2 = std::array<double, 2>;

/// Density-based clustering with Euclidean distance. A point is core when
/// at least min_samples points (itself included) lie within eps. Cores that
/// are neighbours share a cluster; a border point joins the cluster of its
/// lowest-indexed core neighbour; everything else is noise (-1). Clusters
/// are numbered in order of their smallest member index.
inline std::vector<int> dbscan(const std::vector<Point2>& points, const ClusterParams& p) {
  if (!(p.eps > 0) || p.min_samples < 1) throw UsageError("dbscan: need eps > 0 and min_samples >= 1");
  const std::size_t n = points.size();
  const double eps2 = p.eps * p.eps;
  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = points[i][0] - points[j][0], dy = points[i][1] - points[j][1];
      if (dx * dx + dy * dy <= eps2) neighbours[i].push_back(j);
    }
  }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = neighbours[i].size() >= p.min_samples;

  // Union-find over core points.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    for (std::size_t j : neighbours[i]) {
      if (core[j]) {
        const auto a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  std::vector<std::ptrdiff_t> root(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      root[i] = static_cast<std::ptrdiff_t>(find(i));
    } else {
      for (std::size_t j : neighbours[i]) {  // ascending, so the first core is the lowest-indexed
        if (core[j]) {
          root[i] = static_cast<std::ptrdiff_t>(find(j));
          break;
        }
      }
    }
  }
  std::vector<int> labels(n, -1);
  std::vector<int> id_of_root(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (root[i] < 0) continue;
    auto& id = id_of_root[static_cast<std::size_t>(root[i])];
    if (id < 0) id = next++;
    labels[i] = id;
  }
  return labels;
}

enum class ClusterScore { kMax, kMean };

/// Replaces each DBSCAN cluster of (start, end) points by its centroid;
/// noise points are discarded. Output is ordered by score, then start.
inline std::vector<SegmentPrediction> cluster_refine(const std::vector<SegmentPrediction>& preds,
                                                     const ClusterParams& p,
                                                     ClusterScore scoring = ClusterScore::kMax) {
  std::vector<Point2> points;
  points.reserve(preds.size());
  for (const auto& s : preds) points.push_back({s.start, s.end});
  const auto labels = dbscan(points, p);
  const int clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<SegmentPrediction> out(static_cast<std::size_t>(std::max(clusters, 0)));
  std::vector<std::size_t> counts(out.size(), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0) continue;
    auto& c = out[static_cast<std::size_t>(labels[i])];
    if (counts[labels[i]]++ == 0) {
      c = {0.0, 0.0, 0.0, preds[i].class_id};
      c.score = scoring == ClusterScore::kMax ? preds[i].score : 0.0;
    }
    c.start += preds[i].start;
    c.end += preds[i].end;
    c.score = scoring == ClusterScore::kMax ? std::max(c.score, preds[i].score) : c.score + preds[i].score;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto n = static_cast<double>(counts[k]);
    out[k].start /= n;
    out[k].end /= n;
    if (scoring == ClusterScore::kMean) out[k].score /= n;
  }
  std::stable_sort(out.begin(), out.end(), [](const SegmentPrediction& a, const SegmentPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.start < b.start;
  });
  return out;
}

struct LocalizerConfig {
  std::size_t top_k = 500;
  NmsConfig nms;
  ClusterParams cluster;
  ClusterScore cluster_score = ClusterScore::kMax;
  bool interval_clustering = true;
};

/// Intermediate products of localize(), kept for inspection.
struct LocalizeTrace {
  std::vector<ScoredPair> pairs;
  std::vector<SegmentPrediction> after_nms;
  std::vector<SegmentPrediction> final;
};

inline LocalizeTrace localize_traced(const std::vector<double>& start, const std::vector<double>& end,
                                     std::size_t t_valid, const LocalizerConfig& cfg, int class_id) {
  LocalizeTrace trace;
  trace.pairs = top_k_pairs(score_matrix(start, end, t_valid), cfg.top_k);
  std::vector<SegmentPrediction> preds;
  preds.reserve(trace.pairs.size());
  for (const auto& p : trace.pairs) {
    preds.push_back({static_cast<double>(p.start), static_cast<double>(p.end), p.score, class_id});
  }
  trace.after_nms = soft_nms(std::move(preds), cfg.nms);
  trace.final = cfg.interval_clustering ? cluster_refine(trace.after_nms, cfg.cluster, cfg.cluster_score)
                                        : trace.after_nms;
  return trace;
}

inline std::vector<SegmentPrediction> localize(const BoundaryDistributions& bd, const LocalizerConfig& cfg,
                                               int class_id = 0) {
  return localize_traced(bd.start, bd.end, bd.t_valid, cfg, class_id).final;
}

/// One row of a prediction file.
struct VideoPrediction {
  std::string video;
  SegmentPrediction segment;
  std::string label;
};

inline nlohmann::json predictions_to_json(const std::vector<VideoPrediction>& preds) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& p : preds) {
    doc.push_back({{"video", p.video},
                   {"start", p.segment.start},
                   {"end", p.segment.end},
                   {"score", p.segment.score},
                   {"class", p.label}});
  }
  return doc;
}

inline std::vector<VideoPrediction> predictions_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw DataError("predictions: top level must be an array");
  std::vector<VideoPrediction> out;
  std::size_t index = 0;
  for (const auto& row : doc) {
    const std::string ctx = "predictions: entry " + std::to_string(index++);
    for (const char* key : {"video", "start", "end", "score", "class"}) {
      if (!row.contains(key)) throw DataError(ctx + ": missing field '" + key + "'");
    }
    VideoPrediction p;
    p.video = row["video"].get<std::string>();
    p.segment.start = row["start"].get<double>();
    p.segment.end = row["end"].get<double>();
    p.segment.score = row["score"].get<double>();
    p.label = row["class"].get<std::string>();
    if (!(p.segment.end > p.segment.start)) throw DataError(ctx + ": end must exceed start");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fmital
