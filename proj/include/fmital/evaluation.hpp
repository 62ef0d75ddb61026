#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/localizer.hpp"
#include "fmital/rng.hpp"

namespace fmital {

inline std::vector<double> default_tiou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct EvalConfig {
  std::vector<double> thresholds = default_tiou_thresholds();
  double primary = 0.5;
  int shot = 1;
  std::uint64_t split_seed = 0;

  void validate() const {
    if (thresholds.empty()) throw UsageError("eval: no tIoU thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0 && thresholds[i] <= 1)) throw UsageError("eval: thresholds must lie in (0, 1]");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
        throw UsageError("eval: thresholds must be strictly ascending");
      }
    }
    if (shot < 1) throw UsageError("eval: shot must be >= 1");
  }
};

/// All-point interpolated average precision at one tIoU threshold.
/// Predictions are ranked by score (descending, then start ascending);
/// each one claims the unmatched ground truth with the highest tIoU at or
/// above the threshold. With no ground truth the result is 1 when there are
/// also no predictions and 0 otherwise.
inline double average_precision(std::vector<SegmentPrediction> preds, const std::vector<Segment>& gts,
                                double threshold) {
  if (gts.empty()) return preds.empty() ? 1.0 : 0.0;
  if (preds.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(), [](const SegmentPrediction& a, const SegmentPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.start < b.start;
  });
  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < preds.size(); ++r) {
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g]) continue;
      const double iou = tiou(preds[r].start, preds[r].end, gts[g].start, gts[g].end);
      if (iou >= threshold && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      matched[best_gt] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  // Precision envelope from the right, then area under the step curve.
  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

struct EpisodeResult {
  std::string id;
  std::vector<SegmentPrediction> predictions;
  std::vector<Segment> ground_truth;
  std::vector<double> ap;  // one per threshold of the EvalConfig
};

inline EpisodeResult score_episode(std::string id, std::vector<SegmentPrediction> preds, std::vector<Segment> gts,
                                   const EvalConfig& cfg) {
  EpisodeResult r{std::move(id), std::move(preds), std::move(gts), {}};
  for (double t : cfg.thresholds) r.ap.push_back(average_precision(r.predictions, r.ground_truth, t));
  return r;
}

struct MapReport {
  std::vector<double> thresholds;
  std::vector<double> map;  // per threshold
  double mean = 0.0;        // average of `map`
  std::size_t episodes = 0;
  std::vector<EpisodeResult> per_episode;

  double at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (std::abs(thresholds[i] - threshold) < 1e-12) return map[i];
    }
    throw UsageError("threshold " + std::to_string(threshold) + " not evaluated");
  }
};

/// Per-threshold mean of episode APs, summed in episode order.
inline MapReport map_over_episodes(const std::vector<EpisodeResult>& results, const EvalConfig& cfg) {
  cfg.validate();
  MapReport rep;
  rep.thresholds = cfg.thresholds;
  rep.map.assign(cfg.thresholds.size(), 0.0);
  rep.episodes = results.size();
  rep.per_episode = results;
  if (results.empty()) return rep;
  for (const auto& r : results) {
    if (r.ap.size() != cfg.thresholds.size()) throw DataError("episode '" + r.id + "' has wrong AP count");
    for (std::size_t i = 0; i < r.ap.size(); ++i) rep.map[i] += r.ap[i];
  }
  for (double& m : rep.map) m /= static_cast<double>(results.size());
  for (double m : rep.map) rep.mean += m;
  rep.mean /= static_cast<double>(rep.map.size());
  return rep;
}

/// A labelled untrimmed video from which episodes are drawn.
struct VideoRecord {
  std::string id;
  int class_id = 0;
  FeatureTensor features;
  std::vector<Segment> segments;
};

/// Support clip cut from the first annotated segment of `video`.
inline FeatureTensor trim_to_first_segment(const VideoRecord& video) {
  if (video.segments.empty()) throw DataError("video '" + video.id + "' has no segments to trim");
  const auto& s = video.segments.front();
  const std::size_t frames = static_cast<std::size_t>(s.length());
  const std::size_t block = video.features.n() * video.features.d();
  const auto& values = video.features.array().storage();
  std::vector<float> data(values.begin() + static_cast<std::ptrdiff_t>(s.start * block),
                          values.begin() + static_cast<std::ptrdiff_t>((s.start + frames) * block));
  return FeatureTensor(Array({frames, video.features.n(), video.features.d()}, std::move(data)));
}

struct ProtocolConfig {
  EvalConfig eval;
  std::size_t episodes_per_class = 5;
  int num_classes = 10;
};

struct ProtocolReport {
  MapReport single;  // queries with one ground-truth segment
  MapReport multi;   // queries with two or more
  MapReport all;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

using Pipeline = std::function<std::vector<SegmentPrediction>(const Episode&)>;

/// Few-shot protocol: episodes are drawn only from the test split of a
/// seeded 7:2:1 class partition. Each episode takes `shot` support videos
/// (trimmed to their first segment) and one different query video of the
/// same class.
inline ProtocolReport run_protocol(const std::vector<VideoRecord>& videos, const ProtocolConfig& cfg,
                                   const Pipeline& pipeline) {
  cfg.eval.validate();
  const ClassSplit split = split_classes(cfg.num_classes, cfg.eval.split_seed);
  std::vector<EpisodeResult> single, multi, all;
  ProtocolReport report;
  for (int cls : split.test) {
    std::vector<const VideoRecord*> pool;
    for (const auto& v : videos) {
      if (v.class_id == cls) pool.push_back(&v);
    }
    const auto needed = static_cast<std::size_t>(cfg.eval.shot) + 1;
    if (pool.size() < needed) {
      report.warnings.push_back("class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                                " videos, " + std::to_string(needed) + " needed for " +
                                std::to_string(cfg.eval.shot) + "-shot episodes; skipped");
      ++report.skipped;
      continue;
    }
    for (std::size_t e = 0; e < cfg.episodes_per_class; ++e) {
      Rng rng = Rng(cfg.eval.split_seed).fork((static_cast<std::uint64_t>(cls) << 32) | e);
      std::vector<std::size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      }
      const VideoRecord& query = *pool[order[0]];
      Episode ep;
      ep.id = "class" + std::to_string(cls) + "_ep" + std::to_string(e) + "_" + query.id;
      ep.shot = cfg.eval.shot;
      ep.query = query.features;
      for (const auto& s : query.segments) ep.ground_truth.push_back({s, cls});
      for (int k = 1; k <= cfg.eval.shot; ++k) ep.support.push_back({trim_to_first_segment(*pool[order[k]]), cls});
      auto result = score_episode(ep.id, pipeline(ep), query.segments, cfg.eval);
      (query.segments.size() >= 2 ? multi : single).push_back(result);
      all.push_back(std::move(result));
    }
  }
  report.single = map_over_episodes(single, cfg.eval);
  report.multi = map_over_episodes(multi, cfg.eval);
  report.all = map_over_episodes(all, cfg.eval);
  return report;
}

inline nlohmann::json map_report_to_json(const MapReport& rep) {
  nlohmann::json per_threshold = nlohmann::json::object();
  for (std::size_t i = 0; i < rep.thresholds.size(); ++i) {
    std::ostringstream key;
    key.precision(2);
    key << std::fixed << rep.thresholds[i];
    per_threshold[key.str()] = rep.map[i];
  }
  nlohmann::json episodes = nlohmann::json::array();
  for (const auto& r : rep.per_episode) {
    episodes.push_back({{"id", r.id}, {"ap", r.ap}, {"predictions", r.predictions.size()},
                        {"ground_truth", r.ground_truth.size()}});
  }
  return {{"episodes", rep.episodes}, {"map", per_threshold}, {"mean", rep.mean}, {"per_episode", episodes}};
}

/// Flat table: track,threshold,map with one "mean" row per track.
inline std::string map_reports_csv(const std::vector<std::pair<std::string, const MapReport*>>& tracks) {
  std::ostringstream os;
  os.precision(10);
  os << "track,threshold,map\n";
  for (const auto& [name, rep] : tracks) {
    for (std::size_t i = 0; i < rep->thresholds.size(); ++i) {
      os << name << ',' << rep->thresholds[i] << ',' << rep->map[i] << '\n';
    }
    os << name << ",mean," << rep->mean << '\n';
  }
  return os.str();
}

}  // namespace fmital
