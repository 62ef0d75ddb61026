#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fmital/evaluation.hpp"
#include "helpers.hpp"

using namespace fmital;
using fmital::testing::random_array;

namespace {

SegmentPrediction seg(double s, double e, double score) { return {s, e, score, 0}; }

EvalConfig two_thresholds() {
  EvalConfig cfg;
  cfg.thresholds = {0.5, 0.7};
  return cfg;
}

std::vector<SegmentPrediction> random_preds(Rng& rng, int n) {
  std::vector<SegmentPrediction> out;
  for (int i = 0; i < n; ++i) {
    const double s = std::round(rng.uniform(0, 60));
    out.push_back(seg(s, s + std::round(rng.uniform(1, 20)), rng.uniform(0.01, 1.0)));
  }
  return out;
}

std::vector<Segment> random_gts(Rng& rng, int n) {
  std::vector<Segment> out;
  for (int i = 0; i < n; ++i) {
    const int s = static_cast<int>(rng.uniform_int(0, 60));
    out.push_back({s, s + static_cast<int>(rng.uniform_int(1, 20))});
  }
  return out;
}

// Ten classes with `per_class` videos each; class 0..9.
std::vector<VideoRecord> make_videos(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VideoRecord> videos;
  for (int c = 0; c < 10; ++c) {
    for (std::size_t v = 0; v < per_class; ++v) {
      VideoRecord r;
      r.id = "c" + std::to_string(c) + "v" + std::to_string(v);
      r.class_id = c;
      r.features = FeatureTensor(random_array(rng, {40, 1, 4}));
      r.segments = {{2, 9}};
      if (v % 2 == 1) r.segments.push_back({20, 30});
      videos.push_back(std::move(r));
    }
  }
  return videos;
}

std::vector<SegmentPrediction> oracle_pipeline(const Episode& ep) {
  std::vector<SegmentPrediction> out;
  for (const auto& gt : ep.ground_truth) out.push_back(seg(gt.segment.start, gt.segment.end, 1.0));
  return out;
}

}  // namespace

TEST(AveragePrecision, ExactMatchIsOne) {
  EXPECT_EQ(average_precision({seg(3, 9, 0.5)}, {{3, 9}}, 0.5), 1.0);
}

TEST(AveragePrecision, FalsePositiveRankMatters) {
  EXPECT_EQ(average_precision({seg(3, 9, 0.9), seg(30, 40, 0.5)}, {{3, 9}}, 0.5), 1.0);
  EXPECT_EQ(average_precision({seg(3, 9, 0.5), seg(30, 40, 0.9)}, {{3, 9}}, 0.5), 0.5);
}

TEST(AveragePrecision, BelowThresholdIsZero) {
  // [0,4] vs [0,10]: tIoU 0.4
  EXPECT_EQ(average_precision({seg(0, 4, 1.0)}, {{0, 10}}, 0.5), 0.0);
}

TEST(AveragePrecision, EmptyConventions) {
  EXPECT_EQ(average_precision({}, {}, 0.5), 1.0);
  EXPECT_EQ(average_precision({seg(0, 1, 1.0)}, {}, 0.5), 0.0);
  EXPECT_EQ(average_precision({}, {{0, 3}}, 0.5), 0.0);
}

TEST(AveragePrecision, TwoGroundTruthsInterpolated) {
  // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1 -> 1/2 + (2/3)(1/2)
  const std::vector<SegmentPrediction> preds = {seg(10, 14, 0.9), seg(20, 24, 0.8), seg(0, 4, 0.7)};
  EXPECT_NEAR(average_precision(preds, {{0, 4}, {10, 14}}, 0.5), 5.0 / 6, 1e-15);
}

TEST(AveragePrecision, DuplicatePredictionsCountOnce) {
  EXPECT_EQ(average_precision({seg(3, 9, 0.9), seg(3, 9, 0.8)}, {{3, 9}}, 0.5), 1.0);
  EXPECT_NEAR(average_precision({seg(3, 9, 0.9), seg(3, 9, 0.8)}, {{3, 9}, {40, 50}}, 0.5), 0.5, 1e-15);
}

TEST(AveragePrecisionProperty, MonotoneInThreshold) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto preds = random_preds(rng, static_cast<int>(rng.uniform_int(0, 15)));
    const auto gts = random_gts(rng, static_cast<int>(rng.uniform_int(1, 4)));
    double prev = 2.0;
    for (double t : default_tiou_thresholds()) {
      const double ap = average_precision(preds, gts, t);
      EXPECT_GE(ap, 0.0);
      EXPECT_LE(ap, 1.0);
      EXPECT_LE(ap, prev + 1e-15);
      prev = ap;
    }
  }
}

TEST(AveragePrecisionProperty, RankOnlyDependence) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto preds = random_preds(rng, static_cast<int>(rng.uniform_int(1, 15)));
    const auto gts = random_gts(rng, static_cast<int>(rng.uniform_int(1, 4)));
    auto rescaled = preds;
    for (auto& p : rescaled) p.score = std::sqrt(p.score) * 7.0 + 0.5;
    EXPECT_EQ(average_precision(preds, gts, 0.5), average_precision(rescaled, gts, 0.5));
  }
}

TEST(AveragePrecisionProperty, NeverExceedsRecallCeiling) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto gts = random_gts(rng, static_cast<int>(rng.uniform_int(1, 4)));
    // keep the other ground truths far from the first one
    for (std::size_t g = 1; g < gts.size(); ++g) {
      gts[g].start += 200 * static_cast<int>(g);
      gts[g].end += 200 * static_cast<int>(g);
    }
    std::vector<SegmentPrediction> preds;
    for (int i = 0; i < 5; ++i) preds.push_back(seg(gts[0].start, gts[0].end, rng.uniform()));
    EXPECT_EQ(average_precision(preds, gts, 0.5), 1.0 / static_cast<double>(gts.size()));
  }
}

TEST(MapOverEpisodes, AllPerfectAndHalf) {
  const EvalConfig cfg;
  std::vector<EpisodeResult> perfect, half;
  for (int i = 0; i < 4; ++i) {
    perfect.push_back(score_episode("p" + std::to_string(i), {seg(0, 5, 1)}, {{0, 5}}, cfg));
    half.push_back(score_episode("h" + std::to_string(i), {seg(0, 5, 1)}, {{i % 2 == 0 ? 0 : 30, i % 2 == 0 ? 5 : 35}},
                                 cfg));
  }
  EXPECT_EQ(map_over_episodes(perfect, cfg).at(0.5), 1.0);
  EXPECT_EQ(map_over_episodes(perfect, cfg).mean, 1.0);
  EXPECT_EQ(map_over_episodes(half, cfg).at(0.5), 0.5);
}

TEST(MapOverEpisodes, FiveHandScoredEpisodes) {
  const EvalConfig cfg = two_thresholds();
  std::vector<EpisodeResult> rs;
  rs.push_back(score_episode("exact", {seg(0, 10, 0.9)}, {{0, 10}}, cfg));
  rs.push_back(score_episode("tiou06", {seg(0, 6, 0.9)}, {{0, 10}}, cfg));
  rs.push_back(score_episode("silent", {}, {{0, 10}}, cfg));
  rs.push_back(score_episode("two", {seg(10, 14, 0.9), seg(20, 24, 0.8), seg(0, 4, 0.7)}, {{0, 4}, {10, 14}}, cfg));
  rs.push_back(score_episode("vacuous", {}, {}, cfg));
  const auto rep = map_over_episodes(rs, cfg);
  EXPECT_NEAR(rep.at(0.5), (1 + 1 + 0 + 5.0 / 6 + 1) / 5, 1e-15);
  EXPECT_NEAR(rep.at(0.7), (1 + 0 + 0 + 5.0 / 6 + 1) / 5, 1e-15);
  EXPECT_NEAR(rep.at(0.5), 0.766667, 1e-6);
  EXPECT_NEAR(rep.at(0.7), 0.566667, 1e-6);
  EXPECT_NEAR(rep.mean, 0.666667, 1e-6);
  EXPECT_EQ(rep.episodes, 5u);
  EXPECT_THROW(rep.at(0.6), UsageError);
}

TEST(MapOverEpisodesProperty, AggregatesAreEpisodeMeans) {
  Rng rng(4);
  const EvalConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<EpisodeResult> rs;
    const auto n = rng.uniform_int(1, 12);
    for (int e = 0; e < n; ++e) {
      rs.push_back(score_episode(std::to_string(e), random_preds(rng, static_cast<int>(rng.uniform_int(0, 8))),
                                 random_gts(rng, static_cast<int>(rng.uniform_int(1, 3))), cfg));
    }
    const auto rep = map_over_episodes(rs, cfg);
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
      double acc = 0.0;
      for (const auto& r : rs) acc += r.ap[t];
      EXPECT_EQ(rep.map[t], acc / static_cast<double>(rs.size()));
    }
  }
}

TEST(EvalConfig, Validation) {
  EvalConfig cfg;
  cfg.thresholds = {0.7, 0.5};
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg.thresholds = {0.0};
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg.thresholds = {};
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = EvalConfig{};
  EXPECT_EQ(cfg.thresholds.size(), 10u);
  EXPECT_NEAR(cfg.thresholds.back(), 0.95, 1e-12);
}

TEST(Protocol, FiveShotWithThreeVideosIsSkipped) {
  ProtocolConfig cfg;
  cfg.eval.shot = 5;
  const auto rep = run_protocol(make_videos(3, 1), cfg, oracle_pipeline);
  EXPECT_EQ(rep.skipped, 1u);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("skipped"), std::string::npos);
  EXPECT_EQ(rep.all.episodes, 0u);
}

TEST(Protocol, DeterministicUnderSeedAndTestSplitOnly) {
  ProtocolConfig cfg;
  cfg.eval.shot = 2;
  cfg.eval.split_seed = 9;
  const auto videos = make_videos(6, 2);
  std::vector<std::string> seen_a, seen_b;
  auto record = [](std::vector<std::string>& seen) {
    return [&seen](const Episode& ep) {
      seen.push_back(ep.id);
      return oracle_pipeline(ep);
    };
  };
  const auto a = run_protocol(videos, cfg, record(seen_a));
  const auto b = run_protocol(videos, cfg, record(seen_b));
  EXPECT_EQ(seen_a, seen_b);
  EXPECT_EQ(map_report_to_json(a.all), map_report_to_json(b.all));
  const int test_class = split_classes(10, 9).test[0];
  for (const auto& id : seen_a) EXPECT_EQ(id.rfind("class" + std::to_string(test_class) + "_", 0), 0u) << id;
  EXPECT_EQ(a.all.at(0.5), 1.0);
}

TEST(Protocol, MultiTrackHoldsOnlyMultiSegmentQueries) {
  ProtocolConfig cfg;
  cfg.episodes_per_class = 20;
  const auto rep = run_protocol(make_videos(6, 3), cfg, oracle_pipeline);
  EXPECT_EQ(rep.single.episodes + rep.multi.episodes, rep.all.episodes);
  EXPECT_GT(rep.multi.episodes, 0u);
  EXPECT_GT(rep.single.episodes, 0u);
  for (const auto& r : rep.multi.per_episode) EXPECT_GE(r.ground_truth.size(), 2u);
  for (const auto& r : rep.single.per_episode) EXPECT_LT(r.ground_truth.size(), 2u);
}

TEST(Protocol, SupportIsTrimmedToFirstSegment) {
  ProtocolConfig cfg;
  cfg.eval.shot = 3;
  cfg.episodes_per_class = 1;
  std::size_t support_frames = 0;
  run_protocol(make_videos(5, 4), cfg, [&](const Episode& ep) {
    for (const auto& s : ep.support) support_frames += s.features.t();
    EXPECT_EQ(ep.support.size(), 3u);
    return oracle_pipeline(ep);
  });
  EXPECT_EQ(support_frames, 3u * 8u);
}

TEST(ReportOutput, JsonAndCsvLayout) {
  const EvalConfig cfg = two_thresholds();
  const auto rep = map_over_episodes({score_episode("e", {seg(0, 10, 0.9)}, {{0, 10}}, cfg)}, cfg);
  const auto doc = map_report_to_json(rep);
  EXPECT_EQ(doc["map"]["0.50"], 1.0);
  EXPECT_EQ(doc["episodes"], 1);
  EXPECT_EQ(doc["per_episode"][0]["id"], "e");
  EXPECT_EQ(map_reports_csv({{"all", &rep}}), "track,threshold,map\nall,0.5,1\nall,0.7,1\nall,mean,1\n");
}
