#pragma once

#include <cstddef>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "fmital/config.hpp"
#include "fmital/episode.hpp"
#include "fmital/evaluation.hpp"
#include "fmital/pipeline.hpp"
#include "fmital/supervision.hpp"

namespace fmital {

/// Heads-only training on `episodes` with the transformer in `model` frozen.
inline TrainResult fit_heads(const Model& model, const std::vector<Episode>& episodes, const PipelineConfig& cfg,
                             std::uint64_t label_seed, std::size_t jobs = 1) {
  const auto samples = training_samples(episodes, model.scr, cfg, label_seed, jobs);
  return train_heads(samples, model.heads, cfg.train);
}

/// Full pipeline on every episode, scored against its planted segments.
inline MapReport evaluate_episodes(const Model& model, const std::vector<Episode>& episodes,
                                   const PipelineConfig& cfg, const EvalConfig& eval, std::size_t jobs = 1) {
  auto results = parallel_map<EpisodeResult>(episodes.size(), jobs, [&](std::size_t i) {
    const auto out = run_episode(episodes[i], model, cfg);
    return score_episode(episodes[i].id, out.localized.final, segments_of(episodes[i]), eval);
  });
  return map_over_episodes(results, eval);
}

struct AblationRow {
  std::string axis;
  bool sca = true, icd = true, scp = true;
  std::size_t channels = 0;
  bool l1 = true, kl = true, cls = true;
  LossWeights weights;
  double map_primary = 0.0;
  double map_mean = 0.0;
  std::size_t train_episodes = 0, test_episodes = 0;
};

struct AblationConfig {
  std::vector<std::size_t> channels = {512, 2048};
  std::size_t channel_train = 8;  // synthetic episodes per channel setting
  std::size_t channel_test = 4;
  std::size_t channel_query_length = 32;
};

/// Weights with the disabled terms zeroed and the rest rescaled to sum to 1.
inline LossWeights renormalized(const LossWeights& base, bool kl, bool l1, bool cls) {
  LossWeights w{kl ? base.alpha : 0.0, l1 ? base.beta : 0.0, cls ? base.gamma : 0.0};
  const double total = w.alpha + w.beta + w.gamma;
  if (!(total > 0)) throw UsageError("ablation: every loss term disabled");
  return {w.alpha / total, w.beta / total, w.gamma / total};
}

namespace detail {

inline AblationRow run_row(AblationRow row, const RunConfig& base, const std::vector<Episode>& train,
                           const std::vector<Episode>& test, std::size_t jobs) {
  RunConfig cfg = base;
  cfg.pipeline.scr.use_sca = row.sca;
  cfg.pipeline.scr.use_icd = row.icd;
  cfg.pipeline.use_scp = row.scp;
  cfg.pipeline.train.weights = row.weights;
  const Model init = init_model(cfg.pipeline.scr, cfg.seed);
  Model model = init;
  model.heads = fit_heads(init, train, cfg.pipeline, cfg.seed, jobs).params;
  const MapReport rep = evaluate_episodes(model, test, cfg.pipeline, cfg.eval, jobs);
  row.channels = cfg.pipeline.scr.d;
  row.map_primary = rep.at(cfg.eval.primary);
  row.map_mean = rep.mean;
  row.train_episodes = train.size();
  row.test_episodes = test.size();
  return row;
}

}  // namespace detail

/// Component rows (SCA/ICD/SCP), channel-width rows and loss-term rows.
/// Component and loss rows use the given episodes; channel rows draw fresh
/// synthetic episodes at each width from the run seed.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::vector<Episode>& train,
                                             const std::vector<Episode>& test, const AblationConfig& ab,
                                             std::size_t jobs = 1) {
  std::vector<AblationRow> rows;
  const LossWeights w = cfg.pipeline.train.weights;
  auto make_row = [&w](const char* axis) {
    AblationRow row;
    row.axis = axis;
    row.weights = w;
    return row;
  };
  const bool stage_grid[6][3] = {{false, false, false}, {false, false, true}, {false, true, true},
                                 {true, false, true},   {true, true, false},  {true, true, true}};
  for (const auto& s : stage_grid) {
    AblationRow row = make_row("components");
    row.sca = s[0];
    row.icd = s[1];
    row.scp = s[2];
    rows.push_back(detail::run_row(row, cfg, train, test, jobs));
  }

  for (std::size_t channels : ab.channels) {
    RunConfig c = cfg;
    c.pipeline.scr.d = channels;
    c.data.synth.min_query_length = c.data.synth.max_query_length = ab.channel_query_length;
    c.data.synth.max_instances = std::min(c.data.synth.max_instances, 2);
    c.sync();
    std::vector<Episode> ctrain, ctest;
    const Rng root = Rng(cfg.seed).fork(0xc4a77e15ULL + channels);
    for (std::size_t i = 0; i < ab.channel_train + ab.channel_test; ++i) {
      Rng rng = root.fork(i);
      auto ep = synth_episode(rng, c.data.synth, "ch" + std::to_string(channels) + "_" + std::to_string(i));
      (i < ab.channel_train ? ctrain : ctest).push_back(std::move(ep));
    }
    AblationRow row = make_row("channels");
    rows.push_back(detail::run_row(row, c, ctrain, ctest, jobs));
  }

  const bool loss_grid[6][3] = {{true, false, false}, {false, true, false}, {true, true, false},
                                {false, true, true},  {true, false, true},  {true, true, true}};
  for (const auto& l : loss_grid) {
    AblationRow row = make_row("loss");
    row.l1 = l[0];
    row.kl = l[1];
    row.cls = l[2];
    row.weights = renormalized(w, row.kl, row.l1, row.cls);
    rows.push_back(detail::run_row(row, cfg, train, test, jobs));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, double primary) {
  std::ostringstream os;
  os.precision(6);
  os << "axis,sca,icd,scp,channels,l1,kl,cls,alpha,beta,gamma,train,test,map@" << primary << ",map_mean\n";
  for (const auto& r : rows) {
    os << r.axis << ',' << r.sca << ',' << r.icd << ',' << r.scp << ',' << r.channels << ',' << r.l1 << ','
       << r.kl << ',' << r.cls << ',' << r.weights.alpha << ',' << r.weights.beta << ',' << r.weights.gamma << ','
       << r.train_episodes << ',' << r.test_episodes << ',' << r.map_primary << ',' << r.map_mean << '\n';
  }
  return os.str();
}

/// Fixed-width text table for terminals.
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  auto mark = [](bool b) { return b ? "x" : "-"; };
  char line[160];
  std::snprintf(line, sizeof line, "%-11s %3s %3s %3s %8s %3s %3s %3s %9s %9s\n", "axis", "SCA", "ICD", "SCP",
                "channels", "L1", "KL", "CLS", "mAP@0.5", "mAP-mean");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-11s %3s %3s %3s %8zu %3s %3s %3s %9.4f %9.4f\n", r.axis.c_str(), mark(r.sca),
                  mark(r.icd), mark(r.scp), r.channels, mark(r.l1), mark(r.kl), mark(r.cls), r.map_primary,
                  r.map_mean);
    os << line;
  }
  return os.str();
}

}  // namespace fmital
