// fmital: synthetic data generation, pipeline runs, head training,
// evaluation and ablations from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fmital/fmital.hpp"

namespace fs = std::filesystem;
using namespace fmital;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

void add_common(CLI::App* cmd, Common& c, bool with_jobs) {
  cmd->add_option("-c,--config", c.config, "INI configuration file (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "override general.seed");
  if (with_jobs) cmd->add_option("-j,--jobs", c.jobs, "episode-level worker threads")->check(CLI::PositiveNumber);
}

int cmd_gen(const Common& c, const std::string& out, std::optional<std::size_t> episodes) {
  RunConfig cfg = resolve_config(c);
  if (episodes) cfg.data.episodes = *episodes;
  cfg.validate();
  const Manifest m = generate_dataset(cfg, out);
  std::size_t train = 0;
  for (const auto& e : m.episodes) train += e.split == "train";
  std::printf("wrote %zu episodes (%zu train, %zu test) to %s\n", m.episodes.size(), train,
              m.episodes.size() - train, out.c_str());
  return 0;
}

Model model_for(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) return init_model(cfg.pipeline.scr, cfg.seed);
  require_file(checkpoint, "checkpoint");
  return load_model(checkpoint, cfg.pipeline.scr);
}

nlohmann::json segments_json(const std::vector<SegmentPrediction>& preds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : preds) out.push_back({p.start, p.end, p.score});
  return out;
}

int cmd_run(const Common& c, const std::string& data, const std::string& checkpoint, const std::string& split,
            const std::string& out, const std::string& dump_dir) {
  const RunConfig cfg = resolve_config(c);
  require_file(data + "/manifest.json", "dataset manifest");
  const auto episodes = load_episodes(data, split);
  const Model model = model_for(cfg, checkpoint);
  const auto outputs = parallel_map<EpisodeOutput>(episodes.size(), c.jobs, [&](std::size_t i) {
    return run_episode(episodes[i], model, cfg.pipeline);
  });
  std::vector<VideoPrediction> rows;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (const auto& p : outputs[i].localized.final) rows.push_back({episodes[i].id, p, class_name(p.class_id)});
  }
  write_json_file(out, predictions_to_json(rows));
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      const auto& o = outputs[i];
      nlohmann::json pairs = nlohmann::json::array();
      for (const auto& p : o.localized.pairs) pairs.push_back({p.start, p.end, p.score});
      write_json_file(fs::path(dump_dir) / (episodes[i].id + ".json"),
                      {{"episode", episodes[i].id},
                       {"boundary", distributions_to_json(o.raw)},
                       {"refined", distributions_to_json(o.refined)},
                       {"top_pairs", pairs},
                       {"after_nms", segments_json(o.localized.after_nms)},
                       {"final", segments_json(o.localized.final)}});
    }
  }
  std::printf("%zu predictions for %zu episodes written to %s\n", rows.size(), episodes.size(), out.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& split, const std::string& out,
              const std::string& loss_csv) {
  const RunConfig cfg = resolve_config(c);
  require_file(data + "/manifest.json", "dataset manifest");
  const auto episodes = load_episodes(data, split);
  if (episodes.empty()) throw DataError("no episodes in split '" + split + "'");
  Model model = init_model(cfg.pipeline.scr, cfg.seed);
  const TrainResult result = fit_heads(model, episodes, cfg.pipeline, cfg.seed, c.jobs);
  model.heads = result.params;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_model(out, model);
  if (!loss_csv.empty()) write_text(loss_csv, loss_trace_csv(result.trace));
  const auto& first = result.trace.front();
  const auto& last = result.trace.back();
  std::printf("trained heads on %zu episodes: loss %.6f -> %.6f (%d steps); checkpoint %s\n", episodes.size(),
              first.total, last.total, cfg.pipeline.train.steps, out.c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& predictions, const std::string& annotations,
             const std::string& data, const std::string& split, const std::string& json_out,
             const std::string& csv_out) {
  const RunConfig cfg = resolve_config(c);
  require_file(predictions, "predictions file");
  require_file(annotations, "annotations file");
  const auto preds = predictions_from_json(read_json_file(predictions));
  const auto gts = read_annotations(annotations);

  std::set<std::string> scope;
  if (!data.empty()) {
    for (const auto& e : read_manifest(data).episodes) {
      if (split == "all" || e.split == split) scope.insert(e.id);
    }
  } else {
    for (const auto& [id, ann] : gts) scope.insert(id);
  }
  std::map<std::string, std::vector<SegmentPrediction>> by_video;
  for (const auto& p : preds) {
    if (!gts.count(p.video)) throw DataError("predictions: video '" + p.video + "' is not annotated");
    by_video[p.video].push_back(p.segment);
  }
  std::vector<EpisodeResult> all, single, multi;
  for (const auto& id : scope) {
    auto it = gts.find(id);
    if (it == gts.end()) throw DataError("annotations: no entry for '" + id + "'");
    std::vector<Segment> segs;
    for (const auto& s : it->second.segments) segs.push_back(s.segment);
    auto r = score_episode(id, by_video[id], segs, cfg.eval);
    (segs.size() >= 2 ? multi : single).push_back(r);
    all.push_back(std::move(r));
  }
  const MapReport rall = map_over_episodes(all, cfg.eval);
  const MapReport rsingle = map_over_episodes(single, cfg.eval);
  const MapReport rmulti = map_over_episodes(multi, cfg.eval);

  std::printf("%-8s %9s", "track", "episodes");
  for (double t : cfg.eval.thresholds) std::printf(" %6.2f", t);
  std::printf(" %6s\n", "mean");
  for (const auto& [name, rep] : {std::pair<const char*, const MapReport*>{"all", &rall}, {"single", &rsingle},
                                  {"multi", &rmulti}}) {
    std::printf("%-8s %9zu", name, rep->episodes);
    for (double m : rep->map) std::printf(" %6.4f", m);
    std::printf(" %6.4f\n", rep->mean);
  }
  if (!json_out.empty()) {
    write_json_file(json_out, {{"primary_threshold", cfg.eval.primary},
                               {"mean_definition", "mAP averaged over the listed tIoU thresholds"},
                               {"thresholds", cfg.eval.thresholds},
                               {"tracks",
                                {{"all", map_report_to_json(rall)},
                                 {"single", map_report_to_json(rsingle)},
                                 {"multi", map_report_to_json(rmulti)}}}});
  }
  if (!csv_out.empty()) {
    write_text(csv_out, map_reports_csv({{"all", &rall}, {"single", &rsingle}, {"multi", &rmulti}}));
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data, const AblationConfig& ab, const std::string& csv_out) {
  const RunConfig cfg = resolve_config(c);
  require_file(data + "/manifest.json", "dataset manifest");
  const auto train = load_episodes(data, "train");
  const auto test = load_episodes(data, "test");
  if (train.empty() || test.empty()) throw DataError("ablation needs both train and test episodes");
  const auto rows = run_ablation(cfg, train, test, ab, c.jobs);
  std::fputs(ablation_table(rows).c_str(), stdout);
  if (!csv_out.empty()) write_text(csv_out, ablation_csv(rows, cfg.eval.primary));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot temporal action localization pipeline on synthetic features"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  std::string print_from;
  app.add_flag("--print-config", print_config, "print the full configuration (defaults merged with --config)");
  app.add_option("-c,--config", print_from, "configuration to merge for --print-config");

  Common gen_c, run_c, train_c, eval_c, ablate_c;
  std::string gen_out;
  std::optional<std::size_t> gen_episodes;
  auto* gen = app.add_subcommand("gen", "synthesize a dataset of episodes");
  add_common(gen, gen_c, false);
  gen->add_option("-o,--out", gen_out, "output directory")->required();
  gen->add_option("--episodes", gen_episodes, "override data.episodes");

  std::string run_data, run_ckpt, run_split = "test", run_out, run_dump;
  auto* run = app.add_subcommand("run", "run the full pipeline and write predictions");
  add_common(run, run_c, true);
  run->add_option("-d,--data", run_data, "dataset directory")->required();
  run->add_option("--checkpoint", run_ckpt, "parameter checkpoint from train-heads");
  run->add_option("--split", run_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  run->add_option("-o,--out", run_out, "predictions JSON")->required();
  run->add_option("--dump-dir", run_dump, "write per-stage outputs for every episode here");

  std::string train_data, train_split = "train", train_out, train_csv;
  auto* train = app.add_subcommand("train-heads", "train the boundary heads with the transformer frozen");
  add_common(train, train_c, true);
  train->add_option("-d,--data", train_data, "dataset directory")->required();
  train->add_option("--split", train_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  train->add_option("-o,--out", train_out, "checkpoint output (FMIP)")->required();
  train->add_option("--loss-csv", train_csv, "loss trace CSV");

  std::string eval_preds, eval_ann, eval_data, eval_split = "test", eval_json, eval_csv;
  auto* eval = app.add_subcommand("eval", "score predictions against annotations");
  add_common(eval, eval_c, false);
  eval->add_option("-p,--predictions", eval_preds, "predictions JSON")->required();
  eval->add_option("-a,--annotations", eval_ann, "annotations JSON")->required();
  eval->add_option("-d,--data", eval_data, "dataset directory; restricts scoring to --split");
  eval->add_option("--split", eval_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_option("--json", eval_json, "report JSON");
  eval->add_option("--csv", eval_csv, "report CSV");

  std::string ablate_data, ablate_csv_out;
  AblationConfig ab;
  auto* ablate = app.add_subcommand("ablate", "component, channel and loss ablations");
  add_common(ablate, ablate_c, true);
  ablate->add_option("-d,--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--channels", ab.channels, "channel widths for the channel rows");
  ablate->add_option("--channel-train", ab.channel_train, "training episodes per channel width");
  ablate->add_option("--channel-test", ab.channel_test, "test episodes per channel width");
  ablate->add_option("--channel-length", ab.channel_query_length, "query length for channel rows");
  ablate->add_option("--csv", ablate_csv_out, "table CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (print_config) {
      std::fputs(config_to_ini(print_from.empty() ? default_config() : load_config(print_from)).c_str(), stdout);
      return 0;
    }
    if (*gen) return cmd_gen(gen_c, gen_out, gen_episodes);
    if (*run) return cmd_run(run_c, run_data, run_ckpt, run_split, run_out, run_dump);
    if (*train) return cmd_train(train_c, train_data, train_split, train_out, train_csv);
    if (*eval) return cmd_eval(eval_c, eval_preds, eval_ann, eval_data, eval_split, eval_json, eval_csv);
    if (*ablate) return cmd_ablate(ablate_c, ablate_data, ab, ablate_csv_out);
    std::fputs(app.help().c_str(), stdout);
    return 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "fmital: usage error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "fmital: numerical failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "fmital: data error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "fmital: data error: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "fmital: data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fmital: error: %s\n", e.what());
    return 2;
  }
}
