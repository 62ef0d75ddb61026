#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fmital/boundary_head.hpp"
#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/feature_io.hpp"
#include "fmital/localizer.hpp"
#include "fmital/rng.hpp"
#include "fmital/scr_transformer.hpp"
#include "fmital/supervision.hpp"

namespace fmital {

struct PipelineConfig {
  ScrConfig scr;
  std::size_t t_max = 128;
  bool use_scp = true;
  ScpConfig scp;
  LocalizerConfig localizer;
  LabelConfig label;
  TrainConfig train;
};

/// Frozen transformer plus trainable boundary heads.
struct Model {
  ScrParams scr;
  HeadParams heads;
};

inline Model init_model(const ScrConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng root(seed);
  Rng scr_rng = root.fork(1);
  Rng head_rng = root.fork(2);
  Model m;
  m.scr = init_scr_params(cfg, scr_rng);
  m.heads = HeadParams::init(cfg.d_model, head_rng);
  return m;
}

struct EpisodeOutput {
  BoundaryDistributions raw;
  BoundaryDistributions refined;  // equals raw when SCP is off
  LocalizeTrace localized;
};

inline MaskedSequence decoded_sequence(const Episode& ep, const ScrParams& scr, std::size_t t_max) {
  return mask_to_tmax(scr_forward(ep, scr).h_dec, t_max);
}

inline EpisodeOutput run_episode(const Episode& ep, const Model& model, const PipelineConfig& cfg) {
  EpisodeOutput out;
  out.raw = boundary_scores(decoded_sequence(ep, model.scr, cfg.t_max), model.heads);
  out.refined = out.raw;
  if (cfg.use_scp) {
    auto r = scp_refine(out.raw.start, out.raw.end, ep.query, cfg.scp);
    out.refined.start = std::move(r.start);
    out.refined.end = std::move(r.end);
  }
  out.localized = localize_traced(out.refined.start, out.refined.end, out.refined.t_valid, cfg.localizer,
                                  ep.class_id());
  return out;
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results keep
/// index order. The first exception (lowest index) is rethrown.
template <class T, class F>
std::vector<T> parallel_map(std::size_t count, std::size_t jobs, F&& fn) {
  std::vector<T> results(count);
  std::vector<std::exception_ptr> errors(count);
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

/// Decoder features and labels for each episode. Label noise for episode i
/// comes from fork(i) of `label_seed`.
inline std::vector<TrainingSample> training_samples(const std::vector<Episode>& episodes, const ScrParams& scr,
                                                    const PipelineConfig& cfg, std::uint64_t label_seed,
                                                    std::size_t jobs = 1) {
  cfg.label.validate();
  const Rng root(label_seed);
  return parallel_map<TrainingSample>(episodes.size(), jobs, [&](std::size_t i) {
    Rng rng = root.fork(i);
    return make_training_sample(episodes[i], scr_forward(episodes[i], scr).h_dec, cfg.t_max, cfg.label, rng);
  });
}

inline std::vector<NamedArray> model_to_arrays(const Model& m) {
  std::vector<NamedArray> out;
  ScrParams::visit(m.scr, [&](const std::string& name, const Array& a) {
    out.push_back({name, a.shape(), std::vector<double>(a.values().begin(), a.values().end()), false});
  });
  HeadParams::visit(m.heads, [&](const std::string& name, const LinearHead& h) {
    out.push_back({name + ".weight", {h.weight.size()}, h.weight, true});
    out.push_back({name + ".bias", {1}, {h.bias}, true});
  });
  return out;
}

/// Restores parameters into `m`, whose shapes must already match the
/// checkpoint (build it with init_model from the same configuration).
inline void model_from_arrays(Model& m, const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto lookup = [&](const std::string& name, const Shape& shape) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: missing array '" + name + "'");
    if (it->second->shape != shape) {
      throw DataError("checkpoint: array '" + name + "' has shape " + shape_string(it->second->shape) +
                      ", model expects " + shape_string(shape));
    }
    return *it->second;
  };
  std::size_t used = 0;
  ScrParams::visit(m.scr, [&](const std::string& name, Array& a) {
    const auto& src = lookup(name, a.shape());
    std::transform(src.values.begin(), src.values.end(), a.values().begin(),
                   [](double v) { return static_cast<float>(v); });
    ++used;
  });
  HeadParams::visit(m.heads, [&](const std::string& name, LinearHead& h) {
    h.weight = lookup(name + ".weight", {h.weight.size()}).values;
    h.bias = lookup(name + ".bias", {1}).values[0];
    used += 2;
  });
  if (used != arrays.size()) throw DataError("checkpoint: unexpected extra arrays");
}

inline void save_model(const std::filesystem::path& path, const Model& m) { write_checkpoint(path, model_to_arrays(m)); }

inline Model load_model(const std::filesystem::path& path, const ScrConfig& cfg) {
  Model m = init_model(cfg, 0);
  model_from_arrays(m, read_checkpoint(path));
  return m;
}

}  // namespace fmital
