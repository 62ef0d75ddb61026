#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmital/annotations.hpp"
#include "fmital/config.hpp"
#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/feature_io.hpp"
#include "fmital/rng.hpp"

namespace fmital {

struct ManifestEntry {
  std::string id;
  int class_id = 0;
  std::string split;  // "train" or "test"
  std::string query;  // paths relative to the dataset root
  std::vector<std::string> support;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> episodes;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : m.episodes) {
    eps.push_back({{"id", e.id},
                   {"class", class_name(e.class_id)},
                   {"split", e.split},
                   {"query", e.query},
                   {"support", e.support}});
  }
  return {{"format", "fmital-dataset"}, {"version", 1}, {"seed", m.seed}, {"episode_count", m.episodes.size()},
          {"annotations", "annotations.json"}, {"episodes", eps}};
}

inline Manifest manifest_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "fmital-dataset") {
    throw DataError("manifest: not an fmital dataset manifest");
  }
  if (doc.value("version", 0) != 1) throw DataError("manifest: unsupported version");
  Manifest m;
  m.seed = doc.at("seed").get<std::uint64_t>();
  for (const auto& e : doc.at("episodes")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    const auto label = e.at("class").get<std::string>();
    const auto cls = class_id_from_name(label);
    if (!cls) throw DataError("manifest: episode '" + entry.id + "' has unknown class '" + label + "'");
    entry.class_id = *cls;
    entry.split = e.at("split").get<std::string>();
    if (entry.split != "train" && entry.split != "test") {
      throw DataError("manifest: episode '" + entry.id + "' has split '" + entry.split + "'");
    }
    entry.query = e.at("query").get<std::string>();
    entry.support = e.at("support").get<std::vector<std::string>>();
    m.episodes.push_back(std::move(entry));
  }
  return m;
}

/// Number of leading episodes assigned to the training split.
inline std::size_t train_count(std::size_t episodes, double test_fraction) {
  const auto test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(episodes)));
  return episodes - std::min(test, episodes);
}

/// Writes features/, annotations.json and manifest.json under `root`.
/// Episode i is drawn from fork(i) of the run seed.
inline Manifest generate_dataset(const RunConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(root / "features");
  const Rng base(cfg.seed);
  const std::size_t n_train = train_count(cfg.data.episodes, cfg.data.test_fraction);
  Manifest manifest{cfg.seed, {}};
  AnnotationSet annotations;
  for (std::size_t i = 0; i < cfg.data.episodes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "ep%04zu", i);
    Rng rng = base.fork(i);
    const Episode ep = synth_episode(rng, cfg.data.synth, id);
    ManifestEntry entry{ep.id, ep.class_id(), i < n_train ? "train" : "test", "features/" + ep.id + ".query.fmit", {}};
    write_features(root / entry.query, ep.query);
    for (std::size_t k = 0; k < ep.support.size(); ++k) {
      entry.support.push_back("features/" + ep.id + ".support" + std::to_string(k) + ".fmit");
      write_features(root / entry.support.back(), ep.support[k].features);
    }
    VideoAnnotation ann{static_cast<int>(ep.query.t()), {}};
    for (const auto& gt : ep.ground_truth) ann.segments.push_back({gt.segment, class_name(gt.class_id)});
    annotations[ep.id] = std::move(ann);
    manifest.episodes.push_back(std::move(entry));
  }
  write_annotations(root / "annotations.json", annotations);
  write_json_file(root / "manifest.json", manifest_to_json(manifest));
  return manifest;
}

inline Manifest read_manifest(const std::filesystem::path& root) {
  return manifest_from_json(read_json_file(root / "manifest.json"));
}

/// Episodes of the given split ("train", "test" or "all"), in manifest order.
inline std::vector<Episode> load_episodes(const std::filesystem::path& root, const std::string& split) {
  if (split != "train" && split != "test" && split != "all") throw UsageError("unknown split '" + split + "'");
  const Manifest manifest = read_manifest(root);
  const AnnotationSet annotations = read_annotations(root / "annotations.json");
  std::vector<Episode> out;
  for (const auto& e : manifest.episodes) {
    if (split != "all" && e.split != split) continue;
    auto it = annotations.find(e.id);
    if (it == annotations.end()) throw DataError("annotations: no entry for episode '" + e.id + "'");
    Episode ep;
    ep.id = e.id;
    ep.query = read_features(root / e.query);
    for (const auto& s : e.support) ep.support.push_back({read_features(root / s), e.class_id});
    ep.shot = static_cast<int>(ep.support.size());
    for (const auto& seg : it->second.segments) ep.ground_truth.push_back({seg.segment, e.class_id});
    if (static_cast<int>(ep.query.t()) != it->second.duration) {
      throw DataError("episode '" + e.id + "': query length " + std::to_string(ep.query.t()) +
                      " differs from annotated duration " + std::to_string(it->second.duration));
    }
    ep.validate();
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace fmital
