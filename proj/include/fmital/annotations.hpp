#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"

namespace fmital {

struct AnnotatedSegment {
  Segment segment;
  std::string label;
  friend bool operator==(const AnnotatedSegment&, const AnnotatedSegment&) = default;
};

struct VideoAnnotation {
  int duration = 0;  // seconds == timesteps
  std::vector<AnnotatedSegment> segments;
  friend bool operator==(const VideoAnnotation&, const VideoAnnotation&) = default;
};

/// video id -> annotation, ordered by id.
using AnnotationSet = std::map<std::string, VideoAnnotation>;

inline std::string class_name(int class_id) { return "class_" + std::to_string(class_id); }

/// Inverse of class_name; nullopt for labels that do not follow the pattern.
inline std::optional<int> class_id_from_name(const std::string& label) {
  constexpr std::string_view prefix = "class_";
  if (label.size() <= prefix.size() || label.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
  int id = 0;
  for (std::size_t i = prefix.size(); i < label.size(); ++i) {
    if (label[i] < '0' || label[i] > '9') return std::nullopt;
    id = id * 10 + (label[i] - '0');
  }
  return id;
}

namespace detail {

inline int integral_seconds(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) throw DataError(where + ": expected a number");
  const double x = v.get<double>();
  if (x < 0) throw DataError(where + ": negative time " + v.dump());
  if (x != std::floor(x)) throw DataError(where + ": time must be an integer number of seconds");
  return static_cast<int>(x);
}

}  // namespace detail

/// Validates and converts the annotation document. When `known_labels` is
/// given, labels outside it are rejected.
inline AnnotationSet parse_annotations(const nlohmann::json& doc,
                                       const std::set<std::string>* known_labels = nullptr) {
  if (!doc.is_object()) throw DataError("annotations: top level must be an object");
  AnnotationSet out;
  for (const auto& [video, body] : doc.items()) {
    const std::string ctx = "annotations: video '" + video + "'";
    if (!body.is_object()) throw DataError(ctx + ": expected an object");
    if (!body.contains("duration")) throw DataError(ctx + ": missing field 'duration'");
    VideoAnnotation ann;
    ann.duration = detail::integral_seconds(body["duration"], ctx + " field 'duration'");
    if (!body.contains("segments") || !body["segments"].is_array()) {
      throw DataError(ctx + ": missing array field 'segments'");
    }
    int index = 0;
    for (const auto& seg : body["segments"]) {
      const std::string sctx = ctx + " segment " + std::to_string(index++);
      for (const char* key : {"start", "end", "class"}) {
        if (!seg.contains(key)) throw DataError(sctx + ": missing field '" + key + "'");
      }
      AnnotatedSegment a;
      a.segment.start = detail::integral_seconds(seg["start"], sctx + " field 'start'");
      a.segment.end = detail::integral_seconds(seg["end"], sctx + " field 'end'");
      if (a.segment.end < a.segment.start) {
        throw DataError(sctx + " field 'end': end " + std::to_string(a.segment.end) + " < start " +
                        std::to_string(a.segment.start));
      }
      if (a.segment.end >= ann.duration) {
        throw DataError(sctx + " field 'end': " + std::to_string(a.segment.end) +
                        " is outside duration " + std::to_string(ann.duration));
      }
      if (!seg["class"].is_string()) throw DataError(sctx + " field 'class': expected a string");
      a.label = seg["class"].get<std::string>();
      if (known_labels && !known_labels->contains(a.label)) {
        throw DataError(sctx + " field 'class': unknown class '" + a.label + "'");
      }
      ann.segments.push_back(std::move(a));
    }
    out.emplace(video, std::move(ann));
  }
  return out;
}

inline nlohmann::json annotations_to_json(const AnnotationSet& set) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [video, ann] : set) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : ann.segments) {
      segs.push_back({{"start", s.segment.start}, {"end", s.segment.end}, {"class", s.label}});
    }
    doc[video] = {{"duration", ann.duration}, {"segments", std::move(segs)}};
  }
  return doc;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << '\n';
}

inline AnnotationSet read_annotations(const std::filesystem::path& path,
                                      const std::set<std::string>* known_labels = nullptr) {
  return parse_annotations(read_json_file(path), known_labels);
}

inline void write_annotations(const std::filesystem::path& path, const AnnotationSet& set) {
  write_json_file(path, annotations_to_json(set));
}

}  // namespace fmital
