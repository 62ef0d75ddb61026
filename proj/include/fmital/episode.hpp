#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fmital/error.hpp"
#include "fmital/numerics.hpp"
#include "fmital/rng.hpp"

namespace fmital {

/// Per-second video features laid out as [time, patches, channels].
class FeatureTensor {
 public:
  FeatureTensor() : values_(Shape{1, 1, 2}) {}

  FeatureTensor(std::size_t t, std::size_t n, std::size_t d) : FeatureTensor(Array({t, n, d})) {}

  explicit FeatureTensor(Array values) : values_(std::move(values)) {
    if (values_.rank() != 3) {
      throw ShapeError("feature tensor must be rank 3, got " + shape_string(values_.shape()));
    }
    if (t() < 1 || n() < 1) throw ShapeError("feature tensor needs t >= 1 and n >= 1");
    if (d() < 2 || d() % 2 != 0) {
      throw ShapeError("feature channel count must be even and >= 2, got " + std::to_string(d()));
    }
  }

  std::size_t t() const { return values_.extent(0); }
  std::size_t n() const { return values_.extent(1); }
  std::size_t d() const { return values_.extent(2); }

  /// All n*d values of one timestep.
  std::span<const float> frame(std::size_t i) const { return values_.slice(i); }
  std::span<float> frame(std::size_t i) { return values_.slice(i); }

  const Array& array() const noexcept { return values_; }
  Array& array() noexcept { return values_; }

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;

 private:
  Array values_;
};

/// Closed interval of integer timesteps (seconds).
struct Segment {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct GroundTruth {
  Segment segment;
  int class_id = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SupportClip {
  FeatureTensor features;
  int class_id = 0;
  friend bool operator==(const SupportClip&, const SupportClip&) = default;
};

struct Episode {
  std::string id;
  std::vector<SupportClip> support;
  FeatureTensor query;
  std::vector<GroundTruth> ground_truth;
  int shot = 1;

  int class_id() const { return support.empty() ? -1 : support.front().class_id; }

  void validate() const {
    if (support.empty()) throw DataError("episode '" + id + "' has no support clips");
    const auto t = static_cast<int>(query.t());
    for (const auto& gt : ground_truth) {
      if (gt.segment.start < 0 || gt.segment.end < gt.segment.start || gt.segment.end >= t) {
        throw DataError("episode '" + id + "': segment [" + std::to_string(gt.segment.start) + ", " +
                        std::to_string(gt.segment.end) + "] outside query of length " +
                        std::to_string(t));
      }
    }
    for (const auto& clip : support) {
      if (clip.features.n() != query.n() || clip.features.d() != query.d()) {
        throw ShapeError("episode '" + id + "': support and query patch/channel extents differ");
      }
    }
  }

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Concatenate support clips along time: [sum t_i, n, d].
inline FeatureTensor concat_support(const std::vector<FeatureTensor>& clips) {
  if (clips.empty()) throw DataError("concat_support: no clips");
  const std::size_t n = clips.front().n(), d = clips.front().d();
  std::size_t total = 0;
  for (const auto& c : clips) {
    if (c.n() != n || c.d() != d) {
      throw ShapeError("concat_support: clip extents [" + std::to_string(c.n()) + ", " +
                       std::to_string(c.d()) + "] differ from [" + std::to_string(n) + ", " +
                       std::to_string(d) + "]");
    }
    total += c.t();
  }
  std::vector<float> data;
  data.reserve(total * n * d);
  for (const auto& c : clips) data.insert(data.end(), c.array().values().begin(), c.array().values().end());
  return FeatureTensor(Array({total, n, d}, std::move(data)));
}

inline FeatureTensor concat_support(const std::vector<SupportClip>& clips) {
  std::vector<FeatureTensor> tensors;
  tensors.reserve(clips.size());
  for (const auto& c : clips) tensors.push_back(c.features);
  return concat_support(tensors);
}

/// Parameters of the synthetic stand-in for backbone features.
///
/// Each class owns a fixed random direction in the n*d frame space, derived
/// from `pattern_seed`. Frames inside an action carry that direction with
/// norm sqrt(n*d); every frame carries i.i.d. Gaussian noise whose expected
/// norm is sqrt(n*d) / snr. An infinite snr gives noise-free features.
struct SynthSpec {
  std::size_t min_query_length = 64;
  std::size_t max_query_length = 64;
  std::size_t t_max = 128;
  int min_instances = 1;
  int max_instances = 3;
  int min_segment_length = 8;
  int max_segment_length = 24;
  int min_gap = 4;
  std::size_t support_length = 16;
  int shot = 1;
  int num_classes = 10;
  int class_id = -1;  // < 0: drawn uniformly from [0, num_classes)
  std::size_t n = 16;
  std::size_t d = 64;
  double snr = 10.0;
  std::uint64_t pattern_seed = 0x5eed;

  double noise_std() const { return std::isinf(snr) ? 0.0 : 1.0 / snr; }
};

/// Unit-RMS class signature of length n*d.
inline std::vector<float> class_pattern(std::uint64_t pattern_seed, int class_id, std::size_t length) {
  Rng rng = Rng(pattern_seed).fork(static_cast<std::uint64_t>(class_id));
  std::vector<double> v(length);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  const double scale = std::sqrt(static_cast<double>(length) / norm);
  std::vector<float> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = static_cast<float>(v[i] * scale);
  return out;
}

/// Noise-only tensor with the class pattern planted on every timestep in `active`.
inline FeatureTensor synth_features(Rng& rng, const SynthSpec& spec, std::size_t t,
                                    const std::vector<float>& pattern, const std::vector<bool>& active) {
  FeatureTensor f(t, spec.n, spec.d);
  const double sigma = spec.noise_std();
  for (std::size_t i = 0; i < t; ++i) {
    auto frame = f.frame(i);
    for (std::size_t j = 0; j < frame.size(); ++j) {
      const double noise = sigma > 0.0 ? sigma * rng.normal() : 0.0;
      frame[j] = static_cast<float>(noise + (active[i] ? pattern[j] : 0.0f));
    }
  }
  return f;
}

/// Non-overlapping segments with at least `min_gap` background steps
/// before, between and after them.
inline std::vector<Segment> place_segments(Rng& rng, int length, int count, int min_len, int max_len,
                                           int min_gap) {
  if (count < 1) throw UsageError("synth: instance count must be >= 1");
  if (min_len < 1 || max_len < min_len) throw UsageError("synth: invalid segment length range");
  const int required = count * min_len + (count + 1) * min_gap;
  if (required > length) {
    throw DataError("synth: " + std::to_string(count) + " segments of length >= " +
                    std::to_string(min_len) + " do not fit in " + std::to_string(length) + " steps");
  }
  std::vector<int> lengths(count);
  int used = (count + 1) * min_gap;
  for (int k = 0; k < count; ++k) {
    const int still_needed = (count - k - 1) * min_len;
    const int hi = std::min(max_len, length - used - still_needed);
    lengths[k] = static_cast<int>(rng.uniform_int(min_len, hi));
    used += lengths[k];
  }
  // Spread the remaining slack over the count + 1 gaps.
  const int slack = length - used;
  std::vector<int> cuts(count);
  for (int& c : cuts) c = static_cast<int>(rng.uniform_int(0, slack));
  std::sort(cuts.begin(), cuts.end());
  std::vector<Segment> out;
  int cursor = 0, prev_cut = 0;
  for (int k = 0; k < count; ++k) {
    cursor += min_gap + (cuts[k] - prev_cut);
    prev_cut = cuts[k];
    out.push_back({cursor, cursor + lengths[k] - 1});
    cursor += lengths[k];
  }
  return out;
}

inline Episode synth_episode(Rng& rng, const SynthSpec& spec, std::string id = "episode") {
  if (spec.min_instances < 1 || spec.max_instances < spec.min_instances) {
    throw UsageError("synth: instance count must be >= 1");
  }
  if (spec.shot < 1) throw UsageError("synth: shot must be >= 1");
  if (spec.d < 2 || spec.d % 2 != 0 || spec.n < 1) throw UsageError("synth: need n >= 1, even d >= 2");
  if (spec.min_query_length < 1 || spec.max_query_length < spec.min_query_length) {
    throw UsageError("synth: invalid query length range");
  }
  if (spec.max_query_length > spec.t_max) {
    throw UsageError("synth: query length " + std::to_string(spec.max_query_length) +
                     " exceeds t_max " + std::to_string(spec.t_max));
  }
  if (spec.num_classes < 1 || spec.class_id >= spec.num_classes) throw UsageError("synth: invalid class id");

  const auto t = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(spec.min_query_length), static_cast<std::int64_t>(spec.max_query_length)));
  const int instances = static_cast<int>(rng.uniform_int(spec.min_instances, spec.max_instances));
  const int class_id =
      spec.class_id >= 0 ? spec.class_id : static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
  const auto segments = place_segments(rng, static_cast<int>(t), instances, spec.min_segment_length,
                                       spec.max_segment_length, spec.min_gap);
  const auto pattern = class_pattern(spec.pattern_seed, class_id, spec.n * spec.d);

  Episode ep;
  ep.id = std::move(id);
  ep.shot = spec.shot;
  std::vector<bool> active(t, false);
  for (const auto& s : segments) {
    std::fill(active.begin() + s.start, active.begin() + s.end + 1, true);
    ep.ground_truth.push_back({s, class_id});
  }
  ep.query = synth_features(rng, spec, t, pattern, active);
  const std::vector<bool> all(spec.support_length, true);
  for (int k = 0; k < spec.shot; ++k) {
    ep.support.push_back({synth_features(rng, spec, spec.support_length, pattern, all), class_id});
  }
  return ep;
}

struct ClassSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

/// Seeded 7:2:1 partition of class ids 0..num_classes-1.
inline ClassSplit split_classes(int num_classes, std::uint64_t seed) {
  if (num_classes < 3) throw UsageError("class split needs at least 3 classes");
  std::vector<int> ids(num_classes);
  for (int i = 0; i < num_classes; ++i) ids[i] = i;
  Rng rng(seed);
  for (int i = num_classes - 1; i > 0; --i) std::swap(ids[i], ids[rng.uniform_int(0, i)]);
  auto n_train = static_cast<int>(std::lround(0.7 * num_classes));
  auto n_val = static_cast<int>(std::lround(0.2 * num_classes));
  n_val = std::max(1, std::min(n_val, num_classes - 2));
  n_train = std::max(1, std::min(n_train, num_classes - n_val - 1));
  ClassSplit split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.end());
  for (auto* v : {&split.train, &split.val, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

}  // namespace fmital
