#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/numerics.hpp"
#include "fmital/rng.hpp"

namespace fmital {

/// Decoder output copied into a fixed [t_max, d_model] buffer; rows at and
/// beyond t_valid are zero.
struct MaskedSequence {
  Array v;
  std::size_t t_valid = 0;

  std::size_t t_max() const { return v.extent(0); }
  std::size_t width() const { return v.extent(1); }
};

inline MaskedSequence mask_to_tmax(const Array& h_dec, std::size_t t_max) {
  if (h_dec.rank() != 2) throw ShapeError("mask_to_tmax: expected [T, d_model]");
  const std::size_t t = h_dec.extent(0);
  if (t > t_max) {
    throw DataError("query exceeds T_max (" + std::to_string(t) + " > " + std::to_string(t_max) + ")");
  }
  MaskedSequence m{Array({t_max, h_dec.extent(1)}), t};
  std::copy(h_dec.values().begin(), h_dec.values().end(), m.v.values().begin());
  return m;
}

/// Affine map d_model -> 1, kept in double precision for training.
struct LinearHead {
  std::vector<double> weight;
  double bias = 0.0;

  friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct HeadParams {
  LinearHead start;  // Phi_s
  LinearHead end;    // Phi_e
  LinearHead cls;    // Phi_c, one foreground logit per timestep

  static HeadParams init(std::size_t d_model, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    auto head = [&] {
      LinearHead h{std::vector<double>(d_model), 0.0};
      for (double& w : h.weight) w = rng.uniform(-bound, bound);
      return h;
    };
    HeadParams p;
    p.start = head();
    p.end = head();
    p.cls = head();
    return p;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("head.start"), self.start);
    f(std::string("head.end"), self.end);
    f(std::string("head.cls"), self.cls);
  }

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// Start/end probability vectors and foreground logits, all of length t_max.
struct BoundaryDistributions {
  std::size_t t_valid = 0;
  std::vector<double> start;
  std::vector<double> end;
  std::vector<double> cls;

  std::size_t t_max() const { return start.size(); }
};

inline std::vector<double> head_logits(const MaskedSequence& seq, const LinearHead& head) {
  if (head.weight.size() != seq.width()) {
    throw ShapeError("head width " + std::to_string(head.weight.size()) + " vs sequence width " +
                     std::to_string(seq.width()));
  }
  std::vector<double> out(seq.t_max());
  for (std::size_t t = 0; t < seq.t_max(); ++t) {
    const auto row = seq.v.slice(t);
    double acc = head.bias;
    for (std::size_t j = 0; j < row.size(); ++j) acc += head.weight[j] * row[j];
    out[t] = acc;
  }
  return out;
}

/// Masked softmax over the valid prefix; positions >= t_valid get exactly 0.
inline BoundaryDistributions distributions_from_logits(const std::vector<double>& start_logits,
                                                       const std::vector<double>& end_logits,
                                                       std::vector<double> cls_logits, std::size_t t_valid) {
  if (start_logits.size() != end_logits.size() || start_logits.size() != cls_logits.size()) {
    throw ShapeError("boundary logits differ in length");
  }
  if (t_valid < 1 || t_valid > start_logits.size()) throw DataError("t_valid out of range");
  const auto mask = prefix_mask(start_logits.size(), t_valid);
  return {t_valid, softmax(start_logits, mask), softmax(end_logits, mask), std::move(cls_logits)};
}

inline BoundaryDistributions boundary_scores(const MaskedSequence& seq, const HeadParams& p) {
  return distributions_from_logits(head_logits(seq, p.start), head_logits(seq, p.end),
                                   head_logits(seq, p.cls), seq.t_valid);
}

struct ScpConfig {
  std::size_t offset = 4;
  std::size_t top_m = 100;
};

struct ScpResult {
  std::vector<double> start;
  std::vector<double> end;
};

namespace detail {

// Indices of the `m` largest entries among the first `t_valid`, by value
// descending then index ascending.
inline std::vector<std::size_t> top_indices(const std::vector<double>& p, std::size_t t_valid, std::size_t m) {
  std::vector<std::size_t> idx(t_valid);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  idx.resize(std::min(m, idx.size()));
  return idx;
}

inline void penalize(std::vector<double>& probs, const FeatureTensor& qf, std::size_t top_m,
                     std::ptrdiff_t offset) {
  const auto t_valid = static_cast<std::ptrdiff_t>(qf.t());
  std::vector<std::pair<std::size_t, double>> sims;
  for (std::size_t idx : top_indices(probs, qf.t(), top_m)) {
    const auto other = static_cast<std::ptrdiff_t>(idx) + offset;
    if (other < 0 || other >= t_valid) continue;
    sims.emplace_back(idx, cosine_similarity(qf.frame(idx), qf.frame(static_cast<std::size_t>(other))));
  }
  if (sims.empty()) return;
  double mean = 0.0, lo = sims[0].second, hi = sims[0].second;
  for (const auto& [idx, s] : sims) {
    mean += s;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  // rounding can push the sum of equal terms outside their range
  mean = std::clamp(mean / static_cast<double>(sims.size()), lo, hi);
  for (const auto& [idx, s] : sims) {
    if (s < mean) probs[idx] /= 2.0;
  }
}

}  // namespace detail

/// Selective Cosine Penalization. Among the top_m start candidates, a start
/// at i is halved when cos(qf[i], qf[i - offset]) is below the mean of those
/// similarities; ends use qf[i + offset]. Comparisons that fall outside the
/// video are skipped and do not enter the mean. No renormalisation.
inline ScpResult scp_refine(const std::vector<double>& start, const std::vector<double>& end,
                            const FeatureTensor& qf, const ScpConfig& cfg = {}) {
  if (start.size() < qf.t() || end.size() < qf.t()) {
    throw ShapeError("scp_refine: probability vectors shorter than the query");
  }
  ScpResult out{start, end};
  const auto offset = static_cast<std::ptrdiff_t>(cfg.offset);
  detail::penalize(out.start, qf, cfg.top_m, -offset);
  detail::penalize(out.end, qf, cfg.top_m, offset);
  return out;
}

inline nlohmann::json distributions_to_json(const BoundaryDistributions& bd) {
  return {{"t_valid", bd.t_valid}, {"start", bd.start}, {"end", bd.end}, {"cls", bd.cls}};
}

inline BoundaryDistributions distributions_from_json(const nlohmann::json& doc) {
  for (const char* key : {"t_valid", "start", "end", "cls"}) {
    if (!doc.contains(key)) throw DataError(std::string("probability dump: missing field '") + key + "'");
  }
  BoundaryDistributions bd;
  bd.t_valid = doc["t_valid"].get<std::size_t>();
  bd.start = doc["start"].get<std::vector<double>>();
  bd.end = doc["end"].get<std::vector<double>>();
  bd.cls = doc["cls"].get<std::vector<double>>();
  if (bd.start.size() != bd.end.size() || bd.t_valid > bd.start.size() || bd.t_valid == 0) {
    throw DataError("probability dump: inconsistent lengths");
  }
  return bd;
}

}  // namespace fmital
