#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fmital/boundary_head.hpp"
#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/numerics.hpp"
#include "fmital/rng.hpp"

namespace fmital {

struct LabelConfig {
  double sigma_pct = 0.1;
  double noise_level = 0.01;
  double noise_threshold = 0.01;
  double epsilon = 1e-8;
  int smooth_window = 3;

  void validate() const {
    if (!(sigma_pct > 0)) throw UsageError("label: sigma_pct must be > 0");
    if (!(noise_level >= 0)) throw UsageError("label: noise_level must be >= 0");
    if (!(noise_threshold >= 0 && noise_threshold <= 1)) throw UsageError("label: noise_threshold must lie in [0, 1]");
    if (!(epsilon > 0)) throw UsageError("label: epsilon must be > 0");
    if (smooth_window < 1 || smooth_window % 2 == 0) throw UsageError("label: smooth_window must be odd and >= 1");
  }
};

/// Where each segment's Gaussian is centred. kMidpoint is the label
/// generator as published; kStart / kEnd supervise the boundaries.
enum class Anchor { kMidpoint, kStart, kEnd };

/// Centred moving average; windows are truncated at the edges and divided
/// by the number of in-range samples.
inline std::vector<double> smooth(const std::vector<double>& p, int window) {
  if (window <= 1) return p;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(p.size());
  std::vector<double> out(p.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - half), hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (auto j = lo; j <= hi; ++j) acc += p[j];
    out[i] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// Gaussian label distribution over `length` steps. For each segment
/// (s, e): width w = e - s + 1, sigma = w * sigma_pct, centre per `anchor`.
/// The accumulated Gaussians are smoothed, normalised, receive uniform
/// noise in [0, noise_level) where below noise_threshold, and are
/// normalised again.
inline std::vector<double> generate_label(std::size_t length, const std::vector<Segment>& segments,
                                          const LabelConfig& cfg, Rng& rng, Anchor anchor = Anchor::kMidpoint) {
  cfg.validate();
  if (length < 1) throw UsageError("label: length must be >= 1");
  std::vector<double> p(length, 0.0);
  for (const auto& seg : segments) {
    if (seg.start < 0 || seg.end < seg.start || seg.end >= static_cast<int>(length)) {
      throw DataError("label: segment [" + std::to_string(seg.start) + ", " + std::to_string(seg.end) +
                      "] outside length " + std::to_string(length));
    }
    const double w = seg.end - seg.start + 1;
    const double sigma = w * cfg.sigma_pct;
    const double mu = anchor == Anchor::kStart ? seg.start
                      : anchor == Anchor::kEnd ? seg.end
                                               : (seg.start + seg.end) / 2.0;
    for (std::size_t i = 0; i < length; ++i) {
      const double z = (static_cast<double>(i) - mu) / sigma;
      p[i] += std::exp(-0.5 * z * z);
    }
  }
  p = smooth(p, cfg.smooth_window);
  auto normalize = [&] {
    double total = 0.0;
    for (double v : p) total += v;
    for (double& v : p) v /= total + cfg.epsilon;
  };
  normalize();
  for (std::size_t i = 0; i < length; ++i) {
    const double noise = rng.uniform(0.0, cfg.noise_level);
    if (p[i] < cfg.noise_threshold) p[i] += noise;
  }
  normalize();
  return p;
}

/// Start/end targets of length t_max; zero beyond t_valid.
struct LabelPair {
  std::vector<double> start;
  std::vector<double> end;
};

inline LabelPair make_label_pair(std::size_t t_valid, std::size_t t_max, const std::vector<Segment>& segments,
                                 const LabelConfig& cfg, Rng& rng) {
  if (t_valid > t_max) throw DataError("label: t_valid exceeds t_max");
  LabelPair labels{generate_label(t_valid, segments, cfg, rng, Anchor::kStart),
                   generate_label(t_valid, segments, cfg, rng, Anchor::kEnd)};
  labels.start.resize(t_max, 0.0);
  labels.end.resize(t_max, 0.0);
  return labels;
}

inline void check_distribution(std::span<const double> p, double tol, const char* what) {
  double total = 0.0;
  for (double v : p) total += v;
  if (std::abs(total - 1.0) > tol) {
    throw DataError(std::string(what) + " does not sum to 1 (sum = " + std::to_string(total) + ")");
  }
}

/// sum_i target_i * ln((target_i + eps) / (pred_i + eps)).
inline double kl_loss(std::span<const double> pred, std::span<const double> target, double eps) {
  if (pred.size() != target.size()) throw ShapeError("kl_loss: length mismatch");
  check_distribution(pred, 1e-5, "kl_loss prediction");
  check_distribution(target, 1e-5, "kl_loss target");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] == 0.0) continue;
    acc += target[i] * std::log((target[i] + eps) / (pred[i] + eps));
  }
  return acc;
}

/// Mean absolute difference.
inline double l1_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("l1_loss: length mismatch");
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

namespace detail {

// ln(sigmoid(z)), stable for large |z|.
inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

/// Binary focal loss averaged over the first t_valid positions. For
/// foreground steps p_t = sigmoid(z) and alpha_t = alpha; for background
/// p_t = 1 - sigmoid(z) and alpha_t = 1 - alpha. If `grad` is non-null it
/// receives d(loss)/d(logit), zero beyond t_valid.
inline double focal_loss(std::span<const double> logits, const std::vector<bool>& foreground, std::size_t t_valid,
                         const FocalParams& fp, std::vector<double>* grad = nullptr) {
  if (logits.size() != foreground.size()) throw ShapeError("focal_loss: length mismatch");
  if (t_valid < 1 || t_valid > logits.size()) throw DataError("focal_loss: t_valid out of range");
  if (grad) grad->assign(logits.size(), 0.0);
  double acc = 0.0;
  const double inv_n = 1.0 / static_cast<double>(t_valid);
  for (std::size_t i = 0; i < t_valid; ++i) {
    const bool fg = foreground[i];
    // Signed logit so that p_t = sigmoid(zt) for either label.
    const double zt = fg ? logits[i] : -logits[i];
    const double alpha_t = fg ? fp.alpha : 1.0 - fp.alpha;
    const double log_pt = detail::log_sigmoid(zt);
    const double pt = detail::sigmoid(zt);
    const double q = 1.0 - pt;
    const double mod = fp.gamma == 0.0 ? 1.0 : std::pow(q, fp.gamma);
    acc += -alpha_t * mod * log_pt;
    if (grad) {
      // d/dzt of -alpha_t q^g ln(pt), with dpt/dzt = pt q.
      const double mod_lower = fp.gamma == 0.0 ? 0.0 : fp.gamma * std::pow(q, fp.gamma) * pt * log_pt;
      const double d_zt = alpha_t * (mod_lower - mod * q);
      (*grad)[i] = (fg ? d_zt : -d_zt) * inv_n;
    }
  }
  return acc * inv_n;
}

struct LossWeights {
  double alpha = 0.4;  // KL terms
  double beta = 0.4;   // L1 terms
  double gamma = 0.2;  // classification term

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw UsageError("loss weights must be non-negative");
    if (std::abs(alpha + beta + gamma - 1.0) > 1e-9) {
      throw UsageError("loss weights must sum to 1 (alpha + beta + gamma = " +
                       std::to_string(alpha + beta + gamma) + ")");
    }
  }
};

struct LossBreakdown {
  double total = 0.0;
  double kl_start = 0.0, kl_end = 0.0;
  double l1_start = 0.0, l1_end = 0.0;
  double cls = 0.0;
  // Gradients with respect to the head logits, length t_max.
  std::vector<double> grad_start, grad_end, grad_cls;
};

namespace detail {

// Gradient of alpha * KL(target || softmax(z)) + beta * L1(softmax(z), target)
// with respect to z over the valid prefix.
inline std::vector<double> boundary_logit_grad(const std::vector<double>& p, const std::vector<double>& t,
                                               std::size_t t_valid, double eps, double alpha, double beta) {
  std::vector<double> g(p.size(), 0.0);
  // KL: dL/dp_i = -t_i / (p_i + eps); through the softmax Jacobian this is
  // p_k * (sum_i t_i p_i / (p_i + eps)) - t_k p_k / (p_k + eps), which is
  // p_k - t_k when eps = 0.
  double kl_mix = 0.0, l1_mix = 0.0;
  std::vector<double> sgn(t_valid);
  for (std::size_t i = 0; i < t_valid; ++i) {
    kl_mix += t[i] * p[i] / (p[i] + eps);
    const double diff = p[i] - t[i];
    sgn[i] = diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0;
    l1_mix += sgn[i] * p[i];
  }
  const double inv_n = 1.0 / static_cast<double>(t_valid);
  for (std::size_t k = 0; k < t_valid; ++k) {
    const double kl = p[k] * kl_mix - t[k] * p[k] / (p[k] + eps);
    const double l1 = inv_n * p[k] * (sgn[k] - l1_mix);
    g[k] = alpha * kl + beta * l1;
  }
  return g;
}

}  // namespace detail

/// alpha (KL_s + KL_e) + beta (L1_s + L1_e) + gamma * focal, over the valid
/// prefix, with gradients with respect to the three logit vectors.
inline LossBreakdown total_loss(const BoundaryDistributions& bd, const LabelPair& labels,
                                const std::vector<bool>& foreground, const LossWeights& w,
                                const FocalParams& focal = {}, double eps = 1e-8) {
  w.validate();
  const std::size_t tv = bd.t_valid, tm = bd.t_max();
  if (labels.start.size() != tm || labels.end.size() != tm || foreground.size() != tm || bd.end.size() != tm ||
      bd.cls.size() != tm) {
    throw ShapeError("total_loss: inconsistent lengths");
  }
  auto valid = [tv](const std::vector<double>& v) { return std::span<const double>(v.data(), tv); };
  LossBreakdown out;
  out.kl_start = kl_loss(valid(bd.start), valid(labels.start), eps);
  out.kl_end = kl_loss(valid(bd.end), valid(labels.end), eps);
  out.l1_start = l1_loss(valid(bd.start), valid(labels.start));
  out.l1_end = l1_loss(valid(bd.end), valid(labels.end));
  out.cls = focal_loss(bd.cls, foreground, tv, focal, &out.grad_cls);
  out.total = w.alpha * (out.kl_start + out.kl_end) + w.beta * (out.l1_start + out.l1_end) + w.gamma * out.cls;
  out.grad_start = detail::boundary_logit_grad(bd.start, labels.start, tv, eps, w.alpha, w.beta);
  out.grad_end = detail::boundary_logit_grad(bd.end, labels.end, tv, eps, w.alpha, w.beta);
  for (double& g : out.grad_cls) g *= w.gamma;
  return out;
}

/// One precomputed training example for the heads.
struct TrainingSample {
  MaskedSequence sequence;
  LabelPair labels;
  std::vector<bool> foreground;  // length t_max
};

inline std::vector<bool> foreground_mask(const Episode& ep, std::size_t t_max) {
  std::vector<bool> fg(t_max, false);
  for (const auto& gt : ep.ground_truth) {
    for (int i = gt.segment.start; i <= gt.segment.end && i < static_cast<int>(t_max); ++i) fg[i] = true;
  }
  return fg;
}

inline std::vector<Segment> segments_of(const Episode& ep) {
  std::vector<Segment> out;
  for (const auto& gt : ep.ground_truth) out.push_back(gt.segment);
  return out;
}

inline TrainingSample make_training_sample(const Episode& ep, const Array& h_dec, std::size_t t_max,
                                           const LabelConfig& cfg, Rng& rng) {
  TrainingSample s;
  s.sequence = mask_to_tmax(h_dec, t_max);
  s.labels = make_label_pair(ep.query.t(), t_max, segments_of(ep), cfg, rng);
  s.foreground = foreground_mask(ep, t_max);
  return s;
}

struct TrainConfig {
  int steps = 500;
  double lr = 0.5;
  LossWeights weights;
  FocalParams focal;
  double epsilon = 1e-8;
};

struct LossRecord {
  int step = 0;
  double total = 0.0, kl_start = 0.0, kl_end = 0.0, l1_start = 0.0, l1_end = 0.0, cls = 0.0;
};

struct TrainResult {
  HeadParams params;
  std::vector<LossRecord> trace;  // loss before each update
};

namespace detail {

inline void accumulate_head_grad(const MaskedSequence& seq, const std::vector<double>& g, LinearHead& acc,
                                 double scale) {
  for (std::size_t t = 0; t < seq.t_valid; ++t) {
    if (g[t] == 0.0) continue;
    const auto row = seq.v.slice(t);
    const double gt = g[t] * scale;
    for (std::size_t j = 0; j < row.size(); ++j) acc.weight[j] += gt * row[j];
    acc.bias += gt;
  }
}

inline void descend(LinearHead& head, const LinearHead& grad, double lr) {
  for (std::size_t j = 0; j < head.weight.size(); ++j) head.weight[j] -= lr * grad.weight[j];
  head.bias -= lr * grad.bias;
}

}  // namespace detail

/// Mean loss and parameter gradient over `samples`, reduced in sample order.
inline LossRecord evaluate_heads(std::span<const TrainingSample> samples, const HeadParams& params,
                                 const TrainConfig& cfg, HeadParams* grad = nullptr) {
  LossRecord rec;
  if (grad) {
    const std::size_t dm = params.start.weight.size();
    *grad = HeadParams{{std::vector<double>(dm), 0.0}, {std::vector<double>(dm), 0.0}, {std::vector<double>(dm), 0.0}};
  }
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto bd = boundary_scores(s.sequence, params);
    const auto loss = total_loss(bd, s.labels, s.foreground, cfg.weights, cfg.focal, cfg.epsilon);
    rec.total += loss.total * scale;
    rec.kl_start += loss.kl_start * scale;
    rec.kl_end += loss.kl_end * scale;
    rec.l1_start += loss.l1_start * scale;
    rec.l1_end += loss.l1_end * scale;
    rec.cls += loss.cls * scale;
    if (grad) {
      detail::accumulate_head_grad(s.sequence, loss.grad_start, grad->start, scale);
      detail::accumulate_head_grad(s.sequence, loss.grad_end, grad->end, scale);
      detail::accumulate_head_grad(s.sequence, loss.grad_cls, grad->cls, scale);
    }
  }
  return rec;
}

/// Plain gradient descent on the three heads; the decoder features in the
/// samples are fixed.
inline TrainResult train_heads(std::span<const TrainingSample> samples, HeadParams params, const TrainConfig& cfg) {
  if (cfg.steps < 1) throw UsageError("train_heads: steps must be >= 1");
  if (!(cfg.lr >= 0)) throw UsageError("train_heads: lr must be >= 0");
  if (samples.empty()) throw UsageError("train_heads: no training samples");
  cfg.weights.validate();
  TrainResult result;
  HeadParams grad;
  for (int step = 0; step < cfg.steps; ++step) {
    LossRecord rec = evaluate_heads(samples, params, cfg, &grad);
    rec.step = step;
    if (!std::isfinite(rec.total)) {
      throw NumericalError("train_heads: non-finite loss at step " + std::to_string(step));
    }
    result.trace.push_back(rec);
    detail::descend(params.start, grad.start, cfg.lr);
    detail::descend(params.end, grad.end, cfg.lr);
    detail::descend(params.cls, grad.cls, cfg.lr);
  }
  result.params = std::move(params);
  return result;
}

inline std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,total,kl_start,kl_end,l1_start,l1_end,cls\n";
  for (const auto& r : trace) {
    os << r.step << ',' << r.total << ',' << r.kl_start << ',' << r.kl_end << ',' << r.l1_start << ','
       << r.l1_end << ',' << r.cls << '\n';
  }
  return os.str();
}

}  // namespace fmital
