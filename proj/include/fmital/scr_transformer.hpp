#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/numerics.hpp"
#include "fmital/rng.hpp"

namespace fmital {

struct ScrConfig {
  std::size_t n = 16;        // patches per frame
  std::size_t d = 64;        // feature channels
  std::size_t d_model = 64;  // transformer width
  std::size_t heads = 4;
  std::size_t layers = 2;    // encoder and decoder depth
  std::size_t ffn_mult = 4;
  std::size_t reduce_kernel = 5;  // temporal taps of the reducing convolution (odd)
  bool use_sca = true;
  bool use_icd = true;
  bool positional_encoding = false;  // sinusoidal positions on encoder input and decoder memory
  bool shared_streams = true;  // one SCA/ICD parameter set for query and support

  void validate() const {
    if (n < 1 || d < 2 || d % 2 != 0) throw UsageError("scr: need n >= 1 and even d >= 2");
    if (d_model < 2 || d_model % 2 != 0) throw UsageError("scr: d_model must be even");
    if (heads < 1 || d_model % heads != 0) throw UsageError("scr: d_model must be divisible by heads");
    if (reduce_kernel < 1 || reduce_kernel % 2 == 0) throw UsageError("scr: reduce_kernel must be odd");
  }
};

/// y = x . weight + bias over the last axis.
struct Affine {
  Array weight;  // [d_in, d_out]
  Array bias;    // [d_out]

  Array operator()(const Array& x) const { return affine(x, weight, bias); }
};

struct ScaParams {
  Affine query, key, value;
  Array gamma = Array({1});  // learnable residual scale, zero at init

  float scale() const { return gamma.values()[0]; }
};

struct IcdParams {
  Array fuse_kernel;  // [d, d], pointwise channel fusion
  Affine lin_in, lin_out;
};

struct ReduceParams {
  Array kernel;  // [taps, n * d, d_model]
  Array bias;    // [d_model]
};

struct AttentionParams {
  Affine query, key, value, out;
};

struct FeedForwardParams {
  Affine in, out;
};

struct EncoderLayer {
  AttentionParams self_attention;
  FeedForwardParams feed_forward;
};

struct DecoderLayer {
  AttentionParams self_attention;
  AttentionParams cross_attention;
  FeedForwardParams feed_forward;
};

struct FrtParams {
  ReduceParams reduce;
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  std::size_t heads = 4;
  bool positional_encoding = false;  // sinusoidal positions on encoder input and decoder memory
};

struct ScrParams {
  ScrConfig config;
  ScaParams sca;
  IcdParams icd;
  std::optional<ScaParams> sca_support;  // set when streams are not shared
  std::optional<IcdParams> icd_support;
  FrtParams frt;

  const ScaParams& support_sca() const { return sca_support ? *sca_support : sca; }
  const IcdParams& support_icd() const { return icd_support ? *icd_support : icd; }

  /// Calls f(name, array) for every parameter array in checkpoint order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    auto aff = [&](const std::string& p, auto& a) {
      f(p + ".weight", a.weight);
      f(p + ".bias", a.bias);
    };
    auto sca = [&](const std::string& p, auto& s) {
      aff(p + ".query", s.query);
      aff(p + ".key", s.key);
      aff(p + ".value", s.value);
      f(p + ".gamma", s.gamma);
    };
    auto icd = [&](const std::string& p, auto& s) {
      f(p + ".fuse", s.fuse_kernel);
      aff(p + ".lin_in", s.lin_in);
      aff(p + ".lin_out", s.lin_out);
    };
    auto attn = [&](const std::string& p, auto& a) {
      aff(p + ".query", a.query);
      aff(p + ".key", a.key);
      aff(p + ".value", a.value);
      aff(p + ".out", a.out);
    };
    sca("sca", self.sca);
    icd("icd", self.icd);
    if (self.sca_support) sca("sca_support", *self.sca_support);
    if (self.icd_support) icd("icd_support", *self.icd_support);
    f(std::string("reduce.kernel"), self.frt.reduce.kernel);
    f(std::string("reduce.bias"), self.frt.reduce.bias);
    for (std::size_t i = 0; i < self.frt.encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      attn(p + ".self", self.frt.encoder[i].self_attention);
      aff(p + ".ffn.in", self.frt.encoder[i].feed_forward.in);
      aff(p + ".ffn.out", self.frt.encoder[i].feed_forward.out);
    }
    for (std::size_t i = 0; i < self.frt.decoder.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      attn(p + ".self", self.frt.decoder[i].self_attention);
      attn(p + ".cross", self.frt.decoder[i].cross_attention);
      aff(p + ".ffn.in", self.frt.decoder[i].feed_forward.in);
      aff(p + ".ffn.out", self.frt.decoder[i].feed_forward.out);
    }
  }
};

/// Collects every attention distribution produced during a forward pass.
/// Each map is [groups, rows, cols]: frames for spatial attention, heads
/// for temporal attention.
struct AttentionTrace {
  std::vector<std::pair<std::string, Array>> maps;
};

struct ScrOutput {
  Array h_dec;  // [T, d_model]
};

namespace detail {

inline Affine init_affine(Rng& rng, std::size_t d_in, std::size_t d_out) {
  Affine a{Array({d_in, d_out}), Array({d_out})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (float& w : a.weight.values()) w = static_cast<float>(rng.uniform(-bound, bound));
  return a;
}

inline ScaParams init_sca(Rng& rng, std::size_t d) {
  ScaParams p;
  p.query = init_affine(rng, d, d);
  p.key = init_affine(rng, d, d);
  p.value = init_affine(rng, d, d);
  return p;
}

inline IcdParams init_icd(Rng& rng, std::size_t d) {
  IcdParams p;
  p.fuse_kernel = init_affine(rng, d, d).weight;
  p.lin_in = init_affine(rng, d, d);
  p.lin_out = init_affine(rng, d, d);
  return p;
}

inline AttentionParams init_attention(Rng& rng, std::size_t dm) {
  return {init_affine(rng, dm, dm), init_affine(rng, dm, dm), init_affine(rng, dm, dm),
          init_affine(rng, dm, dm)};
}

inline FeedForwardParams init_ffn(Rng& rng, std::size_t dm, std::size_t hidden) {
  return {init_affine(rng, dm, hidden), init_affine(rng, hidden, dm)};
}

inline void check_layer(const Array& a, const std::string& layer) {
  for (float v : a.values()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite activation in " + layer);
  }
}

}  // namespace detail

/// Scaled-uniform weights (bound 1/sqrt(fan_in)), zero biases, gamma = 0.
inline ScrParams init_scr_params(const ScrConfig& cfg, Rng& rng) {
  cfg.validate();
  ScrParams p;
  p.config = cfg;
  p.sca = detail::init_sca(rng, cfg.d);
  p.icd = detail::init_icd(rng, cfg.d);
  if (!cfg.shared_streams) {
    p.sca_support = detail::init_sca(rng, cfg.d);
    p.icd_support = detail::init_icd(rng, cfg.d);
  }
  const std::size_t flat = cfg.n * cfg.d;
  p.frt.reduce.kernel = Array({cfg.reduce_kernel, flat, cfg.d_model});
  p.frt.reduce.bias = Array({cfg.d_model});
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.reduce_kernel * flat));
  for (float& w : p.frt.reduce.kernel.values()) w = static_cast<float>(rng.uniform(-bound, bound));
  p.frt.heads = cfg.heads;
  p.frt.positional_encoding = cfg.positional_encoding;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    EncoderLayer layer;
    layer.self_attention = detail::init_attention(rng, cfg.d_model);
    layer.feed_forward = detail::init_ffn(rng, cfg.d_model, cfg.ffn_mult * cfg.d_model);
    p.frt.encoder.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    DecoderLayer layer;
    layer.self_attention = detail::init_attention(rng, cfg.d_model);
    layer.cross_attention = detail::init_attention(rng, cfg.d_model);
    layer.feed_forward = detail::init_ffn(rng, cfg.d_model, cfg.ffn_mult * cfg.d_model);
    p.frt.decoder.push_back(std::move(layer));
  }
  return p;
}

/// Per-frame self-attention across the N patches (Eqs. 1-4):
/// out = gamma * softmax(Q K^T / sqrt(D)) V + x, with Q, K, V projected from
/// x plus a temporal sinusoidal encoding shared by all patches of a frame.
inline Array spatial_contextual_aggregation(const Array& x, const ScaParams& p,
                                            AttentionTrace* trace = nullptr) {
  if (x.rank() != 3) throw ShapeError("sca: expected [T, N, D], got " + shape_string(x.shape()));
  const std::size_t t = x.extent(0), n = x.extent(1), d = x.extent(2);
  if (p.query.weight.extent(0) != d) {
    throw ShapeError("sca: input channels " + std::to_string(d) + " vs params " +
                     std::to_string(p.query.weight.extent(0)));
  }
  if (p.scale() == 0.0 && trace == nullptr) return x;  // gamma * AV vanishes
  Array embedded = x;
  const Array pe = sinusoidal_pe(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < d; ++c) embedded.at(i, j, c) += pe.at(i, c);
    }
  }
  const Array q = p.query(embedded), k = p.key(embedded), v = p.value(embedded);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double gamma = p.scale();

  Array out = x;
  Array weights({t, n, n});
  std::vector<double> scores(n), acc(d);
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t e = 0; e < d; ++e) s += static_cast<double>(q.at(f, r, e)) * k.at(f, c, e);
        scores[c] = s * inv_sqrt_d;
      }
      const auto a = softmax(std::span<const double>(scores), std::vector<bool>(n, true));
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t c = 0; c < n; ++c) {
        weights.at(f, r, c) = static_cast<float>(a[c]);
        for (std::size_t e = 0; e < d; ++e) acc[e] += a[c] * v.at(f, c, e);
      }
      for (std::size_t e = 0; e < d; ++e) {
        out.at(f, r, e) = static_cast<float>(gamma * acc[e] + x.at(f, r, e));
      }
    }
  }
  if (trace) trace->maps.emplace_back("sca", std::move(weights));
  detail::check_layer(out, "spatial contextual aggregation");
  return out;
}

struct IcdResult {
  Array output;         // x + channel_term
  Array channel_term;   // lin_out(ReLU(lin_in(Y)))
};

/// Channel fusion (pointwise conv over D per patch) followed by a two-layer
/// ReLU MLP and a residual connection (Eqs. 5-7).
inline IcdResult inter_channel_dependency_terms(const Array& x, const IcdParams& p) {
  if (x.rank() != 3) throw ShapeError("icd: expected [T, N, D], got " + shape_string(x.shape()));
  const std::size_t d = x.extent(2);
  if (p.fuse_kernel.rank() != 2 || p.fuse_kernel.extent(0) != d || p.fuse_kernel.extent(1) != d) {
    throw ShapeError("icd: fuse kernel " + shape_string(p.fuse_kernel.shape()) + " vs channels " +
                     std::to_string(d));
  }
  const Array flat = x.reshaped({x.extent(0) * x.extent(1), d});
  const Array fused = conv1x1(flat, p.fuse_kernel);
  Array term = p.lin_out(relu(p.lin_in(fused))).reshaped(x.shape());
  Array out = add(x, term);
  detail::check_layer(out, "inter-channel dependency");
  return {std::move(out), std::move(term)};
}

inline Array inter_channel_dependency(const Array& x, const IcdParams& p) {
  return inter_channel_dependency_terms(x, p).output;
}

/// Flattens each frame's [N, D] plane and applies a temporal convolution
/// with `taps` taps (zero padded, centred) down to d_model channels.
/// One tap is a pointwise map.
inline Array reduce_spatial(const Array& x, const ReduceParams& p) {
  if (x.rank() != 3) throw ShapeError("reduce: expected [T, N, D], got " + shape_string(x.shape()));
  const std::size_t t = x.extent(0), flat = x.extent(1) * x.extent(2);
  if (p.kernel.rank() != 3 || p.kernel.extent(1) != flat || p.kernel.extent(0) % 2 == 0) {
    throw ShapeError("reduce: kernel " + shape_string(p.kernel.shape()) + " vs frame size " +
                     std::to_string(flat));
  }
  const std::size_t taps = p.kernel.extent(0), dm = p.kernel.extent(2);
  if (p.bias.size() != dm) throw ShapeError("reduce: bias length mismatch");
  const auto half = static_cast<std::ptrdiff_t>(taps / 2);
  const float* kernel = p.kernel.values().data();

  Array out({t, dm});
  std::vector<double> acc(dm);
  for (std::size_t i = 0; i < t; ++i) {
    std::copy(p.bias.values().begin(), p.bias.values().end(), acc.begin());
    for (std::size_t tap = 0; tap < taps; ++tap) {
      const auto src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(tap) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      const auto frame = x.slice(static_cast<std::size_t>(src));
      const float* w = kernel + tap * flat * dm;
      for (std::size_t k = 0; k < flat; ++k) {
        const double xv = frame[k];
        if (xv == 0.0) continue;
        const float* wk = w + k * dm;
        for (std::size_t j = 0; j < dm; ++j) acc[j] += xv * wk[j];
      }
    }
    auto row = out.slice(i);
    for (std::size_t j = 0; j < dm; ++j) row[j] = static_cast<float>(acc[j]);
  }
  detail::check_layer(out, "reduce");
  return out;
}

/// Multi-head scaled dot-product attention of `queries` [Tq, dm] over
/// `memory` [Tk, dm]. Rows of each head's weights are recorded when a trace
/// is supplied.
inline Array multi_head_attention(const Array& queries, const Array& memory, const AttentionParams& p,
                                  std::size_t heads, AttentionTrace* trace = nullptr,
                                  const std::string& name = "attention") {
  if (queries.rank() != 2 || memory.rank() != 2 || queries.extent(1) != memory.extent(1)) {
    throw ShapeError(name + ": query " + shape_string(queries.shape()) + " vs memory " +
                     shape_string(memory.shape()));
  }
  const std::size_t tq = queries.extent(0), tk = memory.extent(0), dm = queries.extent(1);
  if (heads == 0 || dm % heads != 0) throw ShapeError(name + ": d_model not divisible by heads");
  const std::size_t dh = dm / heads;
  const Array q = p.query(queries), k = p.key(memory), v = p.value(memory);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Array mixed({tq, dm});
  Array weights({heads, tq, tk});
  std::vector<double> scores(tk);
  const std::vector<bool> all(tk, true);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += static_cast<double>(q.at(i, off + e)) * k.at(j, off + e);
        scores[j] = s * inv_sqrt;
      }
      const auto a = softmax(std::span<const double>(scores), all);
      for (std::size_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < tk; ++j) acc += a[j] * v.at(j, off + e);
        mixed.at(i, off + e) = static_cast<float>(acc);
      }
      for (std::size_t j = 0; j < tk; ++j) weights.at(h, i, j) = static_cast<float>(a[j]);
    }
  }
  if (trace) trace->maps.emplace_back(name, std::move(weights));
  return p.out(mixed);
}

inline Array feed_forward(const Array& x, const FeedForwardParams& p) { return p.out(relu(p.in(x))); }

inline Array with_positions(Array x) {
  const Array pe = sinusoidal_pe(x.extent(0), x.extent(1));
  return add(std::move(x), pe);
}

/// Pre-norm encoder stack over the query sequence, followed by a final
/// layer norm.
inline Array encode(const Array& x, const FrtParams& p, AttentionTrace* trace = nullptr) {
  if (x.rank() != 2) throw ShapeError("encode: expected [T, d_model], got " + shape_string(x.shape()));
  Array h = p.positional_encoding ? with_positions(x) : x;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string name = "encoder layer " + std::to_string(l);
    const Array normed = layer_norm_rows(h);
    h = add(std::move(h), multi_head_attention(normed, normed, p.encoder[l].self_attention, p.heads, trace,
                                               name + " self-attention"));
    h = add(std::move(h), feed_forward(layer_norm_rows(h), p.encoder[l].feed_forward));
    detail::check_layer(h, name);
  }
  return layer_norm_rows(h);
}

/// Pre-norm decoder: the target stream is the encoded query (length T), the
/// memory stream is the reduced support sequence (length T').
inline ScrOutput decode(const Array& h_enc, const Array& y, const FrtParams& p,
                        AttentionTrace* trace = nullptr) {
  if (h_enc.rank() != 2 || y.rank() != 2 || h_enc.extent(1) != y.extent(1)) {
    throw ShapeError("decode: d_model mismatch between " + shape_string(h_enc.shape()) + " and " +
                     shape_string(y.shape()));
  }
  const Array memory = layer_norm_rows(p.positional_encoding ? with_positions(y) : y);
  Array h = h_enc;
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string name = "decoder layer " + std::to_string(l);
    const Array normed = layer_norm_rows(h);
    h = add(std::move(h), multi_head_attention(normed, normed, p.decoder[l].self_attention, p.heads, trace,
                                               name + " self-attention"));
    h = add(std::move(h), multi_head_attention(layer_norm_rows(h), memory, p.decoder[l].cross_attention,
                                               p.heads, trace, name + " cross-attention"));
    h = add(std::move(h), feed_forward(layer_norm_rows(h), p.decoder[l].feed_forward));
    detail::check_layer(h, name);
  }
  return {layer_norm_rows(h)};
}

/// SCA -> ICD -> reduce on one stream, honouring the stage toggles.
inline Array embed_stream(const FeatureTensor& f, const ScaParams& sca, const IcdParams& icd,
                          const ScrParams& params, AttentionTrace* trace) {
  const ScrConfig& cfg = params.config;
  if (f.n() != cfg.n || f.d() != cfg.d) {
    throw ShapeError("scr: features [" + std::to_string(f.n()) + ", " + std::to_string(f.d()) +
                     "] vs model [" + std::to_string(cfg.n) + ", " + std::to_string(cfg.d) + "]");
  }
  Array x = f.array();
  if (cfg.use_sca) x = spatial_contextual_aggregation(x, sca, trace);
  if (cfg.use_icd) x = inter_channel_dependency(x, icd);
  return reduce_spatial(x, params.frt.reduce);
}

inline ScrOutput scr_forward(const Episode& episode, const ScrParams& params, AttentionTrace* trace = nullptr) {
  episode.validate();
  const Array x = embed_stream(episode.query, params.sca, params.icd, params, trace);
  const FeatureTensor support = concat_support(episode.support);
  const Array y = embed_stream(support, params.support_sca(), params.support_icd(), params, trace);
  return decode(encode(x, params.frt, trace), y, params.frt, trace);
}

}  // namespace fmital
