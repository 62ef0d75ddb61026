#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fmital/error.hpp"

namespace fmital {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float32 array. Reductions over its contents are carried
/// out in double precision by the free functions below.
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape) : shape_(std::move(shape)), data_(count(shape_), 0.0f) {}

  Array(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw ShapeError("array data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  /// Contiguous block addressed by the leading index.
  std::span<const float> slice(std::size_t i) const {
    const std::size_t block = block_size();
    return std::span<const float>(data_).subspan(i * block, block);
  }
  std::span<float> slice(std::size_t i) {
    const std::size_t block = block_size();
    return std::span<float>(data_).subspan(i * block, block);
  }

  float& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Array reshaped(Shape shape) const& { return Array(std::move(shape), data_); }
  Array reshaped(Shape shape) && { return Array(std::move(shape), std::move(data_)); }

  friend bool operator==(const Array&, const Array&) = default;

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::size_t block_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  Shape shape_;
  std::vector<float> data_;
};

template <class T>
void ensure_finite(std::span<const T> values, std::string_view where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError("non-finite value at flat index " + std::to_string(i) + " in " +
                           std::string(where));
    }
  }
}

inline const Array& ensure_finite(const Array& a, std::string_view where) {
  ensure_finite(a.values(), where);
  return a;
}

/// Softmax restricted to positions where `valid` is true; every other
/// position is exactly zero. Stabilised by subtracting the valid maximum.
template <class T>
std::vector<double> softmax(std::span<const T> logits, const std::vector<bool>& valid) {
  if (logits.size() != valid.size()) {
    throw ShapeError("softmax: mask length " + std::to_string(valid.size()) +
                     " != input length " + std::to_string(logits.size()));
  }
  ensure_finite(logits, "softmax input");
  double peak = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (valid[i]) peak = std::max(peak, static_cast<double>(logits[i]));
  }
  if (peak == -INFINITY) throw DataError("softmax: no valid positions");

  std::vector<double> out(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!valid[i]) continue;
    out[i] = std::exp(static_cast<double>(logits[i]) - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits, const std::vector<bool>& valid) {
  return softmax(std::span<const double>(logits), valid);
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  return softmax(std::span<const double>(logits), std::vector<bool>(logits.size(), true));
}

/// Mask with the first `count` of `length` positions set.
inline std::vector<bool> prefix_mask(std::size_t length, std::size_t count) {
  std::vector<bool> mask(length, false);
  std::fill_n(mask.begin(), std::min(count, length), true);
  return mask;
}

/// Cosine of the angle between a and b; 0 when either has zero norm.
template <class T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  return cosine_similarity(std::span<const float>(a), std::span<const float>(b));
}

namespace detail {

// out[r, :] = bias + x[r, :] . weight, accumulated in double.
inline void matmul_rows(std::span<const float> x, std::size_t rows, std::size_t d_in,
                        const Array& weight, std::span<const float> bias, std::span<float> out) {
  const std::size_t d_out = weight.extent(1);
  std::vector<double> acc(d_out);
  const float* w = weight.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (bias.empty()) {
      std::fill(acc.begin(), acc.end(), 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), acc.begin());
    }
    const float* xr = x.data() + r * d_in;
    for (std::size_t k = 0; k < d_in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const float* wk = w + k * d_out;
      for (std::size_t j = 0; j < d_out; ++j) acc[j] += xv * wk[j];
    }
    float* o = out.data() + r * d_out;
    for (std::size_t j = 0; j < d_out; ++j) o[j] = static_cast<float>(acc[j]);
  }
}

}  // namespace detail

/// x[..., D_in] . weight[D_in, D_out] + bias[D_out], broadcast over leading axes.
/// An empty bias means zero.
inline Array affine(const Array& x, const Array& weight, std::span<const float> bias) {
  if (x.rank() < 1 || weight.rank() != 2) throw ShapeError("affine: rank mismatch");
  const std::size_t d_in = x.shape().back();
  if (weight.extent(0) != d_in) {
    throw ShapeError("affine: input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t d_out = weight.extent(1);
  if (!bias.empty() && bias.size() != d_out) {
    throw ShapeError("affine: bias length " + std::to_string(bias.size()) + " != " +
                     std::to_string(d_out));
  }
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Array out(out_shape);
  detail::matmul_rows(x.values(), d_in == 0 ? 0 : x.size() / d_in, d_in, weight, bias, out.values());
  ensure_finite(out, "affine");
  return out;
}

inline Array affine(const Array& x, const Array& weight, const Array& bias) {
  return affine(x, weight, bias.values());
}

/// Pointwise (kernel size 1) convolution over the time axis of x[T, D_in].
inline Array conv1x1(const Array& x, const Array& kernel) {
  if (x.rank() != 2) throw ShapeError("conv1x1: expected [T, D_in], got " + shape_string(x.shape()));
  return affine(x, kernel, std::span<const float>{});
}

/// Fixed sinusoidal positional table: pe[t, 2i] = sin(t / 10000^(2i/D)),
/// pe[t, 2i + 1] = cos(same angle).
inline Array sinusoidal_pe(std::size_t length, std::size_t channels) {
  if (length < 1) throw UsageError("sinusoidal_pe: length must be >= 1");
  if (channels < 2 || channels % 2 != 0) {
    throw UsageError("sinusoidal_pe: channel count must be even and >= 2, got " +
                     std::to_string(channels));
  }
  Array pe({length, channels});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < channels / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(channels));
      const double angle = static_cast<double>(t) * freq;
      pe.at(t, 2 * i) = static_cast<float>(std::sin(angle));
      pe.at(t, 2 * i + 1) = static_cast<float>(std::cos(angle));
    }
  }
  return pe;
}

/// Parameter-free layer normalisation of every row of x[R, D].
inline Array layer_norm_rows(const Array& x, double eps = 1e-5) {
  if (x.rank() != 2) throw ShapeError("layer_norm_rows: expected rank 2");
  Array out(x.shape());
  const std::size_t d = x.extent(1);
  for (std::size_t r = 0; r < x.extent(0); ++r) {
    const auto row = x.slice(r);
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.slice(r);
    for (std::size_t j = 0; j < d; ++j) o[j] = static_cast<float>((row[j] - mean) * inv);
  }
  return out;
}

inline Array relu(Array x) {
  for (float& v : x.values()) v = std::max(v, 0.0f);
  return x;
}

inline Array add(Array a, const Array& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  auto bv = b.values();
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  return a;
}

inline Array scale(Array a, float factor) {
  for (float& v : a.values()) v *= factor;
  return a;
}

inline double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
  }
  return m;
}

}  // namespace fmital
