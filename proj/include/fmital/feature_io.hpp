#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/numerics.hpp"

namespace fmital {

/// Distinct failure modes of the binary containers.
class FormatError : public DataError {
 public:
  enum class Kind { kIo, kTruncatedHeader, kBadMagic, kBadVersion, kExtentOverflow, kTruncatedPayload };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<unsigned char>& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for '" + path.string() + "'");
  }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> buf, std::string name)
      : buf_(std::move(buf)), name_(std::move(name)) {}

  static Reader open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path.string() + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(buf), path.string());
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& name() const { return name_; }

  void need(std::size_t n, FormatError::Kind kind, const char* what) const {
    if (remaining() < n) {
      throw FormatError(kind, std::string(kind == FormatError::Kind::kTruncatedHeader ? "truncated header"
                                                                                       : "truncated payload") +
                                  " in '" + name_ + "' (" + what + ")");
    }
  }
  std::uint32_t u32(FormatError::Kind kind, const char* what) {
    need(4, kind, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(FormatError::Kind kind, const char* what) {
    need(8, kind, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32(FormatError::Kind::kTruncatedPayload, "values")); }
  double f64() { return std::bit_cast<double>(u64(FormatError::Kind::kTruncatedPayload, "values")); }
  std::string text(std::size_t n, FormatError::Kind kind, const char* what) {
    need(n, kind, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void header(std::string_view magic) {
    need(4 + 4, FormatError::Kind::kTruncatedHeader, "magic/version");
    if (std::memcmp(buf_.data() + pos_, magic.data(), 4) != 0) {
      throw FormatError(FormatError::Kind::kBadMagic,
                        "bad magic in '" + name_ + "' (expected " + std::string(magic) + ")");
    }
    pos_ += 4;
    const auto version = u32(FormatError::Kind::kTruncatedHeader, "version");
    if (version != kFormatVersion) {
      throw FormatError(FormatError::Kind::kBadVersion,
                        "unsupported version " + std::to_string(version) + " in '" + name_ + "'");
    }
  }

 private:
  std::vector<unsigned char> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

// Number of elements for the given extents, or 0 on overflow / absurd size.
inline std::uint64_t checked_count(const std::vector<std::uint64_t>& extents, std::size_t element_bytes) {
  std::uint64_t total = 1;
  for (auto e : extents) {
    if (e != 0 && total > std::numeric_limits<std::uint64_t>::max() / element_bytes / e) return 0;
    total *= e;
  }
  return total;
}

}  // namespace io

/// Feature file layout (little endian):
///   "FMIT" | u32 version = 1 | u32 t | u32 n | u32 d | t*n*d float32, row-major.
inline std::vector<unsigned char> encode_features(const FeatureTensor& f) {
  io::Writer w;
  w.bytes("FMIT", 4);
  w.u32(io::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(f.t()));
  w.u32(static_cast<std::uint32_t>(f.n()));
  w.u32(static_cast<std::uint32_t>(f.d()));
  for (float v : f.array().values()) w.f32(v);
  return w.buffer();
}

inline FeatureTensor decode_features(io::Reader& r) {
  r.header("FMIT");
  const std::uint64_t t = r.u32(FormatError::Kind::kTruncatedHeader, "t");
  const std::uint64_t n = r.u32(FormatError::Kind::kTruncatedHeader, "n");
  const std::uint64_t d = r.u32(FormatError::Kind::kTruncatedHeader, "d");
  const std::uint64_t count = io::checked_count({t, n, d}, 4);
  if (count == 0 && t && n && d) {
    throw FormatError(FormatError::Kind::kExtentOverflow, "extent overflow in '" + r.name() + "'");
  }
  if (count * 4 > r.remaining()) {
    throw FormatError(FormatError::Kind::kTruncatedPayload,
                      "truncated payload in '" + r.name() + "': need " + std::to_string(count * 4) +
                          " bytes, have " + std::to_string(r.remaining()));
  }
  std::vector<float> data(count);
  for (auto& v : data) v = r.f32();
  return FeatureTensor(Array({t, n, d}, std::move(data)));
}

inline void write_features(const std::filesystem::path& path, const FeatureTensor& f) {
  io::Writer w;
  const auto bytes = encode_features(f);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline FeatureTensor read_features(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  return decode_features(r);
}

/// One entry of a parameter checkpoint.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;  // stored as float32 or float64 on disk, see `wide`
  bool wide = false;
};

/// Checkpoint layout (little endian):
///   "FMIP" | u32 version = 1 | u32 count |
///   count x { u32 name_len | name bytes | u32 dtype (0 = f32, 1 = f64) |
///             u32 rank | rank x u32 extent | values }
/// Entries appear in the order given by the writer; see ScrParams::visit and
/// HeadParams::visit for the ordering used by the pipeline.
inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  io::Writer w;
  w.bytes("FMIP", 4);
  w.u32(io::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (Array::count(a.shape) != a.values.size()) throw ShapeError("checkpoint entry '" + a.name + "' shape mismatch");
    w.u32(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.u32(a.wide ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) w.u32(static_cast<std::uint32_t>(e));
    for (double v : a.values) {
      if (a.wide) {
        w.f64(v);
      } else {
        w.f32(static_cast<float>(v));
      }
    }
  }
  w.save(path);
}

inline std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  r.header("FMIP");
  const auto count = r.u32(FormatError::Kind::kTruncatedHeader, "entry count");
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = r.u32(FormatError::Kind::kTruncatedPayload, "name length");
    a.name = r.text(len, FormatError::Kind::kTruncatedPayload, "name");
    const auto dtype = r.u32(FormatError::Kind::kTruncatedPayload, "dtype");
    if (dtype > 1) throw FormatError(FormatError::Kind::kBadVersion, "unknown dtype in '" + r.name() + "'");
    a.wide = dtype == 1;
    const auto rank = r.u32(FormatError::Kind::kTruncatedPayload, "rank");
    std::vector<std::uint64_t> extents(rank);
    for (auto& e : extents) e = r.u32(FormatError::Kind::kTruncatedPayload, "extent");
    const std::size_t width = a.wide ? 8 : 4;
    const auto n = io::checked_count(extents, width);
    if (n == 0 && std::find(extents.begin(), extents.end(), 0) == extents.end()) {
      throw FormatError(FormatError::Kind::kExtentOverflow, "extent overflow in '" + r.name() + "'");
    }
    r.need(n * width, FormatError::Kind::kTruncatedPayload, "values");
    a.shape.assign(extents.begin(), extents.end());
    a.values.resize(n);
    for (auto& v : a.values) v = a.wide ? r.f64() : r.f32();
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace fmital
