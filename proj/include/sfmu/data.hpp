#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sfmu/errors.hpp"
#include "sfmu/linalg.hpp"

namespace sfmu {

using Index = std::uint32_t;
using IndexList = std::vector<Index>;

inline constexpr std::string_view kFeatureMagic = "SFUFEAT1";
inline constexpr std::string_view kResidualMagic = "SFUJRES1";
inline constexpr std::string_view kModelMagic = "SFUMODL1";
inline constexpr std::string_view kHessianMagic = "SFUHESS1";

/// n labeled feature vectors. Features are held as doubles; every value
/// loaded from the float32 container is exactly representable, so a
/// save/load cycle is bit-exact.
struct FeatureDataset {
  Index n = 0;
  Index d = 0;
  Index k = 0;
  Matrix features;  // n x d
  std::vector<Index> labels;
  bool normalized = false;
  double scale = 1.0;  // factor applied to every row when normalized

  auto row(Index i) const { return features.row(i); }

  void validate() const {
    if (features.rows() != n || features.cols() != d || labels.size() != n) {
      throw DimensionMismatch("FeatureDataset: shape does not match header");
    }
    for (Index i = 0; i < n; ++i) {
      if (labels[i] >= k) {
        throw LabelOutOfRange("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                              " is not < k=" + std::to_string(k));
      }
    }
  }

  double max_row_norm() const { return n == 0 ? 0.0 : features.rowwise().norm().maxCoeff(); }

  /// Global rescale so that max_i |x_i|_2 <= 1.
  void normalize_rows() {
    const double m = max_row_norm();
    if (m > 1.0) {
      features /= m;
      scale /= m;
    }
    normalized = true;
  }
};

struct SplitSpec {
  IndexList train_idx;
  IndexList test_idx;
  IndexList forget_idx;
  IndexList retain_idx;

  std::size_t n_train() const { return train_idx.size(); }
  std::size_t n_forget() const { return forget_idx.size(); }
};

namespace detail {

// Little-endian encoding, independent of host byte order.
template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(p[b]) << (8 * b);
  return v;
}

inline void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_f64(std::string& out, double f) { put_le(out, std::bit_cast<std::uint64_t>(f)); }

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || std::string_view(bytes_).substr(0, magic.size()) != magic) {
      throw BadMagic(path_ + ": expected magic \"" + std::string(magic) + "\"");
    }
    pos_ = magic.size();
  }

  std::uint32_t u32() { return get_le<std::uint32_t>(take(4)); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>(take(4))); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }

  void need(std::uint64_t count) const {
    if (bytes_.size() - pos_ < count) {
      throw TruncatedFile(path_ + ": need " + std::to_string(count) + " more bytes at offset " +
                          std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
    }
  }

 private:
  const unsigned char* take(std::size_t count) {
    need(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += count;
    return p;
  }

  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_features(const FeatureDataset& ds) {
  ds.validate();
  std::string out(kFeatureMagic);
  detail::put_le<std::uint32_t>(out, ds.n);
  detail::put_le<std::uint32_t>(out, ds.d);
  detail::put_le<std::uint32_t>(out, ds.k);
  for (Index i = 0; i < ds.n; ++i)
    for (Index j = 0; j < ds.d; ++j) detail::put_f32(out, static_cast<float>(ds.features(i, j)));
  for (Index y : ds.labels) detail::put_le<std::uint32_t>(out, y);
  return out;
}

inline FeatureDataset decode_features(std::string bytes, const std::string& origin = "<memory>") {
  detail::Reader r(std::move(bytes), origin);
  r.expect_magic(kFeatureMagic);
  FeatureDataset ds;
  ds.n = r.u32();
  ds.d = r.u32();
  ds.k = r.u32();
  r.need(static_cast<std::uint64_t>(ds.n) * ds.d * 4 + static_cast<std::uint64_t>(ds.n) * 4);
  ds.features.resize(ds.n, ds.d);
  for (Index i = 0; i < ds.n; ++i)
    for (Index j = 0; j < ds.d; ++j) ds.features(i, j) = r.f32();
  ds.labels.resize(ds.n);
  for (Index i = 0; i < ds.n; ++i) ds.labels[i] = r.u32();
  ds.validate();
  return ds;
}

inline FeatureDataset load_features(const std::filesystem::path& path, bool normalize = false) {
  auto ds = decode_features(detail::read_file(path), path.string());
  if (normalize) ds.normalize_rows();
  return ds;
}

inline void save_features(const std::filesystem::path& path, const FeatureDataset& ds) {
  detail::write_file(path, encode_features(ds));
}

/// Number of forget samples for a fraction: nearest integer, ties upward.
inline std::size_t forget_count(std::size_t n_train, double forget_fraction) {
  return static_cast<std::size_t>(std::floor(forget_fraction * static_cast<double>(n_train) + 0.5));
}

inline SplitSpec make_split(IndexList train_idx, IndexList test_idx, double forget_fraction, std::uint64_t seed) {
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) {
    throw FractionOutOfRange("forget fraction must lie in (0,1), got " + std::to_string(forget_fraction));
  }
  const std::size_t n_f = forget_count(train_idx.size(), forget_fraction);
  if (n_f < 1 || n_f >= train_idx.size()) {
    throw FractionOutOfRange("forget fraction " + std::to_string(forget_fraction) + " of " +
                             std::to_string(train_idx.size()) + " training samples gives n_f=" +
                             std::to_string(n_f));
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  IndexList shuffled = train_idx;
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  SplitSpec s;
  s.forget_idx.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_f));
  s.retain_idx.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_f), shuffled.end());
  std::sort(s.forget_idx.begin(), s.forget_idx.end());
  std::sort(s.retain_idx.begin(), s.retain_idx.end());
  s.train_idx = std::move(train_idx);
  s.test_idx = std::move(test_idx);
  return s;
}

/// Split a single dataset: optionally hold out test_fraction of all samples
/// as test, then draw the forget set from the remaining training indices.
inline SplitSpec make_split(const FeatureDataset& ds, double forget_fraction, std::uint64_t seed,
                            double test_fraction = 0.0) {
  IndexList all(ds.n);
  std::iota(all.begin(), all.end(), Index{0});
  IndexList test;
  if (test_fraction > 0.0) {
    if (test_fraction >= 1.0) throw FractionOutOfRange("test fraction must be < 1");
    std::mt19937_64 rng(seed ^ 0x7e57'0000'0000'0000ULL);
    std::shuffle(all.begin(), all.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * ds.n + 0.5));
    test.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_test));
    all.erase(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_test));
  }
  return make_split(std::move(all), std::move(test), forget_fraction, seed);
}

// Split files: newline-delimited decimal indices.
inline void save_index_file(const std::filesystem::path& path, const IndexList& idx) {
  std::string out;
  for (Index i : idx) out += std::to_string(i) + "\n";
  detail::write_file(path, out);
}

inline IndexList load_index_file(const std::filesystem::path& path) {
  std::istringstream in(detail::read_file(path));
  IndexList idx;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(line, &used);
      if (v > UINT32_MAX) throw std::out_of_range("index");
      idx.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": bad index line \"" + line + "\"");
    }
  }
  return idx;
}

inline void save_split(const std::filesystem::path& dir, const SplitSpec& s) {
  save_index_file(dir / "train.idx", s.train_idx);
  save_index_file(dir / "test.idx", s.test_idx);
  save_index_file(dir / "forget.idx", s.forget_idx);
  save_index_file(dir / "retain.idx", s.retain_idx);
}

inline SplitSpec load_split(const std::filesystem::path& dir, Index n) {
  SplitSpec s;
  s.train_idx = load_index_file(dir / "train.idx");
  s.test_idx = load_index_file(dir / "test.idx");
  s.forget_idx = load_index_file(dir / "forget.idx");
  s.retain_idx = load_index_file(dir / "retain.idx");
  for (const auto* list : {&s.train_idx, &s.test_idx, &s.forget_idx, &s.retain_idx})
    for (Index i : *list)
      if (i >= n) throw DataError(dir.string() + ": index " + std::to_string(i) + " out of range");
  IndexList merged = s.forget_idx;
  merged.insert(merged.end(), s.retain_idx.begin(), s.retain_idx.end());
  std::sort(merged.begin(), merged.end());
  IndexList train = s.train_idx;
  std::sort(train.begin(), train.end());
  if (merged != train || std::adjacent_find(merged.begin(), merged.end()) != merged.end()) {
    throw DataError(dir.string() + ": forget and retain do not partition train");
  }
  return s;
}

// Model / Hessian persistence (64-bit floats).
inline std::string encode_model(const Vector& w) {
  std::string out(kModelMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) detail::put_f64(out, w(i));
  return out;
}

inline Vector decode_model(std::string bytes, const std::string& origin = "<memory>") {
  detail::Reader r(std::move(bytes), origin);
  r.expect_magic(kModelMagic);
  const std::uint32_t p = r.u32();
  r.need(static_cast<std::uint64_t>(p) * 8);
  Vector w(p);
  for (std::uint32_t i = 0; i < p; ++i) w(i) = r.f64();
  return w;
}

inline std::string encode_hessian(const SymMatrix& h) {
  std::string out(kHessianMagic);
  const auto p = static_cast<std::uint32_t>(h.dim());
  detail::put_le<std::uint32_t>(out, p);
  detail::put_le<std::uint32_t>(out, p);
  for (std::uint32_t i = 0; i < p; ++i)
    for (std::uint32_t j = 0; j < p; ++j) detail::put_f64(out, h(i, j));
  return out;
}

inline SymMatrix decode_hessian(std::string bytes, const std::string& origin = "<memory>") {
  detail::Reader r(std::move(bytes), origin);
  r.expect_magic(kHessianMagic);
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (rows != cols) throw DataError(origin + ": Hessian is not square");
  r.need(static_cast<std::uint64_t>(rows) * cols * 8);
  Matrix m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f64();
  return SymMatrix(std::move(m));
}

inline void save_model(const std::filesystem::path& path, const Vector& w) { detail::write_file(path, encode_model(w)); }
inline Vector load_model(const std::filesystem::path& path) {
  return decode_model(detail::read_file(path), path.string());
}
inline void save_hessian(const std::filesystem::path& path, const SymMatrix& h) {
  detail::write_file(path, encode_hessian(h));
}
inline SymMatrix load_hessian(const std::filesystem::path& path) {
  return decode_hessian(detail::read_file(path), path.string());
}

}  // namespace sfmu
