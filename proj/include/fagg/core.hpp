#pragma once

// Basic value types, stable softmax helpers and the reference aggregators
// (average pooling, max pooling, frame-level attention).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fagg {

enum class ErrorCode {
  ZeroNorm,
  DimensionMismatch,
  InvalidArgument,
  LabelOutOfRange,
  EmptyInput,
  NonFinite,
  Divergence,
  BadMagic,
  VersionMismatch,
  Truncated,
  CountMismatch,
  TrailingBytes,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "zero-norm";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::LabelOutOfRange: return "label-out-of-range";
    case ErrorCode::EmptyInput: return "empty-input";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::CountMismatch: return "count-mismatch";
    case ErrorCode::TrailingBytes: return "trailing-bytes";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// One frame embedding (or an aggregated template). Always f64 in memory.
using FeatureVector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n, double scale = 1.0) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A variable-length set of frame embeddings belonging to one identity.
/// Frames are stored as the rows of a K x M matrix.
struct FeatureSet {
  Matrix frames;
  std::uint32_t label = 0;
  std::string set_id;

  std::size_t size() const noexcept { return frames.rows(); }
  std::size_t dim() const noexcept { return frames.cols(); }
  std::span<const double> frame(std::size_t k) const { return frames.row(k); }

  static FeatureSet from_frames(const std::vector<FeatureVector>& rows, std::uint32_t label = 0,
                                std::string set_id = {}) {
    if (rows.empty()) throw Error(ErrorCode::EmptyInput, "feature set needs at least one frame");
    FeatureSet s;
    s.frames = Matrix(rows.size(), rows.front().size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].size() != s.frames.cols())
        throw Error(ErrorCode::DimensionMismatch, "frames must share one dimension");
      std::copy(rows[k].begin(), rows[k].end(), s.frames.row(k).begin());
    }
    s.label = label;
    s.set_id = std::move(set_id);
    return s;
  }

  bool operator==(const FeatureSet&) const = default;
};

/// Kernel of the frame-level attention baseline: one score q.F per frame.
struct NanParams {
  FeatureVector q;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void validate(const FeatureSet& s) {
  if (s.size() == 0 || s.dim() == 0)
    throw Error(ErrorCode::EmptyInput, "feature set '" + s.set_id + "' is empty");
  if (!all_finite(s.frames.data()))
    throw Error(ErrorCode::NonFinite, "feature set '" + s.set_id + "' has non-finite entries");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline FeatureVector l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) throw Error(ErrorCode::NonFinite, "cannot normalize a non-finite vector");
  const double n = norm(v);
  if (!(n > 0.0)) throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero vector");
  FeatureVector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

/// In-place softmax with max subtraction. Every output is strictly positive
/// unless the score spread exceeds the double exponent range.
inline void softmax_inplace(std::span<double> scores) {
  const double hi = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& x : scores) {
    x = std::exp(x - hi);
    total += x;
  }
  for (double& x : scores) x /= total;
}

inline double log_sum_exp(std::span<const double> scores) {
  const double hi = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double x : scores) total += std::exp(x - hi);
  return hi + std::log(total);
}

inline FeatureVector avg_pool(const FeatureSet& s) {
  validate(s);
  FeatureVector out(s.dim(), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto f = s.frame(k);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += f[m];
  }
  const double inv = 1.0 / static_cast<double>(s.size());
  for (double& x : out) x *= inv;
  return out;
}

inline FeatureVector max_pool(const FeatureSet& s) {
  validate(s);
  FeatureVector out(s.frame(0).begin(), s.frame(0).end());
  for (std::size_t k = 1; k < s.size(); ++k) {
    const auto f = s.frame(k);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] = std::max(out[m], f[m]);
  }
  return out;
}

/// Per-frame weights softmax_k(q . F_k).
inline std::vector<double> nan_weights(const FeatureSet& s, const NanParams& p) {
  validate(s);
  if (p.q.size() != s.dim())
    throw Error(ErrorCode::DimensionMismatch, "kernel length must equal the frame dimension");
  std::vector<double> w(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) w[k] = dot(p.q, s.frame(k));
  softmax_inplace(w);
  return w;
}

inline FeatureVector nan_aggregate(const FeatureSet& s, const NanParams& p) {
  const auto w = nan_weights(s, p);
  FeatureVector out(s.dim(), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto f = s.frame(k);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += w[k] * f[m];
  }
  return out;
}

}  // namespace fagg
