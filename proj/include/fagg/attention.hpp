#pragma once

// Dimension-wise attention aggregation.
//
// Each frame F_k is mapped to a significance vector E_k (one score per
// feature dimension). A softmax over frames, taken separately for every
// dimension, yields the weight matrix A, and the template is the
// element-wise weighted sum r_m = sum_k A_mk F_km followed by L2
// normalization.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "fagg/core.hpp"

namespace fagg {

enum class AttentionMode : std::uint8_t {
  /// E_k = Q1 F_k. Only q1 is used.
  LinearSingleBlock = 0,
  /// E_k = tanh(Q2 tanh(Q1 F_k + b1) + b2).
  CascadedTanh = 1,
  /// Frame-level baseline built from the same blocks: a single score
  /// e_k = tanh(q2 . tanh(Q1 F_k + b1) + b2) shared by all dimensions.
  /// q2 is 1 x M and b2 has length 1.
  FrameTanh = 2,
};

inline const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::LinearSingleBlock: return "linear";
    case AttentionMode::CascadedTanh: return "cascaded";
    case AttentionMode::FrameTanh: return "frame";
  }
  return "unknown";
}

inline AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "linear") return AttentionMode::LinearSingleBlock;
  if (name == "cascaded") return AttentionMode::CascadedTanh;
  if (name == "frame") return AttentionMode::FrameTanh;
  throw Error(ErrorCode::InvalidArgument, "unknown attention mode '" + name + "'");
}

struct AttentionParams {
  AttentionMode mode = AttentionMode::CascadedTanh;
  Matrix q1;
  FeatureVector b1;
  Matrix q2;
  FeatureVector b2;

  std::size_t dim() const noexcept { return q1.cols(); }

  /// All-zero parameters of the right shape for `mode`.
  static AttentionParams zeros(std::size_t dim, AttentionMode mode) {
    AttentionParams p;
    p.mode = mode;
    p.q1 = Matrix(dim, dim);
    p.b1.assign(dim, 0.0);
    const std::size_t out = mode == AttentionMode::FrameTanh ? 1 : dim;
    p.q2 = Matrix(out, dim);
    p.b2.assign(out, 0.0);
    return p;
  }

  bool operator==(const AttentionParams&) const = default;
};

/// M x K matrix; column k is the significance vector of frame k.
struct SignificanceMatrix {
  Matrix entries;
  std::size_t dim() const noexcept { return entries.rows(); }
  std::size_t frames() const noexcept { return entries.cols(); }
};

/// M x K matrix of positive weights; every row sums to one.
struct WeightMatrix {
  Matrix entries;
  std::size_t dim() const noexcept { return entries.rows(); }
  std::size_t frames() const noexcept { return entries.cols(); }
};

inline void validate(const AttentionParams& p) {
  const std::size_t m = p.q1.rows();
  if (m == 0 || p.q1.cols() != m)
    throw Error(ErrorCode::DimensionMismatch, "q1 must be a non-empty square matrix");
  const std::size_t out = p.mode == AttentionMode::FrameTanh ? 1 : m;
  if (p.b1.size() != m || p.q2.rows() != out || p.q2.cols() != m || p.b2.size() != out)
    throw Error(ErrorCode::DimensionMismatch,
                std::string("parameter shapes do not match mode ") + to_string(p.mode));
  if (!all_finite(p.q1.data()) || !all_finite(p.b1) || !all_finite(p.q2.data()) ||
      !all_finite(p.b2))
    throw Error(ErrorCode::NonFinite, "attention parameters contain non-finite values");
  if (p.mode == AttentionMode::LinearSingleBlock) {
    auto is_zero = [](std::span<const double> v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (!is_zero(p.b1) || !is_zero(p.q2.data()) || !is_zero(p.b2))
      throw Error(ErrorCode::InvalidArgument, "linear mode requires b1, q2 and b2 to be zero");
  }
}

namespace detail {

// y = W x + b   (b may be empty)
inline void affine(const Matrix& w, std::span<const double> x, std::span<const double> b,
                   std::span<double> y) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = b.empty() ? 0.0 : b[i];
    const auto row = w.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

}  // namespace detail

/// Intermediate tensors of one forward pass, kept for backpropagation.
struct ForwardTrace {
  Matrix hidden;  // K x M, first block output tanh(Q1 F_k + b1); empty in linear mode
  SignificanceMatrix significance;
  WeightMatrix weights;
  FeatureVector pooled;    // r
  double pooled_norm = 0;  // |r|
  FeatureVector templ;     // r / |r|
};

namespace detail {

inline SignificanceMatrix significance_impl(const FeatureSet& s, const AttentionParams& p,
                                            Matrix* hidden) {
  validate(s);
  validate(p);
  if (s.dim() != p.dim())
    throw Error(ErrorCode::DimensionMismatch, "frame dimension " + std::to_string(s.dim()) +
                                                  " does not match parameters " +
                                                  std::to_string(p.dim()));
  const std::size_t m = s.dim();
  const std::size_t k_count = s.size();
  SignificanceMatrix e{Matrix(m, k_count)};
  std::vector<double> h(m), out(p.q2.rows());
  if (hidden && p.mode != AttentionMode::LinearSingleBlock) *hidden = Matrix(k_count, m);

  for (std::size_t k = 0; k < k_count; ++k) {
    const auto f = s.frame(k);
    if (p.mode == AttentionMode::LinearSingleBlock) {
      affine(p.q1, f, {}, h);
      for (std::size_t i = 0; i < m; ++i) e.entries(i, k) = h[i];
      continue;
    }
    affine(p.q1, f, p.b1, h);
    for (double& x : h) x = std::tanh(x);
    if (hidden) std::copy(h.begin(), h.end(), hidden->row(k).begin());
    affine(p.q2, h, p.b2, out);
    if (p.mode == AttentionMode::CascadedTanh) {
      for (std::size_t i = 0; i < m; ++i) e.entries(i, k) = std::tanh(out[i]);
    } else {
      const double score = std::tanh(out[0]);
      for (std::size_t i = 0; i < m; ++i) e.entries(i, k) = score;
    }
  }
  return e;
}

}  // namespace detail

inline SignificanceMatrix significance(const FeatureSet& s, const AttentionParams& p) {
  return detail::significance_impl(s, p, nullptr);
}

/// Row-wise softmax over frames.
inline WeightMatrix weights_from_significance(const SignificanceMatrix& e) {
  if (!all_finite(e.entries.data()))
    throw Error(ErrorCode::NonFinite, "significance matrix has non-finite entries");
  WeightMatrix a{e.entries};
  for (std::size_t m = 0; m < a.dim(); ++m) softmax_inplace(a.entries.row(m));
  return a;
}

inline FeatureVector aggregate(const FeatureSet& s, const WeightMatrix& a) {
  if (a.dim() != s.dim() || a.frames() != s.size())
    throw Error(ErrorCode::DimensionMismatch, "weight matrix shape does not match the feature set");
  FeatureVector r(s.dim(), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto f = s.frame(k);
    for (std::size_t m = 0; m < r.size(); ++m) r[m] += a.entries(m, k) * f[m];
  }
  return r;
}

inline ForwardTrace forward_trace(const FeatureSet& s, const AttentionParams& p) {
  ForwardTrace t;
  t.significance = detail::significance_impl(s, p, &t.hidden);
  t.weights = weights_from_significance(t.significance);
  t.pooled = aggregate(s, t.weights);
  t.pooled_norm = norm(t.pooled);
  t.templ = l2_normalize(t.pooled);
  return t;
}

/// Aggregated, L2-normalized template of a set.
inline FeatureVector forward(const FeatureSet& s, const AttentionParams& p) {
  return forward_trace(s, p).templ;
}

/// Aggregation before normalization (r).
inline FeatureVector forward_unnormalized(const FeatureSet& s, const AttentionParams& p) {
  return aggregate(s, weights_from_significance(significance(s, p)));
}

}  // namespace fagg
