#pragma once

// Additive angular margin classification head, the hand-written backward
// pass through head -> normalization -> aggregation -> attention blocks, and
// a central-difference gradient checker.

#include <cmath>
#include <functional>
#include <numbers>

#include "fagg/attention.hpp"
#include "fagg/rng.hpp"

namespace fagg {

/// Per-class weight rows plus the margin (radians) and logit scale.
/// Logits are s*cos(theta_y + m) for the true class and s*cos(theta_j) otherwise.
struct MarginHead {
  Matrix class_weights;  // C x M
  double margin = 0.5;
  double scale = 64.0;

  std::size_t num_classes() const noexcept { return class_weights.rows(); }
  std::size_t dim() const noexcept { return class_weights.cols(); }

  void renormalize() {
    for (std::size_t c = 0; c < class_weights.rows(); ++c) {
      auto row = class_weights.row(c);
      const double n = norm(row);
      if (n > 0.0)
        for (double& x : row) x /= n;
    }
  }

  bool operator==(const MarginHead&) const = default;
};

struct GradientBundle {
  Matrix d_q1;
  FeatureVector d_b1;
  Matrix d_q2;
  FeatureVector d_b2;
  Matrix d_class_weights;
  double loss_value = 0.0;

  static GradientBundle zeros_like(const AttentionParams& p, const MarginHead& head) {
    GradientBundle g;
    g.d_q1 = Matrix(p.q1.rows(), p.q1.cols());
    g.d_b1.assign(p.b1.size(), 0.0);
    g.d_q2 = Matrix(p.q2.rows(), p.q2.cols());
    g.d_b2.assign(p.b2.size(), 0.0);
    g.d_class_weights = Matrix(head.class_weights.rows(), head.class_weights.cols());
    return g;
  }
};

inline constexpr double kCosineClamp = 1e-7;

inline void validate(const MarginHead& head) {
  if (head.num_classes() == 0 || head.dim() == 0)
    throw Error(ErrorCode::EmptyInput, "margin head has no classes");
  if (!(head.margin >= 0.0 && head.margin < std::numbers::pi / 2))
    throw Error(ErrorCode::InvalidArgument, "margin must lie in [0, pi/2)");
  if (!(head.scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  if (!all_finite(head.class_weights.data()))
    throw Error(ErrorCode::NonFinite, "class weights contain non-finite values");
}

struct MarginLossResult {
  double loss = 0.0;
  FeatureVector d_template;  // dL/dt
  Matrix d_class_weights;    // dL/dW
};

/// Loss and its gradient with respect to the template and the class weights.
/// Class weight rows are normalized inside the loss, so the gradient with
/// respect to W is tangent to each row.
inline MarginLossResult margin_loss_grad(std::span<const double> templ, std::size_t label,
                                         const MarginHead& head) {
  validate(head);
  if (templ.size() != head.dim())
    throw Error(ErrorCode::DimensionMismatch, "template dimension does not match the head");
  if (label >= head.num_classes())
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " >= " +
                                                std::to_string(head.num_classes()) + " classes");
  const std::size_t classes = head.num_classes();
  const double s = head.scale;

  std::vector<double> row_norm(classes), cosine(classes), logits(classes), dz_dcos(classes, s);
  for (std::size_t j = 0; j < classes; ++j) {
    const auto w = head.class_weights.row(j);
    row_norm[j] = norm(w);
    if (!(row_norm[j] > 0.0)) throw Error(ErrorCode::ZeroNorm, "class weight row is zero");
    cosine[j] = dot(w, templ) / row_norm[j];
    logits[j] = s * cosine[j];
  }
  if (head.margin > 0.0) {
    const double c = cosine[label];
    const double lo = -1.0 + kCosineClamp;
    const double hi = 1.0 - kCosineClamp;
    const double cc = std::clamp(c, lo, hi);
    const double theta = std::acos(cc);
    logits[label] = s * std::cos(theta + head.margin);
    // d/dc cos(acos(c) + m) = sin(theta + m) / sin(theta); zero where clamped.
    dz_dcos[label] = (c > lo && c < hi) ? s * std::sin(theta + head.margin) / std::sin(theta) : 0.0;
  }

  MarginLossResult out;
  out.loss = log_sum_exp(logits) - logits[label];
  std::vector<double> prob = logits;
  softmax_inplace(prob);

  out.d_template.assign(head.dim(), 0.0);
  out.d_class_weights = Matrix(classes, head.dim());
  for (std::size_t j = 0; j < classes; ++j) {
    const double g = (prob[j] - (j == label ? 1.0 : 0.0)) * dz_dcos[j];
    if (g == 0.0) continue;
    const auto w = head.class_weights.row(j);
    auto dw = out.d_class_weights.row(j);
    const double inv = 1.0 / row_norm[j];
    for (std::size_t m = 0; m < head.dim(); ++m) {
      const double unit = w[m] * inv;
      out.d_template[m] += g * unit;
      dw[m] = g * (templ[m] - cosine[j] * unit) * inv;
    }
  }
  return out;
}

inline double margin_loss(std::span<const double> templ, std::size_t label, const MarginHead& head) {
  return margin_loss_grad(templ, label, head).loss;
}

/// Analytic gradients of margin_loss(forward(s, p), label, head) with
/// respect to every trainable parameter. Frames are constants.
inline GradientBundle backward(const FeatureSet& s, const AttentionParams& p,
                               const MarginHead& head, std::size_t label) {
  const ForwardTrace tr = forward_trace(s, p);
  MarginLossResult lg = margin_loss_grad(tr.templ, label, head);

  GradientBundle g = GradientBundle::zeros_like(p, head);
  g.loss_value = lg.loss;
  g.d_class_weights = std::move(lg.d_class_weights);

  const std::size_t m_dim = s.dim();
  const std::size_t k_count = s.size();

  // Through normalization: dr = (I - t t^T) dt / |r|.
  const double t_dot = dot(tr.templ, lg.d_template);
  FeatureVector d_r(m_dim);
  for (std::size_t m = 0; m < m_dim; ++m)
    d_r[m] = (lg.d_template[m] - tr.templ[m] * t_dot) / tr.pooled_norm;

  // Through the per-dimension softmax: dE_mk = A_mk * dr_m * (F_km - r_m).
  Matrix d_e(m_dim, k_count);
  for (std::size_t m = 0; m < m_dim; ++m)
    for (std::size_t k = 0; k < k_count; ++k)
      d_e(m, k) = tr.weights.entries(m, k) * d_r[m] * (s.frames(k, m) - tr.pooled[m]);

  if (p.mode == AttentionMode::LinearSingleBlock) {
    for (std::size_t m = 0; m < m_dim; ++m) {
      auto row = g.d_q1.row(m);
      for (std::size_t k = 0; k < k_count; ++k) {
        const double de = d_e(m, k);
        const auto f = s.frame(k);
        for (std::size_t i = 0; i < m_dim; ++i) row[i] += de * f[i];
      }
    }
    return g;
  }

  const std::size_t out_dim = p.q2.rows();
  std::vector<double> d_out(out_dim), d_hidden(m_dim);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (p.mode == AttentionMode::CascadedTanh) {
      for (std::size_t m = 0; m < m_dim; ++m) {
        const double e = tr.significance.entries(m, k);
        d_out[m] = d_e(m, k) * (1.0 - e * e);
      }
    } else {
      double de = 0.0;
      for (std::size_t m = 0; m < m_dim; ++m) de += d_e(m, k);
      const double e = tr.significance.entries(0, k);
      d_out[0] = de * (1.0 - e * e);
    }

    const auto u = tr.hidden.row(k);
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double go = d_out[o];
      if (go == 0.0) continue;
      g.d_b2[o] += go;
      auto dq2 = g.d_q2.row(o);
      const auto q2 = p.q2.row(o);
      for (std::size_t j = 0; j < m_dim; ++j) {
        dq2[j] += go * u[j];
        d_hidden[j] += q2[j] * go;
      }
    }

    const auto f = s.frame(k);
    for (std::size_t j = 0; j < m_dim; ++j) {
      const double dh = d_hidden[j] * (1.0 - u[j] * u[j]);
      if (dh == 0.0) continue;
      g.d_b1[j] += dh;
      auto dq1 = g.d_q1.row(j);
      for (std::size_t i = 0; i < m_dim; ++i) dq1[i] += dh * f[i];
    }
  }
  return g;
}

/// Central-difference gradient of a scalar function.
inline std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

// Trainable parameters in a fixed order: q1, b1, q2, b2, class weights.
// Linear mode exposes only q1 and the class weights.
inline std::vector<double> flatten(const AttentionParams& p, const MarginHead& h) {
  std::vector<double> v(p.q1.data());
  if (p.mode != AttentionMode::LinearSingleBlock) {
    v.insert(v.end(), p.b1.begin(), p.b1.end());
    v.insert(v.end(), p.q2.data().begin(), p.q2.data().end());
    v.insert(v.end(), p.b2.begin(), p.b2.end());
  }
  v.insert(v.end(), h.class_weights.data().begin(), h.class_weights.data().end());
  return v;
}

inline void unflatten(std::span<const double> v, AttentionParams& p, MarginHead& h) {
  auto it = v.begin();
  auto take = [&](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(p.q1.data());
  if (p.mode != AttentionMode::LinearSingleBlock) {
    take(p.b1);
    take(p.q2.data());
    take(p.b2);
  }
  take(h.class_weights.data());
}

inline std::vector<double> flatten(const GradientBundle& g, AttentionMode mode) {
  std::vector<double> v(g.d_q1.data());
  if (mode != AttentionMode::LinearSingleBlock) {
    v.insert(v.end(), g.d_b1.begin(), g.d_b1.end());
    v.insert(v.end(), g.d_q2.data().begin(), g.d_q2.data().end());
    v.insert(v.end(), g.d_b2.begin(), g.d_b2.end());
  }
  v.insert(v.end(), g.d_class_weights.data().begin(), g.d_class_weights.data().end());
  return v;
}

}  // namespace detail

/// Max relative error between backward() and central differences over all
/// trainable parameters.
inline double finite_diff_check(const FeatureSet& s, const AttentionParams& p,
                                const MarginHead& head, std::size_t label, double h) {
  const GradientBundle g = backward(s, p, head, label);
  const std::vector<double> analytic = detail::flatten(g, p.mode);
  const std::vector<double> x0 = detail::flatten(p, head);

  AttentionParams pp = p;
  MarginHead hh = head;
  auto loss_at = [&](std::span<const double> x) {
    detail::unflatten(x, pp, hh);
    return margin_loss(forward(s, pp), label, hh);
  };
  const std::vector<double> numeric = central_difference(loss_at, x0, h);

  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

/// A seeded random problem for gradient checking: unit-norm frames, small
/// random kernels and biases, random unit head rows.
struct GradInstance {
  FeatureSet set;
  AttentionParams params;
  MarginHead head;
  std::size_t label = 0;
};

inline GradInstance random_instance(std::size_t dim, std::size_t frames, std::size_t classes, std::uint64_t seed,
                                    AttentionMode mode = AttentionMode::CascadedTanh, double margin = 0.5,
                                    double scale = 8.0) {
  if (dim == 0 || frames == 0 || classes == 0)
    throw Error(ErrorCode::InvalidArgument, "dim, frames and classes must be >= 1");
  Rng rng(seed);
  auto unit_row = [&](std::span<double> row) {
    double n = 0.0;
    do {
      for (double& x : row) x = rng.normal();
      n = norm(row);
    } while (!(n > 0.0));
    for (double& x : row) x /= n;
  };
  GradInstance g;
  g.set.frames = Matrix(frames, dim);
  for (std::size_t k = 0; k < frames; ++k) unit_row(g.set.frames.row(k));
  g.params = AttentionParams::zeros(dim, mode);
  const double kernel_sd = 1.5 / std::sqrt(static_cast<double>(dim));
  for (double& x : g.params.q1.data()) x = kernel_sd * rng.normal();
  if (mode != AttentionMode::LinearSingleBlock) {
    for (double& x : g.params.b1) x = 0.3 * rng.normal();
    for (double& x : g.params.q2.data()) x = kernel_sd * rng.normal();
    for (double& x : g.params.b2) x = 0.3 * rng.normal();
  }
  g.head.class_weights = Matrix(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) unit_row(g.head.class_weights.row(c));
  g.head.margin = margin;
  g.head.scale = scale;
  g.label = static_cast<std::size_t>(rng.below(classes));
  g.set.label = static_cast<std::uint32_t>(g.label);
  return g;
}

}  // namespace fagg
