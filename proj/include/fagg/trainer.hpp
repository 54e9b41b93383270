#pragma once

// Mini-batch SGD with momentum over set-sampled batches.
//
// The output block of the aggregator starts at zero, so training begins
// exactly at average pooling. The first block can optionally be warm-started
// as gain * I with a constant bias; with q2 = b2 = 0 this leaves the initial
// forward pass unchanged but breaks the symmetry that otherwise pins every
// aggregation gradient of the cascaded model at zero.

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "fagg/grad.hpp"
#include "fagg/synth.hpp"

namespace fagg {

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::size_t frames_min = 8;  // frames drawn per sampled set
  std::size_t frames_max = 8;
  std::uint64_t rng_seed = 1;
  AttentionMode mode = AttentionMode::CascadedTanh;
  double margin_m = 0.5;
  double scale_s = 8.0;
  double momentum = 0.9;
  double init_hidden_gain = 0.0;  // q1 <- gain * I before the first step
  double init_hidden_bias = 0.0;  // b1 <- bias * 1
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  if (c.batch_size == 0)
    throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  if (c.frames_min == 0 || c.frames_min > c.frames_max)
    throw Error(ErrorCode::InvalidArgument, "frame range must satisfy 1 <= min <= max");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw Error(ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  if (!(c.scale_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  if (!(c.margin_m >= 0.0 && c.margin_m < std::numbers::pi / 2))
    throw Error(ErrorCode::InvalidArgument, "margin must lie in [0, pi/2)");
  if (c.mode == AttentionMode::LinearSingleBlock && (c.init_hidden_gain != 0.0 || c.init_hidden_bias != 0.0))
    throw Error(ErrorCode::InvalidArgument, "linear mode has no hidden block to warm-start");
}

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  bool operator==(const LossRecord&) const = default;
};

/// Complete training state; resuming from it continues bit-identically.
struct Checkpoint {
  AttentionParams params;
  MarginHead head;
  std::size_t epoch = 0;        // completed epochs
  double running_loss = 0.0;    // mean batch loss of the last epoch
  Rng::State rng;
  GradientBundle velocity;      // momentum buffers, shaped like the gradients
  std::vector<std::uint32_t> class_labels;  // head row -> corpus label

  bool operator==(const Checkpoint& o) const {
    return params == o.params && head == o.head && epoch == o.epoch && running_loss == o.running_loss &&
           rng == o.rng && velocity.d_q1 == o.velocity.d_q1 && velocity.d_b1 == o.velocity.d_b1 &&
           velocity.d_q2 == o.velocity.d_q2 && velocity.d_b2 == o.velocity.d_b2 &&
           velocity.d_class_weights == o.velocity.d_class_weights && class_labels == o.class_labels;
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

inline MarginHead random_head(std::size_t classes, std::size_t dim, Rng& rng) {
  MarginHead head;
  head.class_weights = Matrix(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) detail::unit_gaussian(rng, head.class_weights.row(c));
  return head;
}

/// Zero aggregation parameters and a seeded head of random unit rows.
inline std::pair<AttentionParams, MarginHead> init_zero(std::size_t dim, std::size_t classes,
                                                        std::uint64_t seed,
                                                        AttentionMode mode = AttentionMode::CascadedTanh) {
  if (dim == 0 || classes == 0) throw Error(ErrorCode::InvalidArgument, "dim and classes must be >= 1");
  Rng rng(seed);
  return {AttentionParams::zeros(dim, mode), random_head(classes, dim, rng)};
}

namespace detail {

inline std::vector<std::uint32_t> sorted_labels(const LabeledCorpus& corpus) {
  auto ids = corpus.identities();
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline FeatureSet sample_frames(const FeatureSet& src, std::size_t k, Rng& rng, std::vector<std::size_t>& scratch) {
  FeatureSet out;
  out.label = src.label;
  out.frames = Matrix(k, src.dim());
  const std::size_t n = src.size();
  if (k <= n) {
    scratch.resize(n);
    std::iota(scratch.begin(), scratch.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const auto pick = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(scratch[i], scratch[pick]);
      std::copy(src.frame(scratch[i]).begin(), src.frame(scratch[i]).end(), out.frames.row(i).begin());
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      const auto pick = static_cast<std::size_t>(rng.below(n));
      std::copy(src.frame(pick).begin(), src.frame(pick).end(), out.frames.row(i).begin());
    }
  }
  return out;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void momentum_step(std::span<double> param, std::span<double> vel, std::span<const double> grad,
                          double lr, double mu) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = mu * vel[i] + grad[i];
    param[i] -= lr * vel[i];
  }
}

inline bool finite_state(const Checkpoint& c) {
  return all_finite(c.params.q1.data()) && all_finite(c.params.b1) && all_finite(c.params.q2.data()) &&
         all_finite(c.params.b2) && all_finite(c.head.class_weights.data());
}

}  // namespace detail

/// Runs epochs until `ckpt.epoch == target_epochs`, appending per-batch losses.
inline void run_epochs(Checkpoint& ckpt, const LabeledCorpus& corpus, const TrainConfig& cfg,
                       std::size_t target_epochs, std::vector<LossRecord>& history) {
  validate(cfg);
  if (corpus.sets.empty()) throw Error(ErrorCode::EmptyInput, "training corpus is empty");
  if (corpus.dim() != ckpt.params.dim())
    throw Error(ErrorCode::DimensionMismatch, "corpus dimension does not match the parameters");
  ckpt.head.margin = cfg.margin_m;
  ckpt.head.scale = cfg.scale_s;

  std::map<std::uint32_t, std::size_t> class_of;
  for (std::size_t i = 0; i < ckpt.class_labels.size(); ++i) class_of[ckpt.class_labels[i]] = i;
  for (const auto& s : corpus.sets)
    if (!class_of.count(s.label))
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(s.label) + " has no head row");

  Rng rng = Rng::from_state(ckpt.rng);
  std::vector<std::size_t> order(corpus.sets.size()), scratch;
  const bool linear = ckpt.params.mode == AttentionMode::LinearSingleBlock;

  while (ckpt.epoch < target_epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      GradientBundle sum = GradientBundle::zeros_like(ckpt.params, ckpt.head);
      for (std::size_t i = start; i < end; ++i) {
        const FeatureSet& src = corpus.sets[order[i]];
        const auto k = static_cast<std::size_t>(rng.between(cfg.frames_min, cfg.frames_max));
        const FeatureSet sample = detail::sample_frames(src, k, rng, scratch);
        const GradientBundle g = backward(sample, ckpt.params, ckpt.head, class_of.at(src.label));
        sum.loss_value += g.loss_value;
        detail::axpy(1.0, g.d_q1.data(), sum.d_q1.data());
        detail::axpy(1.0, g.d_b1, sum.d_b1);
        detail::axpy(1.0, g.d_q2.data(), sum.d_q2.data());
        detail::axpy(1.0, g.d_b2, sum.d_b2);
        detail::axpy(1.0, g.d_class_weights.data(), sum.d_class_weights.data());
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      const double batch_loss = sum.loss_value * inv;
      if (!std::isfinite(batch_loss))
        throw Error(ErrorCode::Divergence, "non-finite loss at epoch " + std::to_string(ckpt.epoch) +
                                               " batch " + std::to_string(batches));
      for (auto* v : {&sum.d_q1.data(), &sum.d_b1, &sum.d_q2.data(), &sum.d_b2, &sum.d_class_weights.data()})
        for (double& x : *v) x *= inv;

      const double lr = cfg.learning_rate;
      const double mu = cfg.momentum;
      auto& vel = ckpt.velocity;
      detail::momentum_step(ckpt.params.q1.data(), vel.d_q1.data(), sum.d_q1.data(), lr, mu);
      if (!linear) {
        detail::momentum_step(ckpt.params.b1, vel.d_b1, sum.d_b1, lr, mu);
        detail::momentum_step(ckpt.params.q2.data(), vel.d_q2.data(), sum.d_q2.data(), lr, mu);
        detail::momentum_step(ckpt.params.b2, vel.d_b2, sum.d_b2, lr, mu);
      }
      detail::momentum_step(ckpt.head.class_weights.data(), vel.d_class_weights.data(),
                            sum.d_class_weights.data(), lr, mu);
      ckpt.head.renormalize();
      if (!detail::finite_state(ckpt))
        throw Error(ErrorCode::Divergence, "parameters became non-finite at epoch " +
                                               std::to_string(ckpt.epoch) + " batch " + std::to_string(batches));

      history.push_back({ckpt.epoch, batches, batch_loss});
      epoch_loss += batch_loss;
      ++batches;
    }
    ckpt.running_loss = epoch_loss / static_cast<double>(batches);
    ++ckpt.epoch;
  }
  ckpt.rng = rng.state();
}

/// Fresh training state for `corpus`: zero aggregation parameters (plus the
/// optional first-block warm start) and one random head row per label.
inline Checkpoint initial_checkpoint(const LabeledCorpus& corpus, const TrainConfig& cfg) {
  validate(cfg);
  if (corpus.sets.empty()) throw Error(ErrorCode::EmptyInput, "training corpus is empty");
  Checkpoint ckpt;
  ckpt.class_labels = detail::sorted_labels(corpus);
  auto [params, head] = init_zero(corpus.dim(), ckpt.class_labels.size(), cfg.rng_seed, cfg.mode);
  if (cfg.mode != AttentionMode::LinearSingleBlock) {
    params.q1 = Matrix::identity(params.dim(), cfg.init_hidden_gain);
    std::fill(params.b1.begin(), params.b1.end(), cfg.init_hidden_bias);
  }
  ckpt.params = std::move(params);
  ckpt.head = std::move(head);
  ckpt.head.margin = cfg.margin_m;
  ckpt.head.scale = cfg.scale_s;
  ckpt.velocity = GradientBundle::zeros_like(ckpt.params, ckpt.head);
  // a separate stream from the head initialization
  ckpt.rng = Rng(cfg.rng_seed ^ 0x5eedf00dULL).state();
  return ckpt;
}

inline TrainResult train(const LabeledCorpus& corpus, const TrainConfig& cfg) {
  TrainResult out{initial_checkpoint(corpus, cfg), {}};
  run_epochs(out.checkpoint, corpus, cfg, cfg.epochs, out.history);
  return out;
}

/// Continues an interrupted `train` run up to cfg.epochs total epochs.
inline TrainResult resume(Checkpoint ckpt, const LabeledCorpus& corpus, const TrainConfig& cfg) {
  if (ckpt.params.mode != cfg.mode)
    throw Error(ErrorCode::InvalidArgument, "checkpoint mode differs from the configuration");
  TrainResult out{std::move(ckpt), {}};
  run_epochs(out.checkpoint, corpus, cfg, cfg.epochs, out.history);
  return out;
}

/// Runs cfg.epochs further epochs on `corpus` starting from the aggregation
/// parameters of `ckpt`. When the label set matches the checkpoint the head,
/// momentum and random stream carry over, so fine-tuning on the training
/// corpus continues its trajectory exactly. Otherwise a new head is drawn
/// for the new labels and its momentum starts at zero.
inline TrainResult finetune(Checkpoint ckpt, const LabeledCorpus& corpus, const TrainConfig& cfg) {
  validate(cfg);
  if (corpus.sets.empty()) throw Error(ErrorCode::EmptyInput, "fine-tuning corpus is empty");
  if (corpus.dim() != ckpt.params.dim())
    throw Error(ErrorCode::DimensionMismatch, "corpus dimension " + std::to_string(corpus.dim()) +
                                                  " does not match parameters " +
                                                  std::to_string(ckpt.params.dim()));
  const auto labels = detail::sorted_labels(corpus);
  if (labels != ckpt.class_labels) {
    Rng head_rng(cfg.rng_seed);
    ckpt.head = random_head(labels.size(), corpus.dim(), head_rng);
    ckpt.velocity.d_class_weights = Matrix(labels.size(), corpus.dim());
    ckpt.class_labels = labels;
  }
  TrainResult out{std::move(ckpt), {}};
  run_epochs(out.checkpoint, corpus, cfg, out.checkpoint.epoch + cfg.epochs, out.history);
  return out;
}

inline std::string format_history(const std::vector<LossRecord>& history) {
  std::string out;
  char line[96];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%zu\t%zu\t%.9g\n", r.epoch, r.batch, r.loss);
    out += line;
  }
  return out;
}

}  // namespace fagg
