#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fagg/grad.hpp"
#include "helpers.hpp"

using namespace fagg;

namespace {

MarginHead head_of(std::vector<FeatureVector> rows, double margin, double scale) {
  MarginHead h;
  h.class_weights = Matrix(rows.size(), rows.front().size());
  for (std::size_t c = 0; c < rows.size(); ++c) std::copy(rows[c].begin(), rows[c].end(), h.class_weights.row(c).begin());
  h.margin = margin;
  h.scale = scale;
  return h;
}

// -log softmax(s * cos)_y written out directly.
double cosine_softmax_ce(const FeatureVector& t, std::size_t label, const MarginHead& h) {
  double total = 0.0, own = 0.0;
  for (std::size_t c = 0; c < h.num_classes(); ++c) {
    const auto w = h.class_weights.row(c);
    const double cosv = dot(w, t) / norm(w);
    total += std::exp(h.scale * cosv);
    if (c == label) own = h.scale * cosv;
  }
  return std::log(total) - own;
}

// Gradient descent step on every trainable parameter.
void descend(GradInstance& g, const GradientBundle& d, double lr) {
  auto step = [lr](std::span<double> p, std::span<const double> dp) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * dp[i];
  };
  step(g.params.q1.data(), d.d_q1.data());
  if (g.params.mode != AttentionMode::LinearSingleBlock) {
    step(g.params.b1, d.d_b1);
    step(g.params.q2.data(), d.d_q2.data());
    step(g.params.b2, d.d_b2);
  }
  step(g.head.class_weights.data(), d.d_class_weights.data());
}

}  // namespace

TEST(MarginLoss, TwoClassClosedForm) {
  const auto h = head_of({{1, 0}, {0, 1}}, 0.0, 1.0);
  EXPECT_NEAR(margin_loss(FeatureVector{1, 0}, 0, h), std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(margin_loss(FeatureVector{1, 0}, 0, h), 0.31326, 1e-5);
}

TEST(MarginLoss, EqualCosinesGiveLogTwo) {
  const auto h = head_of({{1, 0}, {0, 1}}, 0.0, 1.0);
  const auto t = l2_normalize(FeatureVector{1, 1});
  EXPECT_NEAR(margin_loss(t, 0, h), std::log(2.0), 1e-12);
  EXPECT_NEAR(margin_loss(t, 1, h), std::log(2.0), 1e-12);
}

TEST(MarginLoss, MarginIncreasesLoss) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto t = test::unit_vector(rng, 5);
    MarginHead h;
    h.class_weights = Matrix(3, 5);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto u = test::unit_vector(rng, 5);
      std::copy(u.begin(), u.end(), h.class_weights.row(c).begin());
    }
    h.scale = 4.0;
    h.margin = 0.0;
    const double plain = margin_loss(t, 1, h);
    h.margin = 0.3;
    EXPECT_GT(margin_loss(t, 1, h), plain);
  }
}

TEST(MarginLoss, ZeroMarginIsScaledCosineSoftmax) {
  Rng rng(4);
  for (int i = 0; i < 30; ++i) {
    auto g = random_instance(6, 3, 5, 100 + i, AttentionMode::CascadedTanh, 0.0, 1.0 + 10.0 * rng.uniform());
    const auto t = test::unit_vector(rng, 6);
    EXPECT_NEAR(margin_loss(t, g.label, g.head), cosine_softmax_ce(t, g.label, g.head), 1e-9);
  }
}

TEST(MarginLoss, LabelOutOfRange) {
  const auto h = head_of({{1, 0}, {0, 1}}, 0.5, 8.0);
  try {
    margin_loss(FeatureVector{1, 0}, 2, h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(MarginLoss, ClampedCosineStaysFinite) {
  // template equals its class row: cos = 1 exactly, clamped before acos
  const auto h = head_of({{1, 0}, {0, 1}}, 0.5, 8.0);
  const auto r = margin_loss_grad(FeatureVector{1, 0}, 0, h);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (double x : r.d_template) EXPECT_TRUE(std::isfinite(x));
}

TEST(Backward, IdenticalFramesZeroParamsGiveZeroKernelGradient) {
  Rng rng(5);
  const auto u = test::unit_vector(rng, 6);
  const auto s = FeatureSet::from_frames({u, u, u});
  const auto p = AttentionParams::zeros(6, AttentionMode::CascadedTanh);
  auto inst = random_instance(6, 1, 4, 9);
  const auto g = backward(s, p, inst.head, 2);
  for (double x : g.d_q1.data()) EXPECT_EQ(x, 0.0);
  // finite differences agree that the loss is flat in q1
  AttentionParams pp = p;
  auto loss_at = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), pp.q1.data().begin());
    return margin_loss(forward(s, pp), 2, inst.head);
  };
  for (double d : central_difference(loss_at, p.q1.data(), 1e-5)) EXPECT_NEAR(d, 0.0, 1e-9);
}

TEST(Backward, SingleClassHasNoLoss) {
  Rng rng(6);
  auto inst = random_instance(5, 3, 1, 7, AttentionMode::CascadedTanh, 0.0, 1.0);
  const auto g = backward(inst.set, inst.params, inst.head, 0);
  EXPECT_NEAR(g.loss_value, 0.0, 1e-15);
  for (const auto* m : {&g.d_q1, &g.d_q2, &g.d_class_weights})
    for (double x : m->data()) EXPECT_EQ(x, 0.0);
  for (const auto* v : {&g.d_b1, &g.d_b2})
    for (double x : *v) EXPECT_EQ(x, 0.0);
}

TEST(Backward, LossValueMatchesForward) {
  auto inst = random_instance(8, 4, 3, 17);
  const auto g = backward(inst.set, inst.params, inst.head, inst.label);
  EXPECT_NEAR(g.loss_value, margin_loss(forward(inst.set, inst.params), inst.label, inst.head), 1e-14);
}

TEST(FiniteDifference, QuadraticProbe) {
  const std::vector<double> x{3.0};
  const auto d = central_difference([](std::span<const double> v) { return v[0] * v[0]; }, x, 1e-5);
  EXPECT_NEAR(d[0], 6.0, 1e-6);
}

TEST(FiniteDifference, RejectsNonPositiveStep) {
  const std::vector<double> x{1.0};
  EXPECT_THROW(central_difference([](std::span<const double> v) { return v[0]; }, x, 0.0), Error);
}

TEST(FiniteDifference, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-2);
}

TEST(FiniteDifference, SmallSeededInstance) {
  const auto inst = random_instance(8, 3, 4, 1);
  EXPECT_LT(finite_diff_check(inst.set, inst.params, inst.head, inst.label, 1e-5), 1e-4);
}

TEST(FiniteDifference, LargeStepIsWorse) {
  const auto inst = random_instance(8, 3, 4, 1);
  const double fine = finite_diff_check(inst.set, inst.params, inst.head, inst.label, 1e-5);
  const double coarse = finite_diff_check(inst.set, inst.params, inst.head, inst.label, 0.5);
  EXPECT_GT(coarse, fine);
}

// invariants

TEST(GradProperties, GradientCorrectnessGrid) {
  std::uint64_t seed = 1000;
  int instances = 0;
  for (std::size_t m : {4, 8, 16})
    for (std::size_t k : {1, 2, 5})
      for (std::size_t c : {2, 5}) {
        const auto inst = random_instance(m, k, c, seed++);
        const double err = finite_diff_check(inst.set, inst.params, inst.head, inst.label, 1e-5);
        EXPECT_LT(err, 1e-4) << "M=" << m << " K=" << k << " C=" << c;
        ++instances;
      }
  EXPECT_GE(instances, 18);
}

// Per-component check whose tolerance includes the rounding noise of a
// central difference, about eps * |L| / h in absolute terms. Components far
// below that noise (2.5e-7 on a loss of 11 at h = 1e-5) cannot meet a bare
// relative bound.
static void expect_gradient_matches(const GradInstance& inst, double h) {
  const auto analytic = detail::flatten(backward(inst.set, inst.params, inst.head, inst.label), inst.params.mode);
  AttentionParams pp = inst.params;
  MarginHead hh = inst.head;
  auto loss_at = [&](std::span<const double> x) {
    detail::unflatten(x, pp, hh);
    return margin_loss(forward(inst.set, pp), inst.label, hh);
  };
  const auto x0 = detail::flatten(inst.params, inst.head);
  const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::abs(loss_at(x0)) / h;
  const auto numeric = central_difference(loss_at, x0, h);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    EXPECT_LE(std::abs(analytic[i] - numeric[i]), 1e-4 * scale + noise) << "component " << i;
  }
}

TEST(GradProperties, OtherModesAlsoCheckOut) {
  for (auto mode : {AttentionMode::LinearSingleBlock, AttentionMode::FrameTanh})
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      SCOPED_TRACE(std::string(to_string(mode)) + " seed " + std::to_string(seed));
      expect_gradient_matches(random_instance(4 + 2 * (seed % 3), 1 + seed % 5, 2 + seed % 4, seed, mode), 1e-5);
    }
}

TEST(GradProperties, ZeroMarginAlsoChecksOut) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto inst = random_instance(6, 3, 3, seed, AttentionMode::CascadedTanh, 0.0, 4.0);
    EXPECT_LT(finite_diff_check(inst.set, inst.params, inst.head, inst.label, 1e-5), 1e-4);
  }
}

TEST(GradProperties, SmallStepDoesNotIncreaseLoss) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto inst = random_instance(8, 4, 3, 500 + seed);
    const auto g = backward(inst.set, inst.params, inst.head, inst.label);
    descend(inst, g, 1e-3);
    const double after = margin_loss(forward(inst.set, inst.params), inst.label, inst.head);
    EXPECT_LE(after, g.loss_value) << "seed " << seed;
  }
}
