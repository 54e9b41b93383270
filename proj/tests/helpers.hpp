#pragma once

#include <algorithm>
#include <numeric>

#include "fagg/core.hpp"
#include "fagg/rng.hpp"

namespace fagg::test {

inline FeatureVector unit_vector(Rng& rng, std::size_t dim) {
  FeatureVector v(dim);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

inline FeatureSet random_set(Rng& rng, std::size_t frames, std::size_t dim, bool unit = true) {
  std::vector<FeatureVector> rows;
  for (std::size_t k = 0; k < frames; ++k) {
    if (unit) {
      rows.push_back(unit_vector(rng, dim));
    } else {
      FeatureVector v(dim);
      for (double& x : v) x = 2.0 * rng.normal();
      rows.push_back(v);
    }
  }
  return FeatureSet::from_frames(rows);
}

inline FeatureSet permuted(const FeatureSet& s, const std::vector<std::size_t>& order) {
  std::vector<FeatureVector> rows;
  for (std::size_t k : order) rows.emplace_back(s.frame(k).begin(), s.frame(k).end());
  return FeatureSet::from_frames(rows, s.label, s.set_id);
}

inline std::vector<std::size_t> random_order(Rng& rng, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace fagg::test
