#pragma once

// Synthetic identities on the unit sphere with an embedding-space
// degradation model: a degraded frame has a random subset of its
// coordinates replaced by noise before normalization, so the damage is
// local to those dimensions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "fagg/core.hpp"
#include "fagg/rng.hpp"

namespace fagg {

struct SynthConfig {
  std::size_t dim = 64;
  std::size_t num_identities = 50;
  std::size_t sets_per_identity = 20;
  std::size_t frames_min = 4;
  std::size_t frames_max = 12;
  double intra_class_sigma = 0.1;
  double degrade_fraction = 0.5;       // probability that a frame is degraded
  double corrupt_dims_fraction = 0.5;  // share of coordinates replaced in a degraded frame
  double corrupt_noise_sigma = 1.0;
  std::uint64_t rng_seed = 1;
};

inline void validate(const SynthConfig& c) {
  if (c.dim == 0 || c.num_identities == 0 || c.sets_per_identity == 0)
    throw Error(ErrorCode::InvalidArgument, "dim, identities and sets per identity must be >= 1");
  if (c.frames_min == 0 || c.frames_min > c.frames_max)
    throw Error(ErrorCode::InvalidArgument, "frame range must satisfy 1 <= min <= max");
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(c.degrade_fraction) || !in_unit(c.corrupt_dims_fraction))
    throw Error(ErrorCode::InvalidArgument, "fractions must lie in [0, 1]");
  if (!(c.intra_class_sigma >= 0.0) || !(c.corrupt_noise_sigma >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "noise levels must be >= 0");
}

struct LabeledCorpus {
  std::vector<FeatureSet> sets;
  Matrix identity_centroids;  // C x M; empty when read back from disk

  std::size_t dim() const noexcept { return sets.empty() ? identity_centroids.cols() : sets.front().dim(); }

  /// Distinct labels in order of first appearance.
  std::vector<std::uint32_t> identities() const {
    std::vector<std::uint32_t> out;
    std::unordered_set<std::uint32_t> seen;
    for (const auto& s : sets)
      if (seen.insert(s.label).second) out.push_back(s.label);
    return out;
  }

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto& s : sets) n += s.size();
    return n;
  }

  bool operator==(const LabeledCorpus&) const = default;
};

namespace detail {

inline void unit_gaussian(Rng& rng, std::span<double> out) {
  double n = 0.0;
  do {
    for (double& x : out) x = rng.normal();
    n = norm(out);
  } while (!(n > 0.0));
  for (double& x : out) x /= n;
}

}  // namespace detail

inline LabeledCorpus generate(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.rng_seed);
  const std::size_t m_dim = cfg.dim;

  LabeledCorpus corpus;
  corpus.identity_centroids = Matrix(cfg.num_identities, m_dim);
  for (std::size_t c = 0; c < cfg.num_identities; ++c)
    detail::unit_gaussian(rng, corpus.identity_centroids.row(c));

  const auto corrupt_count =
      static_cast<std::size_t>(std::lround(cfg.corrupt_dims_fraction * static_cast<double>(m_dim)));
  std::vector<std::size_t> dims(m_dim);

  corpus.sets.reserve(cfg.num_identities * cfg.sets_per_identity);
  for (std::size_t c = 0; c < cfg.num_identities; ++c) {
    const auto centroid = corpus.identity_centroids.row(c);
    for (std::size_t j = 0; j < cfg.sets_per_identity; ++j) {
      const auto k_count = static_cast<std::size_t>(rng.between(cfg.frames_min, cfg.frames_max));
      FeatureSet set;
      set.label = static_cast<std::uint32_t>(c);
      set.set_id = "id" + std::to_string(c) + "_s" + std::to_string(j);
      set.frames = Matrix(k_count, m_dim);
      for (std::size_t k = 0; k < k_count; ++k) {
        auto f = set.frames.row(k);
        for (std::size_t m = 0; m < m_dim; ++m)
          f[m] = centroid[m] + cfg.intra_class_sigma * rng.normal();
        if (rng.uniform() < cfg.degrade_fraction) {
          // partial Fisher-Yates: the first corrupt_count entries are a uniform subset
          std::iota(dims.begin(), dims.end(), std::size_t{0});
          for (std::size_t i = 0; i < corrupt_count; ++i) {
            const auto pick = i + static_cast<std::size_t>(rng.below(m_dim - i));
            std::swap(dims[i], dims[pick]);
            f[dims[i]] = cfg.corrupt_noise_sigma * rng.normal();
          }
        }
        double n = norm(f);
        if (!(n > 0.0)) {
          // every coordinate was replaced by exact zeros; fall back to the centroid
          std::copy(centroid.begin(), centroid.end(), f.begin());
          n = 1.0;
        }
        for (double& x : f) x /= n;
      }
      corpus.sets.push_back(std::move(set));
    }
  }
  return corpus;
}

struct Partition {
  LabeledCorpus train;
  LabeledCorpus test;
};

/// Identity-disjoint k-fold partitions. Identities are taken in order of
/// first appearance and dealt into contiguous folds whose sizes differ by
/// at most one.
inline std::vector<Partition> split(const LabeledCorpus& corpus, std::size_t folds) {
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "need at least two folds");
  const auto ids = corpus.identities();
  if (ids.size() < folds)
    throw Error(ErrorCode::InvalidArgument, std::to_string(ids.size()) +
                                                " identities cannot fill " +
                                                std::to_string(folds) + " folds");
  std::unordered_map<std::uint32_t, std::size_t> fold_of;
  const std::size_t base = ids.size() / folds;
  const std::size_t extra = ids.size() % folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t n = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) fold_of[ids[pos++]] = f;
  }

  std::vector<Partition> parts(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    parts[f].train.identity_centroids = corpus.identity_centroids;
    parts[f].test.identity_centroids = corpus.identity_centroids;
  }
  for (const auto& s : corpus.sets) {
    const std::size_t home = fold_of.at(s.label);
    for (std::size_t f = 0; f < folds; ++f) (f == home ? parts[f].test : parts[f].train).sets.push_back(s);
  }
  return parts;
}

}  // namespace fagg
