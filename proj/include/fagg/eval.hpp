#pragma once

// Verification (TAR@FAR, ROC AUC) and open-set identification (rank-N,
// TPIR@FPIR) metrics over aggregated templates.
//
// Operating points use the empirical step ROC without interpolation. For a
// false-accept level f over n negatives, at most floor(f * n) negatives may
// score strictly above the threshold; the threshold is the smallest score
// satisfying that, which maximizes the accept rate.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>

#include "fagg/core.hpp"
#include "fagg/synth.hpp"

namespace fagg {

enum class Metric { Cosine, L2 };

/// Higher is more similar for both metrics: cosine similarity, or the
/// negated Euclidean distance.
inline double score(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "score operands differ in size");
  if (metric == Metric::Cosine) {
    const double denom = norm(a) * norm(b);
    if (!(denom > 0.0)) throw Error(ErrorCode::ZeroNorm, "cosine of a zero vector");
    return std::clamp(dot(a, b) / denom, -1.0, 1.0);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return -std::sqrt(acc);
}

using Aggregator = std::function<FeatureVector(const FeatureSet&)>;

struct Pair {
  std::string a;
  std::string b;
  bool same = false;
  bool operator==(const Pair&) const = default;
};

struct PairList {
  std::vector<Pair> pairs;
};

struct VerifyResult {
  std::map<double, double> tar_at_far;
  double auc = 0.0;
};

struct IdentifyResult {
  std::map<std::size_t, double> rank_n;
  std::map<double, double> tpir_at_fpir;
};

struct EvalReport {
  std::map<double, double> tar_at_far;
  double auc = 0.0;
  std::map<std::size_t, double> rank_n;
  std::map<double, double> tpir_at_fpir;
};

inline const std::vector<double> kDefaultFarLevels{0.001, 0.01, 0.1};
inline const std::vector<std::size_t> kDefaultRanks{1, 5, 10};
inline const std::vector<double> kDefaultFpirLevels{0.01, 0.1};

namespace detail {

inline std::size_t allowed_false(double level, std::size_t n) {
  if (!(level >= 0.0 && level <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "operating point must lie in [0, 1]");
  // tolerate representation error in level * n (e.g. 0.1 * 30)
  return static_cast<std::size_t>(std::floor(level * static_cast<double>(n) + 1e-9));
}

/// Smallest threshold such that at most floor(level * n) of `impostor`
/// scores are strictly above it. `impostor` must be sorted descending.
inline double operating_threshold(const std::vector<double>& impostor_desc, double level) {
  const std::size_t allowed = allowed_false(level, impostor_desc.size());
  if (allowed >= impostor_desc.size()) return -std::numeric_limits<double>::infinity();
  return impostor_desc[allowed];
}

inline double fraction_above(const std::vector<double>& scores, double t) {
  const auto n = std::count_if(scores.begin(), scores.end(), [t](double x) { return x > t; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

}  // namespace detail

/// Area under the empirical ROC by trapezoidal integration; ties between a
/// positive and a negative count one half.
inline double roc_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty())
    throw Error(ErrorCode::EmptyInput, "AUC needs positive and negative scores");
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double x : pos) all.emplace_back(x, true);
  for (double x : neg) all.emplace_back(x, false);
  std::sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.first > r.first; });

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  double tp = 0, fp = 0, area = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    const double value = all[i].first;
    double dtp = 0, dfp = 0;
    for (; i < all.size() && all[i].first == value; ++i) (all[i].second ? dtp : dfp) += 1;
    area += (dfp / nn) * ((tp + tp + dtp) / (2.0 * np));
    tp += dtp;
    fp += dfp;
  }
  return area;
}

inline VerifyResult verify_scores(const std::vector<double>& pos, const std::vector<double>& neg,
                                  const std::vector<double>& far_levels = kDefaultFarLevels) {
  if (pos.empty() || neg.empty())
    throw Error(ErrorCode::EmptyInput, "verification needs at least one positive and one negative pair");
  std::vector<double> neg_desc = neg;
  std::sort(neg_desc.begin(), neg_desc.end(), std::greater<>());
  VerifyResult out;
  for (double far : far_levels)
    out.tar_at_far[far] = detail::fraction_above(pos, detail::operating_threshold(neg_desc, far));
  out.auc = roc_auc(pos, neg);
  return out;
}

/// Aggregates each distinct set once, L2-normalizes the result, and keys it by set id.
inline std::unordered_map<std::string, FeatureVector> build_templates(
    const std::vector<FeatureSet>& sets, const Aggregator& aggregator) {
  std::unordered_map<std::string, FeatureVector> out;
  for (const auto& s : sets) {
    if (out.count(s.set_id)) throw Error(ErrorCode::InvalidArgument, "duplicate set id '" + s.set_id + "'");
    out.emplace(s.set_id, l2_normalize(aggregator(s)));
  }
  return out;
}

inline VerifyResult verify(const LabeledCorpus& corpus, const PairList& pairs,
                           const Aggregator& aggregator,
                           const std::vector<double>& far_levels = kDefaultFarLevels,
                           Metric metric = Metric::Cosine) {
  const auto templates = build_templates(corpus.sets, aggregator);
  std::vector<double> pos, neg;
  for (const auto& p : pairs.pairs) {
    const auto a = templates.find(p.a);
    const auto b = templates.find(p.b);
    if (a == templates.end() || b == templates.end())
      throw Error(ErrorCode::InvalidArgument, "pair references unknown set '" +
                                                  (a == templates.end() ? p.a : p.b) + "'");
    (p.same ? pos : neg).push_back(score(a->second, b->second, metric));
  }
  return verify_scores(pos, neg, far_levels);
}

/// Identification from a probe x gallery score matrix. A probe is mated when
/// its label occurs in the gallery; all other probes are non-mated and
/// define the FPIR thresholds. The rank of a mated probe is one plus the
/// number of gallery entries scoring strictly higher than its mate.
inline IdentifyResult identify_scores(const Matrix& scores,
                                      const std::vector<std::uint32_t>& gallery_labels,
                                      const std::vector<std::uint32_t>& probe_labels,
                                      const std::vector<std::size_t>& ranks = kDefaultRanks,
                                      const std::vector<double>& fpir_levels = kDefaultFpirLevels) {
  if (gallery_labels.empty()) throw Error(ErrorCode::EmptyInput, "gallery is empty");
  if (scores.rows() != probe_labels.size() || scores.cols() != gallery_labels.size())
    throw Error(ErrorCode::DimensionMismatch, "score matrix does not match probe/gallery counts");
  std::unordered_map<std::uint32_t, std::size_t> mate;
  for (std::size_t g = 0; g < gallery_labels.size(); ++g)
    if (!mate.emplace(gallery_labels[g], g).second)
      throw Error(ErrorCode::InvalidArgument, "gallery identities must be unique");

  std::vector<std::size_t> mated_rank;
  std::vector<double> mated_top;
  std::vector<double> nonmated_top;
  for (std::size_t p = 0; p < probe_labels.size(); ++p) {
    const auto row = scores.row(p);
    const double top = *std::max_element(row.begin(), row.end());
    const auto it = mate.find(probe_labels[p]);
    if (it == mate.end()) {
      nonmated_top.push_back(top);
      continue;
    }
    const double own = row[it->second];
    const auto higher = std::count_if(row.begin(), row.end(), [own](double x) { return x > own; });
    mated_rank.push_back(static_cast<std::size_t>(higher) + 1);
    mated_top.push_back(top);
  }
  if (mated_rank.empty()) throw Error(ErrorCode::EmptyInput, "no mated probes");

  IdentifyResult out;
  const double n_mated = static_cast<double>(mated_rank.size());
  for (std::size_t n : ranks) {
    const auto hits = std::count_if(mated_rank.begin(), mated_rank.end(), [n](std::size_t r) { return r <= n; });
    out.rank_n[n] = static_cast<double>(hits) / n_mated;
  }
  std::sort(nonmated_top.begin(), nonmated_top.end(), std::greater<>());
  for (double fpir : fpir_levels) {
    const double t = detail::operating_threshold(nonmated_top, fpir);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < mated_rank.size(); ++i)
      if (mated_rank[i] == 1 && mated_top[i] > t) ++hits;
    out.tpir_at_fpir[fpir] = static_cast<double>(hits) / n_mated;
  }
  return out;
}

inline IdentifyResult identify(const std::vector<FeatureSet>& gallery, const std::vector<FeatureSet>& probes,
                               const Aggregator& aggregator,
                               const std::vector<std::size_t>& ranks = kDefaultRanks,
                               const std::vector<double>& fpir_levels = kDefaultFpirLevels,
                               Metric metric = Metric::Cosine) {
  if (gallery.empty()) throw Error(ErrorCode::EmptyInput, "gallery is empty");
  std::vector<FeatureVector> g_templates, p_templates;
  std::vector<std::uint32_t> g_labels, p_labels;
  for (const auto& s : gallery) {
    g_templates.push_back(l2_normalize(aggregator(s)));
    g_labels.push_back(s.label);
  }
  for (const auto& s : probes) {
    p_templates.push_back(l2_normalize(aggregator(s)));
    p_labels.push_back(s.label);
  }
  Matrix scores(probes.size(), gallery.size());
  for (std::size_t p = 0; p < probes.size(); ++p)
    for (std::size_t g = 0; g < gallery.size(); ++g) scores(p, g) = score(p_templates[p], g_templates[g], metric);
  return identify_scores(scores, g_labels, p_labels, ranks, fpir_levels);
}

/// Every unordered pair of distinct sets, labelled by identity agreement.
inline PairList all_pairs(const std::vector<FeatureSet>& sets) {
  PairList out;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = i + 1; j < sets.size(); ++j)
      out.pairs.push_back({sets[i].set_id, sets[j].set_id, sets[i].label == sets[j].label});
  return out;
}

/// Randomly drawn positive and negative pairs (without duplicates when the
/// corpus has enough of each kind).
inline PairList sample_pairs(const std::vector<FeatureSet>& sets, std::size_t positives,
                             std::size_t negatives, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = i + 1; j < sets.size(); ++j)
      (sets[i].label == sets[j].label ? pos : neg).emplace_back(i, j);
  auto draw = [&](std::vector<std::pair<std::size_t, std::size_t>>& pool, std::size_t n, bool same,
                  PairList& out) {
    n = std::min(n, pool.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto pick = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[pick]);
      out.pairs.push_back({sets[pool[i].first].set_id, sets[pool[i].second].set_id, same});
    }
  };
  PairList out;
  draw(pos, positives, true, out);
  draw(neg, negatives, false, out);
  return out;
}

/// Throws if the report violates range or monotonicity invariants.
inline void check_report(const EvalReport& r) {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  double prev = -1.0;
  for (const auto& [far, tar] : r.tar_at_far) {
    if (!in_unit(tar) || tar < prev) throw Error(ErrorCode::InvalidArgument, "TAR must be in [0,1] and nondecreasing in FAR");
    prev = tar;
  }
  prev = -1.0;
  for (const auto& [n, acc] : r.rank_n) {
    if (!in_unit(acc) || acc < prev) throw Error(ErrorCode::InvalidArgument, "rank-N must be in [0,1] and nondecreasing in N");
    prev = acc;
  }
  for (const auto& [fpir, tpir] : r.tpir_at_fpir)
    if (!in_unit(tpir)) throw Error(ErrorCode::InvalidArgument, "TPIR must be in [0,1]");
  if (!in_unit(r.auc)) throw Error(ErrorCode::InvalidArgument, "AUC must be in [0,1]");
}

namespace detail {

inline std::string fmt_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt_level(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

/// Machine-readable `metric<TAB>value` lines.
inline std::string to_key_values(const VerifyResult& v) {
  std::ostringstream os;
  for (const auto& [far, tar] : v.tar_at_far)
    os << "tar@far=" << detail::fmt_level(far) << '\t' << detail::fmt_value(tar) << '\n';
  os << "auc\t" << detail::fmt_value(v.auc) << '\n';
  return os.str();
}

inline std::string to_key_values(const IdentifyResult& r) {
  std::ostringstream os;
  for (const auto& [n, acc] : r.rank_n) os << "rank-" << n << '\t' << detail::fmt_value(acc) << '\n';
  for (const auto& [fpir, tpir] : r.tpir_at_fpir)
    os << "tpir@fpir=" << detail::fmt_level(fpir) << '\t' << detail::fmt_value(tpir) << '\n';
  return os.str();
}

inline std::string to_table(const VerifyResult& v) {
  std::ostringstream os;
  os << "  FAR        TAR\n";
  for (const auto& [far, tar] : v.tar_at_far) {
    char line[64];
    std::snprintf(line, sizeof line, "  %-9g  %.4f\n", far, tar);
    os << line;
  }
  os << "  AUC        " << detail::fmt_value(v.auc) << '\n';
  return os.str();
}

inline std::string to_table(const IdentifyResult& r) {
  std::ostringstream os;
  char line[64];
  os << "  rank   accuracy\n";
  for (const auto& [n, acc] : r.rank_n) {
    std::snprintf(line, sizeof line, "  %-5zu  %.4f\n", n, acc);
    os << line;
  }
  os << "  FPIR       TPIR\n";
  for (const auto& [fpir, tpir] : r.tpir_at_fpir) {
    std::snprintf(line, sizeof line, "  %-9g  %.4f\n", fpir, tpir);
    os << line;
  }
  return os.str();
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mean and population standard deviation across folds.
inline MeanStd summarize(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "nothing to summarize");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

}  // namespace fagg
