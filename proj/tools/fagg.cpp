// fagg: command-line front end for corpus generation, training, aggregation
// and evaluation. Metrics go to stdout, diagnostics to stderr.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fagg/config.hpp"
#include "fagg/eval.hpp"
#include "fagg/io.hpp"

namespace {

using namespace fagg;

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(v > 0.0 && v <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "bad level '" + item + "', expected a number in (0, 1]");
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty level list");
  return out;
}

std::vector<std::size_t> parse_ranks(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos || std::stoull(item) == 0)
      throw Error(ErrorCode::InvalidArgument, "bad rank '" + item + "', expected a positive integer");
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty rank list");
  return out;
}

Metric parse_metric(const std::string& name) {
  if (name == "cosine") return Metric::Cosine;
  if (name == "l2") return Metric::L2;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + name + "'");
}

// Parameters for train/finetune given either a .fagp or a .fagc file.
Checkpoint load_start_point(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, std::string_view(kCheckpointMagic, 4)) == 0)
    return decode_checkpoint(bytes);
  auto pf = decode_params(bytes);
  Checkpoint c;
  c.params = std::move(pf.params);
  c.head = std::move(pf.head);
  c.velocity = GradientBundle::zeros_like(c.params, c.head);
  // head rows of a bare parameter file carry no label list; mark as unknown so
  // finetune draws a fresh head
  c.class_labels.clear();
  return c;
}

// Single-template sets read back from a templates file.
FeatureVector first_frame(const FeatureSet& s) {
  if (s.size() != 1)
    throw Error(ErrorCode::InvalidArgument, "set '" + s.set_id + "' has " + std::to_string(s.size()) +
                                                " frames; templates must have exactly one");
  auto f = s.frame(0);
  return FeatureVector(f.begin(), f.end());
}

Aggregator make_aggregator(const std::string& method, const std::optional<ParamsFile>& pf) {
  if (method == "avg") return [](const FeatureSet& s) { return avg_pool(s); };
  if (method == "max") return [](const FeatureSet& s) { return max_pool(s); };
  if (!pf) throw Error(ErrorCode::InvalidArgument, "--method " + method + " needs --params");
  const AttentionParams p = pf->params;
  if (method == "attn") return [p](const FeatureSet& s) { return forward(s, p); };
  if (method == "nan") {
    if (p.mode == AttentionMode::FrameTanh) return [p](const FeatureSet& s) { return forward(s, p); };
    if (p.mode == AttentionMode::LinearSingleBlock) {
      // a linear kernel with identical rows is exactly a frame-level kernel q
      for (std::size_t r = 1; r < p.q1.rows(); ++r)
        if (!std::equal(p.q1.row(r).begin(), p.q1.row(r).end(), p.q1.row(0).begin()))
          throw Error(ErrorCode::InvalidArgument, "--method nan needs a linear kernel with identical rows");
      NanParams q{FeatureVector(p.q1.row(0).begin(), p.q1.row(0).end())};
      return [q](const FeatureSet& s) { return nan_aggregate(s, q); };
    }
    throw Error(ErrorCode::InvalidArgument, "--method nan needs frame or linear parameters");
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + method + "'");
}

void print_history(const std::vector<LossRecord>& history) { std::cout << format_history(history); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"set aggregation with dimension-wise attention"};
  app.require_subcommand(1);

  // synth
  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", synth_config, "JSON synth config")->required();
  synth->add_option("--out", synth_out, "output corpus (.fagg)")->required();

  // train
  std::string train_corpus, train_config, train_out, train_resume, train_ckpt;
  auto* train_cmd = app.add_subcommand("train", "train an aggregator, streaming the loss history");
  train_cmd->add_option("--corpus", train_corpus)->required();
  train_cmd->add_option("--config", train_config, "JSON train config")->required();
  train_cmd->add_option("--out", train_out, "output parameters (.fagp)")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint (.fagc) to continue from");
  train_cmd->add_option("--checkpoint", train_ckpt, "also write the full training state (.fagc)");

  // finetune
  std::string ft_corpus, ft_params, ft_out, ft_config, ft_ckpt;
  auto* ft = app.add_subcommand("finetune", "continue training from parameters on another corpus");
  ft->add_option("--corpus", ft_corpus)->required();
  ft->add_option("--params", ft_params, "parameters (.fagp) or checkpoint (.fagc)")->required();
  ft->add_option("--out", ft_out, "output parameters (.fagp)")->required();
  ft->add_option("--config", ft_config, "JSON train config (defaults apply when omitted)");
  ft->add_option("--checkpoint", ft_ckpt, "also write the full training state (.fagc)");

  // aggregate
  std::string ag_corpus, ag_params, ag_method, ag_out;
  auto* ag = app.add_subcommand("aggregate", "write one template per set");
  ag->add_option("--corpus", ag_corpus)->required();
  ag->add_option("--params", ag_params, "parameters (.fagp), needed for nan and attn");
  ag->add_option("--method", ag_method)->required()->check(CLI::IsMember({"avg", "max", "nan", "attn"}));
  ag->add_option("--out", ag_out, "output templates (.fagg, one frame per set)")->required();

  // eval-verify
  std::string ev_templates, ev_pairs, ev_far = "0.001,0.01,0.1", ev_metric = "cosine";
  bool ev_table = false;
  auto* ev = app.add_subcommand("eval-verify", "TAR@FAR and AUC over a pair list");
  ev->add_option("--templates", ev_templates)->required();
  ev->add_option("--pairs", ev_pairs)->required();
  ev->add_option("--far", ev_far, "comma-separated FAR levels");
  ev->add_option("--metric", ev_metric, "cosine or l2");
  ev->add_flag("--table", ev_table, "human-readable table instead of key-value lines");

  // eval-identify
  std::string ei_gallery, ei_probes, ei_rank = "1,5,10", ei_fpir = "0.01,0.1", ei_metric = "cosine";
  bool ei_table = false;
  auto* ei = app.add_subcommand("eval-identify", "rank-N and open-set TPIR@FPIR");
  ei->add_option("--gallery", ei_gallery)->required();
  ei->add_option("--probes", ei_probes)->required();
  ei->add_option("--rank", ei_rank, "comma-separated ranks");
  ei->add_option("--fpir", ei_fpir, "comma-separated FPIR levels");
  ei->add_option("--metric", ei_metric, "cosine or l2");
  ei->add_flag("--table", ei_table, "human-readable table instead of key-value lines");

  // gradcheck
  std::size_t gc_dim = 8, gc_frames = 3, gc_classes = 4;
  std::uint64_t gc_seed = 1;
  double gc_h = 1e-5;
  std::string gc_mode = "cascaded";
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc->add_option("--dim", gc_dim);
  gc->add_option("--frames", gc_frames);
  gc->add_option("--classes", gc_classes);
  gc->add_option("--seed", gc_seed);
  gc->add_option("--step", gc_h, "central-difference step");
  gc->add_option("--mode", gc_mode)->check(CLI::IsMember({"linear", "cascaded", "frame"}));

  // pairs
  std::string pr_corpus, pr_out;
  std::size_t pr_pos = 0, pr_neg = 0;
  std::uint64_t pr_seed = 1;
  auto* pr = app.add_subcommand("pairs", "write a verification pair list for a corpus");
  pr->add_option("--corpus", pr_corpus)->required();
  pr->add_option("--out", pr_out)->required();
  pr->add_option("--positives", pr_pos, "sampled positive pairs (0 with --negatives 0: all pairs)");
  pr->add_option("--negatives", pr_neg, "sampled negative pairs");
  pr->add_option("--seed", pr_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto cfg = parse_synth_config(read_file(synth_config));
      const auto corpus = generate(cfg);
      write_corpus(synth_out, corpus);
      std::cout << "identities\t" << corpus.identities().size() << "\nsets\t" << corpus.sets.size() << "\nframes\t"
                << corpus.frame_count() << '\n';
    } else if (*train_cmd) {
      const auto cfg = parse_train_config(read_file(train_config));
      const auto corpus = read_corpus(train_corpus);
      const auto result = train_resume.empty() ? train(corpus, cfg) : resume(read_checkpoint(train_resume), corpus, cfg);
      print_history(result.history);
      write_params(train_out, result.checkpoint.params, result.checkpoint.head);
      if (!train_ckpt.empty()) write_checkpoint(train_ckpt, result.checkpoint);
    } else if (*ft) {
      TrainConfig cfg;
      if (!ft_config.empty()) cfg = parse_train_config(read_file(ft_config));
      const auto corpus = read_corpus(ft_corpus);
      auto start = load_start_point(ft_params);
      if (start.class_labels.empty()) start.rng = Rng(cfg.rng_seed ^ 0x5eedf00dULL).state();
      cfg.mode = start.params.mode;
      start.head.margin = cfg.margin_m;
      start.head.scale = cfg.scale_s;
      const auto result = finetune(std::move(start), corpus, cfg);
      print_history(result.history);
      write_params(ft_out, result.checkpoint.params, result.checkpoint.head);
      if (!ft_ckpt.empty()) write_checkpoint(ft_ckpt, result.checkpoint);
    } else if (*ag) {
      std::optional<ParamsFile> pf;
      if (!ag_params.empty()) pf = read_params(ag_params);
      const auto agg = make_aggregator(ag_method, pf);
      const auto in = decode_corpus(read_file(ag_corpus));
      LabeledCorpus out;
      out.sets.reserve(in.corpus.sets.size());
      for (const auto& s : in.corpus.sets) {
        if (pf && s.dim() != pf->params.dim())
          throw Error(ErrorCode::DimensionMismatch, "corpus dimension does not match parameters");
        out.sets.push_back(FeatureSet::from_frames({l2_normalize(agg(s))}, s.label, s.set_id));
      }
      write_corpus(ag_out, out, in.prng_tag);
    } else if (*ev) {
      const auto templates = read_corpus(ev_templates);
      const auto result = verify(templates, read_pairs(ev_pairs), first_frame, parse_levels(ev_far),
                                 parse_metric(ev_metric));
      std::cout << (ev_table ? to_table(result) : to_key_values(result));
    } else if (*ei) {
      const auto gallery = read_corpus(ei_gallery);
      const auto probes = read_corpus(ei_probes);
      const auto result = identify(gallery.sets, probes.sets, first_frame, parse_ranks(ei_rank),
                                   parse_levels(ei_fpir), parse_metric(ei_metric));
      std::cout << (ei_table ? to_table(result) : to_key_values(result));
    } else if (*gc) {
      if (!(gc_h > 0.0)) throw Error(ErrorCode::InvalidArgument, "--step must be positive");
      const auto inst = random_instance(gc_dim, gc_frames, gc_classes, gc_seed, parse_attention_mode(gc_mode));
      const double err = finite_diff_check(inst.set, inst.params, inst.head, inst.label, gc_h);
      std::printf("max_relative_error\t%.6e\n", err);
      if (!(err < 1e-4)) {
        std::fprintf(stderr, "gradient check failed: %.6e >= 1e-4\n", err);
        return 1;
      }
    } else if (*pr) {
      const auto corpus = read_corpus(pr_corpus);
      PairList pairs;
      if (pr_pos == 0 && pr_neg == 0) {
        pairs = all_pairs(corpus.sets);
      } else {
        Rng rng(pr_seed);
        pairs = sample_pairs(corpus.sets, pr_pos, pr_neg, rng);
      }
      write_file(pr_out, format_pairs(pairs));
      std::cout << "pairs\t" << pairs.pairs.size() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
