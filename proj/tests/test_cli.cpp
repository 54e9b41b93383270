#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>

#include "fagg/io.hpp"

using namespace fagg;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fagg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const { write_file(path(name), text); }

  CliRun run(const std::string& args) const {
    const std::string cmd = std::string(FAGG_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " +
                            path("stderr.txt");
    const int raw = std::system(cmd.c_str());
    CliRun r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_file(path("stdout.txt"));
    r.err = read_file(path("stderr.txt"));
    return r;
  }

  void synth(const std::string& cfg, const std::string& out) const {
    write("synth.json", cfg);
    const auto r = run("synth --config " + path("synth.json") + " --out " + path(out));
    ASSERT_EQ(r.status, 0) << r.err;
  }

  fs::path dir_;
};

const char* kSeparated =
    R"({"dim": 16, "num_identities": 8, "sets_per_identity": 5, "intra_class_sigma": 0.05,
        "degrade_fraction": 0, "rng_seed": 4})";

const char* kSmallTrain = R"({"epochs": 2, "batch_size": 8, "init_hidden_gain": 10, "init_hidden_bias": 1})";

}  // namespace

TEST_F(CliTest, GradcheckDefaultPasses) {
  const auto r = run("gradcheck --dim 8 --frames 3 --classes 4 --seed 1");
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("max_relative_error\t", 0), 0u);
  EXPECT_LT(std::stod(r.out.substr(19)), 1e-4);
}

TEST_F(CliTest, GradcheckFailsWithCoarseStep) {
  const auto r = run("gradcheck --step 0.5");
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, SynthIsByteIdentical) {
  synth(kSeparated, "a.fagg");
  synth(kSeparated, "b.fagg");
  EXPECT_EQ(read_file(path("a.fagg")), read_file(path("b.fagg")));
  const auto r = run("synth --config " + path("synth.json") + " --out " + path("c.fagg"));
  EXPECT_EQ(r.out, "identities\t8\nsets\t40\nframes\t" + std::to_string(read_corpus(path("a.fagg")).frame_count()) + "\n");
}

TEST_F(CliTest, AveragePipelineSeparatesCleanCorpus) {
  synth(kSeparated, "c.fagg");
  ASSERT_EQ(run("pairs --corpus " + path("c.fagg") + " --out " + path("pairs.txt")).status, 0);
  ASSERT_EQ(run("aggregate --corpus " + path("c.fagg") + " --method avg --out " + path("t.fagg")).status, 0);
  const auto templates = read_corpus(path("t.fagg"));
  ASSERT_EQ(templates.sets.size(), 40u);
  for (const auto& s : templates.sets) EXPECT_EQ(s.size(), 1u);
  const auto r = run("eval-verify --templates " + path("t.fagg") + " --pairs " + path("pairs.txt") + " --far 0.1");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, "tar@far=0.1\t1.000000\nauc\t1.000000\n");
}

TEST_F(CliTest, TrainAggregateEvaluate) {
  synth(kSeparated, "c.fagg");
  write("train.json", kSmallTrain);
  const auto t1 = run("train --corpus " + path("c.fagg") + " --config " + path("train.json") + " --out " +
                      path("p1.fagp") + " --checkpoint " + path("k1.fagc"));
  ASSERT_EQ(t1.status, 0) << t1.err;
  const auto t2 = run("train --corpus " + path("c.fagg") + " --config " + path("train.json") + " --out " +
                      path("p2.fagp"));
  ASSERT_EQ(t2.status, 0);
  EXPECT_EQ(t1.out, t2.out);
  EXPECT_EQ(read_file(path("p1.fagp")), read_file(path("p2.fagp")));
  // 40 sets in batches of 8, 2 epochs
  EXPECT_EQ(std::count(t1.out.begin(), t1.out.end(), '\n'), 10);
  EXPECT_EQ(t1.out.rfind("0\t0\t", 0), 0u);

  for (const char* method : {"attn", "max"}) {
    const auto r = run("aggregate --corpus " + path("c.fagg") + " --params " + path("p1.fagp") + " --method " +
                       method + " --out " + path("t.fagg"));
    EXPECT_EQ(r.status, 0) << method << r.err;
  }
  const auto nan = run("aggregate --corpus " + path("c.fagg") + " --params " + path("p1.fagp") +
                       " --method nan --out " + path("t.fagg"));
  EXPECT_NE(nan.status, 0);
  EXPECT_NE(nan.err.find("nan"), std::string::npos);
}

TEST_F(CliTest, ResumeMatchesStraightRun) {
  synth(kSeparated, "c.fagg");
  write("two.json", R"({"epochs": 2, "batch_size": 8, "init_hidden_gain": 10})");
  write("four.json", R"({"epochs": 4, "batch_size": 8, "init_hidden_gain": 10})");
  ASSERT_EQ(run("train --corpus " + path("c.fagg") + " --config " + path("four.json") + " --out " +
                path("straight.fagp") + " --checkpoint " + path("straight.fagc"))
                .status,
            0);
  ASSERT_EQ(run("train --corpus " + path("c.fagg") + " --config " + path("two.json") + " --out " + path("half.fagp") +
                " --checkpoint " + path("half.fagc"))
                .status,
            0);
  const auto r = run("train --corpus " + path("c.fagg") + " --config " + path("four.json") + " --resume " +
                     path("half.fagc") + " --out " + path("resumed.fagp") + " --checkpoint " + path("resumed.fagc"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("2\t0\t", 0), 0u);
  EXPECT_EQ(read_file(path("resumed.fagp")), read_file(path("straight.fagp")));
  EXPECT_EQ(read_file(path("resumed.fagc")), read_file(path("straight.fagc")));
}

TEST_F(CliTest, FinetuneFromParamsAndCheckpoint) {
  synth(kSeparated, "c.fagg");
  synth(R"({"dim": 16, "num_identities": 5, "sets_per_identity": 4, "rng_seed": 9})", "d.fagg");
  write("train.json", kSmallTrain);
  ASSERT_EQ(run("train --corpus " + path("c.fagg") + " --config " + path("train.json") + " --out " + path("p.fagp") +
                " --checkpoint " + path("k.fagc"))
                .status,
            0);
  write("ft.json", R"({"epochs": 1, "batch_size": 4})");
  for (const char* start : {"p.fagp", "k.fagc"}) {
    const auto r = run("finetune --corpus " + path("d.fagg") + " --params " + path(start) + " --config " +
                       path("ft.json") + " --out " + path("f.fagp"));
    ASSERT_EQ(r.status, 0) << r.err;
    const auto pf = read_params(path("f.fagp"));
    EXPECT_EQ(pf.head.num_classes(), 5u);
  }
  synth(R"({"dim": 12, "num_identities": 3, "sets_per_identity": 2})", "e.fagg");
  const auto bad = run("finetune --corpus " + path("e.fagg") + " --params " + path("p.fagp") + " --out " +
                       path("f.fagp"));
  EXPECT_NE(bad.status, 0);
}

TEST_F(CliTest, IdentifyReport) {
  LabeledCorpus gallery, probes;
  gallery.sets.push_back(FeatureSet::from_frames({{1, 0, 0}}, 0, "g0"));
  gallery.sets.push_back(FeatureSet::from_frames({{0, 1, 0}}, 1, "g1"));
  probes.sets.push_back(FeatureSet::from_frames({{0.9, 0.1, 0}}, 0, "p0"));
  probes.sets.push_back(FeatureSet::from_frames({{0.6, 0.4, 0}}, 1, "p1"));
  probes.sets.push_back(FeatureSet::from_frames({{0, 0, 1}}, 7, "p2"));
  write_corpus(path("g.fagg"), gallery);
  write_corpus(path("p.fagg"), probes);
  const auto r = run("eval-identify --gallery " + path("g.fagg") + " --probes " + path("p.fagg") +
                     " --rank 1,2 --fpir 0.5");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, "rank-1\t0.500000\nrank-2\t1.000000\ntpir@fpir=0.5\t0.500000\n");
  const auto table = run("eval-identify --gallery " + path("g.fagg") + " --probes " + path("p.fagg") + " --table");
  EXPECT_NE(table.out.find("rank"), std::string::npos);
}

TEST_F(CliTest, ErrorsGoToStderr) {
  const auto missing = run("train --corpus " + path("nope.fagg") + " --config " + path("nope.json") + " --out " +
                           path("x.fagp"));
  EXPECT_NE(missing.status, 0);
  EXPECT_TRUE(missing.out.empty());
  EXPECT_FALSE(missing.err.empty());

  EXPECT_NE(run("gradcheck --bogus-flag 3").status, 0);
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("aggregate --corpus x --method median --out y").status, 0);

  synth(kSeparated, "c.fagg");
  write("pairs.txt", "id0_s0\tid0_s1\t1\n");
  ASSERT_EQ(run("aggregate --corpus " + path("c.fagg") + " --method avg --out " + path("t.fagg")).status, 0);
  // no negative pairs
  const auto r = run("eval-verify --templates " + path("t.fagg") + " --pairs " + path("pairs.txt"));
  EXPECT_NE(r.status, 0);
  EXPECT_TRUE(r.out.empty());
  const auto bad_far = run("eval-verify --templates " + path("t.fagg") + " --pairs " + path("pairs.txt") +
                           " --far 0.1,abc");
  EXPECT_NE(bad_far.status, 0);
  // multi-frame sets are not templates
  write("pairs2.txt", "id0_s0\tid0_s1\t1\nid0_s0\tid1_s0\t0\n");
  EXPECT_NE(run("eval-verify --templates " + path("c.fagg") + " --pairs " + path("pairs2.txt")).status, 0);
}
