#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cmatch/pipeline.hpp"
#include "test_support.hpp"

#ifndef CMATCH_MATCH_EXE
#error "CMATCH_MATCH_EXE must point at the match executable"
#endif

namespace cmatch {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

struct CliResult {
  int code = -1;
  std::string err;
};

// Runs the match executable with `args`, capturing stderr.
CliResult match(const std::string& args, const TempDir& scratch) {
  const auto err_file = scratch / "stderr.txt";
  const std::string cmd =
      std::string("\"") + CMATCH_MATCH_EXE + "\" " + args + " >/dev/null 2>\"" + err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string run_args(const fs::path& episode, const fs::path& params, const fs::path& out) {
  return "run --episode " + quoted(episode) + " --params " + quoted(params) + " --out " +
         quoted(out);
}

// run.log lines that are not comments, as key -> value.
KeyValueConfig run_log(const fs::path& out) { return KeyValueConfig::load(out / "run.log"); }

std::string without_comments(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    out += line + "\n";
  }
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    generate_synthetic_episode(1, EpisodeSpec{}, dir_ / "episode");
    fs::create_directories(dir_ / "params");
  }

  TempDir dir_;
};

TEST_F(CliTest, DefaultRunWritesArtifacts) {
  const auto r = match(run_args(dir_ / "episode", dir_ / "params", dir_ / "out"), dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"prob.cmt", "pred.cmt", "best_match.csv", "best_match.cmt", "plan.cmt",
                        "metrics.txt", "run.log"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
  const auto prob = read_tensor(dir_ / "out" / "prob.cmt");
  EXPECT_EQ(prob.shape(), (Tensor::Shape{8, 8}));
  for (float v : prob.f32_data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_EQ(read_tensor(dir_ / "out" / "pred.cmt").dtype(), DType::kUInt8);
  const auto log = run_log(dir_ / "out");
  EXPECT_EQ(log.get_string("ot_mode", ""), "partial");
  EXPECT_TRUE(log.contains("iterations"));
  EXPECT_TRUE(log.contains("marginal_violation"));
  EXPECT_TRUE(log.contains("achieved_cost"));
  const auto metrics = KeyValueConfig::load(dir_ / "out" / "metrics.txt");
  for (const char* key : {"iou_fg", "iou_bg", "fbiou", "miou", "iou_0"}) {
    EXPECT_TRUE(metrics.contains(key)) << key;
  }
  EXPECT_EQ(slurp(dir_ / "out" / "best_match.csv").rfind("r,c,match_r,match_c\n", 0), 0u);
}

TEST_F(CliTest, FullAndPartialRealFlow) {
  const auto partial =
      match(run_args(dir_ / "episode", dir_ / "params", dir_ / "partial") + " --mfm off", dir_);
  ASSERT_EQ(partial.code, 0) << partial.err;
  const auto full = match(
      run_args(dir_ / "episode", dir_ / "params", dir_ / "full") + " --mfm off --ot-mode full",
      dir_);
  ASSERT_EQ(full.code, 0) << full.err;

  // Unit masses: M equals the 16 foreground support cells, full OT moves min(64, 64).
  const auto plog = run_log(dir_ / "partial");
  EXPECT_EQ(plog.get_double("matched_mass", 0), 16.0);
  EXPECT_NEAR(plog.get_double("real_flow", 0), 16.0, 1e-9);
  const auto flog = run_log(dir_ / "full");
  EXPECT_NEAR(flog.get_double("real_flow", 0), 64.0, 1e-9);

  // The dumped plans agree with the logged totals.
  const auto plan = read_tensor(dir_ / "partial" / "plan.cmt");
  EXPECT_EQ(plan.shape(), (Tensor::Shape{64, 64}));
  double total = 0.0;
  for (float x : plan.f32_data()) total += x;
  EXPECT_NEAR(total, 16.0, 1e-3);
}

TEST_F(CliTest, MissingSupportMaskIsDataError) {
  fs::remove(dir_ / "episode" / "support_mask.cmt");
  const auto r = match(run_args(dir_ / "episode", dir_ / "params", dir_ / "out"), dir_);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("support_mask.cmt"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "out" / "pred.cmt"));
}

TEST_F(CliTest, CorruptEpisodeFileIsDataError) {
  write_text(dir_ / "episode" / "query_feat.cmt", "XXXXjunk");
  const auto r = match(run_args(dir_ / "episode", dir_ / "params", dir_ / "out"), dir_);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("FormatError"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  const auto base = run_args(dir_ / "episode", dir_ / "params", dir_ / "out");
  EXPECT_EQ(match(base + " --tau 1.5", dir_).code, 2);
  EXPECT_EQ(match(base + " --ot-mode sometimes", dir_).code, 2);
  EXPECT_EQ(match(base + " --steps 0", dir_).code, 2);
  EXPECT_EQ(match("run --episode x", dir_).code, 2);
  EXPECT_EQ(match(run_args(dir_ / "episode", dir_ / "nowhere", dir_ / "out"), dir_).code, 2);
  write_text(dir_ / "bad.cfg", "this line has no equals sign\n");
  EXPECT_EQ(match(base + " --config " + quoted(dir_ / "bad.cfg"), dir_).code, 2);
}

TEST_F(CliTest, ConvergenceFailureExitsFourWithoutPrediction) {
  const auto out = dir_ / "out";
  ASSERT_EQ(match(run_args(dir_ / "episode", dir_ / "params", out), dir_).code, 0);
  ASSERT_TRUE(fs::exists(out / "pred.cmt"));
  write_text(dir_ / "tight.cfg", "max_iters = 1\nanneal_steps = 0\ntolerance = 1e-12\n");
  const auto r = match(run_args(dir_ / "episode", dir_ / "params", out) + " --config " +
                           quoted(dir_ / "tight.cfg"),
                       dir_);
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("ConvergenceError"), std::string::npos) << r.err;
  // The stale prediction from the earlier run must not survive a failed run.
  EXPECT_FALSE(fs::exists(out / "pred.cmt"));
}

TEST_F(CliTest, RunsAreByteDeterministic) {
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(match(run_args(dir_ / "episode", dir_ / "params", dir_ / out) + " --seed 7", dir_).code,
              0);
  }
  for (const char* f : {"prob.cmt", "pred.cmt", "best_match.csv", "plan.cmt", "metrics.txt"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  // Timestamps live only in comment lines; paths differ by the out dir.
  auto a = without_comments(slurp(dir_ / "a" / "run.log"));
  auto b = without_comments(slurp(dir_ / "b" / "run.log"));
  const auto strip_out = [](std::string s) {
    const auto pos = s.find("out = ");
    return s.erase(pos, s.find('\n', pos) - pos);
  };
  EXPECT_EQ(strip_out(a), strip_out(b));
}

TEST_F(CliTest, SavedParametersAreUsed) {
  FlowSchedule schedule{FlowMode::kStacked, 2, Neighborhood::kFour};
  ParameterStore::zero_mlp(8, schedule, 3).save(dir_ / "zero");
  // Zero-MLP parameters leave features unchanged apart from the positional
  // term, so the run succeeds and reports the stored schedule.
  const auto r = match(run_args(dir_ / "episode", dir_ / "zero", dir_ / "out"), dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = run_log(dir_ / "out");
  EXPECT_EQ(log.get_string("flow_mode", ""), "stacked");
  EXPECT_EQ(log.get_int("flow_steps", 0), 2);
  EXPECT_EQ(log.get_int("flow_neighborhood", 0), 4);
  // Overriding the step count breaks the stacked block count.
  EXPECT_EQ(match(run_args(dir_ / "episode", dir_ / "zero", dir_ / "out2") + " --steps 3", dir_).code,
            2);
}

TEST_F(CliTest, PriorMaskWritesPrior) {
  const auto r = match(run_args(dir_ / "episode", dir_ / "params", dir_ / "out") + " --prior-mask on",
                       dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "out" / "prior.cmt"));
}

TEST_F(CliTest, SynthIsDeterministic) {
  write_text(dir_ / "spec.cfg", "H = 6\nW = 5\nC = 4\nfg_fraction = 0.3\n");
  for (const char* out : {"s1", "s2"}) {
    ASSERT_EQ(match("synth --seed 4 --spec " + quoted(dir_ / "spec.cfg") + " --out " +
                        quoted(dir_ / out),
                    dir_)
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir_ / "s1" / "query_feat.cmt"), slurp(dir_ / "s2" / "query_feat.cmt"));
  EXPECT_EQ(read_tensor(dir_ / "s1" / "support_feat.cmt").shape(), (Tensor::Shape{6, 5, 4}));
  EXPECT_EQ(BinaryMask::from_tensor(read_tensor(dir_ / "s1" / "support_mask.cmt")).count(), 9u);
}

TEST_F(CliTest, SynthRejectsOddChannels) {
  write_text(dir_ / "spec.cfg", "C = 5\n");
  EXPECT_EQ(match("synth --seed 1 --spec " + quoted(dir_ / "spec.cfg") + " --out " +
                      quoted(dir_ / "s"),
                  dir_)
                .code,
            3);
}

class SuiteTest : public ::testing::Test {
 protected:
  fs::path write_config(const std::string& name, const std::string& extra) {
    const auto path = dir_ / name;
    write_text(path, "out = " + name + "_out\n" + extra);
    return path;
  }

  TempDir dir_;
};

TEST_F(SuiteTest, IdenticalReportsForIdenticalSeeds) {
  const auto a = write_config("a.cfg", "variants = base, no_mfm\n");
  const auto b = write_config("b.cfg", "variants = base, no_mfm\n");
  TempDir scratch;
  ASSERT_EQ(match("suite --config " + quoted(a) + " --seeds 1..3", scratch).code, 0);
  ASSERT_EQ(match("suite --config " + quoted(b) + " --seeds 1..3", scratch).code, 0);
  const auto text = slurp(dir_ / "a.cfg_out" / "suite.txt");
  EXPECT_EQ(text, slurp(dir_ / "b.cfg_out" / "suite.txt"));
  const auto report = KeyValueConfig::parse(text);
  EXPECT_EQ(report.get_int("base.episodes", 0), 3);
  EXPECT_EQ(report.get_int("no_mfm.episodes", 0), 3);
  EXPECT_TRUE(report.contains("no_mfm.fbiou_mean"));
  EXPECT_TRUE(report.contains("base.miou"));
}

TEST_F(SuiteTest, SingleSeedMeanEqualsRunMetric) {
  const auto cfg = write_config("one.cfg", "mfm = off\n");
  const auto report = run_suite(cfg, {5});
  ASSERT_EQ(report.variants.size(), 1u);
  const auto metrics = KeyValueConfig::load(dir_ / "one.cfg_out" / "base" / "seed_5" / "metrics.txt");
  EXPECT_EQ(report.variants[0].fbiou_mean, metrics.get_double("fbiou", -1));
  EXPECT_EQ(report.variants[0].miou, metrics.get_double("miou", -1));
  EXPECT_EQ(report.variants[0].fbiou_std, 0.0);
}

TEST_F(SuiteTest, FailuresAreRecordedAndExitNonzero) {
  const auto cfg =
      write_config("fail.cfg", "max_iters = 1\nanneal_steps = 0\ntolerance = 1e-12\n");
  TempDir scratch;
  EXPECT_EQ(match("suite --config " + quoted(cfg) + " --seeds 1,2", scratch).code, 3);
  const auto report = KeyValueConfig::load(dir_ / "fail.cfg_out" / "suite.txt");
  EXPECT_EQ(report.get_int("base.failed", 0), 2);
  EXPECT_EQ(report.get_string("base.failed_seeds", ""), "1,2");
}

TEST_F(SuiteTest, UnknownVariantIsConfigError) {
  const auto cfg = write_config("v.cfg", "variants = base, mystery\n");
  EXPECT_ERROR_KIND(run_suite(cfg, {1}), ErrorKind::kConfig);
}

TEST(SeedList, RangesAndLists) {
  EXPECT_EQ(parse_seed_list("3..5"), (std::vector<std::uint64_t>{3, 4, 5}));
  EXPECT_EQ(parse_seed_list("7"), (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(parse_seed_list("1,9,2"), (std::vector<std::uint64_t>{1, 9, 2}));
  EXPECT_ERROR_KIND(parse_seed_list("5..3"), ErrorKind::kConfig);
  EXPECT_ERROR_KIND(parse_seed_list("a..b"), ErrorKind::kConfig);
  EXPECT_ERROR_KIND(parse_seed_list(""), ErrorKind::kConfig);
}

TEST(PipelineConfig, AppliesKeysAndValidates) {
  PipelineConfig cfg;
  cfg.apply(KeyValueConfig::parse(
      "lambda = 0.5\ntau = 0.3\not_mode = full\nmfm = off\nprior_mask = on\n"
      "epsilon_scale = 0.02\nmax_iters = 50\nschedule = stacked\nsteps = 2\nneighborhood = 4\n"));
  EXPECT_EQ(cfg.lambda, 0.5);
  EXPECT_EQ(cfg.tau, 0.3);
  EXPECT_EQ(cfg.ot_mode, OtMode::kFull);
  EXPECT_FALSE(cfg.message_flow);
  EXPECT_TRUE(cfg.prior_mask);
  EXPECT_EQ(cfg.sinkhorn.epsilon_scale, 0.02);
  EXPECT_EQ(cfg.sinkhorn.max_iters, 50);
  EXPECT_EQ(cfg.schedule_mode, FlowMode::kStacked);
  EXPECT_EQ(cfg.steps, 2);
  EXPECT_EQ(cfg.neighborhood, Neighborhood::kFour);
  cfg.validate();

  PipelineConfig bad;
  bad.lambda = 0.0;
  EXPECT_ERROR_KIND(bad.validate(), ErrorKind::kConfig);
  EXPECT_ERROR_KIND(PipelineConfig{}.apply(KeyValueConfig::parse("mfm = maybe\n")),
                    ErrorKind::kConfig);
}

TEST(PipelineInMemory, LambdaScalesMatchedMass) {
  const auto e = make_synthetic_episode(2, EpisodeSpec{});
  PipelineConfig cfg;
  cfg.message_flow = false;
  cfg.lambda = 0.5;
  EXPECT_EQ(run_pipeline(e, cfg, nullptr).matched_mass, 8.0);
}

TEST(PipelineInMemory, DownsamplesFullResolutionMasks) {
  auto e = make_synthetic_episode(2, EpisodeSpec{});
  // Upscale the support mask 2x; it must downsample back to the same cells.
  std::vector<std::uint8_t> big(16 * 16);
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t c = 0; c < 16; ++c) big[r * 16 + c] = e.support_mask.at(r / 2, c / 2);
  }
  PipelineConfig cfg;
  cfg.message_flow = false;
  const auto reference = run_pipeline(e, cfg, nullptr);
  e.support_mask = BinaryMask(16, 16, big);
  const auto upscaled = run_pipeline(e, cfg, nullptr);
  EXPECT_EQ(reference.prediction, upscaled.prediction);
}

TEST(KeyValueConfig, ParsesCommentsAndWhitespace) {
  const auto cfg = KeyValueConfig::parse("# header\n  a = 1  # trailing\n\nb=two words\nc = on\n");
  EXPECT_EQ(cfg.get_int("a", 0), 1);
  EXPECT_EQ(cfg.get_string("b", ""), "two words");
  EXPECT_TRUE(cfg.get_bool("c", false));
  EXPECT_EQ(cfg.get_double("missing", 2.5), 2.5);
  EXPECT_ERROR_KIND(KeyValueConfig::parse("novalue\n"), ErrorKind::kConfig);
  EXPECT_ERROR_KIND(KeyValueConfig::parse(" = 3\n"), ErrorKind::kConfig);
  EXPECT_ERROR_KIND((void)KeyValueConfig::parse("x = 1.5q\n").get_double("x", 0), ErrorKind::kConfig);
  EXPECT_ERROR_KIND((void)KeyValueConfig::parse("x = 1.5\n").get_int("x", 0), ErrorKind::kConfig);
}

}  // namespace
}  // namespace cmatch
