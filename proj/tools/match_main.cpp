// match: command-line front end for the correspondence matcher.
//
//   match run   --episode <dir> --params <dir> --out <dir> [options]
//   match suite --config <file> --seeds a..b
//   match synth --seed N --spec <file> --out <dir>

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cmatch/episode.hpp"
#include "cmatch/error.hpp"
#include "cmatch/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitConvergence = 4;

int exit_code(const cmatch::Error& e) {
  switch (e.kind()) {
    case cmatch::ErrorKind::kConfig:
      return kExitConfig;
    case cmatch::ErrorKind::kConvergence:
      return kExitConvergence;
    default:
      return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial optimal transport correspondence matcher"};
  app.require_subcommand(1);

  cmatch::PipelineConfig run_cfg;
  std::string episode, params, out;
  std::string ot_mode, mfm, prior, schedule;
  double lambda = run_cfg.lambda;
  double tau = run_cfg.tau;
  int steps = 0;
  unsigned long long seed = 0;
  std::string config_file;

  auto* run = app.add_subcommand("run", "Match one episode and write its artifacts");
  run->add_option("--episode", episode, "Episode directory")->required();
  run->add_option("--params", params, "Parameter directory")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--config", config_file, "Optional key = value config file");
  auto* lambda_opt = run->add_option("--lambda", lambda, "Matched mass factor (M = lambda * F)");
  auto* tau_opt = run->add_option("--tau", tau, "Foreground probability threshold");
  run->add_option("--ot-mode", ot_mode, "partial|full")
      ->check(CLI::IsMember({"partial", "full"}));
  run->add_option("--mfm", mfm, "Message flow on|off")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--prior-mask", prior, "Prior mask fusion on|off")
      ->check(CLI::IsMember({"on", "off"}));
  run->add_option("--schedule", schedule, "iterative|stacked")
      ->check(CLI::IsMember({"iterative", "stacked"}));
  auto* steps_opt = run->add_option("--steps", steps, "Message flow steps");
  auto* seed_opt = run->add_option("--seed", seed, "Seed for parameter initialisation");

  std::string suite_config, seeds;
  auto* suite = app.add_subcommand("suite", "Run the matcher over synthetic episodes");
  suite->add_option("--config", suite_config, "Suite config file")->required();
  suite->add_option("--seeds", seeds, "Seed range a..b or list a,b,c")->required();

  unsigned long long synth_seed = 0;
  std::string spec_file, synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic episode");
  synth->add_option("--seed", synth_seed, "Generator seed")->required();
  synth->add_option("--spec", spec_file, "Episode spec (key = value)")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      if (!config_file.empty()) run_cfg.apply(cmatch::KeyValueConfig::load(config_file));
      run_cfg.episode_dir = episode;
      run_cfg.params_dir = params;
      run_cfg.out_dir = out;
      if (*lambda_opt) run_cfg.lambda = lambda;
      if (*tau_opt) run_cfg.tau = tau;
      if (!ot_mode.empty()) run_cfg.ot_mode = cmatch::parse_ot_mode(ot_mode);
      if (!mfm.empty()) run_cfg.message_flow = cmatch::parse_switch("mfm", mfm);
      if (!prior.empty()) run_cfg.prior_mask = cmatch::parse_switch("prior-mask", prior);
      if (!schedule.empty()) run_cfg.schedule_mode = cmatch::parse_flow_mode(schedule);
      if (*steps_opt) run_cfg.steps = steps;
      if (*seed_opt) run_cfg.seed = seed;
      const auto result = cmatch::run_match(run_cfg);
      std::cout << "matched mass " << result.matched_mass << ", "
                << result.plan.iterations << " sinkhorn iterations, cost " << result.plan.cost;
      if (result.metrics) std::cout << ", fbiou " << result.metrics->fbiou;
      std::cout << "\n";
      return 0;
    }
    if (*suite) {
      const auto report = cmatch::run_suite(suite_config, cmatch::parse_seed_list(seeds));
      std::cout << report.to_text();
      return report.any_failed() ? kExitData : 0;
    }
    if (*synth) {
      const auto spec = cmatch::EpisodeSpec::from_config(cmatch::KeyValueConfig::load(spec_file));
      cmatch::generate_synthetic_episode(synth_seed, spec, synth_out);
      return 0;
    }
  } catch (const cmatch::Error& e) {
    std::cerr << "match: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "match: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
