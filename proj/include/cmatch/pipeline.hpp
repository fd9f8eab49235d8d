#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmatch/correspondence.hpp"
#include "cmatch/episode.hpp"
#include "cmatch/kv_config.hpp"
#include "cmatch/message_flow.hpp"
#include "cmatch/metrics.hpp"
#include "cmatch/ot.hpp"

namespace cmatch {

enum class OtMode { kPartial, kFull };

const char* to_string(OtMode mode);
OtMode parse_ot_mode(const std::string& text);

inline SinkhornConfig pipeline_sinkhorn_defaults() {
  SinkhornConfig c;
  c.max_iters = 20000;
  return c;
}

struct PipelineConfig {
  std::filesystem::path episode_dir;
  std::filesystem::path params_dir;
  std::filesystem::path out_dir;

  double lambda = 1.0;
  double tau = 0.5;
  OtMode ot_mode = OtMode::kPartial;
  bool message_flow = true;
  bool prior_mask = false;
  // Dense full-OT plans on 8x8 grids need tens of thousands of sweeps at the
  // final annealing stage, so the pipeline budget is larger than the solver's.
  SinkhornConfig sinkhorn = pipeline_sinkhorn_defaults();

  // Unset fields fall back to params.cfg, then to FlowSchedule defaults.
  std::optional<FlowMode> schedule_mode;
  std::optional<int> steps;
  std::optional<Neighborhood> neighborhood;

  // Seeds the parameter initialisation when params_dir holds no params.cfg.
  std::uint64_t seed = 0;

  // Applies recognised keys; unknown keys are ignored so that suite configs
  // can carry episode-spec keys alongside.
  void apply(const KeyValueConfig& cfg);
  void validate() const;
  std::string echo() const;
};

struct RunResult {
  ProbabilityMap probability;
  std::optional<ProbabilityMap> prior;
  BinaryMask prediction;
  TransportPlan plan;  // real block, suppliers x demanders
  BestMatchMap best_match;
  std::optional<MetricReport> metrics;
  double matched_mass = 0.0;
};

// Resolves the parameter store for a run: loads params_dir when it has a
// params.cfg, otherwise initialises randomly from `seed`. Schedule overrides in
// the config are applied either way.
ParameterStore resolve_parameters(const PipelineConfig& config, std::size_t channels);

// In-memory pipeline: message flow (optional), cosine cost, partial or full
// OT, mask filtering, probability map, thresholding.
RunResult run_pipeline(const Episode& episode, const PipelineConfig& config,
                       const ParameterStore* store);

// Loads the episode, runs the pipeline and writes prob.cmt, pred.cmt,
// best_match.cmt, best_match.csv, plan.cmt, prior.cmt (when enabled),
// metrics.txt (when ground truth exists) and run.log into out_dir. Files are
// written via temp-file + rename, pred.cmt last.
RunResult run_match(const PipelineConfig& config);

struct VariantSummary {
  std::string name;
  std::size_t episodes = 0;
  std::vector<std::uint64_t> failed_seeds;
  double fbiou_mean = 0.0;
  double fbiou_std = 0.0;
  double miou = 0.0;
  double miou_std = 0.0;
  std::map<std::string, double> per_class;
};

struct SuiteReport {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantSummary> variants;

  bool any_failed() const;
  std::string to_text() const;
};

// Parses "a..b" (inclusive) or a comma-separated list.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

// Synthesises one episode per seed, runs each configured variant (`variants`
// key: base, no_mfm, full_ot, prior; default base) and writes suite.txt to
// the config's `out` directory.
SuiteReport run_suite(const std::filesystem::path& config_path,
                      const std::vector<std::uint64_t>& seeds);

}  // namespace cmatch
