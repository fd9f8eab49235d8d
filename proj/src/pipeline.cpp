#include "cmatch/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "cmatch/error.hpp"

namespace cmatch {

namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Re-throws with a stage prefix so CLI messages say where things failed.
template <typename Fn>
auto with_context(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConvergenceError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), context + ": " + e.detail());
  }
}

void write_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_atomic(const fs::path& path, const std::string& text) {
  write_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_atomic(const fs::path& path, const Tensor& t) { write_atomic(path, encode_tensor(t)); }

BinaryMask to_resolution(const BinaryMask& mask, std::size_t height, std::size_t width,
                         const char* what) {
  if (mask.height() == height && mask.width() == width) return mask;
  if (mask.height() < height || mask.width() < width) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(what) + " is smaller than the feature grid");
  }
  return downsample_mask(mask, height, width);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mu = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

const char* to_string(OtMode mode) { return mode == OtMode::kPartial ? "partial" : "full"; }

OtMode parse_ot_mode(const std::string& text) {
  if (text == "partial") return OtMode::kPartial;
  if (text == "full") return OtMode::kFull;
  throw Error(ErrorKind::kConfig, "ot-mode must be partial or full, got " + text);
}

void PipelineConfig::apply(const KeyValueConfig& cfg) {
  if (auto v = cfg.get("episode")) episode_dir = *v;
  if (auto v = cfg.get("params")) params_dir = *v;
  if (auto v = cfg.get("out")) out_dir = *v;
  lambda = cfg.get_double("lambda", lambda);
  tau = cfg.get_double("tau", tau);
  if (auto v = cfg.get("ot_mode")) ot_mode = parse_ot_mode(*v);
  message_flow = cfg.get_bool("mfm", message_flow);
  prior_mask = cfg.get_bool("prior_mask", prior_mask);
  sinkhorn.epsilon_scale = cfg.get_double("epsilon_scale", sinkhorn.epsilon_scale);
  sinkhorn.max_iters = static_cast<int>(cfg.get_int("max_iters", sinkhorn.max_iters));
  sinkhorn.tolerance = cfg.get_double("tolerance", sinkhorn.tolerance);
  sinkhorn.anneal_steps = static_cast<int>(cfg.get_int("anneal_steps", sinkhorn.anneal_steps));
  if (auto v = cfg.get("schedule")) schedule_mode = parse_flow_mode(*v);
  if (cfg.contains("steps")) steps = static_cast<int>(cfg.get_int("steps", 1));
  if (auto v = cfg.get("neighborhood")) neighborhood = parse_neighborhood(*v);
  const long long s = cfg.get_int("seed", static_cast<long long>(seed));
  if (s < 0) throw Error(ErrorKind::kConfig, "seed must be nonnegative");
  seed = static_cast<std::uint64_t>(s);
}

void PipelineConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::kConfig, "lambda must be positive");
  }
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::kConfig, "tau must lie in [0,1]");
  if (steps && *steps < 1) throw Error(ErrorKind::kConfig, "steps must be >= 1");
  sinkhorn.validate();
}

std::string PipelineConfig::echo() const {
  std::ostringstream os;
  os << "episode = " << episode_dir.string() << "\n"
     << "params = " << params_dir.string() << "\n"
     << "out = " << out_dir.string() << "\n"
     << "lambda = " << num(lambda) << "\n"
     << "tau = " << num(tau) << "\n"
     << "ot_mode = " << to_string(ot_mode) << "\n"
     << "mfm = " << (message_flow ? "on" : "off") << "\n"
     << "prior_mask = " << (prior_mask ? "on" : "off") << "\n"
     << "epsilon_scale = " << num(sinkhorn.epsilon_scale) << "\n"
     << "max_iters = " << sinkhorn.max_iters << "\n"
     << "tolerance = " << num(sinkhorn.tolerance) << "\n"
     << "anneal_steps = " << sinkhorn.anneal_steps << "\n"
     << "seed = " << seed << "\n";
  if (schedule_mode) os << "schedule = " << to_string(*schedule_mode) << "\n";
  if (steps) os << "steps = " << *steps << "\n";
  if (neighborhood) os << "neighborhood = " << static_cast<int>(*neighborhood) << "\n";
  return os.str();
}

ParameterStore resolve_parameters(const PipelineConfig& config, std::size_t channels) {
  FlowSchedule schedule;
  const bool from_disk =
      !config.params_dir.empty() && fs::exists(config.params_dir / "params.cfg");
  ParameterStore store;
  if (from_disk) {
    store = with_context("loading parameters from " + config.params_dir.string(),
                         [&] { return ParameterStore::load(config.params_dir); });
    schedule = store.schedule;
  }
  if (config.schedule_mode) schedule.mode = *config.schedule_mode;
  if (config.steps) schedule.steps = *config.steps;
  if (config.neighborhood) schedule.neighborhood = *config.neighborhood;
  schedule.validate();
  if (!from_disk) store = ParameterStore::random(channels, schedule, config.seed);
  store.schedule = schedule;
  store.validate();
  return store;
}

RunResult run_pipeline(const Episode& episode, const PipelineConfig& config,
                       const ParameterStore* store) {
  config.validate();
  const auto& raw_support = episode.support;
  const auto& raw_query = episode.query;
  const BinaryMask support_mask = to_resolution(episode.support_mask, raw_support.height(),
                                                raw_support.width(), "support mask");

  FeatureGrid support = raw_support;
  FeatureGrid query = raw_query;
  if (config.message_flow) {
    if (store == nullptr) throw Error(ErrorKind::kConfig, "message flow needs parameters");
    auto [q, s] = run_message_flow(raw_query, raw_support, store->schedule, *store);
    query = std::move(q);
    support = std::move(s);
  }

  const CostMatrix cost = cosine_cost_matrix(support, query);
  const std::size_t m = support.nodes();
  const std::size_t k = query.nodes();
  const double matched = config.ot_mode == OtMode::kFull
                             ? static_cast<double>(std::min(m, k))
                             : select_matched_mass(support_mask.count(), config.lambda, m, k);
  const MarginalWeights weights = MarginalWeights::unit(m, k, matched);
  const BalancedProblem problem = build_partial_problem(weights, cost);
  const TransportPlan augmented = sinkhorn_solve(problem, config.sinkhorn);
  TransportPlan plan = strip_dummies(augmented, m, k);

  const FilteredPlan filtered = filter_by_support_mask(plan, support_mask);
  ProbabilityMap probability =
      foreground_probability_map(filtered, weights, query.height(), query.width());

  std::optional<ProbabilityMap> prior;
  if (config.prior_mask) {
    prior = prior_mask(query, support, support_mask);
    std::vector<float> fused(probability.values().size());
    for (std::size_t j = 0; j < fused.size(); ++j) {
      fused[j] = 0.5f * (probability.values()[j] + prior->values()[j]);
    }
    probability = ProbabilityMap(query.height(), query.width(), std::move(fused));
  }

  BinaryMask prediction = threshold_prediction(probability, config.tau);
  BestMatchMap best = best_match_map(plan, query.height(), query.width());

  std::optional<MetricReport> metrics;
  if (episode.query_gt) {
    const BinaryMask gt =
        to_resolution(*episode.query_gt, query.height(), query.width(), "query ground truth");
    metrics = evaluate_episode(prediction, gt, episode.class_id);
  }
  return RunResult{std::move(probability), std::move(prior), std::move(prediction),
                   std::move(plan),        std::move(best),  std::move(metrics),
                   matched};
}

RunResult run_match(const PipelineConfig& config) {
  config.validate();
  if (config.out_dir.empty()) throw Error(ErrorKind::kConfig, "no output directory given");
  if (!config.params_dir.empty() && !fs::is_directory(config.params_dir)) {
    throw Error(ErrorKind::kConfig, "parameter directory " + config.params_dir.string() +
                                        " does not exist");
  }
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + config.out_dir.string());
  fs::remove(config.out_dir / "pred.cmt", ec);

  const Episode episode = with_context("loading episode " + config.episode_dir.string(),
                                       [&] { return load_episode(config.episode_dir); });
  std::optional<ParameterStore> store;
  if (config.message_flow) store = resolve_parameters(config, episode.support.channels());

  RunResult result = with_context("matching episode " + config.episode_dir.string(), [&] {
    return run_pipeline(episode, config, store ? &*store : nullptr);
  });

  const auto& out = config.out_dir;
  const std::size_t support_w = episode.support.width();
  write_atomic(out / "prob.cmt", result.probability.to_tensor());
  if (result.prior) write_atomic(out / "prior.cmt", result.prior->to_tensor());
  write_atomic(out / "best_match.cmt", result.best_match.to_tensor());
  write_atomic(out / "best_match.csv", result.best_match.to_csv(support_w));
  {
    std::vector<float> flows(result.plan.flows.begin(), result.plan.flows.end());
    write_atomic(out / "plan.cmt", Tensor::f32({result.plan.rows, result.plan.cols}, flows));
  }
  if (result.metrics) write_atomic(out / "metrics.txt", result.metrics->to_text());

  std::ostringstream log;
  log << "# cmatch run\n# written " << timestamp() << "\n" << config.echo();
  if (store) {
    log << "flow_mode = " << to_string(store->schedule.mode) << "\n"
        << "flow_steps = " << store->schedule.steps << "\n"
        << "flow_neighborhood = " << static_cast<int>(store->schedule.neighborhood) << "\n";
  }
  log << "suppliers = " << result.plan.rows << "\n"
      << "demanders = " << result.plan.cols << "\n"
      << "matched_mass = " << num(result.matched_mass) << "\n"
      << "real_flow = " << num(result.plan.total()) << "\n"
      << "iterations = " << result.plan.iterations << "\n"
      << "solver_defect = " << num(result.plan.solver_defect) << "\n"
      << "marginal_violation = " << num(result.plan.marginal_violation) << "\n"
      << "achieved_cost = " << num(result.plan.cost) << "\n";
  write_atomic(out / "run.log", log.str());
  write_atomic(out / "pred.cmt", result.prediction.to_tensor());
  return result;
}

// --- suite -----------------------------------------------------------------

bool SuiteReport::any_failed() const {
  for (const auto& v : variants) {
    if (!v.failed_seeds.empty()) return true;
  }
  return false;
}

std::string SuiteReport::to_text() const {
  std::ostringstream os;
  os << "# cmatch suite report; per-class IoU is macro-averaged over episodes\n";
  os << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\n";
  for (const auto& v : variants) {
    const std::string p = v.name + ".";
    os << p << "episodes = " << v.episodes << "\n";
    os << p << "failed = " << v.failed_seeds.size() << "\n";
    if (!v.failed_seeds.empty()) {
      os << p << "failed_seeds = ";
      for (std::size_t i = 0; i < v.failed_seeds.size(); ++i) {
        os << (i ? "," : "") << v.failed_seeds[i];
      }
      os << "\n";
    }
    os << p << "fbiou_mean = " << num(v.fbiou_mean) << "\n";
    os << p << "fbiou_std = " << num(v.fbiou_std) << "\n";
    os << p << "miou = " << num(v.miou) << "\n";
    os << p << "miou_std = " << num(v.miou_std) << "\n";
    for (const auto& [name, value] : v.per_class) {
      os << p << "iou_" << name << " = " << num(value) << "\n";
    }
  }
  return os.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  auto parse_one = [&](const std::string& s) -> std::uint64_t {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used != s.size() || s.empty() || s[0] == '-') throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::kConfig, "bad seed `" + s + "` in " + text);
    }
  };
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = parse_one(text.substr(0, dots));
    const auto hi = parse_one(text.substr(dots + 2));
    if (hi < lo) throw Error(ErrorKind::kConfig, "empty seed range " + text);
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(parse_one(item));
  }
  if (seeds.empty()) throw Error(ErrorKind::kConfig, "no seeds given");
  return seeds;
}

SuiteReport run_suite(const fs::path& config_path, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error(ErrorKind::kConfig, "suite needs at least one seed");
  const KeyValueConfig cfg = KeyValueConfig::load(config_path);
  const fs::path base_dir = config_path.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  const auto out_key = cfg.get("out");
  if (!out_key) throw Error(ErrorKind::kConfig, "suite config needs `out`");
  const fs::path out_dir = resolve(*out_key);

  const EpisodeSpec spec = EpisodeSpec::from_config(cfg);
  PipelineConfig base;
  base.apply(cfg);
  base.params_dir = cfg.get("params") ? resolve(*cfg.get("params")) : fs::path{};
  base.validate();

  std::vector<std::string> variant_names;
  {
    std::stringstream ss(cfg.get_string("variants", "base"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(' '));
      item.erase(item.find_last_not_of(' ') + 1);
      if (!item.empty()) variant_names.push_back(item);
    }
  }
  if (variant_names.empty()) throw Error(ErrorKind::kConfig, "no suite variants");

  for (std::uint64_t seed : seeds) {
    generate_synthetic_episode(seed, spec, out_dir / "episodes" / ("seed_" + std::to_string(seed)));
  }

  SuiteReport report;
  report.seeds = seeds;
  for (const auto& name : variant_names) {
    PipelineConfig variant = base;
    if (name == "no_mfm") {
      variant.message_flow = false;
    } else if (name == "full_ot") {
      variant.ot_mode = OtMode::kFull;
    } else if (name == "prior") {
      variant.prior_mask = true;
    } else if (name != "base") {
      throw Error(ErrorKind::kConfig, "unknown suite variant " + name);
    }

    VariantSummary summary;
    summary.name = name;
    MetricAccumulator acc;
    std::vector<double> fg_iou;
    for (std::uint64_t seed : seeds) {
      const fs::path episode_dir = out_dir / "episodes" / ("seed_" + std::to_string(seed));
      PipelineConfig run = variant;
      run.episode_dir = episode_dir;
      run.out_dir = out_dir / name / ("seed_" + std::to_string(seed));
      try {
        RunResult r = run_match(run);
        if (!r.metrics) throw Error(ErrorKind::kIo, "episode has no ground truth");
        const std::string class_id = r.metrics->per_class.begin()->first;
        acc.add(class_id, *r.metrics);
        fg_iou.push_back(r.metrics->iou_fg);
      } catch (const Error&) {
        summary.failed_seeds.push_back(seed);
      }
    }
    summary.episodes = acc.episodes();
    summary.fbiou_mean = mean_of(acc.fbiou_values());
    summary.fbiou_std = std_of(acc.fbiou_values());
    if (acc.episodes() > 0) {
      summary.per_class = acc.per_class_iou();
      summary.miou = acc.miou();
    }
    summary.miou_std = std_of(fg_iou);
    report.variants.push_back(std::move(summary));
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  write_atomic(out_dir / "suite.txt", report.to_text());
  return report;
}

}  // namespace cmatch
