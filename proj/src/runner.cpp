#include "rsw/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/reacher_env.hpp"
#include "rsw/text.hpp"

namespace rsw {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

FisKind fis_from_string(const std::string& s) {
  std::string v = lowercase(trim(s));
  for (auto& c : v)
    if (c == '_') c = '-';
  if (v == "none") return FisKind::kNone;
  if (v == "hf-d" || v == "hfd") return FisKind::kHfD;
  if (v == "hf-rsm" || v == "hfrsm") return FisKind::kHfRsm;
  if (v == "llm-d" || v == "llmd") return FisKind::kLlmD;
  if (v == "llm-hfbf" || v == "llmhfbf" || v == "hfbf") return FisKind::kLlmHfbf;
  throw ConfigError("unknown feedback integration strategy: " + s);
}

std::string to_string(FisKind f) {
  switch (f) {
    case FisKind::kNone: return "none";
    case FisKind::kHfD: return "HF-D";
    case FisKind::kHfRsm: return "HF-RSM";
    case FisKind::kLlmD: return "LLM-D";
    case FisKind::kLlmHfbf: return "LLM-HFBF";
  }
  return "?";
}

ShapedDataset HfbfShaper::shape(const Dataset& d) {
  const ShapedDataset biased = shape_dataset_hf_d(d, coeffs_, options_.weights,
                                                  options_.features);
  if (biased.empty()) {
    last_report_ = {};
    return biased;
  }
  last_pca_ = pca_fit_dataset(biased);
  return shape_dataset_hfbf(biased, *last_pca_, provider_, options_, &last_report_);
}

namespace {

const std::set<std::string> kKnownSections = {
    "run", "env", "reacher", "fis", "fis.custom_profile",
    "llm", "ppo", "fma", "surrogate"};

const std::set<std::string> kKnownKeys = {
    "run.envs", "run.fis", "run.profiles", "run.provider", "run.seeds",
    "run.total_timesteps", "run.eval_episodes", "run.output_dir",
    "run.surrogate_bootstrap_steps",
    "env.scenario", "env.lane_count", "env.vehicle_count", "env.duration",
    "env.dt", "env.speed_band_lo", "env.speed_band_hi", "env.seed",
    "reacher.w_near", "reacher.w_ctrl", "reacher.torque_limit", "reacher.dt",
    "reacher.episode_length", "reacher.seed",
    "fis.profile", "fis.w_lane", "fis.w_collision", "fis.w_speed",
    "fis.v_thresh_lo", "fis.v_thresh_hi", "fis.lane_change_window",
    "fis.density_radius",
    "fis.custom_profile.profile", "fis.custom_profile.lane",
    "fis.custom_profile.collision", "fis.custom_profile.speed",
    "llm.model", "llm.temperature", "llm.timeout_s", "llm.max_retries",
    "llm.alpha1", "llm.alpha2", "llm.parse_retries", "llm.max_in_flight",
    "llm.mock_profile", "llm.mock_tolerance",
    "ppo.clip_epsilon", "ppo.gamma", "ppo.gae_lambda", "ppo.learning_rate",
    "ppo.epochs_per_batch", "ppo.minibatch_size", "ppo.batch_timesteps",
    "ppo.hidden_dim", "ppo.value_coef", "ppo.entropy_coef",
    "ppo.max_grad_norm", "ppo.single_batch",
    "fma.lambda1", "fma.lambda2", "fma.lambda3", "fma.lambda4", "fma.theta",
    "surrogate.epochs", "surrogate.lr", "surrogate.batch_size"};

void reject_unknown_keys(const Config& cfg) {
  for (const auto& [key, value] : cfg.entries()) {
    if (!kKnownKeys.count(key))
      throw ConfigError("unknown config key: " + key);
  }
}

std::array<int, 4> parse_coeff4(const Config& cfg, const std::string& key) {
  const auto list = cfg.get_int_list(key, {});
  if (list.size() != 4)
    throw ConfigError(key + ": expected exactly 4 integers");
  std::array<int, 4> out{};
  for (size_t i = 0; i < 4; ++i) out[i] = static_cast<int>(list[i]);
  return out;
}

std::array<int, 5> parse_coeff5(const Config& cfg, const std::string& key) {
  const auto list = cfg.get_int_list(key, {});
  if (list.size() != 5)
    throw ConfigError(key + ": expected exactly 5 integers");
  std::array<int, 5> out{};
  for (size_t i = 0; i < 5; ++i) out[i] = static_cast<int>(list[i]);
  return out;
}

std::array<int, 9> parse_coeff9(const Config& cfg, const std::string& key) {
  const auto list = cfg.get_int_list(key, {});
  if (list.size() != 9)
    throw ConfigError(key + ": expected exactly 9 integers");
  std::array<int, 9> out{};
  for (size_t i = 0; i < 9; ++i) out[i] = static_cast<int>(list[i]);
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
  reject_unknown_keys(cfg);
  ExperimentConfig e;

  e.envs = cfg.get_string_list("run.envs", e.envs);
  if (cfg.has("run.fis")) {
    e.fis_list.clear();
    for (const auto& f : cfg.get_string_list("run.fis", {}))
      e.fis_list.push_back(fis_from_string(f));
  }
  if (cfg.has("run.profiles")) {
    e.profiles.clear();
    for (const auto& p : cfg.get_string_list("run.profiles", {}))
      e.profiles.push_back(profile_from_string(p));
  } else if (cfg.has("fis.profile")) {
    e.profiles = {profile_from_string(cfg.get_string("fis.profile", "ideal"))};
  }
  const std::string provider = lowercase(cfg.get_string("run.provider", "mock"));
  if (provider == "mock")
    e.provider = ProviderKind::kMock;
  else if (provider == "remote")
    e.provider = ProviderKind::kRemote;
  else
    throw ConfigError("run.provider must be mock or remote");
  if (cfg.has("run.seeds")) {
    e.seeds.clear();
    for (int64_t s : cfg.get_int_list("run.seeds", {}))
      e.seeds.push_back(static_cast<uint64_t>(s));
    if (e.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  }
  e.total_timesteps = cfg.get_int("run.total_timesteps", e.total_timesteps);
  e.eval_episodes = static_cast<int>(cfg.get_int("run.eval_episodes", e.eval_episodes));
  e.output_dir = cfg.get_string("run.output_dir", e.output_dir.string());
  e.surrogate_bootstrap_steps = static_cast<int>(
      cfg.get_int("run.surrogate_bootstrap_steps", e.surrogate_bootstrap_steps));

  e.highway.scenario = highway_scenario_from_string(
      cfg.get_string("env.scenario", "default"));
  e.highway.lane_count = static_cast<int>(cfg.get_int("env.lane_count", e.highway.lane_count));
  e.highway.vehicle_count =
      static_cast<int>(cfg.get_int("env.vehicle_count", e.highway.vehicle_count));
  e.highway.duration = static_cast<int>(cfg.get_int("env.duration", e.highway.duration));
  e.highway.dt = cfg.get_double("env.dt", e.highway.dt);
  e.highway.speed_band_lo = cfg.get_double("env.speed_band_lo", e.highway.speed_band_lo);
  e.highway.speed_band_hi = cfg.get_double("env.speed_band_hi", e.highway.speed_band_hi);
  e.highway.seed = static_cast<uint64_t>(cfg.get_int("env.seed", 0));
  e.highway.validate();

  e.reacher.w_near = cfg.get_double("reacher.w_near", e.reacher.w_near);
  e.reacher.w_ctrl = cfg.get_double("reacher.w_ctrl", e.reacher.w_ctrl);
  e.reacher.torque_limit = cfg.get_double("reacher.torque_limit", e.reacher.torque_limit);
  e.reacher.dt = cfg.get_double("reacher.dt", e.reacher.dt);
  e.reacher.episode_length =
      static_cast<int>(cfg.get_int("reacher.episode_length", e.reacher.episode_length));
  e.reacher.seed = static_cast<uint64_t>(cfg.get_int("reacher.seed", 0));
  e.reacher.validate();

  e.weights.lane = cfg.get_double("fis.w_lane", 1.0);
  e.weights.collision = cfg.get_double("fis.w_collision", 1.0);
  e.weights.speed = cfg.get_double("fis.w_speed", 1.0);
  e.features.v_thresh = {cfg.get_double("fis.v_thresh_lo", 20.0),
                         cfg.get_double("fis.v_thresh_hi", 30.0)};
  if (!(e.features.v_thresh[0] < e.features.v_thresh[1]))
    throw ConfigError("fis: v_thresh_lo must be < v_thresh_hi");
  e.features.lane_change_window =
      static_cast<int>(cfg.get_int("fis.lane_change_window", 10));
  e.features.density_radius = cfg.get_double("fis.density_radius", 50.0);
  e.features.dt = e.highway.dt;

  if (cfg.has("fis.custom_profile.lane") || cfg.has("fis.custom_profile.collision") ||
      cfg.has("fis.custom_profile.speed")) {
    StyleCoefficients custom;
    custom.profile = profile_from_string(
        cfg.get_string("fis.custom_profile.profile", "ideal"));
    custom.lane = parse_coeff4(cfg, "fis.custom_profile.lane");
    custom.collision = parse_coeff5(cfg, "fis.custom_profile.collision");
    custom.speed = parse_coeff9(cfg, "fis.custom_profile.speed");
    e.custom_coeffs = custom;
  }

  e.remote.model = cfg.get_string("llm.model", "mistral");
  e.remote.temperature = cfg.get_double("llm.temperature", 0.0);
  e.remote.timeout_s = static_cast<int>(cfg.get_int("llm.timeout_s", 60));
  e.remote.max_retries = static_cast<int>(cfg.get_int("llm.max_retries", 2));
  e.llm.alpha1 = cfg.get_double("llm.alpha1", 0.25);
  e.llm.alpha2 = cfg.get_double("llm.alpha2", 0.2);
  e.llm.parse_retries = static_cast<int>(cfg.get_int("llm.parse_retries", 2));
  e.llm.max_in_flight = static_cast<int>(cfg.get_int("llm.max_in_flight", 1));
  e.llm.weights = e.weights;
  e.llm.features = e.features;
  e.mock_profile = profile_from_string(cfg.get_string("llm.mock_profile", "ideal"));
  e.mock_bias_tolerance = cfg.get_double("llm.mock_tolerance", 0.5);

  e.ppo.clip_epsilon = cfg.get_double("ppo.clip_epsilon", e.ppo.clip_epsilon);
  e.ppo.gamma = cfg.get_double("ppo.gamma", e.ppo.gamma);
  e.ppo.gae_lambda = cfg.get_double("ppo.gae_lambda", e.ppo.gae_lambda);
  e.ppo.learning_rate = cfg.get_double("ppo.learning_rate", e.ppo.learning_rate);
  e.ppo.epochs_per_batch =
      static_cast<int>(cfg.get_int("ppo.epochs_per_batch", e.ppo.epochs_per_batch));
  e.ppo.minibatch_size =
      static_cast<int>(cfg.get_int("ppo.minibatch_size", e.ppo.minibatch_size));
  e.ppo.batch_timesteps = cfg.get_int("ppo.batch_timesteps", e.ppo.batch_timesteps);
  e.ppo.hidden_dim = static_cast<int>(cfg.get_int("ppo.hidden_dim", e.ppo.hidden_dim));
  e.ppo.value_coef = cfg.get_double("ppo.value_coef", e.ppo.value_coef);
  e.ppo.entropy_coef = cfg.get_double("ppo.entropy_coef", e.ppo.entropy_coef);
  e.ppo.max_grad_norm = cfg.get_double("ppo.max_grad_norm", e.ppo.max_grad_norm);
  e.ppo.single_batch = cfg.get_bool("ppo.single_batch", e.ppo.single_batch);
  e.ppo.validate();

  e.fma.lambda1 = cfg.get_double("fma.lambda1", e.fma.lambda1);
  e.fma.lambda2 = cfg.get_double("fma.lambda2", e.fma.lambda2);
  e.fma.lambda3 = cfg.get_double("fma.lambda3", e.fma.lambda3);
  e.fma.lambda4 = cfg.get_double("fma.lambda4", e.fma.lambda4);
  e.fma.theta = cfg.get_double("fma.theta", e.fma.theta);
  e.fma.validate();

  e.surrogate.epochs = static_cast<int>(cfg.get_int("surrogate.epochs", 200));
  e.surrogate.lr = cfg.get_double("surrogate.lr", 1e-3);
  e.surrogate.batch_size = static_cast<int>(cfg.get_int("surrogate.batch_size", 128));
  return e;
}

long ExperimentConfig::budget_for(const std::string& env_name) const {
  if (total_timesteps > 0) return total_timesteps;
  return env_name == "reacher" ? 50000 : 10000;
}

std::vector<ExperimentCell> experiment_cells(const ExperimentConfig& cfg) {
  std::vector<ExperimentCell> cells;
  std::set<std::string> seen;
  auto push = [&](const std::string& env, FisKind fis, Profile profile) {
    const std::string key = env + "|" + to_string(fis) + "|" + rsw::to_string(profile);
    if (seen.insert(key).second) cells.push_back({env, fis, profile});
  };
  for (const auto& env : cfg.envs) {
    if (env != "highway_default" && env != "highway_case1" &&
        env != "highway_case2" && env != "reacher")
      throw ConfigError("unknown environment name: " + env);
    for (FisKind fis : cfg.fis_list) {
      switch (fis) {
        case FisKind::kNone:
        case FisKind::kLlmD:
          push(env, fis, Profile::kNa);  // profile is not used by these
          break;
        case FisKind::kHfRsm:
          if (env == "reacher")
            throw ConfigError("HF-RSM surrogate features are highway-only");
          [[fallthrough]];
        case FisKind::kHfD:
        case FisKind::kLlmHfbf:
          for (Profile p : cfg.profiles) {
            if (p == Profile::kNa)
              throw ConfigError(to_string(fis) + " requires a concrete profile");
            push(env, fis, p);
          }
          break;
      }
    }
  }
  return cells;
}

std::unique_ptr<EnvBase> make_env(const ExperimentConfig& cfg,
                                  const std::string& env_name) {
  if (env_name == "reacher") return std::make_unique<ReacherEnv>(cfg.reacher);
  HighwayConfig hw = cfg.highway;
  if (env_name == "highway_default")
    hw.scenario = HighwayScenario::kDefault;
  else if (env_name == "highway_case1")
    hw.scenario = HighwayScenario::kCongestedLane;
  else if (env_name == "highway_case2")
    hw.scenario = HighwayScenario::kSlowObstacleMiddle;
  else
    throw ConfigError("unknown environment name: " + env_name);
  return std::make_unique<HighwayEnv>(hw);
}

namespace {

// Records every prompt/response pair (remote provenance).
class LoggingProvider : public FeedbackProvider {
 public:
  LoggingProvider(FeedbackProvider& inner, fs::path path)
      : inner_(inner), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open for writing: " + path.string());
  }
  std::string evaluate(const FeedbackRequest& request) override {
    const std::string response = inner_.evaluate(request);
    std::scoped_lock lock(mutex_);
    out_ << ordered_json{{"prompt", request.prompt}, {"response", response}}.dump()
         << "\n";
    return response;
  }
  std::string name() const override { return inner_.name(); }

 private:
  FeedbackProvider& inner_;
  std::ofstream out_;
  std::mutex mutex_;
};

struct CellShaper {
  std::unique_ptr<FeedbackProvider> provider;
  std::unique_ptr<FeedbackProvider> logging;  // wraps provider when remote
  std::unique_ptr<Shaper> shaper;
};

const char* getenv_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v != nullptr ? v : fallback;
}

StyleCoefficients coeffs_for(const ExperimentConfig& cfg, Profile profile) {
  if (cfg.custom_coeffs && cfg.custom_coeffs->profile == profile)
    return *cfg.custom_coeffs;
  return StyleCoefficients::builtin(profile);
}

SurrogateModel bootstrap_surrogate(const ExperimentConfig& cfg,
                                   const ExperimentCell& cell, uint64_t seed) {
  auto env = make_env(cfg, cell.env);
  Policy policy = Policy::create(*env, cfg.ppo.hidden_dim, mix_seed(seed, 0xB001));
  Rng rng(mix_seed(seed, 0xB002));
  const Dataset boot = collect(*env, policy, cfg.surrogate_bootstrap_steps, rng,
                               mix_seed(seed, 0xB003));
  const auto features = highway_features_all(boot, cfg.features);
  const StyleCoefficients coeffs = coeffs_for(cfg, cell.profile);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  xs.reserve(features.size());
  ys.reserve(features.size());
  for (const auto& f : features) {
    xs.push_back(surrogate_features(f));
    ys.push_back(hf_d_score(f, coeffs, cfg.weights));
  }
  SurrogateFitOptions opt = cfg.surrogate;
  opt.seed = seed;
  SurrogateModel model = fit_surrogate(xs, ys, opt);
  model.label_profile = cell.profile;
  return model;
}

CellShaper make_shaper(const ExperimentConfig& cfg, const ExperimentCell& cell,
                       uint64_t seed, const fs::path& cell_dir) {
  CellShaper out;
  LlmShapingOptions llm = cfg.llm;
  llm.weights = cfg.weights;
  llm.features = cfg.features;

  auto make_provider = [&]() -> FeedbackProvider* {
    if (cfg.provider == ProviderKind::kMock) {
      out.provider = std::make_unique<MockOracle>(cfg.mock_profile,
                                                  cfg.mock_bias_tolerance);
      return out.provider.get();
    }
    RemoteLlmOptions opt = cfg.remote;
    opt.base_url = getenv_or("LLM_API_BASE", "");
    opt.api_key = getenv_or("LLM_API_KEY", "");
    out.provider = std::make_unique<RemoteLlm>(opt);
    fs::create_directories(cell_dir);
    out.logging = std::make_unique<LoggingProvider>(*out.provider,
                                                    cell_dir / "prompts.jsonl");
    return out.logging.get();
  };

  switch (cell.fis) {
    case FisKind::kNone:
      break;
    case FisKind::kHfD:
      out.shaper = std::make_unique<HfDirectShaper>(coeffs_for(cfg, cell.profile),
                                                    cfg.weights, cfg.features);
      break;
    case FisKind::kHfRsm:
      out.shaper = std::make_unique<SurrogateShaper>(
          bootstrap_surrogate(cfg, cell, seed), cfg.features);
      break;
    case FisKind::kLlmD:
      out.shaper = std::make_unique<LlmDirectShaper>(*make_provider(), llm);
      break;
    case FisKind::kLlmHfbf:
      out.shaper = std::make_unique<HfbfShaper>(coeffs_for(cfg, cell.profile),
                                                *make_provider(), llm);
      break;
  }
  return out;
}

std::string cell_slug(const ExperimentCell& cell) {
  std::string s = lowercase(to_string(cell.fis));
  if (cell.profile != Profile::kNa)
    s += "_" + lowercase(rsw::to_string(cell.profile));
  return s;
}

ResultsRow run_cell(const ExperimentConfig& cfg, const ExperimentCell& cell,
                    uint64_t seed) {
  ResultsRow row;
  row.env = cell.env;
  row.fis = to_string(cell.fis);
  row.profile = rsw::to_string(cell.profile);
  row.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path cell_dir =
      cfg.output_dir / cell.env / cell_slug(cell) / ("seed" + std::to_string(seed));
  try {
    auto env = make_env(cfg, cell.env);
    PpoConfig ppo = cfg.ppo;
    ppo.total_timesteps = cfg.budget_for(cell.env);
    CellShaper cell_shaper = make_shaper(cfg, cell, seed, cell_dir);

    const TrainResult trained = train(*env, ppo, cell_shaper.shaper.get(), seed);

    auto eval_env = make_env(cfg, cell.env);
    const Dataset eval_ds =
        evaluate(*eval_env, trained.bundle.policy, cfg.eval_episodes, seed);
    const bool is_highway = cell.env.rfind("highway", 0) == 0;
    const MetricsReport report = metrics_report(eval_ds, cfg.fma, is_highway);
    row.aer = report.aer;
    row.att = report.att;
    row.fma = report.fma;

    fs::create_directories(cell_dir);
    write_train_log_csv(trained.log, cell_dir / "train_log.csv");
    trained.bundle.save(cell_dir / "checkpoint.json");
    eval_ds.save(cell_dir / "eval.jsonl");
    {
      std::ofstream out(cell_dir / "metrics.json", std::ios::binary);
      out << report.to_json().dump(2) << "\n";
    }
    if (auto* hfbf = dynamic_cast<HfbfShaper*>(cell_shaper.shaper.get());
        hfbf != nullptr && hfbf->last_pca()) {
      std::ofstream out(cell_dir / "pca_model.json", std::ios::binary);
      out << hfbf->last_pca()->to_json().dump(2) << "\n";
    }
  } catch (const ProviderError& e) {
    row.failed = true;
    row.aer = row.att = row.fma = std::nan("");
    fs::create_directories(cell_dir);
    std::ofstream out(cell_dir / "error.json", std::ios::binary);
    out << json{{"error", {{"type", "ProviderError"}, {"message", e.what()}}}}.dump(2)
        << "\n";
  }
  row.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

std::string fmt_metric(double v) {
  return std::isnan(v) ? "nan" : fmt_g17(v);
}

}  // namespace

std::vector<ResultsRow> run(const ExperimentConfig& cfg) {
  const auto cells = experiment_cells(cfg);
  fs::create_directories(cfg.output_dir);
  std::vector<ResultsRow> rows;
  for (const auto& cell : cells) {
    for (uint64_t seed : cfg.seeds) rows.push_back(run_cell(cfg, cell, seed));
  }
  write_results_csv(rows, cfg.output_dir / "results.csv");
  write_timing_csv(rows, cfg.output_dir / "timing.csv");
  write_manifest(cfg.output_dir);
  return rows;
}

std::vector<DegradationEntry> degradation_report(std::span<const ResultsRow> rows) {
  // strategy -> per-env mean AER over seeds
  struct Acc {
    double sum = 0.0;
    int count = 0;
  };
  std::vector<std::string> env_order;
  std::map<std::string, std::vector<std::pair<std::string, Acc>>> by_env;
  for (const auto& row : rows) {
    if (row.failed) continue;
    const std::string strategy =
        row.profile == "NA" ? row.fis : row.fis + "(" + row.profile + ")";
    auto& strategies = by_env[row.env];
    if (by_env[row.env].empty() &&
        std::find(env_order.begin(), env_order.end(), row.env) == env_order.end())
      env_order.push_back(row.env);
    auto it = std::find_if(strategies.begin(), strategies.end(),
                           [&](const auto& p) { return p.first == strategy; });
    if (it == strategies.end()) {
      strategies.push_back({strategy, Acc{}});
      it = std::prev(strategies.end());
    }
    it->second.sum += row.aer;
    it->second.count += 1;
  }

  std::vector<DegradationEntry> out;
  for (const auto& env : env_order) {
    const auto& strategies = by_env[env];
    const auto baseline =
        std::find_if(strategies.begin(), strategies.end(),
                     [](const auto& p) { return p.first == "HF-D(IDEAL)"; });
    if (baseline == strategies.end())
      throw ConfigError("degradation report: no HF-D(IDEAL) baseline rows for " + env);
    const double base = baseline->second.sum / baseline->second.count;
    if (std::abs(base) < 1e-12)
      throw ConfigError("degradation report: baseline AER is zero for " + env);

    std::vector<DegradationEntry> env_entries;
    for (const auto& [strategy, acc] : strategies) {
      DegradationEntry entry;
      entry.env = env;
      entry.strategy = strategy;
      entry.aer_mean = acc.sum / acc.count;
      entry.degradation_pct = (base - entry.aer_mean) / std::abs(base) * 100.0;
      env_entries.push_back(entry);
    }
    double lo = env_entries.front().degradation_pct;
    double hi = lo;
    for (const auto& entry : env_entries) {
      lo = std::min(lo, entry.degradation_pct);
      hi = std::max(hi, entry.degradation_pct);
    }
    for (auto& entry : env_entries) {
      entry.normalized =
          hi > lo ? (entry.degradation_pct - lo) / (hi - lo) * 100.0 : 0.0;
      out.push_back(entry);
    }
  }
  return out;
}

void write_results_csv(std::span<const ResultsRow> rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "env,fis,profile,seed,fma,att,aer\n";
  for (const auto& r : rows) {
    out << r.env << "," << r.fis << "," << r.profile << "," << r.seed << ","
        << fmt_metric(r.fma) << "," << fmt_metric(r.att) << ","
        << fmt_metric(r.aer) << "\n";
  }
}

void write_timing_csv(std::span<const ResultsRow> rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "env,fis,profile,seed,wall_clock_s,status\n";
  for (const auto& r : rows) {
    out << r.env << "," << r.fis << "," << r.profile << "," << r.seed << ","
        << fmt_g17(r.wall_clock_s) << "," << (r.failed ? "failed" : "ok") << "\n";
  }
}

std::vector<ResultsRow> read_results_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError(path.string() + ": empty results file");
  if (trim(line) != "env,fis,profile,seed,fma,att,aer")
    throw DataError(path.string() + ": unexpected results header: " + line);
  std::vector<ResultsRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != 7)
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": expected 7 columns");
    ResultsRow r;
    r.env = parts[0];
    r.fis = parts[1];
    r.profile = parts[2];
    try {
      r.seed = static_cast<uint64_t>(std::stoull(parts[3]));
      r.fma = std::stod(parts[4]);
      r.att = std::stod(parts[5]);
      r.aer = std::stod(parts[6]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": malformed numeric field");
    }
    r.failed = std::isnan(r.aer);
    rows.push_back(r);
  }
  return rows;
}

void write_degradation_csv(std::span<const DegradationEntry> entries,
                           const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "env,strategy,aer_mean,degradation_pct,normalized\n";
  for (const auto& e : entries) {
    out << e.env << "," << e.strategy << "," << fmt_g17(e.aer_mean) << ","
        << fmt_g17(e.degradation_pct) << "," << fmt_g17(e.normalized) << "\n";
  }
}

void write_degradation_json(std::span<const DegradationEntry> entries,
                            const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ordered_json series = ordered_json::array();
  for (const auto& e : entries) {
    series.push_back({{"env", e.env},
                      {"strategy", e.strategy},
                      {"degradation_pct", e.degradation_pct},
                      {"normalized", e.normalized}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << series.dump(2) << "\n";
}

void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "manifest.json") continue;
    files.push_back(fs::relative(entry.path(), dir));
  }
  std::sort(files.begin(), files.end());
  ordered_json listing = ordered_json::array();
  for (const auto& rel : files) {
    std::ifstream in(dir / rel, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string content = buf.str();
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(std::span(content.data(), content.size()))));
    listing.push_back({{"path", rel.generic_string()},
                       {"bytes", content.size()},
                       {"fnv1a64", hex}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + (dir / "manifest.json").string());
  out << ordered_json{{"files", listing}}.dump(2) << "\n";
}

}  // namespace rsw
