#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/llm_gateway.hpp"
#include "rsw/metrics.hpp"
#include "rsw/pca.hpp"
#include "rsw/policy_optim.hpp"
#include "rsw/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

rsw::ExperimentConfig load_experiment(const std::string& config_path) {
  if (config_path.empty()) return rsw::ExperimentConfig{};
  return rsw::ExperimentConfig::from_config(rsw::Config::parse_file(config_path));
}

std::unique_ptr<rsw::FeedbackProvider> make_provider(
    const rsw::ExperimentConfig& cfg, const std::string& provider_name) {
  const std::string name =
      provider_name.empty()
          ? (cfg.provider == rsw::ProviderKind::kMock ? "mock" : "remote")
          : provider_name;
  if (name == "mock")
    return std::make_unique<rsw::MockOracle>(cfg.mock_profile,
                                             cfg.mock_bias_tolerance);
  if (name == "remote") {
    rsw::RemoteLlmOptions opt = cfg.remote;
    const char* base = std::getenv("LLM_API_BASE");
    const char* key = std::getenv("LLM_API_KEY");
    opt.base_url = base != nullptr ? base : "";
    opt.api_key = key != nullptr ? key : "";
    return std::make_unique<rsw::RemoteLlm>(opt);
  }
  throw rsw::ConfigError("provider must be mock or remote: " + name);
}

// Shaper plus the provider it may reference.
struct ShaperHandle {
  std::unique_ptr<rsw::FeedbackProvider> provider;
  std::unique_ptr<rsw::Shaper> shaper;
};

ShaperHandle make_cli_shaper(const rsw::ExperimentConfig& cfg, rsw::FisKind fis,
                             rsw::Profile profile, const std::string& provider_name,
                             const rsw::Dataset* surrogate_source, uint64_t seed) {
  ShaperHandle handle;
  auto coeffs = [&] {
    if (cfg.custom_coeffs && cfg.custom_coeffs->profile == profile)
      return *cfg.custom_coeffs;
    return rsw::StyleCoefficients::builtin(profile);
  };
  switch (fis) {
    case rsw::FisKind::kNone:
      break;
    case rsw::FisKind::kHfD:
      handle.shaper = std::make_unique<rsw::HfDirectShaper>(coeffs(), cfg.weights,
                                                            cfg.features);
      break;
    case rsw::FisKind::kHfRsm: {
      if (surrogate_source == nullptr)
        throw rsw::ConfigError("hf-rsm shaping needs a dataset to fit on");
      const auto features = rsw::highway_features_all(*surrogate_source, cfg.features);
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (const auto& f : features) {
        xs.push_back(rsw::surrogate_features(f));
        ys.push_back(rsw::hf_d_score(f, coeffs(), cfg.weights));
      }
      rsw::SurrogateFitOptions opt = cfg.surrogate;
      opt.seed = seed;
      rsw::SurrogateModel model = rsw::fit_surrogate(xs, ys, opt);
      model.label_profile = profile;
      handle.shaper =
          std::make_unique<rsw::SurrogateShaper>(std::move(model), cfg.features);
      break;
    }
    case rsw::FisKind::kLlmD:
      handle.provider = make_provider(cfg, provider_name);
      handle.shaper = std::make_unique<rsw::LlmDirectShaper>(*handle.provider, cfg.llm);
      break;
    case rsw::FisKind::kLlmHfbf:
      handle.provider = make_provider(cfg, provider_name);
      handle.shaper = std::make_unique<rsw::HfbfShaper>(coeffs(), *handle.provider,
                                                        cfg.llm);
      break;
  }
  return handle;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"rsw - reward shaping workbench for feedback-integration studies"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "experiment config file")
      ->envname("RSW_CONFIG");

  // collect
  auto* collect_cmd = app.add_subcommand("collect", "roll out a policy into a dataset");
  std::string collect_env = "highway_default", collect_output, collect_checkpoint,
              collect_csv;
  uint64_t collect_seed = 0;
  long collect_steps = 2048;
  collect_cmd->add_option("--env", collect_env, "environment name");
  collect_cmd->add_option("--seed", collect_seed, "seed");
  collect_cmd->add_option("--timesteps", collect_steps, "minimum steps to collect");
  collect_cmd->add_option("--checkpoint", collect_checkpoint,
                          "policy checkpoint (fresh policy when omitted)");
  collect_cmd->add_option("--output", collect_output, "output dataset (.jsonl)")
      ->required();
  collect_cmd->add_option("--csv", collect_csv, "also export the dataset as CSV");

  // shape
  auto* shape_cmd = app.add_subcommand("shape", "apply a feedback strategy to a dataset");
  std::string shape_input, shape_output, shape_fis = "hf-d", shape_profile = "ideal",
              shape_provider;
  uint64_t shape_seed = 0;
  shape_cmd->add_option("--input", shape_input, "input dataset (.jsonl)")->required();
  shape_cmd->add_option("--fis", shape_fis, "hf-d|hf-rsm|llm-d|llm-hfbf");
  shape_cmd->add_option("--profile", shape_profile, "ideal|agg|rad");
  shape_cmd->add_option("--provider", shape_provider, "mock|remote");
  shape_cmd->add_option("--seed", shape_seed, "seed (surrogate fitting)");
  shape_cmd->add_option("--output", shape_output, "output shaped dataset")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a policy with a feedback strategy");
  std::string train_env = "highway_default", train_fis = "none",
              train_profile = "na", train_output = "runs";
  std::vector<uint64_t> train_seeds{0};
  long train_steps = -1;
  train_cmd->add_option("--env", train_env, "environment name");
  train_cmd->add_option("--fis", train_fis, "none|hf-d|hf-rsm|llm-d|llm-hfbf");
  train_cmd->add_option("--profile", train_profile, "ideal|agg|rad|na");
  train_cmd->add_option("--seed", train_seeds, "seed(s)");
  train_cmd->add_option("--timesteps", train_steps, "training budget");
  train_cmd->add_option("--output", train_output, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_env = "highway_default", eval_checkpoint, eval_output,
              eval_dataset;
  uint64_t eval_seed = 0;
  int eval_episodes = 5;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "policy checkpoint")
      ->required();
  eval_cmd->add_option("--env", eval_env, "environment name");
  eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval_cmd->add_option("--seed", eval_seed, "seed");
  eval_cmd->add_option("--output", eval_output, "write the metrics report JSON here");
  eval_cmd->add_option("--dataset", eval_dataset, "write the evaluation dataset here");

  // pca-fit
  auto* pca_cmd = app.add_subcommand("pca-fit", "fit a PCA model on a shaped dataset");
  std::string pca_input, pca_output;
  pca_cmd->add_option("--input", pca_input, "shaped dataset (.jsonl)")->required();
  pca_cmd->add_option("--output", pca_output, "output model JSON")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "degradation report from results");
  std::string report_results, report_output;
  report_cmd->add_option("--results", report_results,
                         "results directory or results.csv")->required();
  report_cmd->add_option("--output", report_output,
                         "output directory (defaults next to results)");

  // run
  auto* run_cmd = app.add_subcommand("run", "run the configured experiment matrix");
  std::string run_output;
  run_cmd->add_option("--output", run_output, "output directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (collect_cmd->parsed()) {
    rsw::ExperimentConfig cfg = load_experiment(config_path);
    auto env = rsw::make_env(cfg, collect_env);
    rsw::Policy policy;
    if (!collect_checkpoint.empty()) {
      policy = rsw::PolicyBundle::load(collect_checkpoint).policy;
    } else {
      policy = rsw::Policy::create(*env, cfg.ppo.hidden_dim, collect_seed);
    }
    rsw::Rng rng(rsw::mix_seed(collect_seed, 0xC0));
    const rsw::Dataset d = rsw::collect(*env, policy, collect_steps, rng,
                                        rsw::mix_seed(collect_seed, 0xC1));
    d.save(collect_output);
    if (!collect_csv.empty()) d.export_csv(collect_csv);
    std::cout << json{{"dataset", collect_output},
                      {"steps", d.size()},
                      {"episodes", d.episodes().size()}}
                     .dump()
              << "\n";
    return 0;
  }

  if (shape_cmd->parsed()) {
    rsw::ExperimentConfig cfg = load_experiment(config_path);
    const rsw::Dataset d = rsw::Dataset::load(shape_input);
    const rsw::FisKind fis = rsw::fis_from_string(shape_fis);
    if (fis == rsw::FisKind::kNone)
      throw rsw::ConfigError("shape: fis must be a concrete strategy");
    ShaperHandle handle = make_cli_shaper(cfg, fis,
                                          rsw::profile_from_string(shape_profile),
                                          shape_provider, &d, shape_seed);
    const rsw::ShapedDataset shaped = handle.shaper->shape(d);
    shaped.save(shape_output);
    std::cout << json{{"shaped_dataset", shape_output}, {"steps", shaped.size()}}.dump()
              << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    rsw::ExperimentConfig cfg = load_experiment(config_path);
    cfg.envs = {train_env};
    cfg.fis_list = {rsw::fis_from_string(train_fis)};
    const rsw::Profile profile = rsw::profile_from_string(train_profile);
    if (profile != rsw::Profile::kNa) cfg.profiles = {profile};
    cfg.seeds = train_seeds;
    if (train_steps > 0) cfg.total_timesteps = train_steps;
    if (!train_output.empty()) cfg.output_dir = train_output;
    const auto rows = rsw::run(cfg);
    for (const auto& r : rows) {
      std::cout << json{{"env", r.env},     {"fis", r.fis}, {"profile", r.profile},
                        {"seed", r.seed},   {"aer", r.aer}, {"att", r.att},
                        {"failed", r.failed}}
                       .dump()
                << "\n";
    }
    return 0;
  }

  if (eval_cmd->parsed()) {
    rsw::ExperimentConfig cfg = load_experiment(config_path);
    auto env = rsw::make_env(cfg, eval_env);
    const rsw::PolicyBundle bundle = rsw::PolicyBundle::load(eval_checkpoint);
    const rsw::Dataset d = rsw::evaluate(*env, bundle.policy, eval_episodes, eval_seed);
    const bool is_highway = eval_env.rfind("highway", 0) == 0;
    const rsw::MetricsReport report = rsw::metrics_report(d, cfg.fma, is_highway);
    if (!eval_dataset.empty()) d.save(eval_dataset);
    const std::string text = report.to_json().dump(2);
    if (!eval_output.empty()) {
      std::ofstream out(eval_output, std::ios::binary);
      out << text << "\n";
    }
    std::cout << text << "\n";
    return 0;
  }

  if (pca_cmd->parsed()) {
    const rsw::ShapedDataset d = rsw::ShapedDataset::load(pca_input);
    const rsw::PcaModel model = rsw::pca_fit_dataset(d);
    std::ofstream out(pca_output, std::ios::binary);
    if (!out) throw rsw::DataError("cannot open for writing: " + pca_output);
    out << model.to_json().dump(2) << "\n";
    std::cout << json{{"model", pca_output},
                      {"explained_variance_ratio", model.explained_variance_ratio}}
                     .dump()
              << "\n";
    return 0;
  }

  if (report_cmd->parsed()) {
    fs::path results = report_results;
    if (fs::is_directory(results)) results /= "results.csv";
    const auto rows = rsw::read_results_csv(results);
    const auto entries = rsw::degradation_report(rows);
    const fs::path out_dir =
        report_output.empty() ? results.parent_path() : fs::path(report_output);
    rsw::write_degradation_csv(entries, out_dir / "degradation.csv");
    rsw::write_degradation_json(entries, out_dir / "degradation.json");
    for (const auto& e : entries) {
      std::cout << json{{"env", e.env},
                        {"strategy", e.strategy},
                        {"degradation_pct", e.degradation_pct},
                        {"normalized", e.normalized}}
                       .dump()
                << "\n";
    }
    return 0;
  }

  if (run_cmd->parsed()) {
    if (config_path.empty())
      throw rsw::ConfigError("run requires --config");
    rsw::ExperimentConfig cfg = load_experiment(config_path);
    if (!run_output.empty()) cfg.output_dir = run_output;
    const auto rows = rsw::run(cfg);
    std::cout << json{{"output_dir", cfg.output_dir.string()},
                      {"rows", rows.size()}}
                     .dump()
              << "\n";
    return 0;
  }

  return 0;
}

json error_json(const std::string& type, const std::string& message) {
  return json{{"error", {{"type", type}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const rsw::ConfigError& e) {
    std::cout << error_json("ConfigError", e.what()).dump() << "\n";
    return 1;
  } catch (const rsw::DataError& e) {
    std::cout << error_json("DataError", e.what()).dump() << "\n";
    return 1;
  } catch (const rsw::ParseError& e) {
    std::cout << error_json("ParseError", e.what()).dump() << "\n";
    return 1;
  } catch (const rsw::ProviderError& e) {
    std::cout << error_json("ProviderError", e.what()).dump() << "\n";
    return 1;
  } catch (const rsw::NumericalError& e) {
    std::cout << error_json("NumericalError", e.what()).dump() << "\n";
    return 1;
  } catch (const rsw::ContractViolation& e) {
    std::cout << error_json("ContractViolation", e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cout << error_json("InternalError", e.what()).dump() << "\n";
    return 1;
  }
}
