#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rsw/config.hpp"
#include "rsw/env.hpp"
#include "rsw/feedback_rules.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/llm_gateway.hpp"
#include "rsw/metrics.hpp"
#include "rsw/policy_optim.hpp"
#include "rsw/reacher_env.hpp"

namespace rsw {

enum class FisKind { kNone, kHfD, kHfRsm, kLlmD, kLlmHfbf };
enum class ProviderKind { kMock, kRemote };

FisKind fis_from_string(const std::string& s);
std::string to_string(FisKind f);

// --- Feedback integration strategies as train()-compatible shapers ---

class HfDirectShaper : public Shaper {
 public:
  HfDirectShaper(StyleCoefficients coeffs, ShapingWeights weights = {},
                 FeatureParams features = {})
      : coeffs_(coeffs), weights_(weights), features_(features) {}
  ShapedDataset shape(const Dataset& d) override {
    return shape_dataset_hf_d(d, coeffs_, weights_, features_);
  }
  std::string name() const override {
    return "HF-D(" + rsw::to_string(coeffs_.profile) + ")";
  }

 private:
  StyleCoefficients coeffs_;
  ShapingWeights weights_;
  FeatureParams features_;
};

class SurrogateShaper : public Shaper {
 public:
  SurrogateShaper(SurrogateModel model, FeatureParams features = {})
      : model_(std::move(model)), features_(features) {}
  ShapedDataset shape(const Dataset& d) override {
    return shape_dataset_hf_rsm(d, model_, features_);
  }
  std::string name() const override {
    return "HF-RSM(" + rsw::to_string(model_.label_profile) + ")";
  }
  const SurrogateModel& model() const { return model_; }

 private:
  SurrogateModel model_;
  FeatureParams features_;
};

class LlmDirectShaper : public Shaper {
 public:
  LlmDirectShaper(FeedbackProvider& provider, LlmShapingOptions options = {})
      : provider_(provider), options_(options) {}
  ShapedDataset shape(const Dataset& d) override {
    return shape_dataset_llm_d(d, provider_, options_, &last_report_);
  }
  std::string name() const override { return "LLM-D"; }
  const ShapingReport& last_report() const { return last_report_; }

 private:
  FeedbackProvider& provider_;
  LlmShapingOptions options_;
  ShapingReport last_report_;
};

// HF-D shaping with the biased profile, PCA over the shaped batch's step
// features, then selective LLM correction.
class HfbfShaper : public Shaper {
 public:
  HfbfShaper(StyleCoefficients coeffs, FeedbackProvider& provider,
             LlmShapingOptions options = {})
      : coeffs_(coeffs), provider_(provider), options_(options) {}
  ShapedDataset shape(const Dataset& d) override;
  std::string name() const override {
    return "LLM-HFBF(" + rsw::to_string(coeffs_.profile) + ")";
  }
  const std::optional<PcaModel>& last_pca() const { return last_pca_; }
  const ShapingReport& last_report() const { return last_report_; }

 private:
  StyleCoefficients coeffs_;
  FeedbackProvider& provider_;
  LlmShapingOptions options_;
  std::optional<PcaModel> last_pca_;
  ShapingReport last_report_;
};

// --- Experiment orchestration ---

struct ExperimentConfig {
  std::vector<std::string> envs{"highway_default"};
  std::vector<FisKind> fis_list{FisKind::kNone};
  std::vector<Profile> profiles{Profile::kIdeal};
  ProviderKind provider = ProviderKind::kMock;
  std::vector<uint64_t> seeds{0, 1, 2};
  long total_timesteps = -1;  // -1: per-environment default budget

  PpoConfig ppo;
  FmaConfig fma;
  HighwayConfig highway;
  ReacherConfig reacher;
  ShapingWeights weights;
  FeatureParams features;
  std::optional<StyleCoefficients> custom_coeffs;

  Profile mock_profile = Profile::kIdeal;
  double mock_bias_tolerance = 0.5;
  LlmShapingOptions llm;
  RemoteLlmOptions remote;  // base_url/api_key resolved from env vars at use

  int surrogate_bootstrap_steps = 5000;
  SurrogateFitOptions surrogate;
  int eval_episodes = 5;
  std::filesystem::path output_dir = "runs";

  static ExperimentConfig from_config(const Config& cfg);
  long budget_for(const std::string& env_name) const;
};

struct ResultsRow {
  std::string env;
  std::string fis;      // e.g. "HF-D"
  std::string profile;  // "IDEAL" / "AGG" / "RAD" / "NA"
  uint64_t seed = 0;
  double fma = 0.0;
  double att = 0.0;
  double aer = 0.0;
  double wall_clock_s = 0.0;
  bool failed = false;
};

struct ExperimentCell {
  std::string env;
  FisKind fis = FisKind::kNone;
  Profile profile = Profile::kNa;
};

// The normalized env x fis x profile matrix (profile collapsed where the
// strategy ignores it; invalid combinations rejected).
std::vector<ExperimentCell> experiment_cells(const ExperimentConfig& cfg);

std::unique_ptr<EnvBase> make_env(const ExperimentConfig& cfg,
                                  const std::string& env_name);

// Trains and evaluates every (cell, seed), writing artifacts and a manifest
// under output_dir. A remote-provider failure marks that row failed and the
// matrix continues.
std::vector<ResultsRow> run(const ExperimentConfig& cfg);

struct DegradationEntry {
  std::string env;
  std::string strategy;  // "HF-D(AGG)", "LLM-D", ...
  double aer_mean = 0.0;
  double degradation_pct = 0.0;  // percentage AER drop vs HF-D(IDEAL)
  double normalized = 0.0;       // min-max scaled to [0, 100] within the env
};

// Per-environment percentage decrease from the HF-D(IDEAL) baseline, min-max
// normalized across that environment's strategies.
std::vector<DegradationEntry> degradation_report(
    std::span<const ResultsRow> rows);

void write_results_csv(std::span<const ResultsRow> rows,
                       const std::filesystem::path& path);
void write_timing_csv(std::span<const ResultsRow> rows,
                      const std::filesystem::path& path);
std::vector<ResultsRow> read_results_csv(const std::filesystem::path& path);
void write_degradation_csv(std::span<const DegradationEntry> entries,
                           const std::filesystem::path& path);
void write_degradation_json(std::span<const DegradationEntry> entries,
                            const std::filesystem::path& path);

// {files: [{path, bytes, fnv1a64}]} over every file under dir except the
// manifest itself.
void write_manifest(const std::filesystem::path& dir);

}  // namespace rsw
