#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "rsw/feedback_rules.hpp"
#include "rsw/pca.hpp"
#include "rsw/trajectory.hpp"

namespace rsw {

// Structured snapshot travelling with each rendered prompt. Remote providers
// see only the prompt text; the deterministic mock answers from the snapshot,
// which keeps CI offline and exactly reproducible.
struct StepContext {
  RuleScores rule_scores;
  double intrinsic_reward = 0.0;
  int collision_flag = 0;
  double adjusted_score = 0.0;  // submitted human shaping score (HFBF only)
  bool is_hfbf = false;
};

struct FeedbackRequest {
  std::string prompt;
  StepContext context;
};

class FeedbackProvider {
 public:
  virtual ~FeedbackProvider() = default;
  virtual std::string evaluate(const FeedbackRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Deterministic stand-in provider constructed from the rule-proxy feedback:
// answers LLM-D prompts with the sign of the reference rule score and flags
// HFBF bias when the submitted score deviates from the reference by more
// than `bias_tolerance`. Pure, so idempotent and safe to share across threads.
class MockOracle : public FeedbackProvider {
 public:
  explicit MockOracle(Profile profile = Profile::kIdeal, double bias_tolerance = 0.5);
  std::string evaluate(const FeedbackRequest& request) override;
  std::string name() const override { return "mock"; }

  Profile profile() const { return profile_; }
  double bias_tolerance() const { return tau_; }

 private:
  double reference_score(const StepContext& ctx) const;
  Profile profile_;
  double tau_;
};

struct RemoteLlmOptions {
  std::string base_url;  // e.g. https://host/v1 (env LLM_API_BASE)
  std::string api_key;   // bearer token (env LLM_API_KEY)
  std::string model;
  double temperature = 0.0;
  int timeout_s = 60;
  int max_retries = 2;  // transport retries per request
};

// OpenAI-compatible chat-completions client (POST {base}/chat/completions).
class RemoteLlm : public FeedbackProvider {
 public:
  explicit RemoteLlm(RemoteLlmOptions options);
  std::string evaluate(const FeedbackRequest& request) override;
  std::string name() const override { return "remote"; }

 private:
  RemoteLlmOptions opt_;
  std::string origin_;       // scheme://host[:port]
  std::string path_prefix_;  // anything after the origin
};

// Parsed LLM-D verdict: action effectiveness in {-2, 0, +2} and reward
// appropriateness in {-1, +1}.
struct LlmVerdictD {
  int llm_score_1 = 0;
  int llm_score_2 = 0;
  std::string justification;
};

struct BiasVerdict {
  bool biased = false;
  double llm_score = 0.0;  // equals the submitted score when not biased
  std::string justification;
};

const std::string& llm_d_prompt_template();
const std::string& hfbf_prompt_template();

// Renders the per-step evaluation prompt. Floats carry 17 significant digits;
// absent principal components render as "NA". Byte-stable for equal inputs.
std::string build_prompt_d(const Transition& tr,
                           const std::optional<std::array<double, 3>>& pc);

// Renders the bias-flagging prompt. The adjusted score is the submitted
// shaping score. Uses tr.pc, or pc_override when the transition carries none;
// missing both is an error.
std::string build_prompt_hfbf(
    const ShapedTransition& tr,
    const std::optional<std::array<double, 3>>& pc_override = std::nullopt);

// Extracts the verdict from arbitrary response text (JSON object preferred,
// plain "llm_score_N = v" assignments accepted). Throws ParseError carrying
// the raw text when no valid verdict is present.
LlmVerdictD parse_verdict_d(const std::string& raw);

// Verdict string decides; when biased the suggested score is read from the
// response, otherwise the submitted score is echoed regardless of the text.
BiasVerdict parse_verdict_hfbf(const std::string& raw,
                               double submitted_adjusted_score);

struct LlmShapingOptions {
  double alpha1 = 0.25;  // scales llm_score_1 into reward units (+-0.5 / 0)
  double alpha2 = 0.2;   // scales llm_score_2 into reward units (+-0.2)
  int parse_retries = 2;
  int max_in_flight = 1;
  ShapingWeights weights;
  FeatureParams features;
};

struct ShapingReport {
  size_t steps = 0;
  size_t skipped = 0;  // unparseable after retries (shaped as 0 / left as-is)
  size_t flagged = 0;  // HFBF: steps the provider flagged as biased
};

// LLM-D: r_hat = alpha1 * llm_score_1 + alpha2 * llm_score_2 per step.
ShapedDataset shape_dataset_llm_d(const Dataset& d, FeedbackProvider& provider,
                                  const LlmShapingOptions& options = {},
                                  ShapingReport* report = nullptr);

// LLM-HFBF: selective correction of an HF-D shaped dataset. Flagged steps take
// the provider's corrected score; unflagged steps keep the submitted score
// bit-for-bit. The PCA model must be fitted on this dataset's step features.
ShapedDataset shape_dataset_hfbf(const ShapedDataset& biased, const PcaModel& pca,
                                 FeedbackProvider& provider,
                                 const LlmShapingOptions& options = {},
                                 ShapingReport* report = nullptr);

}  // namespace rsw
