#include "rsw/llm_gateway.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/text.hpp"

namespace rsw {

using nlohmann::json;

namespace {

const std::string kLlmDTemplate =
    R"(Data Details:
Episode: {episode_num}
Time Step: {time_step}
State: {state}
Action taken by agent: {action}
Reward: {reward}
Next state: {next_state}
Collision Flag: {collision_flag}
Lane Index: {lane_index}
Principal Components: PC1 = {pc1}, PC2 = {pc2}, PC3 = {pc3}

Your Task:
Analyze each row and provide feedback based on the following criteria:

1. Action Effectiveness Evaluation:
a. If the action is effective, respond with: llm_score_1 = +2
b. If the action is ineffective, respond with: llm_score_1 = -2
c. If the action has no effect, respond with: llm_score_1 = 0

2. Reward Appropriateness Evaluation:
a. If the reward is appropriate, respond with: llm_score_2 = +1
b. If the reward is inappropriate, respond with: llm_score_2 = -1

Expected Format: JSON object containing the following:
- Justification for the decision
- Action Effectiveness Evaluation: <llm_score_1>
- Reward Appropriateness Evaluation: <llm_score_2>
)";

const std::string kHfbfTemplate =
    R"(Data details:
Episode: {episode_num}, Time Step: {time_step}, State: {state}, Action: {action},
Reward: {reward}, Next state: {next_state}, Collision Flag: {collision_flag}, Lane Index: {lane_index},
Adjusted score: {adjusted_score}, PC1 (Speed, Lane Changes, Collision Influence): {pc1},
PC2 (Reward Variation, Smooth Driving): {pc2}, PC3 (Trajectory Consistency, Stability): {pc3}

Your Task: JSON objects of the following:
- VERDICT
- If the adjusted score is correct, respond with:
"Correct score allotted"
llm_score = {adjusted_score}
- If the adjusted score is biased, respond with:
"Biased score allotted"
- JUSTIFICATION
llm_score = Suggested appropriate score.
)";

const std::string kSystemPreamble =
    "You are an impartial evaluator of reinforcement learning trajectory "
    "data. Follow the requested response format exactly.";

std::string fmt_action(const Action& a) {
  if (a.size() == 1 && std::nearbyint(a[0]) == a[0])
    return std::to_string(static_cast<long long>(a[0]));
  return fmt_vector_g17(a);
}

std::string fmt_pc(const std::optional<std::array<double, 3>>& pc, int i) {
  return pc ? fmt_g17((*pc)[i]) : "NA";
}

// Balanced top-level JSON objects in free text, quote- and escape-aware.
std::vector<std::string> extract_json_objects(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while ((i = text.find('{', i)) != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    size_t j = i;
    for (; j < text.size(); ++j) {
      const char c = text[j];
      if (escaped) {
        escaped = false;
        continue;
      }
      if (c == '\\') {
        escaped = in_string;
        continue;
      }
      if (c == '"') {
        in_string = !in_string;
        continue;
      }
      if (in_string) continue;
      if (c == '{') ++depth;
      if (c == '}' && --depth == 0) break;
    }
    if (j < text.size() && depth == 0) {
      out.push_back(text.substr(i, j - i + 1));
      i = j + 1;
    } else {
      ++i;
    }
  }
  return out;
}

std::optional<int> find_int_score(const std::string& text, const std::string& key) {
  // matches: llm_score_1 = -2 | "llm_score_1": 2 | llm_score_1 = "+2"
  const std::regex re(key + "[\"']?\\s*[=:]\\s*[\"']?([+-]?\\d+)",
                      std::regex::icase);
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return std::stoi(m[1].str());
}

std::optional<std::string> find_justification(const std::string& raw) {
  for (const auto& block : extract_json_objects(raw)) {
    json j = json::parse(block, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    for (const auto& [key, value] : j.items()) {
      if (lowercase(key).find("justif") != std::string::npos && value.is_string())
        return value.get<std::string>();
    }
  }
  return std::nullopt;
}

// Runs fn(0..n-1) on at most max_in_flight worker threads; the first thrown
// exception aborts the remaining work and is rethrown on the caller.
template <typename Fn>
void bounded_parallel_for(size_t n, int max_in_flight, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(max_in_flight, static_cast<int>(n)));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::scoped_lock lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

const std::string& llm_d_prompt_template() { return kLlmDTemplate; }
const std::string& hfbf_prompt_template() { return kHfbfTemplate; }

std::string build_prompt_d(const Transition& tr,
                           const std::optional<std::array<double, 3>>& pc) {
  return render_template(
      kLlmDTemplate,
      {{"episode_num", std::to_string(tr.episode_id)},
       {"time_step", std::to_string(tr.t)},
       {"state", fmt_vector_g17(tr.state)},
       {"action", fmt_action(tr.action)},
       {"reward", fmt_g17(tr.reward)},
       {"next_state", fmt_vector_g17(tr.next_state)},
       {"collision_flag", std::to_string(tr.collision_flag)},
       {"lane_index", std::to_string(tr.lane_index)},
       {"pc1", fmt_pc(pc, 0)},
       {"pc2", fmt_pc(pc, 1)},
       {"pc3", fmt_pc(pc, 2)}});
}

std::string build_prompt_hfbf(const ShapedTransition& tr,
                              const std::optional<std::array<double, 3>>& pc_override) {
  const auto& pc = tr.pc ? tr.pc : pc_override;
  if (!pc)
    throw ContractViolation("build_prompt_hfbf: principal components missing");
  return render_template(
      kHfbfTemplate,
      {{"episode_num", std::to_string(tr.episode_id)},
       {"time_step", std::to_string(tr.t)},
       {"state", fmt_vector_g17(tr.state)},
       {"action", fmt_action(tr.action)},
       {"reward", fmt_g17(tr.reward)},
       {"next_state", fmt_vector_g17(tr.next_state)},
       {"collision_flag", std::to_string(tr.collision_flag)},
       {"lane_index", std::to_string(tr.lane_index)},
       {"adjusted_score", fmt_shortest(tr.shaped_reward)},
       {"pc1", fmt_g17((*pc)[0])},
       {"pc2", fmt_g17((*pc)[1])},
       {"pc3", fmt_g17((*pc)[2])}});
}

LlmVerdictD parse_verdict_d(const std::string& raw) {
  const auto s1 = find_int_score(raw, "llm_score_1");
  const auto s2 = find_int_score(raw, "llm_score_2");
  if (!s1 || !s2)
    throw ParseError("response lacks llm_score_1 and/or llm_score_2", raw);
  if (*s1 != -2 && *s1 != 0 && *s1 != 2)
    throw ParseError("llm_score_1 outside {-2, 0, +2}: " + std::to_string(*s1), raw);
  if (*s2 != -1 && *s2 != 1)
    throw ParseError("llm_score_2 outside {-1, +1}: " + std::to_string(*s2), raw);
  LlmVerdictD v;
  v.llm_score_1 = *s1;
  v.llm_score_2 = *s2;
  v.justification = find_justification(raw).value_or(trim(raw));
  return v;
}

BiasVerdict parse_verdict_hfbf(const std::string& raw,
                               double submitted_adjusted_score) {
  const std::string lower = lowercase(raw);
  const bool biased = lower.find("biased score allotted") != std::string::npos;
  const bool correct = lower.find("correct score allotted") != std::string::npos;
  if (!biased && !correct)
    throw ParseError("response lacks a verdict string", raw);

  BiasVerdict v;
  v.biased = biased;  // a response carrying both counts as flagged
  v.justification = find_justification(raw).value_or(trim(raw));
  if (!v.biased) {
    v.llm_score = submitted_adjusted_score;
    return v;
  }
  // llm_score but not llm_score_1 / llm_score_2
  const std::regex re(
      "llm_score(?!_)[\"']?\\s*[=:]\\s*[\"']?([+-]?(?:\\d+\\.?\\d*|\\.\\d+)"
      "(?:[eE][+-]?\\d+)?)",
      std::regex::icase);
  std::smatch m;
  if (!std::regex_search(raw, m, re))
    throw ParseError("biased verdict lacks a suggested llm_score", raw);
  v.llm_score = std::stod(m[1].str());
  return v;
}

MockOracle::MockOracle(Profile profile, double bias_tolerance)
    : profile_(profile), tau_(bias_tolerance) {
  if (profile == Profile::kNa)
    throw ConfigError("MockOracle requires a concrete reference profile");
}

double MockOracle::reference_score(const StepContext& ctx) const {
  switch (profile_) {
    case Profile::kIdeal: return ctx.rule_scores.ideal;
    case Profile::kAgg: return ctx.rule_scores.agg;
    case Profile::kRad: return ctx.rule_scores.rad;
    case Profile::kNa: break;
  }
  throw ConfigError("MockOracle: invalid profile");
}

std::string MockOracle::evaluate(const FeedbackRequest& request) {
  const StepContext& ctx = request.context;
  const double zeta = reference_score(ctx);
  if (!ctx.is_hfbf) {
    const int s1 = zeta > 0.5 ? 2 : (zeta < -0.5 ? -2 : 0);
    const bool consistent = ctx.collision_flag != 0 ? ctx.intrinsic_reward < 0.0
                                                    : ctx.intrinsic_reward >= 0.0;
    const int s2 = consistent ? 1 : -1;
    json out;
    out["justification"] =
        "Rule-referenced assessment: step score " + fmt_g17(zeta) +
        ", collision_flag " + std::to_string(ctx.collision_flag) + ".";
    out["llm_score_1"] = s1;
    out["llm_score_2"] = s2;
    return out.dump();
  }
  if (std::abs(ctx.adjusted_score - zeta) > tau_) {
    return "VERDICT: Biased score allotted\nJUSTIFICATION: Adjusted score "
           "deviates from the reference rule score " +
           fmt_g17(zeta) + " by more than " + fmt_g17(tau_) +
           ".\nllm_score = " + fmt_g17(zeta) + "\n";
  }
  return "VERDICT: Correct score allotted\nJUSTIFICATION: Adjusted score is "
         "within tolerance of the reference rule score.\nllm_score = " +
         fmt_g17(ctx.adjusted_score) + "\n";
}

RemoteLlm::RemoteLlm(RemoteLlmOptions options) : opt_(std::move(options)) {
  if (opt_.base_url.empty())
    throw ConfigError("remote provider: base URL not configured (LLM_API_BASE)");
  if (opt_.api_key.empty())
    throw ConfigError("remote provider: API key not configured (LLM_API_KEY)");
  if (opt_.model.empty())
    throw ConfigError("remote provider: model name not configured (llm.model)");
  const auto scheme = opt_.base_url.find("://");
  const size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = opt_.base_url.find('/', host_start);
  origin_ = slash == std::string::npos ? opt_.base_url : opt_.base_url.substr(0, slash);
  path_prefix_ = slash == std::string::npos ? "" : opt_.base_url.substr(slash);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string RemoteLlm::evaluate(const FeedbackRequest& request) {
  json body;
  body["model"] = opt_.model;
  body["messages"] = json::array({json{{"role", "system"}, {"content", kSystemPreamble}},
                                  json{{"role", "user"}, {"content", request.prompt}}});
  body["temperature"] = opt_.temperature;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= opt_.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(200 * attempt));
    httplib::Client client(origin_);
    client.set_connection_timeout(opt_.timeout_s, 0);
    client.set_read_timeout(opt_.timeout_s, 0);
    client.set_default_headers({{"Authorization", "Bearer " + opt_.api_key}});
    auto res = client.Post(path_prefix_ + "/chat/completions", payload,
                           "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) {
      last_error = "response body is not JSON";
      continue;
    }
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      last_error = std::string("unexpected response shape: ") + e.what();
    }
  }
  throw ProviderError("remote provider failed after " +
                      std::to_string(opt_.max_retries + 1) + " attempts: " +
                      last_error);
}

namespace {

// Per-step ask-parse loop shared by both pipelines. Re-asks append the parse
// failure so a real model can self-correct; the mock never fails to parse.
template <typename Parse>
auto ask_with_retries(FeedbackProvider& provider, const std::string& prompt,
                      const StepContext& ctx, int parse_retries, Parse&& parse)
    -> std::optional<decltype(parse(std::string{}))> {
  std::string current = prompt;
  for (int attempt = 0; attempt <= parse_retries; ++attempt) {
    const std::string raw = provider.evaluate({current, ctx});
    try {
      return parse(raw);
    } catch (const ParseError& e) {
      current = prompt +
                "\n\nYour previous response could not be parsed (" + e.what() +
                "). Respond again following the required format exactly.";
    }
  }
  return std::nullopt;
}

bool rules_defined_for(const std::string& env_id) {
  return env_id == "highway" || env_id == "reacher";
}

}  // namespace

ShapedDataset shape_dataset_llm_d(const Dataset& d, FeedbackProvider& provider,
                                  const LlmShapingOptions& options,
                                  ShapingReport* report) {
  ShapedDataset out(d.env_id());
  if (d.empty()) {
    if (report) *report = {};
    return out;
  }
  std::vector<RuleScores> rules(d.size());
  if (rules_defined_for(d.env_id()))
    rules = rule_scores_all(d, options.weights, options.features);

  std::vector<double> shaped(d.size(), 0.0);
  std::vector<char> skipped(d.size(), 0);
  std::atomic<size_t> completed{0};
  try {
    bounded_parallel_for(d.size(), options.max_in_flight, [&](size_t i) {
      StepContext ctx;
      ctx.rule_scores = rules[i];
      ctx.intrinsic_reward = d[i].reward;
      ctx.collision_flag = d[i].collision_flag;
      const std::string prompt = build_prompt_d(d[i], std::nullopt);
      const auto verdict = ask_with_retries(provider, prompt, ctx,
                                            options.parse_retries, parse_verdict_d);
      if (verdict) {
        shaped[i] = options.alpha1 * verdict->llm_score_1 +
                    options.alpha2 * verdict->llm_score_2;
      } else {
        skipped[i] = 1;  // shaped as 0
      }
      completed.fetch_add(1);
    });
  } catch (const ProviderError& e) {
    throw ProviderError("LLM-D shaping aborted after " +
                        std::to_string(completed.load()) + "/" +
                        std::to_string(d.size()) + " steps: " + e.what());
  }

  ShapingReport rep;
  rep.steps = d.size();
  for (size_t i = 0; i < d.size(); ++i) {
    rep.skipped += skipped[i];
    ShapedTransition st;
    static_cast<Transition&>(st) = d[i];
    st.shaped_reward = shaped[i];
    st.augmented_reward = st.reward + st.shaped_reward;
    st.shaping_source = ShapingSource::kLlmD;
    st.profile = Profile::kNa;
    out.append(std::move(st));
  }
  if (report) *report = rep;
  return out;
}

ShapedDataset shape_dataset_hfbf(const ShapedDataset& biased, const PcaModel& pca,
                                 FeedbackProvider& provider,
                                 const LlmShapingOptions& options,
                                 ShapingReport* report) {
  ShapedDataset out(biased.env_id());
  if (biased.empty()) {
    if (report) *report = {};
    return out;
  }
  for (size_t i = 0; i < biased.size(); ++i) {
    const auto src = biased[i].shaping_source;
    if (src != ShapingSource::kHfD && src != ShapingSource::kLlmHfbf)
      throw ContractViolation(
          "shape_dataset_hfbf: input must carry HF-D (or prior LLM-HFBF) shaping");
  }
  if (pca.feature_names != pca_feature_names(biased.env_id()))
    throw ContractViolation(
        "shape_dataset_hfbf: PCA model was not fitted on this dataset's step features");

  // Reference rule scores for the mock provider's context.
  Dataset plain(biased.env_id());
  for (size_t i = 0; i < biased.size(); ++i)
    plain.append(static_cast<const Transition&>(biased[i]));
  const auto rules = rule_scores_all(plain, options.weights, options.features);

  std::vector<BiasVerdict> verdicts(biased.size());
  std::vector<std::array<double, 3>> pcs(biased.size());
  std::vector<char> skipped(biased.size(), 0);
  std::atomic<size_t> completed{0};
  try {
    bounded_parallel_for(biased.size(), options.max_in_flight, [&](size_t i) {
      const ShapedTransition& tr = biased[i];
      pcs[i] = pca.project3(pca_step_features(tr, biased.env_id()));
      StepContext ctx;
      ctx.rule_scores = rules[i];
      ctx.intrinsic_reward = tr.reward;
      ctx.collision_flag = tr.collision_flag;
      ctx.adjusted_score = tr.shaped_reward;
      ctx.is_hfbf = true;
      const std::string prompt = build_prompt_hfbf(tr, pcs[i]);
      const auto verdict =
          ask_with_retries(provider, prompt, ctx, options.parse_retries,
                           [&](const std::string& raw) {
                             return parse_verdict_hfbf(raw, tr.shaped_reward);
                           });
      if (verdict) {
        verdicts[i] = *verdict;
      } else {
        skipped[i] = 1;  // correction skipped, submitted score kept
        verdicts[i] = BiasVerdict{false, tr.shaped_reward, ""};
      }
      completed.fetch_add(1);
    });
  } catch (const ProviderError& e) {
    throw ProviderError("LLM-HFBF shaping aborted after " +
                        std::to_string(completed.load()) + "/" +
                        std::to_string(biased.size()) + " steps: " + e.what());
  }

  ShapingReport rep;
  rep.steps = biased.size();
  for (size_t i = 0; i < biased.size(); ++i) {
    rep.skipped += skipped[i];
    rep.flagged += verdicts[i].biased ? 1 : 0;
    ShapedTransition st;
    static_cast<Transition&>(st) = static_cast<const Transition&>(biased[i]);
    st.shaped_reward = verdicts[i].biased ? verdicts[i].llm_score
                                          : biased[i].shaped_reward;
    st.augmented_reward = st.reward + st.shaped_reward;
    st.shaping_source = ShapingSource::kLlmHfbf;
    st.profile = biased[i].profile;
    st.bias_flagged = verdicts[i].biased;
    st.pc = pcs[i];
    out.append(std::move(st));
  }
  if (report) *report = rep;
  return out;
}

}  // namespace rsw
