#include "rsw/policy_optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/text.hpp"

namespace rsw {

namespace {

constexpr double kLogStdInit = -0.5;
constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*ln(2*pi)

// rng stream ids
constexpr uint64_t kStreamPolicyInit = 1;
constexpr uint64_t kStreamValueInit = 2;
constexpr uint64_t kStreamTrain = 3;
constexpr uint64_t kStreamEpisodes = 4;
constexpr uint64_t kStreamEval = 5;

void softmax_from_logits(std::span<const double> z, std::vector<double>& p,
                         double& logsumexp) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  p.resize(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  logsumexp = m + std::log(sum);
  for (auto& v : p) v /= sum;
}

}  // namespace

void PpoConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("ppo: clip epsilon must be in (0, 1) or inf");
  if (std::isfinite(clip_epsilon) && clip_epsilon >= 1.0)
    throw ConfigError("ppo: clip epsilon must be in (0, 1) or inf");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo: gamma must be in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0))
    throw ConfigError("ppo: gae_lambda must be in (0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("ppo: learning_rate must be positive");
  if (epochs_per_batch < 1) throw ConfigError("ppo: epochs_per_batch must be >= 1");
  if (minibatch_size < 1) throw ConfigError("ppo: minibatch_size must be >= 1");
  if (batch_timesteps < 1) throw ConfigError("ppo: batch_timesteps must be >= 1");
  if (total_timesteps < 0) throw ConfigError("ppo: total_timesteps must be >= 0");
  if (hidden_dim < 1) throw ConfigError("ppo: hidden_dim must be >= 1");
}

Policy Policy::create(const EnvBase& env, int hidden_dim, uint64_t seed) {
  Policy p;
  const auto space = env.action_space();
  p.kind = space.kind;
  p.obs_dim = env.obs_dim();
  p.action_count = space.size;
  Rng rng(mix_seed(seed, kStreamPolicyInit));
  p.net = Mlp(p.obs_dim, hidden_dim, p.action_count, rng);
  if (p.kind == ActionKind::kContinuous)
    p.log_std.assign(p.action_count, kLogStdInit);
  p.obs_scale = env.obs_scale();
  if (!p.obs_scale.empty() && p.obs_scale.size() != static_cast<size_t>(p.obs_dim))
    throw ConfigError("policy: obs_scale length mismatch");
  return p;
}

std::vector<double> Policy::featurize(std::span<const double> obs) const {
  std::vector<double> x(obs.begin(), obs.end());
  if (!obs_scale.empty()) {
    for (size_t i = 0; i < x.size(); ++i) x[i] *= obs_scale[i];
  }
  return x;
}

Policy::Sampled Policy::sample(std::span<const double> obs, Rng& rng) const {
  const auto x = featurize(obs);
  const auto out = net.forward(x);
  Sampled s;
  if (kind == ActionKind::kDiscrete) {
    std::vector<double> p;
    double lse = 0.0;
    softmax_from_logits(out, p, lse);
    const double u = rng.uniform();
    double acc = 0.0;
    int a = action_count - 1;
    for (int i = 0; i < action_count; ++i) {
      acc += p[i];
      if (u < acc) {
        a = i;
        break;
      }
    }
    s.action = {static_cast<double>(a)};
    s.logprob = out[a] - lse;
  } else {
    s.action.resize(action_count);
    s.logprob = 0.0;
    for (int i = 0; i < action_count; ++i) {
      const double mean = std::tanh(out[i]);
      const double sigma = std::exp(log_std[i]);
      const double z = rng.normal();
      s.action[i] = mean + sigma * z;
      s.logprob += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
    }
  }
  return s;
}

Action Policy::mode(std::span<const double> obs) const {
  const auto out = net.forward(featurize(obs));
  if (kind == ActionKind::kDiscrete) {
    const int a = static_cast<int>(
        std::max_element(out.begin(), out.end()) - out.begin());
    return {static_cast<double>(a)};
  }
  Action a(action_count);
  for (int i = 0; i < action_count; ++i) a[i] = std::tanh(out[i]);
  return a;
}

double Policy::logprob(std::span<const double> obs, const Action& action) const {
  const auto out = net.forward(featurize(obs));
  if (kind == ActionKind::kDiscrete) {
    std::vector<double> p;
    double lse = 0.0;
    softmax_from_logits(out, p, lse);
    return out[static_cast<int>(action[0])] - lse;
  }
  double lp = 0.0;
  for (int i = 0; i < action_count; ++i) {
    const double mean = std::tanh(out[i]);
    const double sigma = std::exp(log_std[i]);
    const double z = (action[i] - mean) / sigma;
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return lp;
}

nlohmann::json Policy::to_json() const {
  return nlohmann::json{
      {"kind", kind == ActionKind::kDiscrete ? "discrete" : "continuous"},
      {"obs_dim", obs_dim},
      {"action_count", action_count},
      {"net", net.to_json()},
      {"log_std", log_std},
      {"obs_scale", obs_scale}};
}

Policy Policy::from_json(const nlohmann::json& j) {
  Policy p;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "discrete")
    p.kind = ActionKind::kDiscrete;
  else if (kind == "continuous")
    p.kind = ActionKind::kContinuous;
  else
    throw DataError("policy checkpoint: unknown kind '" + kind + "'");
  p.obs_dim = j.at("obs_dim").get<int>();
  p.action_count = j.at("action_count").get<int>();
  p.net = Mlp::from_json(j.at("net"));
  p.log_std = j.at("log_std").get<std::vector<double>>();
  p.obs_scale = j.at("obs_scale").get<std::vector<double>>();
  if (p.net.in_dim() != p.obs_dim || p.net.out_dim() != p.action_count)
    throw DataError("policy checkpoint: shape metadata mismatch");
  return p;
}

void PolicyBundle::save(const std::filesystem::path& path) const {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  nlohmann::ordered_json j;
  j["policy"] = policy.to_json();
  j["value"] = value.to_json();
  out << j.dump(2) << "\n";
}

PolicyBundle PolicyBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint: " + e.what());
  }
  PolicyBundle b;
  b.policy = Policy::from_json(j.at("policy"));
  b.value = Mlp::from_json(j.at("value"));
  return b;
}

AdvantageBatch gae(std::span<const double> rewards, std::span<const double> values,
                   std::span<const uint8_t> terminals, double gamma, double lambda,
                   double last_value) {
  const size_t n = rewards.size();
  if (values.size() != n || terminals.size() != n)
    throw ContractViolation("gae: rewards/values/terminals length mismatch");
  AdvantageBatch out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  out.normalized.assign(n, 0.0);
  if (n == 0) return out;

  double carry = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double nonterminal = terminals[i] ? 0.0 : 1.0;
    const double v_next = terminals[i] ? 0.0
                          : (i + 1 < n ? values[i + 1] : last_value);
    // nonterminal blocks the tail at episode ends; v_next is already zeroed
    // there, so nothing leaks across episodes.
    const double delta = rewards[i] + gamma * v_next - values[i];
    carry = delta + gamma * lambda * nonterminal * carry;
    out.advantages[i] = carry;
  }
  for (size_t i = 0; i < n; ++i) out.returns[i] = out.advantages[i] + values[i];

  double mean = 0.0;
  for (double a : out.advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : out.advantages) var += (a - mean) * (a - mean);
  const double stddev = std::sqrt(var / static_cast<double>(n));
  if (n > 1 && stddev > 0.0) {
    for (size_t i = 0; i < n; ++i)
      out.normalized[i] = (out.advantages[i] - mean) / (stddev + 1e-8);
  }
  return out;
}

LossTerms ppo_loss_and_grad(const Policy& policy, const Mlp& value,
                            const MiniBatch& mb, const PpoConfig& cfg,
                            std::vector<double>* grad_policy,
                            std::vector<double>* grad_log_std,
                            std::vector<double>* grad_value) {
  const size_t n = mb.obs.size();
  if (n == 0) throw ContractViolation("ppo loss: empty minibatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;

  LossTerms terms;
  Mlp::Cache pol_cache, val_cache;
  std::vector<double> dlogits(policy.action_count, 0.0);
  std::vector<double> p;

  for (size_t i = 0; i < n; ++i) {
    policy.net.forward(mb.obs[i], pol_cache);
    const double advantage = mb.advantages[i];
    double logprob_new = 0.0;
    double entropy = 0.0;

    if (policy.kind == ActionKind::kDiscrete) {
      double lse = 0.0;
      softmax_from_logits(pol_cache.out, p, lse);
      const int a = static_cast<int>(mb.actions[i][0]);
      logprob_new = pol_cache.out[a] - lse;
      entropy = lse;
      for (int j = 0; j < policy.action_count; ++j)
        entropy -= p[j] * pol_cache.out[j];

      const double ratio = std::exp(logprob_new - mb.behavior_logprobs[i]);
      const double unclipped = ratio * advantage;
      const double clipped = std::clamp(ratio, lo, hi) * advantage;
      terms.policy_loss += -std::min(unclipped, clipped) * inv_n;
      terms.entropy += entropy * inv_n;

      if (grad_policy != nullptr) {
        // d(-min)/d(logprob): the unclipped branch contributes -ratio*A,
        // an active clipped branch has zero derivative through ratio.
        const double dlp = unclipped <= clipped ? -ratio * advantage * inv_n : 0.0;
        for (int j = 0; j < policy.action_count; ++j) {
          const double indicator = j == a ? 1.0 : 0.0;
          const double dH = -p[j] * ((pol_cache.out[j] - lse) + entropy);
          dlogits[j] = dlp * (indicator - p[j]) - cfg.entropy_coef * dH * inv_n;
        }
        policy.net.backward(pol_cache, dlogits, *grad_policy);
      }
      if (!std::isfinite(terms.policy_loss))
        throw NumericalError("ppo loss: non-finite policy term at batch index " +
                             std::to_string(mb.source_indices.empty()
                                                ? static_cast<int64_t>(i)
                                                : mb.source_indices[i]));
    } else {
      const int dim = policy.action_count;
      double dlp_sum_check = 0.0;
      std::vector<double> dlp_draw(dim, 0.0);
      std::vector<double> dlp_dls(dim, 0.0);
      for (int k = 0; k < dim; ++k) {
        const double mean = std::tanh(pol_cache.out[k]);
        const double ls = policy.log_std[k];
        const double sigma = std::exp(ls);
        const double z = (mb.actions[i][k] - mean) / sigma;
        logprob_new += -0.5 * z * z - ls - kHalfLog2Pi;
        entropy += ls + 0.5 + kHalfLog2Pi;
        dlp_draw[k] = (z / sigma) * (1.0 - mean * mean);  // d logprob / d raw out
        dlp_dls[k] = z * z - 1.0;
        dlp_sum_check += z;
      }
      const double ratio = std::exp(logprob_new - mb.behavior_logprobs[i]);
      const double unclipped = ratio * advantage;
      const double clipped = std::clamp(ratio, lo, hi) * advantage;
      terms.policy_loss += -std::min(unclipped, clipped) * inv_n;
      terms.entropy += entropy * inv_n;
      if (!std::isfinite(terms.policy_loss) || !std::isfinite(dlp_sum_check))
        throw NumericalError("ppo loss: non-finite policy term at batch index " +
                             std::to_string(mb.source_indices.empty()
                                                ? static_cast<int64_t>(i)
                                                : mb.source_indices[i]));

      const double dlp = unclipped <= clipped ? -ratio * advantage * inv_n : 0.0;
      if (grad_policy != nullptr) {
        for (int k = 0; k < dim; ++k) dlogits[k] = dlp * dlp_draw[k];
        policy.net.backward(pol_cache, dlogits, *grad_policy);
      }
      if (grad_log_std != nullptr) {
        for (int k = 0; k < dim; ++k) {
          // entropy depends on log_std only: dH/dls = 1
          (*grad_log_std)[k] += dlp * dlp_dls[k] - cfg.entropy_coef * inv_n;
        }
      }
    }

    value.forward(mb.obs[i], val_cache);
    const double v = val_cache.out[0];
    const double err = v - mb.returns[i];
    terms.value_loss += err * err * inv_n;
    if (!std::isfinite(terms.value_loss))
      throw NumericalError("ppo loss: non-finite value term at batch index " +
                           std::to_string(mb.source_indices.empty()
                                              ? static_cast<int64_t>(i)
                                              : mb.source_indices[i]));
    if (grad_value != nullptr) {
      const double dv = cfg.value_coef * 2.0 * err * inv_n;
      value.backward(val_cache, std::span(&dv, 1), *grad_value);
    }
  }

  terms.total = terms.policy_loss + cfg.value_coef * terms.value_loss -
                cfg.entropy_coef * terms.entropy;
  return terms;
}

Dataset collect(EnvBase& env, const Policy& policy, long n_timesteps, Rng& rng,
                uint64_t episode_seed_base, int64_t episode_id_start) {
  Dataset d(env.env_id());
  long steps = 0;
  int64_t episode = episode_id_start;
  while (steps < n_timesteps) {
    std::vector<double> obs =
        env.reset(mix_seed(episode_seed_base, static_cast<uint64_t>(episode)));
    int64_t t = 0;
    while (!env.terminated()) {
      const auto sampled = policy.sample(obs, rng);
      const StepResult res = env.step(sampled.action);
      Transition tr;
      tr.episode_id = episode;
      tr.t = t;
      tr.state = obs;
      tr.action = sampled.action;
      tr.reward = res.reward;
      tr.next_state = res.obs;
      tr.collision_flag = res.collision_flag;
      tr.lane_index = res.lane_index;
      tr.terminal = res.terminated;
      tr.behavior_logprob = sampled.logprob;
      d.append(std::move(tr));
      obs = res.obs;
      ++t;
      ++steps;
    }
    ++episode;
  }
  return d;
}

ShapedDataset collect_shaped(EnvBase& env, const Policy& policy, long n_timesteps,
                             Rng& rng, uint64_t episode_seed_base, Shaper& shaper,
                             int64_t episode_id_start) {
  return shaper.shape(
      collect(env, policy, n_timesteps, rng, episode_seed_base, episode_id_start));
}

namespace {

struct BatchArrays {
  std::vector<std::vector<double>> obs;  // featurized
  std::vector<Action> actions;
  std::vector<double> behavior_logprobs;
  std::vector<double> train_rewards;  // augmented when shaped
  std::vector<double> intrinsic_rewards;
  std::vector<double> shaped_rewards;
  std::vector<uint8_t> terminals;
};

template <typename Item>
void fill_arrays(std::span<const Item> items, const Policy& policy,
                 BatchArrays& b) {
  const size_t n = items.size();
  b.obs.resize(n);
  b.actions.resize(n);
  b.behavior_logprobs.resize(n);
  b.train_rewards.resize(n);
  b.intrinsic_rewards.resize(n);
  b.shaped_rewards.assign(n, 0.0);
  b.terminals.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Item& tr = items[i];
    b.obs[i] = policy.featurize(tr.state);
    b.actions[i] = tr.action;
    b.behavior_logprobs[i] = tr.behavior_logprob;
    b.intrinsic_rewards[i] = tr.reward;
    if constexpr (std::is_same_v<Item, ShapedTransition>) {
      b.train_rewards[i] = tr.augmented_reward;
      b.shaped_rewards[i] = tr.shaped_reward;
    } else {
      b.train_rewards[i] = tr.reward;
    }
    b.terminals[i] = tr.terminal ? 1 : 0;
  }
}

}  // namespace

TrainResult train(EnvBase& env, const PpoConfig& cfg, Shaper* shaper,
                  uint64_t seed) {
  cfg.validate();
  TrainResult result;
  result.bundle.policy = Policy::create(env, cfg.hidden_dim, seed);
  Rng value_rng(mix_seed(seed, kStreamValueInit));
  result.bundle.value = Mlp(env.obs_dim(), cfg.hidden_dim, 1, value_rng);
  Policy& policy = result.bundle.policy;
  Mlp& value = result.bundle.value;

  Rng rng(mix_seed(seed, kStreamTrain));
  const uint64_t episode_seed_base = mix_seed(seed, kStreamEpisodes);

  Adam opt_policy(policy.net.params().size(), cfg.learning_rate);
  Adam opt_log_std(policy.log_std.size(), cfg.learning_rate);
  Adam opt_value(value.params().size(), cfg.learning_rate);

  std::vector<double> grad_policy(policy.net.params().size());
  std::vector<double> grad_log_std(policy.log_std.size());
  std::vector<double> grad_value(value.params().size());

  long consumed = 0;
  int batch_index = 0;
  BatchArrays batch;
  Mlp::Cache cache;

  while (consumed < cfg.total_timesteps) {
    const long want = cfg.single_batch
                          ? cfg.total_timesteps
                          : std::min<long>(cfg.batch_timesteps,
                                           cfg.total_timesteps - consumed);
    const Dataset collected = collect(env, policy, want, rng, episode_seed_base,
                                      result.episodes);
    result.episodes += static_cast<int64_t>(collected.episodes().size());
    consumed += static_cast<long>(collected.size());

    if (shaper != nullptr) {
      const ShapedDataset shaped = shaper->shape(collected);
      fill_arrays<ShapedTransition>(shaped.all(), policy, batch);
    } else {
      fill_arrays<Transition>(collected.all(), policy, batch);
    }

    const size_t n = batch.obs.size();
    std::vector<double> values(n);
    for (size_t i = 0; i < n; ++i) {
      value.forward(batch.obs[i], cache);
      values[i] = cache.out[0];
    }
    const AdvantageBatch adv = gae(batch.train_rewards, values, batch.terminals,
                                   cfg.gamma, cfg.gae_lambda);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    LossTerms sums;
    int updates = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
      for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
        std::swap(order[i - 1], order[j]);
      }
      for (size_t start = 0; start < n;
           start += static_cast<size_t>(cfg.minibatch_size)) {
        const size_t end =
            std::min(start + static_cast<size_t>(cfg.minibatch_size), n);
        MiniBatch mb;
        mb.obs.reserve(end - start);
        for (size_t k = start; k < end; ++k) {
          const size_t idx = order[k];
          mb.obs.push_back(batch.obs[idx]);
          mb.actions.push_back(batch.actions[idx]);
          mb.behavior_logprobs.push_back(batch.behavior_logprobs[idx]);
          mb.advantages.push_back(adv.normalized[idx]);
          mb.returns.push_back(adv.returns[idx]);
          mb.source_indices.push_back(static_cast<int64_t>(idx));
        }
        std::fill(grad_policy.begin(), grad_policy.end(), 0.0);
        std::fill(grad_log_std.begin(), grad_log_std.end(), 0.0);
        std::fill(grad_value.begin(), grad_value.end(), 0.0);
        const LossTerms terms = ppo_loss_and_grad(
            policy, value, mb, cfg, &grad_policy,
            policy.log_std.empty() ? nullptr : &grad_log_std, &grad_value);
        clip_grad_norm(grad_policy, cfg.max_grad_norm);
        clip_grad_norm(grad_value, cfg.max_grad_norm);
        opt_policy.step(policy.net.params(), grad_policy);
        if (!policy.log_std.empty()) {
          clip_grad_norm(grad_log_std, cfg.max_grad_norm);
          opt_log_std.step(policy.log_std, grad_log_std);
          for (auto& ls : policy.log_std)
            ls = std::clamp(ls, kLogStdMin, kLogStdMax);
        }
        opt_value.step(value.params(), grad_value);
        sums.policy_loss += terms.policy_loss;
        sums.value_loss += terms.value_loss;
        sums.entropy += terms.entropy;
        ++updates;
      }
    }

    TrainLogRow row;
    row.batch_index = batch_index++;
    row.timesteps = consumed;
    row.mean_intrinsic_reward =
        std::accumulate(batch.intrinsic_rewards.begin(),
                        batch.intrinsic_rewards.end(), 0.0) / n;
    row.mean_shaped_reward =
        std::accumulate(batch.shaped_rewards.begin(), batch.shaped_rewards.end(),
                        0.0) / n;
    row.policy_loss = sums.policy_loss / updates;
    row.value_loss = sums.value_loss / updates;
    row.entropy = sums.entropy / updates;
    result.log.push_back(row);

    if (cfg.single_batch) break;
  }
  result.timesteps = consumed;
  return result;
}

Dataset evaluate(EnvBase& env, const Policy& policy, int n_episodes,
                 uint64_t seed) {
  Dataset d(env.env_id());
  const uint64_t base = mix_seed(seed, kStreamEval);
  for (int e = 0; e < n_episodes; ++e) {
    std::vector<double> obs = env.reset(mix_seed(base, static_cast<uint64_t>(e)));
    int64_t t = 0;
    while (!env.terminated()) {
      const Action action = policy.mode(obs);
      const StepResult res = env.step(action);
      Transition tr;
      tr.episode_id = e;
      tr.t = t;
      tr.state = obs;
      tr.action = action;
      tr.reward = res.reward;
      tr.next_state = res.obs;
      tr.collision_flag = res.collision_flag;
      tr.lane_index = res.lane_index;
      tr.terminal = res.terminated;
      tr.behavior_logprob = policy.logprob(obs, action);
      d.append(std::move(tr));
      obs = res.obs;
      ++t;
    }
  }
  return d;
}

void write_train_log_csv(const std::vector<TrainLogRow>& log,
                         const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "batch_index,timesteps,mean_intrinsic_reward,mean_shaped_reward,"
         "policy_loss,value_loss,entropy\n";
  for (const auto& r : log) {
    out << r.batch_index << "," << r.timesteps << ","
        << fmt_g17(r.mean_intrinsic_reward) << ","
        << fmt_g17(r.mean_shaped_reward) << "," << fmt_g17(r.policy_loss) << ","
        << fmt_g17(r.value_loss) << "," << fmt_g17(r.entropy) << "\n";
  }
}

}  // namespace rsw
