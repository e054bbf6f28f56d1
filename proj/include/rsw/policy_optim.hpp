#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsw/env.hpp"
#include "rsw/mlp.hpp"
#include "rsw/rng.hpp"
#include "rsw/trajectory.hpp"

namespace rsw {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 3e-4;
  int epochs_per_batch = 10;
  int minibatch_size = 64;
  long batch_timesteps = 2048;
  long total_timesteps = 10000;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  int hidden_dim = 64;
  bool single_batch = false;  // one collect phase over the whole budget

  void validate() const;  // throws ConfigError
};

// Policy head over a 2x64 tanh trunk: action logits for discrete control,
// tanh-squashed mean plus state-independent log-std for continuous control.
struct Policy {
  ActionKind kind = ActionKind::kDiscrete;
  int obs_dim = 0;
  int action_count = 0;  // discrete action count or continuous dimension
  Mlp net;
  std::vector<double> log_std;    // continuous only, kept in [-5, 2]
  std::vector<double> obs_scale;  // fixed featurizer, empty = identity

  static Policy create(const EnvBase& env, int hidden_dim, uint64_t seed);

  std::vector<double> featurize(std::span<const double> obs) const;

  struct Sampled {
    Action action;
    double logprob = 0.0;
  };
  Sampled sample(std::span<const double> obs, Rng& rng) const;
  Action mode(std::span<const double> obs) const;  // greedy action
  double logprob(std::span<const double> obs, const Action& action) const;

  nlohmann::json to_json() const;
  static Policy from_json(const nlohmann::json& j);
};

// Policy plus value function; the unit of checkpointing.
struct PolicyBundle {
  Policy policy;
  Mlp value;

  void save(const std::filesystem::path& path) const;
  static PolicyBundle load(const std::filesystem::path& path);
};

struct AdvantageBatch {
  std::vector<double> advantages;  // A_hat_t
  std::vector<double> returns;     // G_t = A_hat_t + V(s_t)
  std::vector<double> normalized;  // zero-mean unit-std advantages
};

// Generalized advantage estimation with bootstrapping blocked across
// terminals. last_value bootstraps a batch that ends mid-episode.
AdvantageBatch gae(std::span<const double> rewards, std::span<const double> values,
                   std::span<const uint8_t> terminals, double gamma, double lambda,
                   double last_value = 0.0);

// One minibatch of flattened experience (observations already featurized).
struct MiniBatch {
  std::vector<std::vector<double>> obs;
  std::vector<Action> actions;
  std::vector<double> behavior_logprobs;
  std::vector<double> advantages;  // normalized
  std::vector<double> returns;
  std::vector<int64_t> source_indices;  // batch positions, for diagnostics
};

struct LossTerms {
  double policy_loss = 0.0;  // -mean(min(rho*A, clip(rho)*A))
  double value_loss = 0.0;   // mean((V - G)^2)
  double entropy = 0.0;      // mean policy entropy
  double total = 0.0;        // policy + vf_coef*value - ent_coef*entropy
};

// Evaluates the PPO objective on a minibatch and accumulates analytic
// gradients (reverse-mode through the MLPs) into any non-null output.
// Throws NumericalError naming the offending batch index on non-finite
// intermediates.
LossTerms ppo_loss_and_grad(const Policy& policy, const Mlp& value,
                            const MiniBatch& mb, const PpoConfig& cfg,
                            std::vector<double>* grad_policy,
                            std::vector<double>* grad_log_std,
                            std::vector<double>* grad_value);

// Rolls out whole episodes until at least n_timesteps are collected, sampling
// actions from the policy and recording behavior log-probabilities.
Dataset collect(EnvBase& env, const Policy& policy, long n_timesteps, Rng& rng,
                uint64_t episode_seed_base, int64_t episode_id_start = 0);

// A feedback integration strategy: turns a collected batch into an augmented
// batch (r_tilde = r + r_hat).
class Shaper {
 public:
  virtual ~Shaper() = default;
  virtual ShapedDataset shape(const Dataset& d) = 0;
  virtual std::string name() const = 0;
};

ShapedDataset collect_shaped(EnvBase& env, const Policy& policy, long n_timesteps,
                             Rng& rng, uint64_t episode_seed_base, Shaper& shaper,
                             int64_t episode_id_start = 0);

struct TrainLogRow {
  int batch_index = 0;
  long timesteps = 0;
  double mean_intrinsic_reward = 0.0;
  double mean_shaped_reward = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  PolicyBundle bundle;
  std::vector<TrainLogRow> log;
  int64_t episodes = 0;
  long timesteps = 0;
};

// Alternates collect -> shape -> GAE over augmented rewards -> clipped
// minibatch updates until total_timesteps are consumed. Deterministic given
// (seed, deterministic shaper). shaper may be null (no shaping).
TrainResult train(EnvBase& env, const PpoConfig& cfg, Shaper* shaper, uint64_t seed);

// Greedy evaluation episodes with intrinsic rewards only.
Dataset evaluate(EnvBase& env, const Policy& policy, int n_episodes, uint64_t seed);

void write_train_log_csv(const std::vector<TrainLogRow>& log,
                         const std::filesystem::path& path);

}  // namespace rsw
