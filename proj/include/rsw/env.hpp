#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rsw/trajectory.hpp"

namespace rsw {

enum class ActionKind { kDiscrete, kContinuous };

struct ActionSpaceInfo {
  ActionKind kind = ActionKind::kDiscrete;
  int size = 0;  // number of actions (discrete) or action dimension (continuous)
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  int collision_flag = 0;
  int lane_index = -1;
  bool terminated = false;
};

// Single-threaded, instance-local environment. Run one instance per rollout
// worker; instances share no mutable state.
class EnvBase {
 public:
  virtual ~EnvBase() = default;

  // Starts a new episode; identical (config, seed) yields identical state.
  virtual std::vector<double> reset(uint64_t seed) = 0;

  // Advances one step. Throws ContractViolation on a terminated episode.
  virtual StepResult step(const Action& action) = 0;

  virtual int obs_dim() const = 0;
  virtual ActionSpaceInfo action_space() const = 0;
  virtual std::string env_id() const = 0;
  virtual bool terminated() const = 0;

  // Per-component observation scale applied by function approximators.
  // Empty means no scaling.
  virtual std::vector<double> obs_scale() const { return {}; }
};

using EnvFactory = std::function<std::unique_ptr<EnvBase>()>;

}  // namespace rsw
