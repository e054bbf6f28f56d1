#include "rsw/reacher_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rsw/error.hpp"
#include "rsw/rng.hpp"

namespace rsw {

namespace {
constexpr double kDamping = 0.99;
constexpr double kTargetRadiusLo = 0.05;
constexpr double kTargetRadiusHi = 0.18;
}  // namespace

void ReacherConfig::validate() const {
  if (!(w_near > 0)) throw ConfigError("reacher: w_near must be positive");
  if (w_ctrl < 0) throw ConfigError("reacher: w_ctrl must be nonnegative");
  if (!(torque_limit > 0)) throw ConfigError("reacher: torque_limit must be positive");
  if (!(dt > 0)) throw ConfigError("reacher: dt must be positive");
  if (episode_length < 1) throw ConfigError("reacher: episode_length must be >= 1");
  if (!(joint_inertia > 0)) throw ConfigError("reacher: joint_inertia must be positive");
}

std::array<double, 2> end_effector(const ReacherState& s) {
  const auto [t1, t2] = s.joint_angles;
  const auto [l1, l2] = s.link_lengths;
  return {l1 * std::cos(t1) + l2 * std::cos(t1 + t2),
          l1 * std::sin(t1) + l2 * std::sin(t1 + t2)};
}

double reacher_reward(const ReacherState& state, std::array<double, 2> action,
                      const ReacherConfig& config) {
  for (auto& a : action) a = std::clamp(a, -config.torque_limit, config.torque_limit);
  const auto eff = end_effector(state);
  const double dx = eff[0] - state.target[0];
  const double dy = eff[1] - state.target[1];
  const double dist = std::hypot(dx, dy);
  const double ctrl = action[0] * action[0] + action[1] * action[1];
  return -config.w_near * dist - config.w_ctrl * ctrl;
}

ReacherEnv::ReacherEnv(ReacherConfig config) : config_(config) {
  config_.validate();
}

std::vector<double> ReacherEnv::reset(uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5245ULL));  // "RE"
  state_ = ReacherState{};
  state_.joint_angles = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  state_.joint_velocities = {rng.uniform(-0.005, 0.005), rng.uniform(-0.005, 0.005)};
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double radius = rng.uniform(kTargetRadiusLo, kTargetRadiusHi);
  state_.target = {radius * std::cos(angle), radius * std::sin(angle)};
  t_ = 0;
  terminated_ = false;
  reset_once_ = true;
  return observe();
}

StepResult ReacherEnv::step(const Action& action) {
  if (!reset_once_) throw ContractViolation("reacher: step before reset");
  if (terminated_) throw ContractViolation("reacher: step after termination");
  if (action.size() != 2)
    throw ContractViolation("reacher: expected a 2-dimensional torque action");

  std::array<double, 2> torque{action[0], action[1]};
  for (auto& tq : torque) {
    if (std::abs(tq) > config_.torque_limit) {
      tq = std::clamp(tq, -config_.torque_limit, config_.torque_limit);
      ++torque_clamp_count_;
    }
  }

  for (int i = 0; i < 2; ++i) {
    state_.joint_velocities[i] =
        kDamping * (state_.joint_velocities[i] +
                    torque[i] * config_.dt / config_.joint_inertia);
    state_.joint_angles[i] += state_.joint_velocities[i] * config_.dt;
  }

  ++t_;
  terminated_ = t_ >= config_.episode_length;

  StepResult result;
  result.obs = observe();
  result.reward = reacher_reward(state_, torque, config_);
  result.collision_flag = 0;
  result.lane_index = -1;
  result.terminated = terminated_;
  return result;
}

std::vector<double> ReacherEnv::obs_scale() const {
  // angles are O(1); positions live in a +-0.2 m workspace and velocities can
  // reach a few rad/s, so bring both to O(1) for the function approximators
  return {1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 0.25, 0.25, 5.0, 5.0, 5.0};
}

std::vector<double> ReacherEnv::observe() const {
  const auto eff = end_effector(state_);
  const double dx = state_.target[0] - eff[0];
  const double dy = state_.target[1] - eff[1];
  return {std::cos(state_.joint_angles[0]),
          std::sin(state_.joint_angles[0]),
          std::cos(state_.joint_angles[1]),
          std::sin(state_.joint_angles[1]),
          state_.target[0],
          state_.target[1],
          state_.joint_velocities[0],
          state_.joint_velocities[1],
          dx,
          dy,
          std::hypot(dx, dy)};
}

}  // namespace rsw
