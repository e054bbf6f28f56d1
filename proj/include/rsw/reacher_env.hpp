#pragma once

#include <array>
#include <cstdint>

#include "rsw/env.hpp"

namespace rsw {

struct ReacherConfig {
  double w_near = 1.0;   // distance penalty weight
  double w_ctrl = 0.01;  // squared-torque penalty weight
  double torque_limit = 1.0;
  double dt = 0.02;
  int episode_length = 50;
  double joint_inertia = 1.0;  // lower = more agile arm
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct ReacherState {
  std::array<double, 2> joint_angles{0.0, 0.0};
  std::array<double, 2> joint_velocities{0.0, 0.0};
  std::array<double, 2> target{0.1, 0.0};
  std::array<double, 2> link_lengths{0.1, 0.1};
};

// Forward kinematics of the fingertip.
std::array<double, 2> end_effector(const ReacherState& state);

// r = -w_near * ||p_eff - p_tgt||_2 - w_ctrl * ||a||_2^2. Torques beyond the
// limit are clamped before evaluation.
double reacher_reward(const ReacherState& state, std::array<double, 2> action,
                      const ReacherConfig& config);

constexpr int kReacherObsDim = 11;

// Two-link planar arm with unit-inertia decoupled joints (semi-implicit Euler,
// velocity damping 0.99/step). The reward functional is the real contract;
// the dynamics stand in for a full rigid-body simulation.
class ReacherEnv : public EnvBase {
 public:
  explicit ReacherEnv(ReacherConfig config);

  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;

  int obs_dim() const override { return kReacherObsDim; }
  ActionSpaceInfo action_space() const override {
    return {ActionKind::kContinuous, 2};
  }
  std::string env_id() const override { return "reacher"; }
  bool terminated() const override { return terminated_; }
  std::vector<double> obs_scale() const override;

  const ReacherState& state() const { return state_; }
  const ReacherConfig& config() const { return config_; }
  // Number of times a torque component had to be clamped to the limit.
  int64_t torque_clamp_count() const { return torque_clamp_count_; }

 private:
  std::vector<double> observe() const;

  ReacherConfig config_;
  ReacherState state_;
  int t_ = 0;
  bool terminated_ = true;
  bool reset_once_ = false;
  int64_t torque_clamp_count_ = 0;
};

}  // namespace rsw
