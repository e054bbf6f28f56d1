#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "rsw/env.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/trajectory.hpp"

namespace rsw::test {

inline std::string source_dir() { return RSW_SOURCE_DIR; }

// Spearman rank correlation with average ranks for ties.
inline std::vector<double> ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Highway observation with ego fields and optional neighbor slots
// (dx, dlane, dv), remaining slots absent.
inline std::vector<double> highway_obs(
    double ego_speed, int ego_lane,
    const std::vector<std::array<double, 3>>& neighbors = {}) {
  std::vector<double> obs(kHighwayObsDim, 0.0);
  obs[kObsEgoSpeed] = ego_speed;
  obs[kObsEgoLane] = ego_lane;
  for (size_t k = 0; k < neighbors.size() && k < kNeighborSlots; ++k) {
    const int base = kObsSlotBase + static_cast<int>(k) * kObsSlotStride;
    obs[base + 0] = 1.0;
    obs[base + 1] = neighbors[k][0];
    obs[base + 2] = neighbors[k][1];
    obs[base + 3] = neighbors[k][2];
  }
  return obs;
}

// Contiguous highway episode of `len` calm steps: constant speed, no
// neighbors, no lane changes (safe path, rho = 1, medium speed by default).
inline void append_calm_highway_episode(Dataset& d, int64_t episode_id, int len,
                                        double speed = 25.0, int lane = 1,
                                        double reward = 0.4) {
  for (int t = 0; t < len; ++t) {
    Transition tr;
    tr.episode_id = episode_id;
    tr.t = t;
    tr.state = highway_obs(speed, lane);
    tr.action = {1.0};
    tr.reward = reward;
    tr.next_state = highway_obs(speed, lane);
    tr.collision_flag = 0;
    tr.lane_index = lane;
    tr.terminal = t == len - 1;
    tr.behavior_logprob = -1.0;
    d.append(std::move(tr));
  }
}

// Two-armed bandit: one-step episodes, arm 0 pays 1, arm 1 pays 0.
class BanditEnv : public EnvBase {
 public:
  std::vector<double> reset(uint64_t) override {
    terminated_ = false;
    return {0.0};
  }
  StepResult step(const Action& a) override {
    terminated_ = true;
    return {{0.0}, a[0] == 0.0 ? 1.0 : 0.0, 0, -1, true};
  }
  int obs_dim() const override { return 1; }
  ActionSpaceInfo action_space() const override {
    return {ActionKind::kDiscrete, 2};
  }
  std::string env_id() const override { return "bandit"; }
  bool terminated() const override { return terminated_; }

 private:
  bool terminated_ = true;
};

}  // namespace rsw::test
