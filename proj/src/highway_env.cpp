#include "rsw/highway_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rsw/error.hpp"
#include "rsw/text.hpp"

namespace rsw {

namespace {

constexpr double kSpeedMax = 40.0;      // hard clamp on any vehicle speed
constexpr double kSpeedDelta = 2.0;     // Faster/Slower increment
constexpr double kCollisionDist = 5.0;  // same-lane overlap threshold, m
constexpr int kTrafficSubsteps = 5;     // internal Euler substeps per env step

double ego_start_speed() { return 25.0; }

}  // namespace

HighwayScenario highway_scenario_from_string(const std::string& s) {
  const std::string v = lowercase(s);
  if (v == "default") return HighwayScenario::kDefault;
  if (v == "congested_lane") return HighwayScenario::kCongestedLane;
  if (v == "slow_obstacle_middle") return HighwayScenario::kSlowObstacleMiddle;
  throw ConfigError("unknown highway scenario: " + s);
}

std::string to_string(HighwayScenario s) {
  switch (s) {
    case HighwayScenario::kDefault: return "default";
    case HighwayScenario::kCongestedLane: return "congested_lane";
    case HighwayScenario::kSlowObstacleMiddle: return "slow_obstacle_middle";
  }
  return "?";
}

void HighwayConfig::validate() const {
  if (lane_count < 2) throw ConfigError("highway: lane_count must be >= 2");
  if (vehicle_count < 1) throw ConfigError("highway: vehicle_count must be >= 1");
  if (duration < 1) throw ConfigError("highway: duration must be >= 1");
  if (dt <= 0) throw ConfigError("highway: dt must be positive");
  if (!(speed_band_lo < speed_band_hi))
    throw ConfigError("highway: speed band requires v_lo < v_hi");
}

double idm_accel(double gap, double own_speed, double lead_speed,
                 const IdmParams& p) {
  if (!(gap > 0.0)) throw ContractViolation("idm_accel: gap must be positive");
  const double dv = own_speed - lead_speed;  // closing speed
  const double dynamic = own_speed * p.headway +
                         own_speed * dv / (2.0 * std::sqrt(p.a_max * p.b_comf));
  const double s_star = p.min_gap + std::max(0.0, dynamic);
  const double ratio = std::isinf(gap) ? 0.0 : s_star / gap;
  const double accel = p.a_max * (1.0 - std::pow(own_speed / p.v_desired, p.exponent) -
                                  ratio * ratio);
  return std::clamp(accel, -2.0 * p.b_comf, p.a_max);
}

namespace {

// Slow platoon vehicles stay slow: each NPC tracks its own free-flow speed.
IdmParams params_for(const IdmParams& base, const VehicleState& v) {
  IdmParams p = base;
  if (v.desired_speed > 0.0) p.v_desired = v.desired_speed;
  return p;
}

}  // namespace

void TrafficSim::step(double dt, int substeps, const VehicleState* ego) {
  VehicleState ego_copy;
  const VehicleState* ego_ptr = nullptr;
  if (ego != nullptr) {
    ego_copy = *ego;
    ego_ptr = &ego_copy;
  }
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    substep(h, ego_ptr);
    if (ego_ptr != nullptr) ego_copy.pos += ego_copy.speed * h;
  }
}

void TrafficSim::substep(double h, const VehicleState* ego) {
  const std::vector<VehicleState> snapshot = vehicles_;
  std::vector<double> accel(vehicles_.size(), 0.0);
  for (size_t i = 0; i < snapshot.size(); ++i) {
    const VehicleState& v = snapshot[i];
    // nearest vehicle ahead in the same lane, ego included
    const VehicleState* leader = nullptr;
    for (size_t j = 0; j < snapshot.size(); ++j) {
      if (j == i || snapshot[j].lane != v.lane || snapshot[j].pos <= v.pos)
        continue;
      if (leader == nullptr || snapshot[j].pos < leader->pos)
        leader = &snapshot[j];
    }
    if (ego != nullptr && ego->lane == v.lane && ego->pos > v.pos &&
        (leader == nullptr || ego->pos < leader->pos)) {
      leader = ego;
    }
    const IdmParams p = params_for(params_, v);
    if (leader == nullptr) {
      accel[i] = idm_accel(std::numeric_limits<double>::infinity(), v.speed,
                           v.speed, p);
    } else {
      const double gap = leader->pos - v.pos;
      accel[i] = gap > 1e-9 ? idm_accel(gap, v.speed, leader->speed, p)
                            : -2.0 * params_.b_comf;
    }
  }
  for (size_t i = 0; i < vehicles_.size(); ++i) {
    VehicleState& v = vehicles_[i];
    v.speed = std::clamp(v.speed + accel[i] * h, 0.0, kSpeedMax);
    v.pos += v.speed * h;
  }
}

namespace {

// Draws a position in [lo, hi] keeping >= spacing from same-lane occupants
// (ego bubble included). Widens the range if the lane is packed.
double place_in_lane(Rng& rng, std::vector<VehicleState>& placed, int lane,
                     double lo, double hi, double spacing, int ego_lane) {
  double range_lo = lo, range_hi = hi;
  for (int attempt = 0;; ++attempt) {
    const double pos = rng.uniform(range_lo, range_hi);
    bool ok = true;
    if (lane == ego_lane && std::abs(pos) < spacing) ok = false;
    for (const auto& v : placed) {
      if (v.lane == lane && std::abs(v.pos - pos) < spacing) {
        ok = false;
        break;
      }
    }
    if (ok) return pos;
    if (attempt > 0 && attempt % 200 == 0) {
      range_lo -= 200.0;
      range_hi += 200.0;
    }
  }
}

}  // namespace

TrafficSim make_traffic(const HighwayConfig& config, int ego_lane, Rng& rng) {
  std::vector<VehicleState> npcs;
  const int middle = config.lane_count / 2;

  switch (config.scenario) {
    case HighwayScenario::kDefault: {
      const int count = config.vehicle_count - 1;
      for (int i = 0; i < count; ++i) {
        VehicleState v;
        v.lane = rng.uniform_int(config.lane_count);
        v.speed = rng.uniform(20.0, 30.0);
        v.desired_speed = v.speed;
        v.pos = place_in_lane(rng, npcs, v.lane, -200.0, 600.0, 30.0, ego_lane);
        npcs.push_back(v);
      }
      break;
    }
    case HighwayScenario::kCongestedLane: {
      // Slow platoon spread over the 150 m ahead of the ego in the rightmost
      // lane; every other lane carries moderate faster traffic.
      const int right = config.lane_count - 1;
      for (int i = 0; i < 6; ++i) {
        const double speed = rng.uniform(15.0, 20.0);
        npcs.push_back({right, 25.0 * (i + 1), speed, speed});
      }
      for (int lane = 0; lane < config.lane_count; ++lane) {
        if (lane == right) continue;
        for (int i = 0; i < 3; ++i) {
          VehicleState v;
          v.lane = lane;
          v.speed = rng.uniform(25.0, 30.0);
          v.desired_speed = v.speed;
          v.pos = place_in_lane(rng, npcs, lane, -100.0, 300.0, 30.0, ego_lane);
          npcs.push_back(v);
        }
      }
      break;
    }
    case HighwayScenario::kSlowObstacleMiddle: {
      npcs.push_back({middle, 30.0, 15.0, 15.0});
      for (int lane : {middle - 1, middle + 1}) {
        if (lane < 0 || lane >= config.lane_count) continue;
        for (int i = 0; i < 3; ++i) {
          VehicleState v;
          v.lane = lane;
          v.speed = rng.uniform(25.0, 30.0);
          v.desired_speed = v.speed;
          v.pos = place_in_lane(rng, npcs, lane, -100.0, 300.0, 30.0, ego_lane);
          npcs.push_back(v);
        }
      }
      break;
    }
  }
  return TrafficSim(std::move(npcs), IdmParams{});
}

HighwayEnv::HighwayEnv(HighwayConfig config) : config_(config) {
  config_.validate();
}

std::vector<double> HighwayEnv::reset(uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4857ULL));  // "HW"
  switch (config_.scenario) {
    case HighwayScenario::kDefault:
      ego_.lane = rng.uniform_int(config_.lane_count);
      break;
    case HighwayScenario::kCongestedLane:
      ego_.lane = config_.lane_count - 1;
      break;
    case HighwayScenario::kSlowObstacleMiddle:
      ego_.lane = config_.lane_count / 2;
      break;
  }
  ego_.pos = 0.0;
  ego_.speed = ego_start_speed();
  traffic_ = make_traffic(config_, ego_.lane, rng);
  t_ = 0;
  terminated_ = false;
  reset_once_ = true;
  return observe();
}

StepResult HighwayEnv::step(const Action& action) {
  if (!reset_once_) throw ContractViolation("highway: step before reset");
  if (terminated_) throw ContractViolation("highway: step after termination");
  if (action.size() != 1)
    throw ContractViolation("highway: expected a single discrete action");
  const int a = static_cast<int>(action[0]);
  if (a < 0 || a >= kHighwayActionCount || action[0] != a)
    throw ContractViolation("highway: invalid action id");

  switch (static_cast<HighwayAction>(a)) {
    case HighwayAction::kLaneLeft:
      ego_.lane = std::max(0, ego_.lane - 1);
      break;
    case HighwayAction::kLaneRight:
      ego_.lane = std::min(config_.lane_count - 1, ego_.lane + 1);
      break;
    case HighwayAction::kFaster:
      ego_.speed = std::min(kSpeedMax, ego_.speed + kSpeedDelta);
      break;
    case HighwayAction::kSlower:
      ego_.speed = std::max(0.0, ego_.speed - kSpeedDelta);
      break;
    case HighwayAction::kIdle:
      break;
  }

  // Lane changes are instantaneous, so a move into an occupied slot collides
  // immediately; afterwards ego and traffic advance in lockstep substeps.
  bool collision = ego_overlaps_npc();
  const double h = config_.dt / kTrafficSubsteps;
  for (int s = 0; s < kTrafficSubsteps; ++s) {
    traffic_.substep(h, &ego_);
    ego_.pos += ego_.speed * h;
    collision = collision || ego_overlaps_npc();
  }

  double reward = 0.0;
  if (collision) reward -= 1.0;
  if (ego_.lane == config_.lane_count - 1) reward += 0.1;
  if (ego_.speed >= config_.speed_band_lo && ego_.speed <= config_.speed_band_hi)
    reward += 0.4;

  ++t_;
  terminated_ = collision || t_ >= config_.duration;

  StepResult result;
  result.obs = observe();
  result.reward = reward;
  result.collision_flag = collision ? 1 : 0;
  result.lane_index = ego_.lane;
  result.terminated = terminated_;
  return result;
}

bool HighwayEnv::ego_overlaps_npc() const {
  for (const auto& v : traffic_.vehicles()) {
    if (v.lane == ego_.lane && std::abs(v.pos - ego_.pos) < kCollisionDist)
      return true;
  }
  return false;
}

std::vector<double> HighwayEnv::observe() const {
  const auto& npcs = traffic_.vehicles();
  std::vector<size_t> order(npcs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const double da = std::abs(npcs[a].pos - ego_.pos);
    const double db = std::abs(npcs[b].pos - ego_.pos);
    return da != db ? da < db : a < b;
  });

  std::vector<double> obs(kHighwayObsDim, 0.0);
  obs[kObsEgoSpeed] = ego_.speed;
  obs[kObsEgoLane] = ego_.lane;
  const int n = std::min<int>(kNeighborSlots, static_cast<int>(npcs.size()));
  for (int k = 0; k < n; ++k) {
    const VehicleState& v = npcs[order[k]];
    const int base = kObsSlotBase + k * kObsSlotStride;
    obs[base + 0] = 1.0;
    obs[base + 1] = v.pos - ego_.pos;
    obs[base + 2] = v.lane - ego_.lane;
    obs[base + 3] = v.speed - ego_.speed;
  }
  return obs;
}

std::vector<double> HighwayEnv::obs_scale() const {
  std::vector<double> scale(kHighwayObsDim, 1.0);
  scale[kObsEgoSpeed] = 1.0 / kSpeedMax;
  scale[kObsEgoLane] = 1.0 / std::max(1, config_.lane_count - 1);
  for (int k = 0; k < kNeighborSlots; ++k) {
    const int base = kObsSlotBase + k * kObsSlotStride;
    scale[base + 0] = 1.0;
    scale[base + 1] = 1.0 / 100.0;
    scale[base + 2] = 1.0 / 3.0;
    scale[base + 3] = 1.0 / 20.0;
  }
  return scale;
}

}  // namespace rsw
