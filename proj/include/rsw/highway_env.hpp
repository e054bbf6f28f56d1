#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rsw/env.hpp"
#include "rsw/rng.hpp"

namespace rsw {

enum class HighwayScenario { kDefault, kCongestedLane, kSlowObstacleMiddle };

HighwayScenario highway_scenario_from_string(const std::string& s);
std::string to_string(HighwayScenario s);

struct HighwayConfig {
  int lane_count = 4;
  int vehicle_count = 50;  // total including the ego vehicle
  int duration = 40;       // max timesteps per episode
  double dt = 1.0;         // seconds per step
  double speed_band_lo = 20.0;  // [v_lo, v_hi] band earning the speed reward
  double speed_band_hi = 30.0;
  HighwayScenario scenario = HighwayScenario::kDefault;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct VehicleState {
  int lane = 0;
  double pos = 0.0;           // longitudinal position, meters
  double speed = 0.0;         // m/s, >= 0
  double desired_speed = 0.0; // IDM free-flow target; 0 = use global default
};

enum class HighwayAction { kLaneLeft = 0, kIdle = 1, kLaneRight = 2, kFaster = 3, kSlower = 4 };
constexpr int kHighwayActionCount = 5;

// Observation layout: [ego_speed, ego_lane, K x (present, dx, dlane, dv)],
// neighbors sorted by |dx| ascending, absent slots zero-filled.
constexpr int kNeighborSlots = 5;
constexpr int kObsEgoSpeed = 0;
constexpr int kObsEgoLane = 1;
constexpr int kObsSlotBase = 2;
constexpr int kObsSlotStride = 4;
constexpr int kHighwayObsDim = kObsSlotBase + kNeighborSlots * kObsSlotStride;

// IDM parameters for the NPC traffic.
struct IdmParams {
  double a_max = 1.5;       // max acceleration, m/s^2
  double b_comf = 2.0;      // comfortable deceleration, m/s^2
  double v_desired = 28.0;  // m/s
  double headway = 1.5;     // time headway T, s
  double min_gap = 5.0;     // jam distance s0, m
  double exponent = 4.0;    // delta
};

// Intelligent Driver Model acceleration, clamped to [-2*b_comf, a_max].
// Throws ContractViolation when gap <= 0. Pass gap = +infinity (or any huge
// value) with lead_speed = own_speed for a free road.
double idm_accel(double gap, double own_speed, double lead_speed,
                 const IdmParams& p = {});

// IDM-controlled traffic on a multi-lane straight road. Vehicles keep their
// lane; the optional ego vehicle acts as an obstacle for the car following.
class TrafficSim {
 public:
  TrafficSim(std::vector<VehicleState> vehicles, IdmParams params)
      : vehicles_(std::move(vehicles)), params_(params) {}

  const std::vector<VehicleState>& vehicles() const { return vehicles_; }

  // Advances every NPC by dt using `substeps` internal Euler substeps
  // (dt = 1 s is too coarse for raw IDM integration). `ego` may be null.
  void step(double dt, int substeps, const VehicleState* ego);

  // One synchronous substep of length h. Ego, when present, is a static
  // obstacle for this substep; callers interleave its motion.
  void substep(double h, const VehicleState* ego);

 private:
  std::vector<VehicleState> vehicles_;
  IdmParams params_;
};

// Builds the NPC population for a scenario. Exposed so traffic flow can be
// simulated and tested without an ego vehicle.
TrafficSim make_traffic(const HighwayConfig& config, int ego_lane, Rng& rng);

class HighwayEnv : public EnvBase {
 public:
  explicit HighwayEnv(HighwayConfig config);

  std::vector<double> reset(uint64_t seed) override;
  StepResult step(const Action& action) override;

  int obs_dim() const override { return kHighwayObsDim; }
  ActionSpaceInfo action_space() const override {
    return {ActionKind::kDiscrete, kHighwayActionCount};
  }
  std::string env_id() const override { return "highway"; }
  bool terminated() const override { return terminated_; }
  std::vector<double> obs_scale() const override;

  const HighwayConfig& config() const { return config_; }
  const VehicleState& ego() const { return ego_; }
  const TrafficSim& traffic() const { return traffic_; }

 private:
  std::vector<double> observe() const;
  bool ego_overlaps_npc() const;

  HighwayConfig config_;
  TrafficSim traffic_{{}, {}};
  VehicleState ego_;
  int t_ = 0;
  bool terminated_ = true;  // must reset before stepping
  bool reset_once_ = false;
};

}  // namespace rsw
