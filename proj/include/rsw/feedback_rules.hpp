#pragma once

#include <array>
#include <limits>
#include <span>
#include <vector>

#include "rsw/mlp.hpp"
#include "rsw/trajectory.hpp"

namespace rsw {

// Style coefficient tables for one behavioral profile: 4 lane-change slots
// (n0..n3), 5 collision-avoidance slots (c0..c4), 9 speed-optimization slots
// (s0..s8).
struct StyleCoefficients {
  Profile profile = Profile::kIdeal;
  std::array<int, 4> lane{};
  std::array<int, 5> collision{};
  std::array<int, 9> speed{};

  // Built-in IDEAL / AGG / RAD tables.
  static const StyleCoefficients& builtin(Profile p);
};

struct ShapingWeights {
  double lane = 1.0;
  double collision = 1.0;
  double speed = 1.0;
};

// Knobs for deriving scenario features from stored highway transitions.
struct FeatureParams {
  std::array<double, 2> v_thresh{20.0, 30.0};
  double dt = 1.0;
  int lane_change_window = 10;   // timesteps over which lane changes count
  double density_radius = 50.0;  // meters ahead counted toward traffic density
};

// Per-step derived quantities that index the coefficient tables.
struct ScenarioFeatures {
  double ttc = std::numeric_limits<double>::infinity();
  double acc = 0.0;
  int lc = 0;      // lane changed this step
  int rho = 1;     // traffic density level, 1..3
  double v = 0.0;  // ego speed
  std::array<double, 2> v_thresh{20.0, 30.0};
  int lane_change_count = 0;  // recent lane changes, clamped to [0, 3]
};

// Collision-avoidance scenario c0..c4. Boundaries 0.5 and 2.0 belong to the
// potential-collision band. Within the band: acc sign decides first; lc takes
// c2 only when acc == 0; (acc == 0, lc == 0) falls to c0.
int collision_scenario_index(double ttc, double acc, int lc);

// Speed-optimization scenario s0..s8 = 3*(rho-1) + level where level is
// 0 (v above band), 1 (inside band, inclusive), 2 (below band).
int speed_scenario_index(int rho, double v, const std::array<double, 2>& v_thresh);

// zeta_HF-D = w_lane*B_lane[n] + w_collision*B_collision[c] + w_speed*B_speed[s]
double hf_d_score(const ScenarioFeatures& f, const StyleCoefficients& coeffs,
                  const ShapingWeights& w = {});

// Features for the step at window.back(); window is a contiguous slice of one
// episode ending at that step (older entries only feed acc and the lane-change
// count, so a window of one transition is valid).
ScenarioFeatures highway_scenario_features(std::span<const Transition> window,
                                           const FeatureParams& p = {});

namespace detail {
ScenarioFeatures highway_features_at(const Transition& cur, const Transition* prev,
                                     int lane_changes_in_window,
                                     const FeatureParams& p);

template <typename T>
std::vector<ScenarioFeatures> highway_features_all(std::span<const T> items,
                                                   const FeatureParams& p) {
  std::vector<ScenarioFeatures> out;
  out.reserve(items.size());
  std::vector<int> lc_window;
  for (size_t i = 0; i < items.size(); ++i) {
    const bool episode_start =
        i == 0 || items[i].episode_id != items[i - 1].episode_id;
    if (episode_start) lc_window.clear();
    const Transition* prev = episode_start ? nullptr : &items[i - 1];
    ScenarioFeatures f = highway_features_at(items[i], prev, 0, p);
    lc_window.push_back(f.lc);
    if (static_cast<int>(lc_window.size()) > p.lane_change_window)
      lc_window.erase(lc_window.begin());
    int n = 0;
    for (int flag : lc_window) n += flag;
    f.lane_change_count = std::min(n, 3);
    out.push_back(f);
  }
  return out;
}
}  // namespace detail

inline std::vector<ScenarioFeatures> highway_features_all(
    const Dataset& d, const FeatureParams& p = {}) {
  return detail::highway_features_all(d.all(), p);
}
inline std::vector<ScenarioFeatures> highway_features_all(
    const ShapedDataset& d, const FeatureParams& p = {}) {
  return detail::highway_features_all(d.all(), p);
}

// Rule-proxy feedback for the reacher task. IDEAL rewards closing in on the
// target and penalizes large torques; AGG inverts the torque term; RAD pays
// progress only when joint speeds are high and penalizes smooth progress.
double reacher_rule_score(const Transition& tr, Profile profile);

// zeta for all three built-in profiles at every step of d (any supported env).
struct RuleScores {
  double ideal = 0.0;
  double agg = 0.0;
  double rad = 0.0;
};
std::vector<RuleScores> rule_scores_all(const Dataset& d,
                                        const ShapingWeights& w = {},
                                        const FeatureParams& p = {});

// HF-D: annotate every transition with the rule score for `coeffs`.
ShapedDataset shape_dataset_hf_d(const Dataset& d, const StyleCoefficients& coeffs,
                                 const ShapingWeights& w = {},
                                 const FeatureParams& p = {});

// Surrogate regressor standing in for accumulated human feedback:
// 2x32 tanh MLP over z-scored features.
struct SurrogateModel {
  Mlp net;
  std::vector<double> feat_mean, feat_std;
  std::string env_id = "highway";
  Profile label_profile = Profile::kNa;  // provenance of the training labels
  bool fitted = false;
  double final_train_mse = 0.0;

  double predict(std::span<const double> features) const;
};

struct SurrogateFitOptions {
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 128;
  uint64_t seed = 0;
  size_t min_samples = 100;
  std::string env_id = "highway";
};

// Input vector fed to the surrogate (ttc capped so infinity stays finite).
std::vector<double> surrogate_features(const ScenarioFeatures& f);

SurrogateModel fit_surrogate(const std::vector<std::vector<double>>& features,
                             const std::vector<double>& labels,
                             const SurrogateFitOptions& options = {});

// HF-RSM: shaped_reward = surrogate(features(s_t)).
ShapedDataset shape_dataset_hf_rsm(const Dataset& d, const SurrogateModel& model,
                                   const FeatureParams& p = {});

}  // namespace rsw
