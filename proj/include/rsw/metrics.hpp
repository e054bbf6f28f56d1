#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rsw/trajectory.hpp"

namespace rsw {

struct FmaConfig {
  double lambda1 = 1.0;  // lane-change indicator
  double lambda2 = 1.0;  // sub-threshold reward indicator
  double lambda3 = 1.0;  // collision indicator
  double lambda4 = 0.1;  // |delta speed| term
  double theta = 0.0;    // reward threshold

  void validate() const;  // throws ConfigError
};

struct MetricsReport {
  double aer = 0.0;
  double att = 0.0;
  double fma = 0.0;
  struct Episode {
    int64_t episode_id = 0;
    double cumulative_reward = 0.0;
    int64_t length = 0;
    double fma = 0.0;
  };
  std::vector<Episode> per_episode;
  int64_t episode_count = 0;

  nlohmann::json to_json() const;
};

// Average episodic reward: mean over episodes of the summed intrinsic reward.
double aer(const Dataset& d);

// Average terminate time: mean episode length (steps until collision or cap).
double att(const Dataset& d);

// Feedback misalignment, highway only: per-episode sum of weighted lane
// changes, sub-threshold rewards, collisions and |speed delta|, averaged over
// episodes. Rejects non-highway datasets.
double fma(const Dataset& d, const FmaConfig& cfg = {});

MetricsReport metrics_report(const Dataset& d, const FmaConfig& cfg = {},
                             bool include_fma = true);

}  // namespace rsw
