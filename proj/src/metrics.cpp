#include "rsw/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rsw/error.hpp"
#include "rsw/highway_env.hpp"

namespace rsw {

void FmaConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
    throw ConfigError("fma: weights must be nonnegative");
}

namespace {

void require_nonempty(const Dataset& d, const char* metric) {
  if (d.empty())
    throw ContractViolation(std::string(metric) + ": dataset has no episodes");
}

double episode_fma(std::span<const Transition> ep, const FmaConfig& cfg) {
  double total = 0.0;
  for (size_t i = 0; i < ep.size(); ++i) {
    const Transition& tr = ep[i];
    // lane/speed predecessors: the episode's initial state for the first step
    const int prev_lane = i == 0 ? static_cast<int>(tr.state[kObsEgoLane])
                                 : ep[i - 1].lane_index;
    const double speed = tr.state[kObsEgoSpeed];
    const double dspeed = i == 0 ? 0.0 : speed - ep[i - 1].state[kObsEgoSpeed];
    if (tr.lane_index != prev_lane) total += cfg.lambda1;
    if (tr.reward < cfg.theta) total += cfg.lambda2;
    if (tr.collision_flag != 0) total += cfg.lambda3;
    total += cfg.lambda4 * std::abs(dspeed);
  }
  return total;
}

}  // namespace

double aer(const Dataset& d) {
  require_nonempty(d, "aer");
  double sum = 0.0;
  const auto episodes = d.episodes();
  for (const auto& ep : episodes) {
    for (const auto& tr : ep) sum += tr.reward;
  }
  return sum / static_cast<double>(episodes.size());
}

double att(const Dataset& d) {
  require_nonempty(d, "att");
  const auto episodes = d.episodes();
  double sum = 0.0;
  for (const auto& ep : episodes) sum += static_cast<double>(ep.size());
  return sum / static_cast<double>(episodes.size());
}

double fma(const Dataset& d, const FmaConfig& cfg) {
  cfg.validate();
  require_nonempty(d, "fma");
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i].lane_index < 0)
      throw ConfigError("fma: metric is highway-specific (dataset '" +
                        d.env_id() + "' has no lane index)");
  }
  const auto episodes = d.episodes();
  double sum = 0.0;
  for (const auto& ep : episodes) sum += episode_fma(ep, cfg);
  return sum / static_cast<double>(episodes.size());
}

MetricsReport metrics_report(const Dataset& d, const FmaConfig& cfg,
                             bool include_fma) {
  require_nonempty(d, "metrics");
  if (include_fma) {
    cfg.validate();
    for (size_t i = 0; i < d.size(); ++i) {
      if (d[i].lane_index < 0)
        throw ConfigError("fma: metric is highway-specific (dataset '" +
                          d.env_id() + "' has no lane index)");
    }
  }
  MetricsReport report;
  const auto episodes = d.episodes();
  report.episode_count = static_cast<int64_t>(episodes.size());
  for (const auto& ep : episodes) {
    MetricsReport::Episode row;
    row.episode_id = ep.front().episode_id;
    row.length = static_cast<int64_t>(ep.size());
    for (const auto& tr : ep) row.cumulative_reward += tr.reward;
    if (include_fma) row.fma = episode_fma(ep, cfg);
    report.per_episode.push_back(row);
    report.aer += row.cumulative_reward;
    report.att += static_cast<double>(row.length);
    report.fma += row.fma;
  }
  report.aer /= static_cast<double>(episodes.size());
  report.att /= static_cast<double>(episodes.size());
  report.fma = include_fma ? report.fma / static_cast<double>(episodes.size())
                           : std::nan("");
  return report;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : per_episode) {
    eps.push_back({{"episode_id", e.episode_id},
                   {"cumulative_reward", e.cumulative_reward},
                   {"length", e.length},
                   {"fma", e.fma}});
  }
  return nlohmann::json{{"aer", aer},
                        {"att", att},
                        {"fma", std::isnan(fma) ? nlohmann::json() : nlohmann::json(fma)},
                        {"episode_count", episode_count},
                        {"per_episode", eps}};
}

}  // namespace rsw
