#include "rsw/feedback_rules.hpp"

#include <algorithm>
#include <cmath>

#include "rsw/error.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/reacher_env.hpp"

namespace rsw {

const StyleCoefficients& StyleCoefficients::builtin(Profile p) {
  static const StyleCoefficients kIdeal{
      Profile::kIdeal,
      {+1, 0, -1, -1},
      {+1, 0, +1, -2, +2},
      {+2, +1, -1, -1, +2, -1, -2, -1, +2}};
  static const StyleCoefficients kAgg{
      Profile::kAgg,
      {-2, +1, +2, +2},
      {-2, +2, +1, -1, -2},
      {+2, +1, -2, +1, 0, -1, +2, +1, -2}};
  static const StyleCoefficients kRad{
      Profile::kRad,
      {-2, 0, +1, +1},
      {-2, +1, +1, 0, -2},
      {+1, 0, -2, 0, -1, -2, +1, 0, -2}};
  switch (p) {
    case Profile::kIdeal: return kIdeal;
    case Profile::kAgg: return kAgg;
    case Profile::kRad: return kRad;
    case Profile::kNa: break;
  }
  throw ConfigError("no built-in coefficient table for profile NA");
}

int collision_scenario_index(double ttc, double acc, int lc) {
  if (std::isnan(ttc) || (std::isfinite(ttc) && ttc < 0.0))
    throw ContractViolation("collision_scenario_index: ttc must be >= 0 or infinite");
  if (ttc < 0.5) return 3;  // immediate risk
  if (ttc > 2.0) return 4;  // safe path
  if (acc < 0.0) return 0;
  if (acc > 0.0) return 1;
  return lc != 0 ? 2 : 0;
}

int speed_scenario_index(int rho, double v, const std::array<double, 2>& v_thresh) {
  if (rho < 1 || rho > 3)
    throw ContractViolation("speed_scenario_index: rho must be in {1,2,3}");
  int level;
  if (v > v_thresh[1])
    level = 0;
  else if (v >= v_thresh[0])
    level = 1;
  else
    level = 2;
  return 3 * (rho - 1) + level;
}

double hf_d_score(const ScenarioFeatures& f, const StyleCoefficients& coeffs,
                  const ShapingWeights& w) {
  const int n = std::clamp(f.lane_change_count, 0, 3);
  const int c = collision_scenario_index(f.ttc, f.acc, f.lc);
  const int s = speed_scenario_index(f.rho, f.v, f.v_thresh);
  return w.lane * coeffs.lane[n] + w.collision * coeffs.collision[c] +
         w.speed * coeffs.speed[s];
}

namespace detail {

ScenarioFeatures highway_features_at(const Transition& cur, const Transition* prev,
                                     int lane_changes_in_window,
                                     const FeatureParams& p) {
  if (cur.state.size() != kHighwayObsDim || cur.next_state.size() != kHighwayObsDim)
    throw DataError("highway features: unexpected observation layout");
  ScenarioFeatures f;
  f.v_thresh = p.v_thresh;
  f.v = cur.state[kObsEgoSpeed];
  f.lc = cur.state[kObsEgoLane] != cur.next_state[kObsEgoLane] ? 1 : 0;
  f.acc = prev != nullptr ? (f.v - prev->state[kObsEgoSpeed]) / p.dt : 0.0;

  // Lead vehicle: nearest present neighbor ahead in the ego lane.
  double lead_dx = std::numeric_limits<double>::infinity();
  double lead_dv = 0.0;
  int ahead_within_radius = 0;
  for (int k = 0; k < kNeighborSlots; ++k) {
    const int base = kObsSlotBase + k * kObsSlotStride;
    if (cur.state[base] == 0.0) continue;
    const double dx = cur.state[base + 1];
    const double dlane = cur.state[base + 2];
    const double dv = cur.state[base + 3];
    if (dx > 0.0 && dx <= p.density_radius) ++ahead_within_radius;
    if (dlane == 0.0 && dx > 0.0 && dx < lead_dx) {
      lead_dx = dx;
      lead_dv = dv;
    }
  }
  const double closing = -lead_dv;  // ego speed minus lead speed
  f.ttc = (std::isfinite(lead_dx) && closing > 0.0)
              ? lead_dx / closing
              : std::numeric_limits<double>::infinity();
  if (ahead_within_radius <= 2)
    f.rho = 1;
  else if (ahead_within_radius <= 5)
    f.rho = 2;
  else
    f.rho = 3;
  f.lane_change_count = std::clamp(lane_changes_in_window, 0, 3);
  return f;
}

}  // namespace detail

ScenarioFeatures highway_scenario_features(std::span<const Transition> window,
                                           const FeatureParams& p) {
  if (window.empty())
    throw ContractViolation("highway_scenario_features: window must be nonempty");
  const size_t last = window.size() - 1;
  const size_t begin =
      window.size() > static_cast<size_t>(p.lane_change_window)
          ? window.size() - p.lane_change_window
          : 0;
  const Transition* prev = last > 0 ? &window[last - 1] : nullptr;
  ScenarioFeatures f = detail::highway_features_at(window[last], prev, 0, p);
  int n = 0;
  for (size_t i = begin; i <= last; ++i) {
    const Transition& tr = window[i];
    if (tr.state[kObsEgoLane] != tr.next_state[kObsEgoLane]) ++n;
  }
  f.lane_change_count = std::min(n, 3);
  return f;
}

double reacher_rule_score(const Transition& tr, Profile profile) {
  if (tr.state.size() != kReacherObsDim || tr.next_state.size() != kReacherObsDim)
    throw DataError("reacher rules: unexpected observation layout");
  const double dist_now = tr.state[10];
  const double dist_next = tr.next_state[10];
  const double dd = dist_next - dist_now;
  double ctrl = 0.0;
  for (double a : tr.action) ctrl += a * a;
  const double omega = std::hypot(tr.state[6], tr.state[7]);

  // Holding position on target counts as progress; otherwise the step must
  // close the distance by more than the 1e-3 deadband to score.
  constexpr double kOnTarget = 0.05;
  const bool holding = dist_next < kOnTarget;
  const int dist_term =
      holding ? +1 : (dd < -1e-3 ? +1 : (dd > 1e-3 ? -1 : 0));
  switch (profile) {
    case Profile::kIdeal:
      return dist_term + (ctrl > 0.5 ? -1.0 : 0.0);
    case Profile::kAgg:
      return dist_term + (ctrl > 0.5 ? +1.0 : -1.0);
    case Profile::kRad:
      // impulsive: progress pays only at high joint speed, calm progress is
      // penalized, anything else is ignored
      if (dist_term == 1) return omega > 1.0 ? +1.0 : -1.0;
      return 0.0;
    case Profile::kNa:
      break;
  }
  throw ConfigError("no reacher rule for profile NA");
}

namespace {

enum class RuleFamily { kHighway, kReacher };

RuleFamily rule_family(const std::string& env_id) {
  if (env_id == "highway") return RuleFamily::kHighway;
  if (env_id == "reacher") return RuleFamily::kReacher;
  throw ConfigError("no feedback rules for environment '" + env_id + "'");
}

}  // namespace

std::vector<RuleScores> rule_scores_all(const Dataset& d, const ShapingWeights& w,
                                        const FeatureParams& p) {
  std::vector<RuleScores> out(d.size());
  if (d.empty()) return out;
  switch (rule_family(d.env_id())) {
    case RuleFamily::kHighway: {
      const auto features = highway_features_all(d, p);
      for (size_t i = 0; i < d.size(); ++i) {
        out[i].ideal = hf_d_score(features[i], StyleCoefficients::builtin(Profile::kIdeal), w);
        out[i].agg = hf_d_score(features[i], StyleCoefficients::builtin(Profile::kAgg), w);
        out[i].rad = hf_d_score(features[i], StyleCoefficients::builtin(Profile::kRad), w);
      }
      break;
    }
    case RuleFamily::kReacher:
      for (size_t i = 0; i < d.size(); ++i) {
        out[i].ideal = reacher_rule_score(d[i], Profile::kIdeal);
        out[i].agg = reacher_rule_score(d[i], Profile::kAgg);
        out[i].rad = reacher_rule_score(d[i], Profile::kRad);
      }
      break;
  }
  return out;
}

ShapedDataset shape_dataset_hf_d(const Dataset& d, const StyleCoefficients& coeffs,
                                 const ShapingWeights& w, const FeatureParams& p) {
  const RuleFamily family = rule_family(d.env_id());
  ShapedDataset out(d.env_id());
  std::vector<ScenarioFeatures> features;
  if (family == RuleFamily::kHighway) features = highway_features_all(d, p);
  for (size_t i = 0; i < d.size(); ++i) {
    ShapedTransition st;
    static_cast<Transition&>(st) = d[i];
    st.shaped_reward = family == RuleFamily::kHighway
                           ? hf_d_score(features[i], coeffs, w)
                           : reacher_rule_score(d[i], coeffs.profile);
    st.augmented_reward = st.reward + st.shaped_reward;
    st.shaping_source = ShapingSource::kHfD;
    st.profile = coeffs.profile;
    out.append(std::move(st));
  }
  return out;
}

std::vector<double> surrogate_features(const ScenarioFeatures& f) {
  constexpr double kTtcCap = 10.0;
  return {std::min(f.ttc, kTtcCap),
          f.acc,
          static_cast<double>(f.lc),
          static_cast<double>(f.rho),
          f.v,
          static_cast<double>(f.lane_change_count)};
}

double SurrogateModel::predict(std::span<const double> features) const {
  if (!fitted) throw ContractViolation("surrogate: predict before fit");
  if (features.size() != feat_mean.size())
    throw ContractViolation("surrogate: feature dimension mismatch");
  std::vector<double> z(features.size());
  for (size_t i = 0; i < features.size(); ++i)
    z[i] = (features[i] - feat_mean[i]) / feat_std[i];
  return net.forward(z)[0];
}

SurrogateModel fit_surrogate(const std::vector<std::vector<double>>& features,
                             const std::vector<double>& labels,
                             const SurrogateFitOptions& options) {
  if (features.size() != labels.size())
    throw ContractViolation("fit_surrogate: features/labels length mismatch");
  if (features.size() < options.min_samples)
    throw ContractViolation("fit_surrogate: needs at least " +
                            std::to_string(options.min_samples) + " labeled pairs");
  const size_t n = features.size();
  const size_t dim = features.front().size();
  for (const auto& f : features)
    if (f.size() != dim) throw DataError("fit_surrogate: ragged feature matrix");

  SurrogateModel model;
  model.env_id = options.env_id;
  model.feat_mean.assign(dim, 0.0);
  model.feat_std.assign(dim, 0.0);
  for (const auto& f : features)
    for (size_t j = 0; j < dim; ++j) model.feat_mean[j] += f[j];
  for (auto& m : model.feat_mean) m /= static_cast<double>(n);
  for (const auto& f : features)
    for (size_t j = 0; j < dim; ++j) {
      const double c = f[j] - model.feat_mean[j];
      model.feat_std[j] += c * c;
    }
  bool any_variance = false;
  for (auto& s : model.feat_std) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s > 1e-12) {
      any_variance = true;
    } else {
      s = 1.0;  // constant feature passes through centered at zero
    }
  }
  if (!any_variance)
    throw DataError("fit_surrogate: all features are constant (degenerate data)");

  std::vector<std::vector<double>> z(n, std::vector<double>(dim));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < dim; ++j)
      z[i][j] = (features[i][j] - model.feat_mean[j]) / model.feat_std[j];

  Rng rng(mix_seed(options.seed, 0x52534dULL));  // "RSM"
  model.net = Mlp(static_cast<int>(dim), 32, 1, rng);
  Adam opt(model.net.params().size(), options.lr);
  std::vector<double> grad(model.net.params().size(), 0.0);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;

  Mlp::Cache cache;
  const size_t batch = std::max<size_t>(1, std::min<size_t>(options.batch_size, n));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    // Fisher-Yates with our own rng to keep training seed-deterministic.
    for (size_t i = n; i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t start = 0; start < n; start += batch) {
      const size_t end = std::min(start + batch, n);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (size_t k = start; k < end; ++k) {
        const size_t idx = order[k];
        model.net.forward(z[idx], cache);
        // d/dout of mean squared error over the minibatch
        const double dout = 2.0 * (cache.out[0] - labels[idx]) /
                            static_cast<double>(end - start);
        model.net.backward(cache, std::span(&dout, 1), grad);
      }
      opt.step(model.net.params(), grad);
    }
  }

  double mse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double pred = model.net.forward(z[i])[0];
    mse += (pred - labels[i]) * (pred - labels[i]);
  }
  model.final_train_mse = mse / static_cast<double>(n);
  model.fitted = true;
  return model;
}

ShapedDataset shape_dataset_hf_rsm(const Dataset& d, const SurrogateModel& model,
                                   const FeatureParams& p) {
  if (!model.fitted)
    throw ContractViolation("shape_dataset_hf_rsm: model has not been fitted");
  if (d.env_id() != model.env_id)
    throw ConfigError("shape_dataset_hf_rsm: model fitted for '" + model.env_id +
                      "', dataset is '" + d.env_id() + "'");
  if (rule_family(d.env_id()) != RuleFamily::kHighway)
    throw ConfigError("shape_dataset_hf_rsm: surrogate features are highway-only");
  ShapedDataset out(d.env_id());
  const auto features = highway_features_all(d, p);
  for (size_t i = 0; i < d.size(); ++i) {
    ShapedTransition st;
    static_cast<Transition&>(st) = d[i];
    st.shaped_reward = model.predict(surrogate_features(features[i]));
    st.augmented_reward = st.reward + st.shaped_reward;
    st.shaping_source = ShapingSource::kHfRsm;
    st.profile = model.label_profile;
    out.append(std::move(st));
  }
  return out;
}

}  // namespace rsw
