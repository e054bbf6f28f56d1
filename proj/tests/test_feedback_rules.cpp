#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "rsw/error.hpp"
#include "rsw/feedback_rules.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/policy_optim.hpp"
#include "support/test_util.hpp"

using namespace rsw;
using rsw::test::highway_obs;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent copy of the published coefficient tables.
constexpr int kIdealLane[4] = {+1, 0, -1, -1};
constexpr int kIdealCollision[5] = {+1, 0, +1, -2, +2};
constexpr int kIdealSpeed[9] = {+2, +1, -1, -1, +2, -1, -2, -1, +2};
constexpr int kAggLane[4] = {-2, +1, +2, +2};
constexpr int kAggCollision[5] = {-2, +2, +1, -1, -2};
constexpr int kAggSpeed[9] = {+2, +1, -2, +1, 0, -1, +2, +1, -2};
constexpr int kRadLane[4] = {-2, 0, +1, +1};
constexpr int kRadCollision[5] = {-2, +1, +1, 0, -2};
constexpr int kRadSpeed[9] = {+1, 0, -2, 0, -1, -2, +1, 0, -2};

ScenarioFeatures safe_features(int n = 0, double v = 25.0, int rho = 1) {
  ScenarioFeatures f;
  f.ttc = kInf;
  f.acc = 0.0;
  f.lc = 0;
  f.rho = rho;
  f.v = v;
  f.lane_change_count = n;
  return f;
}

}  // namespace

TEST_CASE("all 54 style coefficients match the published tables") {
  const auto& ideal = StyleCoefficients::builtin(Profile::kIdeal);
  const auto& agg = StyleCoefficients::builtin(Profile::kAgg);
  const auto& rad = StyleCoefficients::builtin(Profile::kRad);
  for (int i = 0; i < 4; ++i) {
    CHECK(ideal.lane[i] == kIdealLane[i]);
    CHECK(agg.lane[i] == kAggLane[i]);
    CHECK(rad.lane[i] == kRadLane[i]);
  }
  for (int i = 0; i < 5; ++i) {
    CHECK(ideal.collision[i] == kIdealCollision[i]);
    CHECK(agg.collision[i] == kAggCollision[i]);
    CHECK(rad.collision[i] == kRadCollision[i]);
  }
  for (int i = 0; i < 9; ++i) {
    CHECK(ideal.speed[i] == kIdealSpeed[i]);
    CHECK(agg.speed[i] == kAggSpeed[i]);
    CHECK(rad.speed[i] == kRadSpeed[i]);
  }
  CHECK_THROWS_AS(StyleCoefficients::builtin(Profile::kNa), ConfigError);
}

TEST_CASE("collision scenario indexing") {
  CHECK(collision_scenario_index(1.0, -0.5, 0) == 0);  // decelerating in band
  CHECK(collision_scenario_index(kInf, 3.0, 1) == 4);  // safe path
  CHECK(collision_scenario_index(0.4, 3.0, 1) == 3);   // immediate risk wins

  // boundaries: 0.5 and 2.0 belong to the potential-collision band
  CHECK(collision_scenario_index(0.49, -1.0, 0) == 3);
  CHECK(collision_scenario_index(0.5, -1.0, 0) == 0);
  CHECK(collision_scenario_index(2.0, 1.0, 0) == 1);
  CHECK(collision_scenario_index(2.01, 1.0, 0) == 4);

  // in-band precedence: acc sign first, lc only at acc == 0
  CHECK(collision_scenario_index(1.0, -0.5, 1) == 0);
  CHECK(collision_scenario_index(1.0, +0.5, 1) == 1);
  CHECK(collision_scenario_index(1.0, 0.0, 1) == 2);
  CHECK(collision_scenario_index(1.0, 0.0, 0) == 0);

  CHECK_THROWS_AS(collision_scenario_index(-0.1, 0.0, 0), ContractViolation);
}

TEST_CASE("speed scenario indexing") {
  const std::array<double, 2> thresh{20.0, 30.0};
  CHECK(speed_scenario_index(1, 25.0, thresh) == 1);  // 3*0 + medium
  CHECK(speed_scenario_index(3, 35.0, thresh) == 6);  // 3*2 + high
  CHECK(speed_scenario_index(2, 10.0, thresh) == 5);  // 3*1 + low

  // total: every (rho, v) pair maps to exactly one index in 0..8
  for (int rho = 1; rho <= 3; ++rho) {
    for (double v = -5.0; v <= 45.0; v += 0.5) {
      const int idx = speed_scenario_index(rho, v, thresh);
      CHECK(idx >= 0);
      CHECK(idx <= 8);
      CHECK(idx / 3 == rho - 1);
    }
  }
  // band boundaries are medium (inclusive)
  CHECK(speed_scenario_index(1, 20.0, thresh) == 1);
  CHECK(speed_scenario_index(1, 30.0, thresh) == 1);
  CHECK_THROWS_AS(speed_scenario_index(0, 25.0, thresh), ContractViolation);
}

TEST_CASE("hf_d_score picks the documented table entries") {
  ShapingWeights w;
  // IDEAL, n=2, c4, s4 -> (-1) + (+2) + (+2) = 3
  ScenarioFeatures f = safe_features(2, 25.0, 2);
  CHECK(hf_d_score(f, StyleCoefficients::builtin(Profile::kIdeal), w) ==
        doctest::Approx(3.0));

  // AGG, n=0, c0, s8 -> (-2) + (-2) + (-2) = -6
  f = safe_features(0, 10.0, 3);
  f.ttc = 1.0;
  f.acc = -1.0;
  CHECK(hf_d_score(f, StyleCoefficients::builtin(Profile::kAgg), w) ==
        doctest::Approx(-6.0));

  // RAD, n=1, c3, s1 -> 0 + 0 + 0 = 0
  f = safe_features(1, 25.0, 1);
  f.ttc = 0.3;
  CHECK(hf_d_score(f, StyleCoefficients::builtin(Profile::kRad), w) ==
        doctest::Approx(0.0));
}

TEST_CASE("hf_d_score is linear in the weights") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    ScenarioFeatures f;
    f.ttc = rng.uniform() < 0.3 ? kInf : rng.uniform(0.0, 3.0);
    f.acc = rng.uniform(-2, 2);
    f.lc = rng.uniform_int(2);
    f.rho = 1 + rng.uniform_int(3);
    f.v = rng.uniform(0, 40);
    f.lane_change_count = rng.uniform_int(4);
    ShapingWeights w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    const double alpha = rng.uniform(-3, 3);
    ShapingWeights aw{alpha * w.lane, alpha * w.collision, alpha * w.speed};
    const auto& coeffs = StyleCoefficients::builtin(Profile::kAgg);
    CHECK(hf_d_score(f, coeffs, aw) ==
          doctest::Approx(alpha * hf_d_score(f, coeffs, w)).epsilon(1e-12));
  }
}

TEST_CASE("profile ordering on the canonical safe step") {
  const ScenarioFeatures f = safe_features();  // n0, c4, s1
  const double ideal = hf_d_score(f, StyleCoefficients::builtin(Profile::kIdeal), {});
  const double agg = hf_d_score(f, StyleCoefficients::builtin(Profile::kAgg), {});
  const double rad = hf_d_score(f, StyleCoefficients::builtin(Profile::kRad), {});
  CHECK(ideal == doctest::Approx(4.0));  // +1 +2 +1
  CHECK(agg == doctest::Approx(-3.0));   // -2 -2 +1
  CHECK(rad == doctest::Approx(-4.0));   // -2 -2 +0 per the published table
  CHECK(ideal > agg);
  CHECK(ideal > rad);
}

TEST_CASE("shape_dataset_hf_d annotates every step") {
  Dataset d("highway");
  rsw::test::append_calm_highway_episode(d, 0, 12);
  rsw::test::append_calm_highway_episode(d, 1, 5);

  const ShapedDataset ideal =
      shape_dataset_hf_d(d, StyleCoefficients::builtin(Profile::kIdeal));
  REQUIRE(ideal.size() == d.size());
  for (size_t i = 0; i < ideal.size(); ++i) {
    CHECK(ideal[i].shaped_reward == doctest::Approx(4.0));  // n0 + c4 + s1
    CHECK(ideal[i].augmented_reward ==
          doctest::Approx(ideal[i].reward + ideal[i].shaped_reward));
    CHECK(ideal[i].shaping_source == ShapingSource::kHfD);
    CHECK(ideal[i].profile == Profile::kIdeal);
  }

  const ShapedDataset agg =
      shape_dataset_hf_d(d, StyleCoefficients::builtin(Profile::kAgg));
  for (size_t i = 0; i < agg.size(); ++i)
    CHECK(agg[i].shaped_reward == doctest::Approx(-3.0));  // -2 -2 +1

  const Dataset empty("highway");
  CHECK(shape_dataset_hf_d(empty, StyleCoefficients::builtin(Profile::kIdeal)).empty());

  const Dataset unsupported("bandit");
  CHECK_THROWS_AS(
      shape_dataset_hf_d(unsupported, StyleCoefficients::builtin(Profile::kIdeal)),
      ConfigError);
}

TEST_CASE("lane-change count uses a sliding 10-step window clamped to 3") {
  Dataset d("highway");
  // 15 steps; lane changes at t = 0..4, then none
  int lane = 0;
  for (int t = 0; t < 15; ++t) {
    const bool change = t < 5;
    Transition tr;
    tr.episode_id = 0;
    tr.t = t;
    tr.state = highway_obs(25.0, lane);
    if (change) ++lane;
    tr.next_state = highway_obs(25.0, lane);
    tr.action = {change ? 2.0 : 1.0};
    tr.lane_index = lane;
    tr.terminal = t == 14;
    tr.behavior_logprob = -1.0;
    d.append(std::move(tr));
  }
  const auto features = highway_features_all(d);
  CHECK(features[0].lane_change_count == 1);
  CHECK(features[2].lane_change_count == 3);
  CHECK(features[4].lane_change_count == 3);  // clamped from 5
  CHECK(features[9].lane_change_count == 3);  // window still holds all 5
  CHECK(features[12].lane_change_count == 2); // t=3,4 left in window
  CHECK(features[13].lane_change_count == 1); // only t=4 left
  CHECK(features[14].lane_change_count == 0); // window t5..t14 has none
}

TEST_CASE("reacher proxy rules") {
  auto make = [](double dist_now, double dist_next, double a0, double a1,
                 double w0, double w1) {
    Transition tr;
    tr.episode_id = 0;
    tr.t = 0;
    tr.state = std::vector<double>(11, 0.0);
    tr.next_state = std::vector<double>(11, 0.0);
    tr.state[6] = w0;
    tr.state[7] = w1;
    tr.state[10] = dist_now;
    tr.next_state[10] = dist_next;
    tr.action = {a0, a1};
    tr.behavior_logprob = -1.0;
    return tr;
  };

  // IDEAL: +1 for closing in, -1 extra for large torques
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.1, 0.1, 0, 0), Profile::kIdeal) == 1.0);
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.8, 0.8, 0, 0), Profile::kIdeal) == 0.0);
  CHECK(reacher_rule_score(make(0.05, 0.10, 0.1, 0.1, 0, 0), Profile::kIdeal) == -1.0);
  CHECK(reacher_rule_score(make(0.05, 0.0505, 0.1, 0.1, 0, 0), Profile::kIdeal) == 0.0);
  // holding on target counts as progress, drifting within it is not penalized
  CHECK(reacher_rule_score(make(0.02, 0.021, 0.1, 0.1, 0, 0), Profile::kIdeal) == 1.0);
  CHECK(reacher_rule_score(make(0.01, 0.01, 0.1, 0.1, 0, 0), Profile::kIdeal) == 1.0);

  // AGG inverts the torque term
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.8, 0.8, 0, 0), Profile::kAgg) == 2.0);
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.1, 0.1, 0, 0), Profile::kAgg) == 0.0);

  // RAD pays progress only at high joint speed
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.1, 0.1, 2.0, 0), Profile::kRad) == 1.0);
  CHECK(reacher_rule_score(make(0.10, 0.05, 0.1, 0.1, 0.1, 0), Profile::kRad) == -1.0);
  CHECK(reacher_rule_score(make(0.05, 0.10, 0.1, 0.1, 2.0, 0), Profile::kRad) == 0.0);
}

namespace {

// Labeled highway corpus from short random rollouts.
std::pair<std::vector<std::vector<double>>, std::vector<double>>
labeled_corpus(size_t steps, Profile profile, uint64_t seed) {
  HighwayConfig cfg;
  HighwayEnv env(cfg);
  Policy policy = Policy::create(env, 16, seed);
  Rng rng(seed);
  const Dataset d = collect(env, policy, static_cast<long>(steps), rng,
                            mix_seed(seed, 77));
  const auto features = highway_features_all(d);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (const auto& f : features) {
    xs.push_back(surrogate_features(f));
    ys.push_back(hf_d_score(f, StyleCoefficients::builtin(profile), {}));
  }
  return {xs, ys};
}

}  // namespace

TEST_CASE("surrogate fits the IDEAL rule with held-out MSE below 0.5") {
  auto [xs, ys] = labeled_corpus(5000, Profile::kIdeal, 21);
  const size_t n = xs.size();
  const size_t train_n = n * 4 / 5;
  std::vector<std::vector<double>> train_x(xs.begin(), xs.begin() + train_n);
  std::vector<double> train_y(ys.begin(), ys.begin() + train_n);

  SurrogateFitOptions opt;
  opt.seed = 5;
  const SurrogateModel model = fit_surrogate(train_x, train_y, opt);

  double mse = 0.0;
  for (size_t i = train_n; i < n; ++i) {
    const double pred = model.predict(xs[i]);
    mse += (pred - ys[i]) * (pred - ys[i]);
  }
  mse /= static_cast<double>(n - train_n);
  CHECK(mse < 0.5);
  CHECK(model.final_train_mse < 0.5);
}

TEST_CASE("surrogate regression sanity") {
  SUBCASE("constant labels are reproduced") {
    Rng rng(9);
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (int i = 0; i < 200; ++i) {
      xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      ys.push_back(1.5);
    }
    SurrogateFitOptions opt;
    opt.epochs = 1000;
    opt.lr = 1e-2;
    const SurrogateModel model = fit_surrogate(xs, ys, opt);
    for (int i = 0; i < 10; ++i)
      CHECK(std::abs(model.predict(xs[i]) - 1.5) < 1e-2);
  }

  SUBCASE("overfit mode drives training points to their labels") {
    Rng rng(13);
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (int i = 0; i < 10; ++i) {
      xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      ys.push_back(rng.uniform(-2, 2));
    }
    SurrogateFitOptions opt;
    opt.min_samples = 1;
    opt.epochs = 8000;
    opt.lr = 1e-2;
    opt.batch_size = 10;
    const SurrogateModel model = fit_surrogate(xs, ys, opt);
    for (size_t i = 0; i < xs.size(); ++i)
      CHECK(std::abs(model.predict(xs[i]) - ys[i]) < 1e-2);
  }

  SUBCASE("degenerate all-constant features are rejected") {
    std::vector<std::vector<double>> xs(150, {1.0, 2.0});
    std::vector<double> ys(150, 0.0);
    CHECK_THROWS_AS(fit_surrogate(xs, ys, {}), DataError);
  }

  SUBCASE("too few samples violate the precondition") {
    std::vector<std::vector<double>> xs(50, {1.0});
    std::vector<double> ys(50, 0.0);
    CHECK_THROWS_AS(fit_surrogate(xs, ys, {}), ContractViolation);
  }

  SUBCASE("training is deterministic given the seed") {
    auto [xs, ys] = labeled_corpus(600, Profile::kIdeal, 3);
    SurrogateFitOptions opt;
    opt.min_samples = 100;
    opt.epochs = 20;
    const SurrogateModel a = fit_surrogate(xs, ys, opt);
    const SurrogateModel b = fit_surrogate(xs, ys, opt);
    CHECK(a.net.params() == b.net.params());
  }
}

TEST_CASE("hf-rsm shaping tracks the rule it was trained on") {
  HighwayConfig cfg;
  HighwayEnv env(cfg);
  Policy policy = Policy::create(env, 16, 31);
  Rng rng(31);
  const Dataset d = collect(env, policy, 3000, rng, mix_seed(31, 77));

  const auto features = highway_features_all(d);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (const auto& f : features) {
    xs.push_back(surrogate_features(f));
    ys.push_back(hf_d_score(f, StyleCoefficients::builtin(Profile::kIdeal), {}));
  }
  SurrogateFitOptions opt;
  opt.seed = 7;
  SurrogateModel model = fit_surrogate(xs, ys, opt);
  model.label_profile = Profile::kIdeal;

  const ShapedDataset rsm = shape_dataset_hf_rsm(d, model);
  const ShapedDataset hfd =
      shape_dataset_hf_d(d, StyleCoefficients::builtin(Profile::kIdeal));
  std::vector<double> rsm_scores, hfd_scores;
  for (size_t i = 0; i < rsm.size(); ++i) {
    rsm_scores.push_back(rsm[i].shaped_reward);
    hfd_scores.push_back(hfd[i].shaped_reward);
    CHECK(rsm[i].shaping_source == ShapingSource::kHfRsm);
  }
  CHECK(rsw::test::spearman(rsm_scores, hfd_scores) >= 0.9);
}

TEST_CASE("an AGG-trained surrogate scores safe driving negatively") {
  auto [xs, ys] = labeled_corpus(3000, Profile::kAgg, 41);
  SurrogateFitOptions opt;
  opt.seed = 11;
  const SurrogateModel model = fit_surrogate(xs, ys, opt);

  // canonically safe trajectory: no neighbors, constant 25 m/s, no changes
  Dataset safe("highway");
  rsw::test::append_calm_highway_episode(safe, 0, 40);
  const ShapedDataset shaped = shape_dataset_hf_rsm(safe, model);
  double mean = 0.0;
  for (size_t i = 0; i < shaped.size(); ++i) mean += shaped[i].shaped_reward;
  mean /= static_cast<double>(shaped.size());
  CHECK(mean < 0.0);

  SUBCASE("unfitted model and empty dataset") {
    SurrogateModel blank;
    CHECK_THROWS_AS(shape_dataset_hf_rsm(safe, blank), ContractViolation);
    const Dataset empty("highway");
    CHECK(shape_dataset_hf_rsm(empty, model).empty());
  }
}
