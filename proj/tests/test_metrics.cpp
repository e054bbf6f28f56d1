#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rsw/error.hpp"
#include "rsw/metrics.hpp"
#include "support/test_util.hpp"

using namespace rsw;
using rsw::test::highway_obs;

namespace {

// episode with explicit per-step (reward, lane, speed, collision) rows
struct StepSpec {
  double reward = 0.4;
  int lane = 1;
  double speed = 25.0;
  int collision = 0;
};

void append_episode(Dataset& d, int64_t episode_id,
                    const std::vector<StepSpec>& steps, int start_lane = 1) {
  int prev_lane = start_lane;
  for (size_t t = 0; t < steps.size(); ++t) {
    const StepSpec& s = steps[t];
    Transition tr;
    tr.episode_id = episode_id;
    tr.t = static_cast<int64_t>(t);
    // state carries this step's speed and the pre-step lane
    tr.state = highway_obs(s.speed, t == 0 ? start_lane : prev_lane);
    tr.next_state = highway_obs(s.speed, s.lane);
    tr.action = {1.0};
    tr.reward = s.reward;
    tr.collision_flag = s.collision;
    tr.lane_index = s.lane;
    tr.terminal = t + 1 == steps.size();
    tr.behavior_logprob = -1.0;
    d.append(std::move(tr));
    prev_lane = s.lane;
  }
}

}  // namespace

TEST_CASE("aer averages per-episode cumulative rewards") {
  Dataset d("highway");
  append_episode(d, 0, {{1.0}, {1.0}});
  append_episode(d, 1, {{2.0}});
  CHECK(aer(d) == doctest::Approx(2.0));

  Dataset forty("highway");
  append_episode(forty, 0, std::vector<StepSpec>(40, StepSpec{0.5}));
  CHECK(aer(forty) == doctest::Approx(20.0));

  CHECK_THROWS_AS(aer(Dataset("highway")), ContractViolation);
}

TEST_CASE("att averages episode lengths") {
  Dataset d("highway");
  append_episode(d, 0, std::vector<StepSpec>(40, StepSpec{}));
  append_episode(d, 1, std::vector<StepSpec>(40, StepSpec{}));
  CHECK(att(d) == doctest::Approx(40.0));

  Dataset mixed("highway");
  append_episode(mixed, 0, std::vector<StepSpec>(7, StepSpec{}));
  append_episode(mixed, 1, std::vector<StepSpec>(3, StepSpec{}));
  CHECK(att(mixed) == doctest::Approx(5.0));

  Dataset single("highway");
  append_episode(single, 0, {{0.0}});
  CHECK(att(single) == doctest::Approx(1.0));

  CHECK_THROWS_AS(att(Dataset("highway")), ContractViolation);
}

TEST_CASE("fma of a perfect episode is zero") {
  Dataset d("highway");
  append_episode(d, 0, std::vector<StepSpec>(10, StepSpec{0.4, 1, 25.0, 0}));
  CHECK(fma(d) == doctest::Approx(0.0));
}

TEST_CASE("fma counts lane changes, collisions, sub-threshold rewards and speed") {
  // one lane change + one collision, constant speed, nonnegative rewards
  Dataset d("highway");
  append_episode(d, 0,
                 {{0.4, 1, 25.0, 0}, {0.4, 2, 25.0, 0}, {0.0, 2, 25.0, 1}});
  CHECK(fma(d) == doctest::Approx(2.0));  // lambda1 + lambda3

  // two such episodes plus one clean one -> mean 4/3
  Dataset three("highway");
  append_episode(three, 0,
                 {{0.4, 1, 25.0, 0}, {0.4, 2, 25.0, 0}, {0.0, 2, 25.0, 1}});
  append_episode(three, 1,
                 {{0.4, 1, 25.0, 0}, {0.4, 2, 25.0, 0}, {0.0, 2, 25.0, 1}});
  append_episode(three, 2, std::vector<StepSpec>(3, StepSpec{0.4, 1, 25.0, 0}));
  CHECK(fma(three) == doctest::Approx(4.0 / 3.0));

  // sub-threshold reward and speed delta terms
  Dataset d2("highway");
  append_episode(d2, 0, {{-0.5, 1, 25.0, 0}, {0.4, 1, 30.0, 0}});
  // lambda2 * 1 (negative reward) + lambda4 * |30-25|
  CHECK(fma(d2) == doctest::Approx(1.0 + 0.1 * 5.0));
}

TEST_CASE("fma respects custom weights and a zero-weight config is zero") {
  Dataset d("highway");
  append_episode(d, 0, {{-1.0, 2, 20.0, 1}, {0.4, 3, 28.0, 1}});
  FmaConfig zero;
  zero.lambda1 = zero.lambda2 = zero.lambda3 = zero.lambda4 = 0.0;
  CHECK(fma(d, zero) == doctest::Approx(0.0));

  FmaConfig only_collisions;
  only_collisions.lambda1 = only_collisions.lambda2 = only_collisions.lambda4 = 0.0;
  only_collisions.lambda3 = 2.0;
  CHECK(fma(d, only_collisions) == doctest::Approx(4.0));

  FmaConfig bad;
  bad.lambda1 = -1.0;
  CHECK_THROWS_AS(fma(d, bad), ConfigError);
}

TEST_CASE("adding a collision step strictly increases fma") {
  Dataset base("highway");
  append_episode(base, 0, std::vector<StepSpec>(5, StepSpec{0.4, 1, 25.0, 0}));
  Dataset more("highway");
  std::vector<StepSpec> steps(5, StepSpec{0.4, 1, 25.0, 0});
  steps.push_back({0.4, 1, 25.0, 1});
  append_episode(more, 0, steps);
  CHECK(fma(more) > fma(base));
}

TEST_CASE("aer and att are invariant to episode order") {
  Dataset a("highway");
  append_episode(a, 0, std::vector<StepSpec>(7, StepSpec{0.1}));
  append_episode(a, 1, std::vector<StepSpec>(3, StepSpec{0.5}));
  Dataset b("highway");
  append_episode(b, 0, std::vector<StepSpec>(3, StepSpec{0.5}));
  append_episode(b, 1, std::vector<StepSpec>(7, StepSpec{0.1}));
  CHECK(aer(a) == doctest::Approx(aer(b)));
  CHECK(att(a) == doctest::Approx(att(b)));
}

TEST_CASE("fma rejects datasets without lane information") {
  Dataset reacher("reacher");
  Transition tr;
  tr.episode_id = 0;
  tr.t = 0;
  tr.state = std::vector<double>(11, 0.0);
  tr.next_state = std::vector<double>(11, 0.0);
  tr.action = {0.0, 0.0};
  tr.reward = -0.1;
  tr.lane_index = -1;
  tr.terminal = true;
  tr.behavior_logprob = -1.0;
  reacher.append(std::move(tr));
  CHECK_THROWS_AS(fma(reacher), ConfigError);
  CHECK(aer(reacher) == doctest::Approx(-0.1));  // aer is env-invariant
}

TEST_CASE("metrics_report aggregates per-episode rows") {
  Dataset d("highway");
  append_episode(d, 0, std::vector<StepSpec>(4, StepSpec{0.5, 3, 25.0, 0}),
                 /*start_lane=*/3);
  append_episode(d, 2, {{-1.0, 2, 25.0, 1}}, /*start_lane=*/2);
  const MetricsReport rep = metrics_report(d);
  CHECK(rep.episode_count == 2);
  REQUIRE(rep.per_episode.size() == 2);
  CHECK(rep.per_episode[0].episode_id == 0);
  CHECK(rep.per_episode[0].cumulative_reward == doctest::Approx(2.0));
  CHECK(rep.per_episode[0].length == 4);
  CHECK(rep.per_episode[1].episode_id == 2);
  CHECK(rep.aer == doctest::Approx((2.0 - 1.0) / 2.0));
  CHECK(rep.att == doctest::Approx(2.5));
  CHECK(rep.fma == doctest::Approx((0.0 + (1.0 + 1.0)) / 2.0));

  const MetricsReport no_fma = metrics_report(d, {}, false);
  CHECK(std::isnan(no_fma.fma));
}
