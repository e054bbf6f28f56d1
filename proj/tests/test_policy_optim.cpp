#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rsw/error.hpp"
#include "rsw/highway_env.hpp"
#include "rsw/llm_gateway.hpp"
#include "rsw/policy_optim.hpp"
#include "rsw/reacher_env.hpp"
#include "rsw/runner.hpp"
#include "support/test_util.hpp"

using namespace rsw;
using rsw::test::BanditEnv;

namespace {

// O(T^2) reference: A_t = sum_l (gamma*lambda)^l delta_{t+l}, stopping at the
// end of t's episode.
std::vector<double> gae_oracle(const std::vector<double>& r,
                               const std::vector<double>& v,
                               const std::vector<uint8_t>& term, double gamma,
                               double lambda, double last_value) {
  const size_t n = r.size();
  std::vector<double> adv(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    double acc = 0.0, coef = 1.0;
    for (size_t l = t; l < n; ++l) {
      const double vnext = term[l] ? 0.0 : (l + 1 < n ? v[l + 1] : last_value);
      acc += coef * (r[l] + gamma * vnext - v[l]);
      if (term[l]) break;
      coef *= gamma * lambda;
    }
    adv[t] = acc;
  }
  return adv;
}

struct Setup {
  Policy policy;
  Mlp value;
  MiniBatch mb;
};

// Seeded toy batch; behavior logprobs offset from the current policy by fixed
// amounts that keep every ratio away from the clip kinks.
Setup make_setup(ActionKind kind, int obs_dim, int action_count, int batch,
                 uint64_t seed) {
  Setup s;
  Rng rng(seed);
  s.policy.kind = kind;
  s.policy.obs_dim = obs_dim;
  s.policy.action_count = action_count;
  s.policy.net = Mlp(obs_dim, 16, action_count, rng);
  if (kind == ActionKind::kContinuous) s.policy.log_std.assign(action_count, -0.4);
  s.value = Mlp(obs_dim, 16, 1, rng);

  const double offsets[] = {-0.35, -0.1, 0.0, 0.1, 0.35};
  for (int i = 0; i < batch; ++i) {
    std::vector<double> obs(obs_dim);
    for (auto& x : obs) x = rng.uniform(-1, 1);
    Action a;
    if (kind == ActionKind::kDiscrete) {
      a = {static_cast<double>(rng.uniform_int(action_count))};
    } else {
      a.resize(action_count);
      for (auto& x : a) x = rng.uniform(-1, 1);
    }
    const double lp = s.policy.logprob(obs, a);
    s.mb.obs.push_back(obs);
    s.mb.actions.push_back(a);
    s.mb.behavior_logprobs.push_back(lp + offsets[i % 5]);
    s.mb.advantages.push_back(rng.uniform(-2, 2));
    s.mb.returns.push_back(rng.uniform(-1, 1));
    s.mb.source_indices.push_back(i);
  }
  return s;
}

double loss_total(const Setup& s, const PpoConfig& cfg) {
  return ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, nullptr, nullptr, nullptr)
      .total;
}

double max_rel_err(const std::vector<double>& analytic,
                   const std::vector<double>& fd) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1e-6, std::abs(analytic[i]) + std::abs(fd[i]));
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
  }
  return worst;
}

// Central finite differences of cfg's total loss with respect to params.
std::vector<double> fd_gradient(Setup& s, const PpoConfig& cfg,
                                std::vector<double>& params) {
  const double h = 1e-5;
  std::vector<double> g(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double hi = loss_total(s, cfg);
    params[i] = keep - h;
    const double lo = loss_total(s, cfg);
    params[i] = keep;
    g[i] = (hi - lo) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("gae matches hand-computed undiscounted returns") {
  const std::vector<double> rewards{1, 1, 1};
  const std::vector<double> values{0, 0, 0};
  const std::vector<uint8_t> terminals{0, 0, 1};
  const AdvantageBatch out = gae(rewards, values, terminals, 1.0, 1.0);
  CHECK(out.advantages[0] == doctest::Approx(3.0));
  CHECK(out.advantages[1] == doctest::Approx(2.0));
  CHECK(out.advantages[2] == doctest::Approx(1.0));
  CHECK(out.returns == out.advantages);  // values are zero

  const AdvantageBatch zero =
      gae(std::vector<double>(5, 0.0), std::vector<double>(5, 0.0),
          std::vector<uint8_t>{0, 0, 0, 0, 1}, 0.9, 0.8);
  for (double a : zero.advantages) CHECK(a == 0.0);
}

TEST_CASE("gae matches the O(T^2) oracle on random instances") {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + rng.uniform_int(60);
    std::vector<double> r(n), v(n);
    std::vector<uint8_t> term(n, 0);
    for (int i = 0; i < n; ++i) {
      r[i] = rng.uniform(-2, 2);
      v[i] = rng.uniform(-2, 2);
      term[i] = rng.uniform() < 0.15 ? 1 : 0;
    }
    const double gamma = rng.uniform(0.5, 1.0);
    const double lambda = rng.uniform(0.5, 1.0);
    const double last_value = term[n - 1] ? 0.0 : rng.uniform(-1, 1);
    const AdvantageBatch out = gae(r, v, term, gamma, lambda, last_value);
    const auto oracle = gae_oracle(r, v, term, gamma, lambda, last_value);
    for (int i = 0; i < n; ++i)
      CHECK(out.advantages[i] == doctest::Approx(oracle[i]).epsilon(1e-10));
    for (int i = 0; i < n; ++i)
      CHECK(out.returns[i] == doctest::Approx(oracle[i] + v[i]).epsilon(1e-10));
  }
  CHECK_THROWS_AS(gae(std::vector<double>{1.0}, std::vector<double>{},
                      std::vector<uint8_t>{1}, 0.9, 0.9),
                  ContractViolation);
}

TEST_CASE("normalized advantages have zero mean and unit std") {
  Rng rng(8);
  std::vector<double> r(257), v(257);
  std::vector<uint8_t> term(257, 0);
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] = rng.uniform(-3, 3);
    v[i] = rng.uniform(-1, 1);
  }
  term.back() = 1;
  const AdvantageBatch out = gae(r, v, term, 0.99, 0.95);
  double mean = std::accumulate(out.normalized.begin(), out.normalized.end(), 0.0) /
                out.normalized.size();
  double var = 0.0;
  for (double a : out.normalized) var += (a - mean) * (a - mean);
  const double stddev = std::sqrt(var / out.normalized.size());
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(stddev - 1.0) < 1e-3);
}

TEST_CASE("reward constants keep advantage ranking when values are refit") {
  Rng rng(21);
  const int n = 40;
  std::vector<double> r(n), v(n);
  std::vector<uint8_t> term(n, 0);
  term.back() = 1;
  for (int i = 0; i < n; ++i) {
    r[i] = rng.uniform(-1, 1);
    v[i] = rng.uniform(-1, 1);
  }
  const double gamma = 0.99, lambda = 0.95, c = 2.5;
  const AdvantageBatch base = gae(r, v, term, gamma, lambda);

  // refit values absorb the added constant's discounted tail exactly
  std::vector<double> r2(n), v2(n);
  for (int i = 0; i < n; ++i) {
    r2[i] = r[i] + c;
    double tail = 0.0, coef = 1.0;
    for (int l = i; l < n; ++l) {
      tail += coef * c;
      coef *= gamma;
    }
    v2[i] = v[i] + tail;
  }
  const AdvantageBatch shifted = gae(r2, v2, term, gamma, lambda);

  std::vector<size_t> rank_a(n), rank_b(n);
  std::iota(rank_a.begin(), rank_a.end(), 0);
  std::iota(rank_b.begin(), rank_b.end(), 0);
  std::sort(rank_a.begin(), rank_a.end(), [&](size_t x, size_t y) {
    return base.normalized[x] < base.normalized[y];
  });
  std::sort(rank_b.begin(), rank_b.end(), [&](size_t x, size_t y) {
    return shifted.normalized[x] < shifted.normalized[y];
  });
  CHECK(rank_a == rank_b);
}

TEST_CASE("identity ratio reduces the surrogate to -mean(advantage)") {
  Setup s = make_setup(ActionKind::kDiscrete, 6, 4, 12, 3);
  for (size_t i = 0; i < s.mb.obs.size(); ++i)
    s.mb.behavior_logprobs[i] = s.policy.logprob(s.mb.obs[i], s.mb.actions[i]);
  PpoConfig cfg;
  const LossTerms terms =
      ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, nullptr, nullptr, nullptr);
  const double mean_adv =
      std::accumulate(s.mb.advantages.begin(), s.mb.advantages.end(), 0.0) /
      s.mb.advantages.size();
  CHECK(terms.policy_loss == doctest::Approx(-mean_adv).epsilon(1e-12));
}

TEST_CASE("clip arithmetic: ratio 1.5 with positive advantage uses 1.2*A") {
  Setup s = make_setup(ActionKind::kDiscrete, 4, 3, 1, 5);
  s.mb.advantages[0] = 2.0;
  s.mb.behavior_logprobs[0] =
      s.policy.logprob(s.mb.obs[0], s.mb.actions[0]) - std::log(1.5);
  PpoConfig cfg;
  cfg.clip_epsilon = 0.2;
  const LossTerms terms =
      ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, nullptr, nullptr, nullptr);
  CHECK(terms.policy_loss == doctest::Approx(-1.2 * 2.0).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences (discrete)") {
  Setup s = make_setup(ActionKind::kDiscrete, 8, 3, 16, 11);
  PpoConfig cfg;  // full loss: policy + value + entropy

  std::vector<double> gp(s.policy.net.params().size(), 0.0);
  std::vector<double> gv(s.value.params().size(), 0.0);
  ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, &gp, nullptr, &gv);

  const auto fd_p = fd_gradient(s, cfg, s.policy.net.params());
  const auto fd_v = fd_gradient(s, cfg, s.value.params());
  CHECK(max_rel_err(gp, fd_p) < 1e-4);
  CHECK(max_rel_err(gv, fd_v) < 1e-4);
}

TEST_CASE("policy, value and entropy gradients check out independently") {
  // policy loss alone (entropy and value coefficients zeroed)
  Setup s = make_setup(ActionKind::kDiscrete, 8, 3, 16, 13);
  PpoConfig cfg;
  cfg.entropy_coef = 0.0;
  cfg.value_coef = 0.0;
  std::vector<double> gp(s.policy.net.params().size(), 0.0);
  ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, &gp, nullptr, nullptr);
  CHECK(max_rel_err(gp, fd_gradient(s, cfg, s.policy.net.params())) < 1e-4);

  // entropy term alone: zero advantages silence the surrogate
  Setup e = make_setup(ActionKind::kDiscrete, 8, 3, 16, 17);
  for (auto& a : e.mb.advantages) a = 0.0;
  PpoConfig ecfg;
  ecfg.entropy_coef = 0.05;
  ecfg.value_coef = 0.0;
  std::vector<double> ge(e.policy.net.params().size(), 0.0);
  ppo_loss_and_grad(e.policy, e.value, e.mb, ecfg, &ge, nullptr, nullptr);
  CHECK(max_rel_err(ge, fd_gradient(e, ecfg, e.policy.net.params())) < 1e-4);

  // value loss alone via the value parameters
  Setup v = make_setup(ActionKind::kDiscrete, 8, 3, 16, 19);
  PpoConfig vcfg;
  std::vector<double> gv(v.value.params().size(), 0.0);
  ppo_loss_and_grad(v.policy, v.value, v.mb, vcfg, nullptr, nullptr, &gv);
  CHECK(max_rel_err(gv, fd_gradient(v, vcfg, v.value.params())) < 1e-4);
}

TEST_CASE("analytic gradients match finite differences (continuous + log_std)") {
  Setup s = make_setup(ActionKind::kContinuous, 5, 2, 16, 23);
  PpoConfig cfg;
  std::vector<double> gp(s.policy.net.params().size(), 0.0);
  std::vector<double> gls(s.policy.log_std.size(), 0.0);
  std::vector<double> gv(s.value.params().size(), 0.0);
  ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, &gp, &gls, &gv);

  CHECK(max_rel_err(gp, fd_gradient(s, cfg, s.policy.net.params())) < 1e-4);
  CHECK(max_rel_err(gls, fd_gradient(s, cfg, s.policy.log_std)) < 1e-4);
  CHECK(max_rel_err(gv, fd_gradient(s, cfg, s.value.params())) < 1e-4);
}

TEST_CASE("without clipping the first update equals vanilla policy gradient") {
  Setup s = make_setup(ActionKind::kDiscrete, 6, 3, 20, 29);
  // one-epoch start: behavior policy is the current policy
  for (size_t i = 0; i < s.mb.obs.size(); ++i)
    s.mb.behavior_logprobs[i] = s.policy.logprob(s.mb.obs[i], s.mb.actions[i]);
  PpoConfig cfg;
  cfg.clip_epsilon = std::numeric_limits<double>::infinity();
  cfg.entropy_coef = 0.0;
  cfg.value_coef = 0.0;
  std::vector<double> gp(s.policy.net.params().size(), 0.0);
  ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, &gp, nullptr, nullptr);

  // vanilla policy gradient: d/dtheta of -mean(logpi * A)
  std::vector<double> vanilla(s.policy.net.params().size(), 0.0);
  Mlp::Cache cache;
  const double inv_n = 1.0 / s.mb.obs.size();
  for (size_t i = 0; i < s.mb.obs.size(); ++i) {
    s.policy.net.forward(s.mb.obs[i], cache);
    std::vector<double> p(cache.out.size());
    double m = *std::max_element(cache.out.begin(), cache.out.end());
    double sum = 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
      p[j] = std::exp(cache.out[j] - m);
      sum += p[j];
    }
    for (auto& x : p) x /= sum;
    const int a = static_cast<int>(s.mb.actions[i][0]);
    std::vector<double> dlogits(p.size());
    for (size_t j = 0; j < p.size(); ++j) {
      dlogits[j] = -s.mb.advantages[i] * ((j == static_cast<size_t>(a)) - p[j]) * inv_n;
    }
    s.policy.net.backward(cache, dlogits, vanilla);
  }
  for (size_t i = 0; i < gp.size(); ++i) CHECK(std::abs(gp[i] - vanilla[i]) < 1e-8);
}

TEST_CASE("non-finite inputs raise NumericalError naming the batch index") {
  Setup s = make_setup(ActionKind::kDiscrete, 4, 3, 4, 31);
  s.mb.advantages[2] = std::numeric_limits<double>::quiet_NaN();
  s.mb.source_indices[2] = 1042;
  PpoConfig cfg;
  try {
    ppo_loss_and_grad(s.policy, s.value, s.mb, cfg, nullptr, nullptr, nullptr);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("1042") != std::string::npos);
  }
}

TEST_CASE("collect rolls out whole episodes and records behavior logprobs") {
  HighwayConfig cfg;
  cfg.duration = 40;
  HighwayEnv env(cfg);
  const Policy policy = Policy::create(env, 16, 1);
  Rng rng(1);
  const Dataset d = collect(env, policy, 100, rng, 9);
  CHECK(d.size() >= 100);
  CHECK(d.episodes().size() >= 3);
  for (const auto& ep : d.episodes()) CHECK(ep.back().terminal);

  // recorded logprob matches the policy's own evaluation
  for (size_t i = 0; i < 10; ++i) {
    CHECK(d[i].behavior_logprob ==
          doctest::Approx(policy.logprob(d[i].state, d[i].action)).epsilon(1e-12));
  }

  // determinism
  HighwayEnv env2(cfg);
  Rng rng2(1);
  const Dataset d2 = collect(env2, policy, 100, rng2, 9);
  CHECK(d2 == d);
}

TEST_CASE("bandit: ppo finds the paying arm") {
  for (uint64_t seed : {0, 1, 2}) {
    BanditEnv env;
    PpoConfig cfg;
    cfg.batch_timesteps = 256;
    cfg.total_timesteps = 2000;
    cfg.minibatch_size = 64;
    cfg.learning_rate = 0.01;
    cfg.hidden_dim = 16;
    const TrainResult result = train(env, cfg, nullptr, seed);
    const auto logits = result.bundle.policy.net.forward(std::vector<double>{0.0});
    const double p0 = 1.0 / (1.0 + std::exp(logits[1] - logits[0]));
    CHECK(p0 > 0.9);
  }
}

TEST_CASE("training is deterministic given seed and a mock shaper") {
  auto run_once = [] {
    HighwayConfig hw;
    HighwayEnv env(hw);
    PpoConfig cfg;
    cfg.batch_timesteps = 256;
    cfg.total_timesteps = 512;
    cfg.hidden_dim = 16;
    MockOracle mock;
    LlmDirectShaper shaper(mock);
    return train(env, cfg, &shaper, 7);
  };
  const TrainResult a = run_once();
  const TrainResult b = run_once();
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].mean_intrinsic_reward == b.log[i].mean_intrinsic_reward);
    CHECK(a.log[i].mean_shaped_reward == b.log[i].mean_shaped_reward);
    CHECK(a.log[i].policy_loss == b.log[i].policy_loss);
    CHECK(a.log[i].value_loss == b.log[i].value_loss);
    CHECK(a.log[i].entropy == b.log[i].entropy);
  }
  CHECK(a.bundle.policy.net.params() == b.bundle.policy.net.params());
  CHECK(a.log.front().mean_shaped_reward != 0.0);
}

TEST_CASE("zero total timesteps returns the initial parameters") {
  BanditEnv env;
  PpoConfig cfg;
  cfg.total_timesteps = 0;
  cfg.hidden_dim = 16;
  const TrainResult result = train(env, cfg, nullptr, 3);
  const Policy fresh = Policy::create(env, cfg.hidden_dim, 3);
  CHECK(result.bundle.policy.net.params() == fresh.net.params());
  CHECK(result.log.empty());
}

TEST_CASE("evaluate runs greedy episodes with intrinsic rewards") {
  HighwayConfig hw;
  HighwayEnv env(hw);
  const Policy policy = Policy::create(env, 16, 5);
  const Dataset d = evaluate(env, policy, 5, 123);
  CHECK(d.episodes().size() == 5);
  int terminals = 0;
  for (size_t i = 0; i < d.size(); ++i) terminals += d[i].terminal ? 1 : 0;
  CHECK(terminals == 5);

  HighwayEnv env2(hw);
  const Dataset d2 = evaluate(env2, policy, 5, 123);
  CHECK(d2 == d);
}

TEST_CASE("checkpoints round-trip through JSON") {
  ReacherConfig rc;
  ReacherEnv env(rc);
  PpoConfig cfg;
  cfg.total_timesteps = 100;
  cfg.batch_timesteps = 100;
  cfg.hidden_dim = 16;
  const TrainResult result = train(env, cfg, nullptr, 2);
  const auto path = std::filesystem::temp_directory_path() / "rsw_ckpt.json";
  result.bundle.save(path);
  const PolicyBundle back = PolicyBundle::load(path);
  CHECK(back.policy.net.params() == result.bundle.policy.net.params());
  CHECK(back.policy.log_std == result.bundle.policy.log_std);
  CHECK(back.value.params() == result.bundle.value.params());
  CHECK(back.policy.kind == ActionKind::kContinuous);

  ReacherEnv env2(rc);
  const Dataset a = evaluate(env2, result.bundle.policy, 2, 0);
  ReacherEnv env3(rc);
  const Dataset b = evaluate(env3, back.policy, 2, 0);
  CHECK(a == b);
}
