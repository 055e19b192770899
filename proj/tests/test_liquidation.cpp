#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "pspo/features.hpp"
#include "pspo/liquidation.hpp"
#include "pspo/rng.hpp"

using namespace pspo;

namespace {

LiquidationConfig noiseless_config() {
  LiquidationConfig config;
  config.ou.sigma = 0.0;
  config.ou.p0_std = 0.0;
  return config;
}

// Deterministic rate path under sigma = 0: one exact OU contraction per step.
double rate_after_steps(const OuParams& ou, double r0, int steps) {
  const double decay = std::exp(-ou.theta * ou.dt);
  double r = r0;
  for (int k = 0; k < steps; ++k) r = ou.mu_rate + (r - ou.mu_rate) * decay;
  return r;
}

}  // namespace

TEST_CASE("the mean rate is a fixed point of the noiseless process") {
  OuParams ou;
  ou.sigma = 0.0;
  Rng rng(1);
  CHECK(ou_step(ou, ou.mu_rate, rng) == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("the noiseless step contracts toward the mean at the exact decay") {
  OuParams ou;
  ou.sigma = 0.0;
  Rng rng(1);
  const double expected = 1.5 - 0.5 * std::exp(-0.05);
  CHECK(ou_step(ou, 1.0, rng) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(ou_step_raw(ou, 1.0, rng) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("the environment rate step is the raw law clamped at zero") {
  OuParams ou;
  ou.theta = 1.0;
  ou.mu_rate = 0.1;
  ou.sigma = 2.0;
  int clamped = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng r1(seed), r2(seed);
    const double raw = ou_step_raw(ou, 0.0, r1);
    const double stepped = ou_step(ou, 0.0, r2);
    CHECK(stepped == std::max(0.0, raw));
    if (raw < 0.0) ++clamped;
  }
  CHECK(clamped > 100);  // the clamp branch is actually exercised
  Rng rng(1);
  CHECK_THROWS_AS(ou_step(ou, -0.5, rng), std::invalid_argument);
}

TEST_CASE("long runs of the raw process match the stationary moments") {
  OuParams ou;  // stationary mean 1.5, variance sigma^2/(2 theta) = 0.4
  Rng rng(7);
  double rate = ou.mu_rate;
  double sum = 0.0, sum_sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    rate = ou_step_raw(ou, rate, rng);
    sum += rate;
    sum_sq += rate * rate;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean - 1.5) < 0.02);
  CHECK(std::abs(var - 0.4) < 0.032);
}

TEST_CASE("holding converts nothing and only advances the clock") {
  const LiquidationConfig config = noiseless_config();
  LiquidationState s;
  s.t = 3;
  s.inventory = 64.0;
  s.rate = 1.2;
  const StepResult out = env_step(config, s, 0, std::uint64_t{1});
  CHECK(out.reward == 0.0);
  CHECK(out.state.t == 4);
  CHECK(out.state.inventory == 64.0);
  CHECK(out.state.rate == doctest::Approx(rate_after_steps(config.ou, 1.2, 1)));
  CHECK(out.done == false);
}

TEST_CASE("a full conversion pays inventory times the decision rate and ends") {
  const LiquidationConfig config = noiseless_config();
  LiquidationState s;
  s.t = 0;
  s.inventory = 100.0;
  s.rate = 1.25;
  const int full = config.n_actions() - 1;
  const StepResult out = env_step(config, s, full, std::uint64_t{2});
  CHECK(out.reward == doctest::Approx(125.0).epsilon(1e-15));
  CHECK(out.state.inventory == 0.0);
  CHECK(out.done == true);
}

TEST_CASE("two half conversions follow the exact noiseless arithmetic") {
  const LiquidationConfig config = noiseless_config();
  LiquidationState s;
  s.t = 0;
  s.inventory = 100.0;
  s.rate = 1.0;
  const StepResult first = env_step(config, s, 5, std::uint64_t{3});  // fraction 0.5
  CHECK(first.reward == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(first.state.inventory == doctest::Approx(50.0).epsilon(1e-15));
  const double r1 = rate_after_steps(config.ou, 1.0, 1);
  CHECK(first.state.rate == doctest::Approx(r1).epsilon(1e-15));
  const StepResult second = env_step(config, first.state, 5, std::uint64_t{4});
  CHECK(second.reward == doctest::Approx(25.0 * r1).epsilon(1e-14));
  CHECK(second.state.inventory == doctest::Approx(25.0).epsilon(1e-14));
}

TEST_CASE("stepping a finished episode throws") {
  const LiquidationConfig config = noiseless_config();
  LiquidationState at_horizon;
  at_horizon.t = config.horizon;
  at_horizon.inventory = 50.0;
  at_horizon.rate = 1.0;
  CHECK_THROWS_AS(env_step(config, at_horizon, 0, std::uint64_t{1}), std::logic_error);
  LiquidationState empty;
  empty.t = 10;
  empty.inventory = 0.0;
  empty.rate = 1.0;
  CHECK_THROWS_AS(env_step(config, empty, 0, std::uint64_t{1}), std::logic_error);
  LiquidationState live;
  live.t = 0;
  live.inventory = 100.0;
  live.rate = 1.0;
  CHECK_THROWS_AS(env_step(config, live, -1, std::uint64_t{1}), std::invalid_argument);
  CHECK_THROWS_AS(env_step(config, live, config.n_actions(), std::uint64_t{1}),
                  std::invalid_argument);
}

TEST_CASE("terminal rules split on what happens to leftover inventory") {
  LiquidationConfig expire = noiseless_config();
  expire.horizon = 5;
  LiquidationConfig force = expire;
  force.terminal_rule = TerminalRule::force_liquidate;

  for (const LiquidationConfig* config : {&expire, &force}) {
    LiquidationState s;
    s.t = 0;
    s.inventory = 100.0;
    s.rate = 1.0;
    double total = 0.0;
    Rng rng(9);
    while (true) {
      const StepResult out = env_step(*config, s, 0, rng);  // hold every step
      total += out.reward;
      if (out.done) {
        CHECK(out.state.t == config->horizon);
        if (config->terminal_rule == TerminalRule::expire_worthless) {
          CHECK(total == 0.0);
          CHECK(out.state.inventory == 100.0);  // expires unconverted
        } else {
          // forced conversion happens at the post-step rate of the last step
          const double r_end = rate_after_steps(config->ou, 1.0, config->horizon);
          CHECK(total == doctest::Approx(100.0 * r_end).epsilon(1e-12));
          CHECK(out.state.inventory == 0.0);
        }
        break;
      }
      s = out.state;
    }
  }
}

TEST_CASE("episodes conserve inventory and pay exactly what they convert") {
  LiquidationConfig config;  // stochastic rates, default parameters
  Rng rng(11);
  for (int episode = 0; episode < 20; ++episode) {
    LiquidationState s = initial_state(config, rng);
    CHECK(s.t == 0);
    CHECK(s.inventory == 100.0);
    CHECK(s.rate >= 0.0);
    double converted = 0.0;
    while (true) {
      const int action = static_cast<int>(rng.uniform_index(config.n_actions()));
      const double before = s.inventory;
      const double rate_at_decision = s.rate;
      const StepResult out = env_step(config, s, action, rng);
      CHECK(out.state.inventory <= before + 1e-12);
      CHECK(out.state.rate >= 0.0);
      CHECK(out.state.t == s.t + 1);
      const double sold = before - out.state.inventory;
      if (out.state.t == config.horizon && out.state.inventory == 0.0 && action == 0) {
        // cannot distinguish forced liquidation here; default rule never forces
      }
      CHECK(out.reward ==
            doctest::Approx(config.fraction_of(action) * before * rate_at_decision)
                .epsilon(1e-12));
      converted += sold;
      if (out.done) {
        CHECK(converted == doctest::Approx(100.0 - out.state.inventory).epsilon(1e-9));
        break;
      }
      s = out.state;
    }
  }
}

TEST_CASE("initial rates are the clamped gaussian start draw") {
  LiquidationConfig config = noiseless_config();
  Rng rng(13);
  const LiquidationState s = initial_state(config, rng);
  CHECK(s.rate == doctest::Approx(1.0).epsilon(1e-15));
  LiquidationConfig negative = noiseless_config();
  negative.ou.p0_mean = -5.0;
  Rng rng2(13);
  CHECK(initial_state(negative, rng2).rate == 0.0);
}

TEST_CASE("a pure-hold behavior policy never converts") {
  LiquidationConfig config;
  config.behavior_hold_prob = 1.0;
  Rng rng(17);
  for (int k = 0; k < 100; ++k) CHECK(behavior_policy_action(config, rng) == 0);
}

TEST_CASE("the analytic behavior distribution spreads the convert mass evenly") {
  LiquidationConfig config;
  const std::vector<double> probs = behavior_action_probs(config);
  REQUIRE(probs.size() == 11);
  CHECK(probs[0] == doctest::Approx(0.8).epsilon(1e-15));
  for (int a = 1; a < 11; ++a) CHECK(probs[a] == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("behavior draw frequencies match the analytic distribution") {
  LiquidationConfig config;
  Rng rng(19);
  std::vector<int> counts(config.n_actions(), 0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) ++counts[behavior_policy_action(config, rng)];
  CHECK(std::abs(counts[0] / static_cast<double>(draws) - 0.8) < 0.01);
  for (int a = 1; a < 11; ++a)
    CHECK(std::abs(counts[a] / static_cast<double>(draws) - 0.02) < 0.005);
}

TEST_CASE("a hold-only dataset runs every episode to the horizon with no reward") {
  LiquidationConfig config;
  config.behavior_hold_prob = 1.0;
  config.horizon = 25;
  const OfflineDataset data = generate_liquidation_dataset(config, 2, 23);
  REQUIRE(data.size() == 50);
  for (int e = 0; e < 2; ++e)
    for (int h = 0; h < 25; ++h) {
      const TransitionRecord& rec = data[e * 25 + h];
      CHECK(rec.state[0] == static_cast<double>(h));
      CHECK(rec.state[1] == 100.0);
      CHECK(rec.action == 0);
      CHECK(rec.reward == 0.0);
      CHECK(rec.next_state[0] == static_cast<double>(h + 1));
      CHECK(rec.done == (h == 24));
      CHECK(rec.provenance == Provenance::real);
    }
}

TEST_CASE("behavior datasets end each episode with a done record") {
  LiquidationConfig config;
  const OfflineDataset data = generate_liquidation_dataset(config, 300, 29);
  int episodes = 0;
  int holds = 0;
  double prev_inventory = -1.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const TransitionRecord& rec = data[i];
    if (rec.state[0] == 0.0) prev_inventory = 100.0;
    CHECK(rec.state[1] <= prev_inventory + 1e-9);
    prev_inventory = rec.next_state[1];
    if (rec.action == 0) ++holds;
    if (rec.done) {
      ++episodes;
      CHECK((rec.next_state[0] == config.horizon || rec.next_state[1] == 0.0));
    } else {
      CHECK(i + 1 < data.size());
    }
  }
  CHECK(episodes == 300);
  const double hold_fraction = static_cast<double>(holds) / data.size();
  CHECK(std::abs(hold_fraction - 0.8) < 0.015);
}

TEST_CASE("dataset generation seeds each episode independently") {
  LiquidationConfig config;
  const OfflineDataset two = generate_liquidation_dataset(config, 2, 31);
  const OfflineDataset again = generate_liquidation_dataset(config, 2, 31);
  REQUIRE(two.size() == again.size());
  for (std::size_t i = 0; i < two.size(); ++i) {
    CHECK(two[i].state == again[i].state);
    CHECK(two[i].action == again[i].action);
    CHECK(two[i].reward == again[i].reward);
  }
  // episode e uses seed + e, so the second episode equals a fresh run at seed+1
  const OfflineDataset shifted = generate_liquidation_dataset(config, 1, 32);
  std::size_t split = 0;
  while (!two[split].done) ++split;
  ++split;
  REQUIRE(two.size() - split == shifted.size());
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    CHECK(two[split + i].state == shifted[i].state);
    CHECK(two[split + i].action == shifted[i].action);
    CHECK(two[split + i].reward == shifted[i].reward);
  }
  CHECK_THROWS_AS(generate_liquidation_dataset(config, 0, 1), std::invalid_argument);
}

TEST_CASE("score normalization is the exact affine map to the reference pair") {
  CHECK(normalized_score(135.0, "liquidation") == doctest::Approx(100.0).epsilon(1e-15));
  CHECK(normalized_score(0.0, "liquidation") == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(normalized_score(67.5, "liquidation") == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(normalized_score(80.0, "liquidation") > normalized_score(79.0, "liquidation"));
  CHECK_THROWS_AS(normalized_score(1.0, "no-such-env"), std::invalid_argument);
  ScoreRegistry degenerate = {{"liquidation", {5.0, 5.0}}};
  CHECK_THROWS_AS(normalized_score(1.0, "liquidation", degenerate),
                  std::invalid_argument);
}

TEST_CASE("the immediate baseline banks the full inventory at the start rate") {
  const LiquidationConfig config = noiseless_config();
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1.8);
  REQUIRE(baselines.size() == 3);
  CHECK(baselines[0].name == "immediate");
  const EvalStats stats = evaluate_in_env(config, baselines[0].act, 50, 41);
  CHECK(stats.mean_raw == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(stats.std_raw == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(stats.episodes == 50);
}

TEST_CASE("a one-step horizon forces the spread-out baseline to act like immediate") {
  LiquidationConfig config = noiseless_config();
  config.horizon = 1;
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1.8);
  const EvalStats twap = evaluate_in_env(config, baselines[1].act, 10, 43);
  const EvalStats immediate = evaluate_in_env(config, baselines[0].act, 10, 43);
  CHECK(twap.mean_raw == doctest::Approx(immediate.mean_raw).epsilon(1e-12));
}

TEST_CASE("the spread-out baseline follows the grid rounding on a two-step horizon") {
  LiquidationConfig config = noiseless_config();
  config.horizon = 2;
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1.8);
  CHECK(baselines[1].name == "uniform_twap");
  // wants 50 units each step: action 5 (half of 100), then action 10 (all of 50)
  const double r1 = rate_after_steps(config.ou, 1.0, 1);
  const EvalStats stats = evaluate_in_env(config, baselines[1].act, 5, 47);
  CHECK(stats.mean_raw == doctest::Approx(50.0 + 50.0 * r1).epsilon(1e-12));
}

TEST_CASE("an unreachable threshold defers conversion to the final step") {
  LiquidationConfig config = noiseless_config();
  config.horizon = 8;
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1e9);
  CHECK(baselines[2].name == "oracle_threshold");
  const double r_last = rate_after_steps(config.ou, 1.0, config.horizon - 1);
  const EvalStats stats = evaluate_in_env(config, baselines[2].act, 5, 53);
  CHECK(stats.mean_raw == doctest::Approx(100.0 * r_last).epsilon(1e-12));
}

TEST_CASE("waiting for reversion beats immediate conversion on average") {
  const LiquidationConfig config;  // starts at 1.0, reverts toward 1.5
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1e9);
  const EvalStats immediate = evaluate_in_env(config, baselines[0].act, 2000, 59);
  const EvalStats deferred = evaluate_in_env(config, baselines[2].act, 2000, 59);
  CHECK(deferred.mean_raw > immediate.mean_raw + 20.0);
}

TEST_CASE("threshold tuning picks the stronger candidate under paired episodes") {
  const LiquidationConfig config;
  const double picked = tune_oracle_threshold(config, {0.0, 1e9}, 500, 61);
  CHECK(picked == 1e9);
  CHECK(tune_oracle_threshold(config, {0.0, 1e9}, 500, 61) == picked);
  CHECK_THROWS_AS(tune_oracle_threshold(config, {}, 10, 1), std::invalid_argument);
}

TEST_CASE("evaluation is reproducible and rejects empty episode counts") {
  const LiquidationConfig config;
  const std::vector<BaselinePolicy> baselines = baseline_policies(config, 1.8);
  const EvalStats a = evaluate_in_env(config, baselines[2].act, 100, 67);
  const EvalStats b = evaluate_in_env(config, baselines[2].act, 100, 67);
  CHECK(a.mean_raw == b.mean_raw);
  CHECK(a.std_raw == b.std_raw);
  CHECK_THROWS_AS(evaluate_in_env(config, baselines[0].act, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("a point-mass stochastic policy scores exactly like its action") {
  const LiquidationConfig config = noiseless_config();  // returns depend only on actions
  const int full = config.n_actions() - 1;
  const EvalStats det = evaluate_in_env(
      config, [full](const LiquidationState&) { return full; }, 20, 71);
  const EvalStats stoch = evaluate_stochastic_in_env(
      config,
      [&config, full](const LiquidationState&) {
        std::vector<double> probs(config.n_actions(), 0.0);
        probs[full] = 1.0;
        return probs;
      },
      20, 71);
  CHECK(stoch.mean_raw == doctest::Approx(det.mean_raw).epsilon(1e-12));
}

TEST_CASE("the feature basis has a bias, normalized coordinates, and bumps") {
  const FeatureMap features(100);
  CHECK(features.dim() == 23);
  CHECK(features.id() == "liq-quad-rbf4x4-v1");
  const std::vector<double> state = {50.0, 50.0, 1.5};
  const std::vector<double> phi = features.eval(state);
  CHECK(phi[0] == 1.0);
  CHECK(phi[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phi[2] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phi[3] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phi[4] == doctest::Approx(0.25).epsilon(1e-15));
  for (double v : phi) {
    CHECK(std::isfinite(v));
    CHECK(v >= -1e-15);
  }
  const std::vector<double> again = features.eval(state);
  for (int k = 0; k < 23; ++k) CHECK(phi[k] == again[k]);
}

TEST_CASE("only rate-bearing coordinates react to a rate change") {
  const FeatureMap features(100);
  const std::vector<double> a = features.eval(std::vector<double>{40.0, 60.0, 1.0});
  const std::vector<double> b = features.eval(std::vector<double>{40.0, 60.0, 2.0});
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
  CHECK(a[2] == b[2]);
  CHECK(a[4] == b[4]);
  CHECK(a[3] != b[3]);
  CHECK(a[5] != b[5]);
  CHECK(a[6] != b[6]);
  bool rbf_changed = false;
  for (int k = 7; k < 23; ++k)
    if (a[k] != b[k]) rbf_changed = true;
  CHECK(rbf_changed);
}

TEST_CASE("out-of-box states are clamped and counted") {
  FeatureMap features(100);
  features.reset_clamp_events();
  const std::vector<double> inside = features.eval(std::vector<double>{10.0, 10.0, 1.0});
  CHECK(features.clamp_events() == 0);
  const std::vector<double> outside =
      features.eval(std::vector<double>{-5.0, 200.0, 9.0});
  CHECK(features.clamp_events() == 3);
  const std::vector<double> corner =
      features.eval(std::vector<double>{0.0, 100.0, 3.0});
  for (int k = 0; k < 23; ++k) CHECK(outside[k] == corner[k]);
  features.reset_clamp_events();
  CHECK(features.clamp_events() == 0);
  (void)inside;
}

TEST_CASE("feature evaluation rejects malformed spans") {
  const FeatureMap features(100);
  std::vector<double> out(23);
  CHECK_THROWS_AS(features.eval(std::vector<double>{1.0, 2.0}, out),
                  std::invalid_argument);
  std::vector<double> small(22);
  CHECK_THROWS_AS(features.eval(std::vector<double>{1.0, 2.0, 3.0}, small),
                  std::invalid_argument);
  CHECK_THROWS_AS(FeatureMap(0), std::invalid_argument);
  CHECK_THROWS_AS(FeatureMap(10, -1.0), std::invalid_argument);
}

TEST_CASE("config validation rejects malformed fraction grids") {
  LiquidationConfig config;
  CHECK_NOTHROW(config.validate());
  LiquidationConfig bad = config;
  bad.convert_fractions = {0.5, 0.3, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.convert_fractions = {0.5, 0.9};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.convert_fractions = {};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  LiquidationConfig bad_hold = config;
  bad_hold.behavior_hold_prob = 1.5;
  CHECK_THROWS_AS(bad_hold.validate(), std::invalid_argument);
  LiquidationConfig bad_ou = config;
  bad_ou.ou.theta = 0.0;
  CHECK_THROWS_AS(bad_ou.validate(), std::invalid_argument);
}
