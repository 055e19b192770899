#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pspo/features.hpp"
#include "pspo/rng.hpp"
#include "pspo/tabular.hpp"

namespace pspo {

// Mean-reverting exchange-rate process parameters.
struct OuParams {
  double theta = 0.05;
  double mu_rate = 1.5;
  double sigma = 0.2;
  double dt = 1.0;
  double p0_mean = 1.0;
  double p0_std = 0.05;

  void validate() const;
};

struct LiquidationState {
  int t = 0;
  double inventory = 0.0;
  double rate = 0.0;

  std::vector<double> as_vector() const {
    return {static_cast<double>(t), inventory, rate};
  }
};

enum class TerminalRule { expire_worthless, force_liquidate };

// Action 0 is "hold"; action k >= 1 converts convert_fractions[k-1] of the
// remaining inventory at the current rate.
struct LiquidationConfig {
  int horizon = 100;
  double initial_inventory = 100.0;
  std::vector<double> convert_fractions = {0.1, 0.2, 0.3, 0.4, 0.5,
                                           0.6, 0.7, 0.8, 0.9, 1.0};
  TerminalRule terminal_rule = TerminalRule::expire_worthless;
  OuParams ou;
  double behavior_hold_prob = 0.8;
  double rate_cap = 3.0;

  int n_actions() const { return 1 + static_cast<int>(convert_fractions.size()); }
  double fraction_of(int action) const { return action == 0 ? 0.0 : convert_fractions[action - 1]; }
  void validate() const;

  FeatureMap make_feature_map() const {
    return FeatureMap(horizon, initial_inventory, rate_cap);
  }
};

// Exact one-step transition of the OU rate (no discretization bias):
//   rate' = mu + (rate - mu) * exp(-theta*dt) + sigma * sqrt((1 - exp(-2*theta*dt)) / (2*theta)) * xi
// ou_step_raw is the law itself (can go negative; stationary moments are
// mu_rate and sigma^2/(2*theta) exactly, which the fidelity checks verify);
// ou_step additionally clamps at 0, which is what the environment state uses.
double ou_step_raw(const OuParams& params, double rate, Rng& rng);
double ou_step(const OuParams& params, double rate, Rng& rng);
double ou_step(const OuParams& params, double rate, std::uint64_t rng_seed);

struct StepResult {
  LiquidationState state;
  double reward = 0.0;
  bool done = false;
};

// Decision at time t executes at the current rate; the rate then evolves one
// OU step. With force_liquidate, inventory remaining at the horizon is
// converted at the horizon's rate. Stepping a finished episode (t at horizon
// or empty inventory) throws.
StepResult env_step(const LiquidationConfig& config, const LiquidationState& state,
                    int action, Rng& rng);
StepResult env_step(const LiquidationConfig& config, const LiquidationState& state,
                    int action, std::uint64_t rng_seed);

LiquidationState initial_state(const LiquidationConfig& config, Rng& rng);

// Dataset-collection policy: hold with behavior_hold_prob, otherwise uniform
// over the convert actions. The analytic per-action mass is state-independent
// and doubles as the reference distribution mu.
int behavior_policy_action(const LiquidationConfig& config, Rng& rng);
int behavior_policy_action(const LiquidationConfig& config,
                           const LiquidationState& state, std::uint64_t rng_seed);
std::vector<double> behavior_action_probs(const LiquidationConfig& config);

// Full episodes under the behavior policy; episode e uses seed rng_seed + e.
// Records carry (t, inventory, rate) states and real provenance; the last
// record of each episode has done = true.
OfflineDataset generate_liquidation_dataset(const LiquidationConfig& config,
                                            int n_episodes, std::uint64_t rng_seed);

// Reference performance registry for score normalization.
struct ScoreReference {
  double random = 0.0;
  double expert = 0.0;
};
using ScoreRegistry = std::map<std::string, ScoreReference>;

ScoreRegistry default_score_registry();

// 100 * (raw - random) / (expert - random).
double normalized_score(double raw_return, const std::string& env_name,
                        const ScoreRegistry& registry = default_score_registry());

struct BaselinePolicy {
  std::string name;
  std::function<int(const LiquidationState&)> act;
};

// immediate: convert everything at once. uniform_twap: convert 1/horizon of
// the initial inventory each step, rounded to the nearest grid fraction of
// what remains. oracle_threshold: hold until the rate crosses a tuned
// threshold (or the final step), then convert everything.
std::vector<BaselinePolicy> baseline_policies(const LiquidationConfig& config,
                                              double oracle_threshold_value);

// Grid-tunes the oracle threshold by Monte-Carlo return over fresh episodes.
double tune_oracle_threshold(const LiquidationConfig& config,
                             const std::vector<double>& candidates, int n_episodes,
                             std::uint64_t seed);

struct EvalStats {
  double mean_raw = 0.0;
  double std_raw = 0.0;
  int episodes = 0;
};

// Undiscounted per-episode return statistics over n_episodes fresh episodes;
// episode e uses seed + e.
EvalStats evaluate_in_env(const LiquidationConfig& config,
                          const std::function<int(const LiquidationState&)>& act,
                          int n_episodes, std::uint64_t seed);

// Same protocol for a stochastic policy: act_probs maps a state to an action
// distribution, sampled from the episode's own stream.
EvalStats evaluate_stochastic_in_env(
    const LiquidationConfig& config,
    const std::function<std::vector<double>(const LiquidationState&)>& act_probs,
    int n_episodes, std::uint64_t seed);

}  // namespace pspo
