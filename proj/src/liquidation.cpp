#include "pspo/liquidation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pspo {

void OuParams::validate() const {
  if (!(theta > 0.0)) throw std::invalid_argument("OuParams: theta must be > 0");
  if (sigma < 0.0) throw std::invalid_argument("OuParams: sigma must be >= 0");
  if (!(dt > 0.0)) throw std::invalid_argument("OuParams: dt must be > 0");
  if (p0_std < 0.0) throw std::invalid_argument("OuParams: p0_std must be >= 0");
}

void LiquidationConfig::validate() const {
  ou.validate();
  if (horizon < 1) throw std::invalid_argument("LiquidationConfig: horizon must be >= 1");
  if (!(initial_inventory > 0.0))
    throw std::invalid_argument("LiquidationConfig: initial_inventory must be > 0");
  if (convert_fractions.empty())
    throw std::invalid_argument("LiquidationConfig: need at least one convert fraction");
  double prev = 0.0;
  for (double f : convert_fractions) {
    if (!(f > prev && f <= 1.0))
      throw std::invalid_argument(
          "LiquidationConfig: fractions must be strictly increasing in (0, 1]");
    prev = f;
  }
  if (convert_fractions.back() != 1.0)
    throw std::invalid_argument("LiquidationConfig: last fraction must be 1");
  if (behavior_hold_prob < 0.0 || behavior_hold_prob > 1.0)
    throw std::invalid_argument("LiquidationConfig: behavior_hold_prob outside [0,1]");
  if (!(rate_cap > 0.0))
    throw std::invalid_argument("LiquidationConfig: rate_cap must be > 0");
}

double ou_step_raw(const OuParams& params, double rate, Rng& rng) {
  const double decay = std::exp(-params.theta * params.dt);
  const double noise_std =
      params.sigma * std::sqrt((1.0 - decay * decay) / (2.0 * params.theta));
  return params.mu_rate + (rate - params.mu_rate) * decay + noise_std * rng.normal();
}

double ou_step(const OuParams& params, double rate, Rng& rng) {
  if (rate < 0.0) throw std::invalid_argument("ou_step: rate must be >= 0");
  return std::max(0.0, ou_step_raw(params, rate, rng));
}

double ou_step(const OuParams& params, double rate, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return ou_step(params, rate, rng);
}

StepResult env_step(const LiquidationConfig& config, const LiquidationState& state,
                    int action, Rng& rng) {
  if (state.t >= config.horizon || state.inventory <= 0.0)
    throw std::logic_error("env_step: episode already finished");
  if (action < 0 || action >= config.n_actions())
    throw std::invalid_argument("env_step: action index out of range");

  const double f = config.fraction_of(action);
  StepResult out;
  out.reward = f * state.inventory * state.rate;
  out.state.t = state.t + 1;
  out.state.inventory = (1.0 - f) * state.inventory;
  out.state.rate = ou_step(config.ou, state.rate, rng);
  if (out.state.t == config.horizon &&
      config.terminal_rule == TerminalRule::force_liquidate &&
      out.state.inventory > 0.0) {
    out.reward += out.state.inventory * out.state.rate;
    out.state.inventory = 0.0;
  }
  out.done = out.state.t == config.horizon || out.state.inventory == 0.0;
  return out;
}

StepResult env_step(const LiquidationConfig& config, const LiquidationState& state,
                    int action, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return env_step(config, state, action, rng);
}

LiquidationState initial_state(const LiquidationConfig& config, Rng& rng) {
  LiquidationState s;
  s.t = 0;
  s.inventory = config.initial_inventory;
  s.rate = std::max(0.0, rng.normal(config.ou.p0_mean, config.ou.p0_std));
  return s;
}

int behavior_policy_action(const LiquidationConfig& config, Rng& rng) {
  if (rng.uniform01() < config.behavior_hold_prob) return 0;
  return 1 + static_cast<int>(rng.uniform_index(config.convert_fractions.size()));
}

int behavior_policy_action(const LiquidationConfig& config,
                           const LiquidationState& state, std::uint64_t rng_seed) {
  (void)state;  // the behavior policy is state-independent
  Rng rng(rng_seed);
  return behavior_policy_action(config, rng);
}

std::vector<double> behavior_action_probs(const LiquidationConfig& config) {
  std::vector<double> probs(config.n_actions());
  probs[0] = config.behavior_hold_prob;
  const double each =
      (1.0 - config.behavior_hold_prob) / config.convert_fractions.size();
  for (std::size_t k = 0; k < config.convert_fractions.size(); ++k)
    probs[1 + k] = each;
  return probs;
}

OfflineDataset generate_liquidation_dataset(const LiquidationConfig& config,
                                            int n_episodes, std::uint64_t rng_seed) {
  config.validate();
  if (n_episodes < 1)
    throw std::invalid_argument("generate_liquidation_dataset: n_episodes must be >= 1");
  OfflineDataset out;
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(rng_seed + e);
    LiquidationState state = initial_state(config, rng);
    while (true) {
      const int action = behavior_policy_action(config, rng);
      const StepResult step = env_step(config, state, action, rng);
      TransitionRecord rec;
      rec.state = state.as_vector();
      rec.action = action;
      rec.reward = step.reward;
      rec.next_state = step.state.as_vector();
      rec.done = step.done;
      rec.provenance = Provenance::real;
      out.push_back(std::move(rec));
      if (step.done) break;
      state = step.state;
    }
  }
  return out;
}

ScoreRegistry default_score_registry() {
  return {{"liquidation", {0.0, 135.0}}};
}

double normalized_score(double raw_return, const std::string& env_name,
                        const ScoreRegistry& registry) {
  const auto it = registry.find(env_name);
  if (it == registry.end())
    throw std::invalid_argument("normalized_score: unknown environment " + env_name);
  const ScoreReference& ref = it->second;
  if (ref.expert == ref.random)
    throw std::invalid_argument("normalized_score: degenerate reference pair");
  return 100.0 * (raw_return - ref.random) / (ref.expert - ref.random);
}

namespace {

int nearest_convert_action(const LiquidationConfig& config, double wanted_fraction) {
  int best = 1;
  double best_gap = std::abs(config.convert_fractions[0] - wanted_fraction);
  for (std::size_t k = 1; k < config.convert_fractions.size(); ++k) {
    const double gap = std::abs(config.convert_fractions[k] - wanted_fraction);
    if (gap < best_gap) {
      best_gap = gap;
      best = 1 + static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

std::vector<BaselinePolicy> baseline_policies(const LiquidationConfig& config,
                                              double oracle_threshold_value) {
  config.validate();
  const int full_convert = config.n_actions() - 1;
  std::vector<BaselinePolicy> out;

  out.push_back({"immediate", [full_convert](const LiquidationState&) {
                   return full_convert;
                 }});

  const double per_step_units = config.initial_inventory / config.horizon;
  out.push_back({"uniform_twap", [config, per_step_units](const LiquidationState& s) {
                   if (s.inventory <= 0.0) return 0;
                   const double wanted = std::min(1.0, per_step_units / s.inventory);
                   return nearest_convert_action(config, wanted);
                 }});

  const int horizon = config.horizon;
  out.push_back({"oracle_threshold",
                 [full_convert, horizon, oracle_threshold_value](const LiquidationState& s) {
                   if (s.rate >= oracle_threshold_value || s.t == horizon - 1)
                     return full_convert;
                   return 0;
                 }});
  return out;
}

double tune_oracle_threshold(const LiquidationConfig& config,
                             const std::vector<double>& candidates, int n_episodes,
                             std::uint64_t seed) {
  if (candidates.empty())
    throw std::invalid_argument("tune_oracle_threshold: no candidates");
  double best_threshold = candidates.front();
  double best_return = -1e300;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int full_convert = config.n_actions() - 1;
    const double c = candidates[i];
    const int horizon = config.horizon;
    const EvalStats stats = evaluate_in_env(
        config,
        [full_convert, horizon, c](const LiquidationState& s) {
          if (s.rate >= c || s.t == horizon - 1) return full_convert;
          return 0;
        },
        n_episodes, seed);  // shared episode seeds: paired comparison
    if (stats.mean_raw > best_return) {
      best_return = stats.mean_raw;
      best_threshold = c;
    }
  }
  return best_threshold;
}

EvalStats evaluate_in_env(const LiquidationConfig& config,
                          const std::function<int(const LiquidationState&)>& act,
                          int n_episodes, std::uint64_t seed) {
  config.validate();
  if (n_episodes < 1)
    throw std::invalid_argument("evaluate_in_env: n_episodes must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(seed + e);
    LiquidationState state = initial_state(config, rng);
    double ep_return = 0.0;
    while (true) {
      const StepResult step = env_step(config, state, act(state), rng);
      ep_return += step.reward;
      if (step.done) break;
      state = step.state;
    }
    sum += ep_return;
    sum_sq += ep_return * ep_return;
  }
  EvalStats out;
  out.episodes = n_episodes;
  out.mean_raw = sum / n_episodes;
  out.std_raw = std::sqrt(std::max(0.0, sum_sq / n_episodes - out.mean_raw * out.mean_raw));
  return out;
}

EvalStats evaluate_stochastic_in_env(
    const LiquidationConfig& config,
    const std::function<std::vector<double>(const LiquidationState&)>& act_probs,
    int n_episodes, std::uint64_t seed) {
  config.validate();
  if (n_episodes < 1)
    throw std::invalid_argument("evaluate_stochastic_in_env: n_episodes must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng(seed + e);
    LiquidationState state = initial_state(config, rng);
    double ep_return = 0.0;
    while (true) {
      const std::vector<double> probs = act_probs(state);
      const int action = static_cast<int>(rng.categorical(probs));
      const StepResult step = env_step(config, state, action, rng);
      ep_return += step.reward;
      if (step.done) break;
      state = step.state;
    }
    sum += ep_return;
    sum_sq += ep_return * ep_return;
  }
  EvalStats out;
  out.episodes = n_episodes;
  out.mean_raw = sum / n_episodes;
  out.std_raw = std::sqrt(std::max(0.0, sum_sq / n_episodes - out.mean_raw * out.mean_raw));
  return out;
}

}  // namespace pspo
