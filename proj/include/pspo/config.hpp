#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pspo/liquidation.hpp"
#include "pspo/pspo.hpp"

namespace pspo {

enum class Track { tabular, liquidation };

// Self-generating tabular environment spec: a seeded random MDP plus the
// behavior dataset drawn from it.
struct TabularInstanceSpec {
  int n_states = 4;
  int n_actions = 2;
  double gamma = 0.9;
  double r_max = 1.0;
  int n_records = 20000;
  int episode_len = 50;          // dataset rollouts restart from rho0 this often
  double behavior_mix = 0.5;     // behavior = mix * uniform + (1-mix) * random policy
};

// Top-level experiment description. The file schema is flat for every
// PspoConfig field (keys named exactly like the fields, schedule flattened as
// schedule_kind / schedule_c / schedule_t0), with `tabular` and `liquidation`
// nested sections and the harness keys below. Environment variables
// PSPO__<KEY> (nested paths joined by __, uppercase) override file values.
struct ExperimentConfig {
  std::string experiment = "default";
  Track track = Track::tabular;
  std::uint64_t master_seed = 0;
  std::string out_dir = "out";
  std::string dataset_path;  // empty means <out_dir>/dataset.jsonl
  int n_eval_episodes = 100;
  int n_episodes = 2000;  // liquidation dataset episodes
  std::vector<std::string> check_suites;  // empty = all
  PspoConfig pspo;
  TabularInstanceSpec tabular;
  LiquidationConfig liquidation;

  std::string dataset_file() const {
    return dataset_path.empty() ? out_dir + "/dataset.jsonl" : dataset_path;
  }
  void validate() const;
};

// Defaults per track. The liquidation preset carries the tuned desk-scale
// hyperparameters the acceptance runs use.
ExperimentConfig default_tabular_experiment();
ExperimentConfig default_liquidation_experiment();

// JSON snapshot with the documented schema; parse() inverts it exactly
// (round-trip stability is tested). Unknown keys are an error.
std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         bool apply_env_overrides);

// Load from file, then apply PSPO__* environment overrides.
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace pspo
