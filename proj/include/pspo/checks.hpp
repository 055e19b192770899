#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pspo/config.hpp"
#include "pspo/pspo.hpp"

namespace pspo {

// Randomized problem instances plus the theorem-check suites built on them.
// The suites are the library's self-verification surface: each one pits an
// implementation against an independent oracle or a property that must hold,
// and the CLI `check` subcommand simply runs a selection of them.

struct CheckResult {
  std::string name;
  bool pass = false;
  bool informational = false;  // reported, never gates the suite
  std::string details;
};

// ---------------------------------------------------------------------------
// Instance generators (shared by suites, tests, and the data-generation CLI)

// Dense random MDP: transition rows from exponentiated normals (moderately
// peaked), rewards uniform in [-r_max, r_max], random strictly positive rho0.
TabularMdp random_tabular_mdp(int n_states, int n_actions, double gamma, double r_max,
                              Rng& rng);

// Strictly positive random policy / bounded random Q table.
TabularPolicy random_policy(int n_states, int n_actions, Rng& rng);
TabularQ random_q(int n_states, int n_actions, double scale, Rng& rng);

// Random count model: uniform counts, rewards uniform in [-r_max, r_max].
CategoricalModel random_categorical_model(int n_states, int n_actions, double r_max,
                                          double smoothing, Rng& rng);
ModelEnsemble random_categorical_ensemble(int n_states, int n_actions, int n_members,
                                          double r_max, Rng& rng);

// Random strictly positive prior (posterior starts equal to it).
Belief random_belief(int n_members, double beta, Rng& rng);

// Instance + behavior policy backing the tabular experiment track. The
// behavior mixes the instance's hard-optimal greedy policy with uniform at
// behavior_mix (1 = expert), so datasets carry a quality signal.
TabularMdp make_tabular_instance(const TabularInstanceSpec& spec, std::uint64_t seed);
TabularPolicy make_tabular_behavior(const TabularMdp& mdp, double behavior_mix);

// Behavior rollouts restarted from rho0 every episode_len steps. Records are
// all done = false: the tabular track is a continuing discounted task and the
// restarts only segment the stream.
OfflineDataset rollout_tabular_dataset(const TabularMdp& mdp,
                                       const TabularPolicy& behavior, int n_records,
                                       int episode_len, std::uint64_t seed);

// Pool of count models fit on bootstrap resamples of the dataset.
ModelEnsemble bootstrap_categorical_ensemble(const OfflineDataset& dataset,
                                             int n_states, int n_actions, int n_members,
                                             double smoothing, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Statistics helpers

// Spearman rank correlation with average ranks for ties. Throws on size
// mismatch or fewer than 2 points; returns 0 if either input is constant.
double spearman_rank_correlation(std::span<const double> x, std::span<const double> y);

struct UncertaintyTdDiagnostic {
  double spearman = 0.0;
  int n_pairs = 0;
};

// Pairs (uncertainty_metric, TD target) at probe points built from the real
// dataset: a non-terminal recorded state paired with a uniformly drawn
// action, so every action is probed at every visited state rather than only
// the logged one. The target is the single-sample bootstrap training uses:
// reward and next state drawn from one posterior-sampled ensemble member,
// plus the discounted soft next value of the run's target critic under mu.
UncertaintyTdDiagnostic uncertainty_td_diagnostic(
    const OfflineDataset& real_data, const LiquidationTrainResult& run,
    const ModelEnsemble& ensemble, const LiquidationConfig& env,
    const PspoConfig& config, int n_pairs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Check suites

std::vector<CheckResult> contraction_suite(std::uint64_t seed);
std::vector<CheckResult> variance_bound_suite(std::uint64_t seed);
std::vector<CheckResult> robbins_monro_suite(std::uint64_t seed);
std::vector<CheckResult> posterior_agreement_suite(std::uint64_t seed);
std::vector<CheckResult> closed_form_suite(std::uint64_t seed);
std::vector<CheckResult> improvement_suite(std::uint64_t seed);
std::vector<CheckResult> nonexpansion_suite(std::uint64_t seed);
std::vector<CheckResult> ou_fidelity_suite(std::uint64_t seed);
std::vector<CheckResult> uncertainty_correlation_suite(std::uint64_t seed);

std::vector<std::string> available_check_suites();

// Runs one suite by name (throws std::invalid_argument for unknown names).
std::vector<CheckResult> run_check_suite(const std::string& name, std::uint64_t seed);

}  // namespace pspo
