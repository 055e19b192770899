#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pspo/features.hpp"
#include "pspo/rng.hpp"
#include "pspo/tabular.hpp"

namespace pspo {

// Count-based transition/reward model for the tabular track. Probabilities are
// the delta-smoothed normalized counts; with delta > 0 every row is strictly
// positive, which keeps downstream KL and soft values finite.
struct CategoricalModel {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> counts;           // c[s * A * S + a * S + s']
  double smoothing = 1e-3;
  std::vector<double> reward_estimate;  // per (s,a) empirical mean, 0 if unvisited

  double count(int s, int a, int s2) const {
    return counts[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r_hat(int s, int a) const {
    return reward_estimate[static_cast<std::size_t>(s) * n_actions + a];
  }

  // Smoothed probability row; rows with zero mass and zero smoothing fall back
  // to uniform so the model always defines a distribution.
  void next_dist(int s, int a, std::span<double> out) const;
  double prob(int s, int a, int s2) const;

  // E_{s' ~ T(.|s,a)}[s'] treating the state index as a scalar.
  double next_state_mean(int s, int a) const;
};

// Linear-Gaussian transition/reward model for the continuous track. Output
// dims are (next_state..., reward); the mean is linear in the shared state
// features with an independent weight block per action, and log_std is a
// learned state-independent vector, clamped to [log 1e-3, log 10].
struct GaussianModel {
  std::vector<Eigen::MatrixXd> w_blocks;  // one (out_dim x feature_dim) block per action
  Eigen::VectorXd log_std;                // per output dim
  std::string feature_map_id;
  int state_dim = 0;  // leading output dims are next-state, last is reward
  std::vector<double> state_lo, state_hi;  // clamp box for sampled next states
  double initial_nll = 0.0;
  double final_nll = 0.0;

  int n_actions() const { return static_cast<int>(w_blocks.size()); }
  int out_dim() const { return state_dim + 1; }

  // Predicted mean of (next_state, reward) given precomputed state features.
  Eigen::VectorXd predict_mean(std::span<const double> features, int action) const;
};

struct ModelEnsemble {
  enum class Kind { categorical, gaussian };
  Kind kind = Kind::categorical;
  std::vector<CategoricalModel> cat_pool;
  std::vector<GaussianModel> gauss_pool;
  std::vector<int> active;  // indices into the pool; the N "members"

  int size() const { return static_cast<int>(active.size()); }
  int pool_size() const {
    return kind == Kind::categorical ? static_cast<int>(cat_pool.size())
                                     : static_cast<int>(gauss_pool.size());
  }
  const CategoricalModel& cat(int member) const { return cat_pool[active[member]]; }
  const GaussianModel& gauss(int member) const { return gauss_pool[active[member]]; }

  void validate() const;

  static ModelEnsemble of_categorical(std::vector<CategoricalModel> models);
  static ModelEnsemble of_gaussian(std::vector<GaussianModel> models);
};

// Thrown by fit_gaussian if the training loss leaves the finite range; carries
// the epoch at which it happened.
struct FitDivergenceError : std::runtime_error {
  int epoch;
  explicit FitDivergenceError(int epoch_idx)
      : std::runtime_error("gaussian fit diverged (non-finite loss) at epoch " +
                           std::to_string(epoch_idx)),
        epoch(epoch_idx) {}
};

// Count MLE on a bootstrap resample of the dataset (with replacement, same
// size). No bootstrap_seed means fit on the dataset as-is. reward_estimate is
// the per-(s,a) mean over the same resample.
CategoricalModel fit_categorical(const OfflineDataset& dataset, int n_states,
                                 int n_actions, double smoothing,
                                 std::optional<std::uint64_t> bootstrap_seed);

// Gaussian NLL minimization by full-batch gradient descent with a backtracking
// line search: each epoch proposes a step starting from an adaptive trial size
// (seeded by learning_rate), halving until the mean NLL does not increase, so
// the loss is non-increasing by construction. Statistics are precomputed
// per-action (X^T X, X^T y, y^T y), making epochs O(actions * dim^2).
GaussianModel fit_gaussian(const OfflineDataset& dataset, const FeatureMap& features,
                           int n_actions, int epochs, double learning_rate,
                           std::optional<std::uint64_t> bootstrap_seed,
                           std::uint64_t init_seed);

// One transition draw from a model. Gaussian next states are clamped to the
// model's valid box; rewards are not clamped.
std::pair<std::vector<double>, double> sample_next(const CategoricalModel& model,
                                                   std::span<const double> state,
                                                   int action, Rng& rng);
std::pair<std::vector<double>, double> sample_next(const GaussianModel& model,
                                                   const FeatureMap& features,
                                                   std::span<const double> state,
                                                   int action, Rng& rng);

// Instrumentation filled by generate_synthetic; lets tests assert the
// one-model-per-rollout protocol.
struct RolloutTrace {
  std::vector<int> model_per_rollout;
  std::vector<std::uint64_t> member_calls;
};

// Posterior-sampling rollouts: for each start state, draw ONE member index
// from `posterior` and keep it fixed for the whole rollout; actions come from
// `action_probs`; every record is tagged synthetic. Rollout i uses seed
// rng_seed + i, so rollouts are independent and order-insensitive. A rollout
// stops early when `is_terminal(next_state)` fires (the record keeps done =
// true). Returns at most |start_states| * horizon records.
OfflineDataset generate_synthetic(
    const ModelEnsemble& ensemble, std::span<const double> posterior,
    const std::function<std::vector<double>(const std::vector<double>&)>& action_probs,
    const std::vector<std::vector<double>>& start_states, int horizon,
    std::uint64_t rng_seed, const FeatureMap* features = nullptr,
    const std::function<bool(const std::vector<double>&)>& is_terminal = nullptr,
    RolloutTrace* trace = nullptr);

}  // namespace pspo
