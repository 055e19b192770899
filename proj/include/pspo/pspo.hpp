#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pspo/belief.hpp"
#include "pspo/dynamics.hpp"
#include "pspo/linear.hpp"
#include "pspo/liquidation.hpp"
#include "pspo/mdp_core.hpp"
#include "pspo/tabular.hpp"

namespace pspo {

struct LrSchedule {
  enum class Kind { robbins_monro, constant };
  Kind kind = Kind::constant;
  double c = 3e-4;
  double t0 = 1.0;

  // robbins_monro: eta_t = c / (t + t0); sum eta = inf, sum eta^2 < inf holds
  // for any c > 0, t0 >= 1 by construction.
  double rate(std::uint64_t t) const {
    return kind == Kind::constant ? c : c / (static_cast<double>(t) + t0);
  }
  void validate() const;
};

enum class NoRegMode { uniform_mu, alpha_zero };
enum class KlAggregation { max_state, occupancy_mean };

struct PspoConfig {
  double alpha = 0.1;
  double epsilon_trust = 0.01;
  double beta = 1.0;
  double gamma = 0.99;
  int ensemble_size = 10;
  int model_pool_size = 10;
  LrSchedule schedule;
  double polyak = 0.005;
  int iterations = 1000;
  int rollout_horizon = 5;
  double real_ratio = 0.5;
  int belief_update_every = 1;
  bool average_utilization = false;
  bool without_regularization = false;
  NoRegMode ablation_no_reg_mode = NoRegMode::uniform_mu;
  BackupKind backup_kind = BackupKind::optimality;
  KlAggregation kl_aggregation = KlAggregation::max_state;

  // Desk-scale knobs.
  bool exact_eval = true;     // tabular: solve the soft fixed point each iteration
  int q_steps = 64;           // stochastic critic updates per iteration
  int batch_size = 256;       // evidence/target minibatch size
  int rollout_batch = 64;     // synthetic rollouts per iteration
  int n_next_samples = 8;     // MC next-state draws in continuous consistency
  double mu_smoothing = 1e-3; // pseudo-count for the empirical tabular mu
  double dynamics_lr = 1e-4;
  int dynamics_epochs = 1000;
  bool check_improvement = false;  // run the Fisher condition check per iteration
  double fd_step = 1e-5;

  void validate() const;
};

// Per-iteration observability of the training loop; one CSV row each.
struct IterationReport {
  int iteration = 0;
  std::string variant = "full";
  std::vector<double> prior;
  std::vector<double> posterior;
  double mean_target = 0.0;
  double target_variance = 0.0;
  double variance_bound = 0.0;
  double jreg_estimate = 0.0;
  double exact_j = std::numeric_limits<double>::quiet_NaN();
  double mixture_j_before = std::numeric_limits<double>::quiet_NaN();
  double mixture_j_after = std::numeric_limits<double>::quiet_NaN();
  double kl_step = 0.0;
  double lambda_used = 0.0;
  int improvement_condition = -1;  // -1 unchecked, 0 failed, 1 held
  int monotone_ok = -1;            // -1 unchecked / not applicable
  double uncertainty_sample = 0.0;
  double td_target_sample = 0.0;
};

// ---------------------------------------------------------------------------
// Tabular operators (exact forms)

// Belief-mixture MDP: kernel sum_i w_i T_i, reward sum_i w_i r_hat_i. rho0 and
// r_max are taken from the caller (the evaluation measure is not a model
// property).
TabularMdp mixture_mdp(const ModelEnsemble& ensemble, std::span<const double> weights,
                       double gamma, const std::vector<double>& rho0, double r_max);

// One exact application of the posterior-sampling evaluation backup:
//   (B Q)(s,a) = r_mix(s,a) + gamma * E_{s' ~ mix}[ E_{a' ~ pi} Q(s',a') ].
TabularQ posterior_eval_operator(const TabularQ& q, const TabularPolicy& policy,
                                 const ModelEnsemble& ensemble, const Belief& belief,
                                 double gamma);

// One exact application of the soft optimality backup:
//   (B Q)(s,a) = r_mix(s,a) + gamma * E_{s' ~ mix}[ alpha * log E_mu exp(Q(s',.)/alpha) ].
// alpha = 0 is the hard-max-over-support limit (used by the alpha_zero
// ablation mode).
TabularQ posterior_opt_operator(const TabularQ& q, const TabularPolicy& reference,
                                const ModelEnsemble& ensemble, const Belief& belief,
                                double alpha, double gamma);

// Iterates one of the operators above to its fixed point (max-norm tolerance),
// returning the iterate and the number of sweeps used.
struct FixedPointResult {
  TabularQ q;
  int sweeps = 0;
  double residual = 0.0;
};
FixedPointResult soft_fixed_point(const TabularPolicy& reference,
                                  const ModelEnsemble& ensemble, const Belief& belief,
                                  double alpha, double gamma, const TabularQ& start,
                                  double tol = 1e-12, int max_sweeps = 100000);
FixedPointResult eval_fixed_point(const TabularPolicy& policy,
                                  const ModelEnsemble& ensemble, const Belief& belief,
                                  double gamma, const TabularQ& start,
                                  double tol = 1e-12, int max_sweeps = 100000);

// ---------------------------------------------------------------------------
// Stochastic approximation

// A target query: either a dataset record (observed reward, recorded next
// state is ignored in favor of a model draw) or a bare (s,a) pair whose reward
// comes from the sampled member's estimate.
struct TargetQuery {
  int s = 0;
  int a = 0;
  std::optional<double> observed_reward;
  bool done = false;
};

struct TargetStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance over the computed targets
  std::uint64_t count = 0;
};

// One Robbins-Monro step per query: Y = r + gamma * V(s') with s' integrated
// exactly under a freshly sampled member and V read from target_q (values
// clamped to +-r_max/(1-gamma) inside the target only). Advances `t` by one
// per query and returns statistics of the computed targets.
TargetStats stochastic_q_update(TabularQ& q, std::span<const TargetQuery> batch,
                                const TabularPolicy& policy_or_reference,
                                const ModelEnsemble& ensemble, const Belief& belief,
                                const TabularQ& target_q, std::uint64_t& t,
                                const LrSchedule& schedule, BackupKind kind,
                                double alpha, double gamma, double r_max, Rng& rng);

struct VarianceBoundResult {
  double empirical_variance = 0.0;
  double bound = 0.0;
  bool pass = false;
};
VarianceBoundResult variance_bound_check(std::span<const double> targets, double r_max,
                                         double gamma);

struct ContractionResult {
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};
enum class OperatorTag { evaluation, optimality };
ContractionResult contraction_check(OperatorTag tag, const TabularQ& q1,
                                    const TabularQ& q2, const TabularPolicy& policy,
                                    const ModelEnsemble& ensemble, const Belief& belief,
                                    double alpha, double gamma);

// ---------------------------------------------------------------------------
// Policy improvement

// pi*(a|s) proportional to mu(a|s) * exp(q(s,a) / alpha), rows computed with
// max-subtraction.
TabularPolicy closed_form_optimal_policy(const TabularQ& q_star,
                                         const TabularPolicy& reference, double alpha);

struct ImprovementResult {
  TabularPolicy policy;
  double lambda = 0.0;
  double kl_max = 0.0;
};

// Trust-region step: pi_{i+1} proportional to
//   mu^(alpha/(alpha+lambda)) * pi_i^(lambda/(alpha+lambda)) * exp(q/(alpha+lambda))
// with the smallest lambda >= 0 making max-state KL(pi_{i+1} || pi_i) <= eps
// (bisection tight to 1e-6 when the constraint binds). alpha = 0 drops the mu
// factor entirely (the no-regularization objective).
ImprovementResult constrained_improvement_step(const TabularQ& q,
                                               const TabularPolicy& current,
                                               const TabularPolicy& reference,
                                               double alpha, double epsilon_trust);

// Same family on the linear/tilt representation. KL is evaluated on the given
// batch of state features and aggregated per `agg`; the tilt update is exact:
//   G_{i+1} = (lambda * G_i + W_q) / (alpha + lambda), base stays mu.
struct TiltImprovementResult {
  TiltPolicy policy;
  double lambda = 0.0;
  double kl_agg = 0.0;
};
TiltImprovementResult constrained_improvement_step_tilt(
    const LinearQ& q, const TiltPolicy& current,
    const std::vector<std::vector<double>>& batch_features, double alpha,
    double epsilon_trust, KlAggregation agg,
    const std::vector<double>& batch_weights = {});

// ---------------------------------------------------------------------------
// Improvement-condition diagnostic

struct ImprovementConditionResult {
  double lhs = 0.0;  // ||grad J||^2 in the F^-1 inner product
  double rhs = 0.0;  // <grad J, grad C_KL> in the F^-1 inner product
  bool holds = false;
  bool condition_warning = false;  // rank-deficient/ill-conditioned Fisher blocks
  double max_block_condition = 0.0;
};

// Central finite-difference gradients of J and C_KL = J - J_reg with respect
// to per-state softmax logits, flattened as [s * A + a]. Exposed so tests can
// pit them against an independent two-resolution oracle.
struct PolicyGradients {
  std::vector<double> grad_j;
  std::vector<double> grad_c;
};
PolicyGradients fd_policy_gradients(const TabularMdp& mdp, const TabularPolicy& policy,
                                    const TabularPolicy& reference, double alpha,
                                    double fd_step);

// Theorem-style sufficient condition for improvement: gradients of J and of
// C_KL = J - J_reg by central finite differences on per-state logits against
// exact evaluation; Fisher = blockdiag_s occ(s) * (diag(pi_s) - pi_s pi_s^T),
// inverted blockwise by Moore-Penrose pseudo-inverse.
ImprovementConditionResult improvement_condition_check(const TabularMdp& mdp,
                                                       const TabularPolicy& policy,
                                                       const TabularPolicy& reference,
                                                       double alpha, double fd_step);

// ---------------------------------------------------------------------------
// Full training loops

struct TabularTrainResult {
  TabularPolicy policy;
  TabularQ q;
  TabularPolicy target_policy;
  TabularQ target_q;
  TabularPolicy mu;
  Belief belief;
  std::vector<IterationReport> reports;
};

// Algorithm loop on the tabular track. The true MDP supplies dims, rho0, r_max
// and the exact-J diagnostics; all backups use only the ensemble.
TabularTrainResult pspo_train_tabular(const OfflineDataset& real_data,
                                      const PspoConfig& config, const TabularMdp& truth,
                                      const ModelEnsemble& ensemble,
                                      std::uint64_t master_seed);

struct LiquidationTrainResult {
  TiltPolicy policy;
  LinearQ q;
  TiltPolicy target_policy;
  LinearQ target_q;
  std::vector<double> mu_probs;
  Belief belief;
  std::vector<IterationReport> reports;
};

LiquidationTrainResult pspo_train_liquidation(const OfflineDataset& real_data,
                                              const PspoConfig& config,
                                              const LiquidationConfig& env,
                                              const ModelEnsemble& ensemble,
                                              std::uint64_t master_seed);

// Empirical delta-smoothed action frequencies per state; the tabular mu.
TabularPolicy empirical_behavior_policy(const OfflineDataset& real_data, int n_states,
                                        int n_actions, double smoothing);

// Variant label used in reports/CSV ("full", "average_utilization",
// "without_regularization").
std::string variant_name(const PspoConfig& config);

}  // namespace pspo
