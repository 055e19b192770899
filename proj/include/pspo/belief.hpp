#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pspo/dynamics.hpp"
#include "pspo/linear.hpp"
#include "pspo/mdp_core.hpp"
#include "pspo/rng.hpp"
#include "pspo/tabular.hpp"

namespace pspo {

// Weights over ensemble members. `posterior` is the evidence-tilted
// distribution; `prior` is kept so updates can always be recomputed from the
// run's initial belief rather than chained.
struct Belief {
  std::vector<double> prior;
  std::vector<double> posterior;
  double beta = 1.0;

  static Belief uniform(int n, double beta);
  void validate() const;
};

// Per-member mean squared TD residuals; all entries finite and >= 0.
using ConsistencyScore = std::vector<double>;

// Which value the TD residual bootstraps with: the evaluated policy's
// expectation E_pi[Q(s', .)] or the soft value under the reference mu.
enum class BackupKind { evaluation, optimality };

// Mean squared residual |Q(s,a) - (r + gamma * E_{s'~T_i}[V(s')])|^2 of member
// `model_index` over a batch of real records; exact next-state expectation
// (tabular track). Records with done = true bootstrap zero.
double consistency_metric(int model_index, const ModelEnsemble& ensemble,
                          std::span<const TransitionRecord> batch, const TabularQ& q,
                          const TabularPolicy& policy, double alpha, double gamma,
                          BackupKind kind = BackupKind::optimality);

// Continuous-track version: the next-state expectation is Monte-Carlo with
// n_next_samples draws per record from a dedicated stream (seed), so scores
// are reproducible per call. The value bootstrap is the soft value of Q under
// the state-independent reference action distribution mu_probs.
double consistency_metric(int model_index, const ModelEnsemble& ensemble,
                          std::span<const TransitionRecord> batch, const LinearQ& q,
                          const FeatureMap& features, std::span<const double> mu_probs,
                          double alpha, double gamma, int n_next_samples,
                          std::uint64_t seed);

// Softmax solution of the minimum-information objective:
//   posterior[i] = prior[i] * exp(-beta * F[i]) / Z,
// computed with the scores centered at their minimum so beta*F in the
// hundreds cannot underflow everything at once.
Belief posterior_update(const Belief& belief, const ConsistencyScore& scores);

// Independent oracle: minimizes KL(q || prior) + beta * <q, F> directly over
// the simplex grid with resolution grid_step (all weight vectors with entries
// k/K, K = round(1/grid_step)). Exponential in N, so N <= 4 is enforced.
std::vector<double> posterior_brute_force(const Belief& belief,
                                          const ConsistencyScore& scores,
                                          double grid_step);

// Categorical draw of a member index from the posterior.
int sample_model(const Belief& belief, Rng& rng);
int sample_model(const Belief& belief, std::uint64_t rng_seed);

// Belief-weighted mixture next-state distribution (tabular models only).
std::vector<double> posterior_predictive(const Belief& belief,
                                         const ModelEnsemble& ensemble, int state,
                                         int action);

// log of the spread of member next-state mean predictions at (state, action):
// per-dimension population std across models drawn from the posterior,
// averaged over state dims, floored at 1e-12 before the log.
// n_model_samples = 0 requests the exhaustive posterior-weighted computation
// (no sampling); otherwise n_model_samples >= 2 members are drawn using seed.
double uncertainty_metric(const ModelEnsemble& ensemble, const Belief& belief,
                          std::span<const double> state, int action,
                          int n_model_samples, std::uint64_t seed = 0,
                          const FeatureMap* features = nullptr);

}  // namespace pspo
