#include "pspo/pspo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pspo {

void LrSchedule::validate() const {
  if (!(c >= 0.0) || !std::isfinite(c))
    throw std::invalid_argument("LrSchedule: c must be non-negative and finite");
  if (kind == Kind::robbins_monro && !(c > 0.0 && t0 >= 1.0))
    throw std::invalid_argument("LrSchedule: robbins_monro needs c > 0 and t0 >= 1");
}

void PspoConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("PspoConfig: alpha must be > 0");
  if (!(epsilon_trust > 0.0))
    throw std::invalid_argument("PspoConfig: epsilon_trust must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("PspoConfig: beta must be > 0");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("PspoConfig: gamma must lie in [0, 1)");
  if (ensemble_size < 1)
    throw std::invalid_argument("PspoConfig: ensemble_size must be >= 1");
  if (model_pool_size < ensemble_size)
    throw std::invalid_argument("PspoConfig: model_pool_size must be >= ensemble_size");
  schedule.validate();
  if (!(polyak > 0.0 && polyak <= 1.0))
    throw std::invalid_argument("PspoConfig: polyak must lie in (0, 1]");
  if (iterations < 0) throw std::invalid_argument("PspoConfig: iterations must be >= 0");
  if (rollout_horizon < 1)
    throw std::invalid_argument("PspoConfig: rollout_horizon must be >= 1");
  if (real_ratio < 0.0 || real_ratio > 1.0)
    throw std::invalid_argument("PspoConfig: real_ratio must lie in [0, 1]");
  if (belief_update_every < 1)
    throw std::invalid_argument("PspoConfig: belief_update_every must be >= 1");
  if (q_steps < 1 || batch_size < 1 || rollout_batch < 1 || n_next_samples < 1)
    throw std::invalid_argument("PspoConfig: batch knobs must be >= 1");
  if (!(mu_smoothing > 0.0))
    throw std::invalid_argument("PspoConfig: mu_smoothing must be > 0");
  if (!(dynamics_lr > 0.0) || dynamics_epochs < 0)
    throw std::invalid_argument("PspoConfig: bad dynamics training settings");
  if (!(fd_step >= 1e-6 && fd_step <= 1e-3))
    throw std::invalid_argument("PspoConfig: fd_step must lie in [1e-6, 1e-3]");
}

std::string variant_name(const PspoConfig& config) {
  if (config.average_utilization && config.without_regularization)
    return "average_utilization+without_regularization";
  if (config.average_utilization) return "average_utilization";
  if (config.without_regularization) return "without_regularization";
  return "full";
}

// ---------------------------------------------------------------------------
// Mixture construction and exact operators

TabularMdp mixture_mdp(const ModelEnsemble& ensemble, std::span<const double> weights,
                       double gamma, const std::vector<double>& rho0, double r_max) {
  ensemble.validate();
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::logic_error("mixture_mdp: tabular models required");
  if (weights.size() != static_cast<std::size_t>(ensemble.size()))
    throw std::invalid_argument("mixture_mdp: weight/ensemble size mismatch");
  const CategoricalModel& first = ensemble.cat(0);
  TabularMdp mdp;
  mdp.n_states = first.n_states;
  mdp.n_actions = first.n_actions;
  mdp.gamma = gamma;
  mdp.rho0 = rho0;
  mdp.r_max = r_max;
  mdp.transition.assign(
      static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states, 0.0);
  mdp.reward.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);
  std::vector<double> row(mdp.n_states);
  for (int i = 0; i < ensemble.size(); ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const CategoricalModel& m = ensemble.cat(i);
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        m.next_dist(s, a, row);
        for (int s2 = 0; s2 < mdp.n_states; ++s2) mdp.t(s, a, s2) += w * row[s2];
        mdp.r(s, a) += w * m.r_hat(s, a);
      }
  }
  // Member reward estimates are empirical means of bounded rewards, but a
  // caller-supplied r_max tighter than the data cannot be assumed; widen it
  // instead of failing validation.
  for (double r : mdp.reward) mdp.r_max = std::max(mdp.r_max, std::abs(r));
  mdp.validate();
  return mdp;
}

namespace {

// State values under the chosen bootstrap for every state, optionally with the
// Q row clamped (stochastic-target path only).
std::vector<double> state_values(const TabularQ& q, const TabularPolicy& pol,
                                 BackupKind kind, double alpha,
                                 double clamp_bound = 0.0) {
  std::vector<double> v(q.n_states);
  std::vector<double> row(q.n_actions);
  for (int s = 0; s < q.n_states; ++s) {
    for (int a = 0; a < q.n_actions; ++a) {
      double val = q.q(s, a);
      if (clamp_bound > 0.0) val = std::clamp(val, -clamp_bound, clamp_bound);
      row[a] = val;
    }
    if (kind == BackupKind::evaluation) {
      double ev = 0.0;
      for (int a = 0; a < q.n_actions; ++a) ev += pol.p(s, a) * row[a];
      v[s] = ev;
    } else {
      v[s] = generalized_soft_value(row, pol.row(s), alpha);
    }
  }
  return v;
}

TabularQ apply_backup(const TabularQ& q, const TabularPolicy& pol,
                      const ModelEnsemble& ensemble, const Belief& belief,
                      BackupKind kind, double alpha, double gamma) {
  ensemble.validate();
  belief.validate();
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::logic_error("posterior backup: tabular models required; use the "
                           "stochastic update for continuous models");
  if (static_cast<int>(belief.posterior.size()) != ensemble.size())
    throw std::invalid_argument("posterior backup: belief/ensemble size mismatch");
  const std::vector<double> v = state_values(q, pol, kind, alpha);
  TabularQ out = TabularQ::zeros(q.n_states, q.n_actions);
  std::vector<double> row(q.n_states);
  for (int s = 0; s < q.n_states; ++s)
    for (int a = 0; a < q.n_actions; ++a) {
      double r_mix = 0.0, next = 0.0;
      for (int i = 0; i < ensemble.size(); ++i) {
        const double w = belief.posterior[i];
        if (w == 0.0) continue;
        const CategoricalModel& m = ensemble.cat(i);
        m.next_dist(s, a, row);
        double ev = 0.0;
        for (int s2 = 0; s2 < q.n_states; ++s2) ev += row[s2] * v[s2];
        r_mix += w * m.r_hat(s, a);
        next += w * ev;
      }
      out.q(s, a) = r_mix + gamma * next;
    }
  return out;
}

FixedPointResult iterate_backup(const TabularPolicy& pol, const ModelEnsemble& ensemble,
                                const Belief& belief, BackupKind kind, double alpha,
                                double gamma, const TabularQ& start, double tol,
                                int max_sweeps) {
  FixedPointResult res;
  res.q = start;
  for (res.sweeps = 0; res.sweeps < max_sweeps; ++res.sweeps) {
    TabularQ next = apply_backup(res.q, pol, ensemble, belief, kind, alpha, gamma);
    double gap = 0.0;
    for (std::size_t i = 0; i < next.values.size(); ++i)
      gap = std::max(gap, std::abs(next.values[i] - res.q.values[i]));
    res.q = std::move(next);
    res.residual = gap;
    if (gap < tol) {
      ++res.sweeps;
      return res;
    }
  }
  return res;
}

}  // namespace

TabularQ posterior_eval_operator(const TabularQ& q, const TabularPolicy& policy,
                                 const ModelEnsemble& ensemble, const Belief& belief,
                                 double gamma) {
  return apply_backup(q, policy, ensemble, belief, BackupKind::evaluation, 0.0, gamma);
}

TabularQ posterior_opt_operator(const TabularQ& q, const TabularPolicy& reference,
                                const ModelEnsemble& ensemble, const Belief& belief,
                                double alpha, double gamma) {
  if (alpha < 0.0) throw std::invalid_argument("posterior_opt_operator: alpha < 0");
  return apply_backup(q, reference, ensemble, belief, BackupKind::optimality, alpha,
                      gamma);
}

FixedPointResult soft_fixed_point(const TabularPolicy& reference,
                                  const ModelEnsemble& ensemble, const Belief& belief,
                                  double alpha, double gamma, const TabularQ& start,
                                  double tol, int max_sweeps) {
  return iterate_backup(reference, ensemble, belief, BackupKind::optimality, alpha,
                        gamma, start, tol, max_sweeps);
}

FixedPointResult eval_fixed_point(const TabularPolicy& policy,
                                  const ModelEnsemble& ensemble, const Belief& belief,
                                  double gamma, const TabularQ& start, double tol,
                                  int max_sweeps) {
  return iterate_backup(policy, ensemble, belief, BackupKind::evaluation, 0.0, gamma,
                        start, tol, max_sweeps);
}

// ---------------------------------------------------------------------------
// Stochastic approximation

namespace {

struct RunningStats {
  double mean = 0.0;
  double m2 = 0.0;
  std::uint64_t n = 0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double variance() const { return n > 0 ? m2 / n : 0.0; }
};

// Y = r + gamma * E_{s' ~ T_member}[ v(s') ] for one sampled member.
double one_target(const TargetQuery& query, const ModelEnsemble& ensemble,
                  const Belief& belief, const std::vector<double>& v, double gamma,
                  Rng& rng, std::vector<double>& row_buf) {
  const int member = sample_model(belief, rng);
  const CategoricalModel& m = ensemble.cat(member);
  const double r = query.observed_reward ? *query.observed_reward
                                         : m.r_hat(query.s, query.a);
  if (query.done) return r;
  m.next_dist(query.s, query.a, row_buf);
  double ev = 0.0;
  for (int s2 = 0; s2 < m.n_states; ++s2) ev += row_buf[s2] * v[s2];
  return r + gamma * ev;
}

// Target statistics over a batch without moving any Q values; same draws the
// stochastic update would make.
TargetStats probe_target_stats(std::span<const TargetQuery> batch,
                               const TabularPolicy& policy_or_reference,
                               const ModelEnsemble& ensemble, const Belief& belief,
                               const TabularQ& target_q, BackupKind kind, double alpha,
                               double gamma, double r_max, Rng& rng) {
  const double clamp_bound = gamma < 1.0 ? r_max / (1.0 - gamma) : r_max;
  const std::vector<double> v =
      state_values(target_q, policy_or_reference, kind, alpha, clamp_bound);
  std::vector<double> row(target_q.n_states);
  RunningStats stats;
  for (const TargetQuery& query : batch)
    stats.add(one_target(query, ensemble, belief, v, gamma, rng, row));
  TargetStats out;
  out.mean = stats.mean;
  out.variance = stats.variance();
  out.count = stats.n;
  return out;
}

}  // namespace

TargetStats stochastic_q_update(TabularQ& q, std::span<const TargetQuery> batch,
                                const TabularPolicy& policy_or_reference,
                                const ModelEnsemble& ensemble, const Belief& belief,
                                const TabularQ& target_q, std::uint64_t& t,
                                const LrSchedule& schedule, BackupKind kind,
                                double alpha, double gamma, double r_max, Rng& rng) {
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::logic_error("stochastic_q_update: tabular models required");
  const double clamp_bound = gamma < 1.0 ? r_max / (1.0 - gamma) : r_max;
  const std::vector<double> v =
      state_values(target_q, policy_or_reference, kind, alpha, clamp_bound);
  std::vector<double> row(target_q.n_states);
  RunningStats stats;
  for (const TargetQuery& query : batch) {
    const double y = one_target(query, ensemble, belief, v, gamma, rng, row);
    const double eta = schedule.rate(t++);
    q.q(query.s, query.a) += eta * (y - q.q(query.s, query.a));
    stats.add(y);
  }
  TargetStats out;
  out.mean = stats.mean;
  out.variance = stats.variance();
  out.count = stats.n;
  return out;
}

VarianceBoundResult variance_bound_check(std::span<const double> targets, double r_max,
                                         double gamma) {
  if (targets.size() < 2)
    throw std::invalid_argument("variance_bound_check: need at least 2 samples");
  if (!(r_max > 0.0) || !(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("variance_bound_check: bad r_max or gamma");
  RunningStats stats;
  for (double y : targets) stats.add(y);
  VarianceBoundResult out;
  out.empirical_variance = stats.variance();
  out.bound = (r_max / (1.0 - gamma)) * (r_max / (1.0 - gamma));
  out.pass = out.empirical_variance <= out.bound;
  return out;
}

ContractionResult contraction_check(OperatorTag tag, const TabularQ& q1,
                                    const TabularQ& q2, const TabularPolicy& policy,
                                    const ModelEnsemble& ensemble, const Belief& belief,
                                    double alpha, double gamma) {
  const BackupKind kind =
      tag == OperatorTag::evaluation ? BackupKind::evaluation : BackupKind::optimality;
  const TabularQ b1 = apply_backup(q1, policy, ensemble, belief, kind, alpha, gamma);
  const TabularQ b2 = apply_backup(q2, policy, ensemble, belief, kind, alpha, gamma);
  ContractionResult out;
  for (std::size_t i = 0; i < b1.values.size(); ++i)
    out.lhs = std::max(out.lhs, std::abs(b1.values[i] - b2.values[i]));
  double gap = 0.0;
  for (std::size_t i = 0; i < q1.values.size(); ++i)
    gap = std::max(gap, std::abs(q1.values[i] - q2.values[i]));
  out.rhs = gamma * gap;
  out.pass = out.lhs <= out.rhs + 1e-10;
  return out;
}

// ---------------------------------------------------------------------------
// Policy improvement

namespace {

// One state's tilted row:
//   pi_lambda(a) propto mu(a)^(alpha/(alpha+lambda)) * pi(a)^(lambda/(alpha+lambda))
//                      * exp(q(a)/(alpha+lambda))
// written in log space with max-subtraction. denom = alpha + lambda > 0.
void tilt_row(std::span<const double> q_row, std::span<const double> mu_row,
              std::span<const double> pi_row, double alpha, double lambda,
              std::span<double> out) {
  const double denom = alpha + lambda;
  double mx = -1e300;
  for (std::size_t a = 0; a < q_row.size(); ++a) {
    const double lg =
        (alpha * std::log(mu_row[a]) + lambda * std::log(pi_row[a]) + q_row[a]) / denom;
    out[a] = lg;
    mx = std::max(mx, lg);
  }
  double z = 0.0;
  for (std::size_t a = 0; a < q_row.size(); ++a) {
    out[a] = std::exp(out[a] - mx);
    z += out[a];
  }
  for (std::size_t a = 0; a < q_row.size(); ++a) out[a] /= z;
}

void require_strictly_positive(const TabularPolicy& pol, const char* what) {
  for (double p : pol.probs)
    if (!(p > 0.0))
      throw std::invalid_argument(std::string(what) + " must have strictly positive rows");
}

}  // namespace

TabularPolicy closed_form_optimal_policy(const TabularQ& q_star,
                                         const TabularPolicy& reference, double alpha) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("closed_form_optimal_policy: alpha must be > 0");
  reference.validate();
  require_strictly_positive(reference, "closed_form_optimal_policy: reference");
  if (reference.n_states != q_star.n_states || reference.n_actions != q_star.n_actions)
    throw std::invalid_argument("closed_form_optimal_policy: shape mismatch");
  TabularPolicy out = reference;
  std::vector<double> row(q_star.n_actions);
  for (int s = 0; s < q_star.n_states; ++s) {
    tilt_row(q_star.row(s), reference.row(s), reference.row(s), alpha, 0.0, row);
    for (int a = 0; a < q_star.n_actions; ++a) out.p(s, a) = row[a];
  }
  return out;
}

ImprovementResult constrained_improvement_step(const TabularQ& q,
                                               const TabularPolicy& current,
                                               const TabularPolicy& reference,
                                               double alpha, double epsilon_trust) {
  if (alpha < 0.0)
    throw std::invalid_argument("constrained_improvement_step: alpha must be >= 0");
  if (!(epsilon_trust > 0.0))
    throw std::invalid_argument("constrained_improvement_step: epsilon_trust must be > 0");
  current.validate();
  reference.validate();
  require_strictly_positive(current, "constrained_improvement_step: current policy");
  require_strictly_positive(reference, "constrained_improvement_step: reference");
  if (current.n_states != q.n_states || current.n_actions != q.n_actions ||
      reference.n_states != q.n_states || reference.n_actions != q.n_actions)
    throw std::invalid_argument("constrained_improvement_step: shape mismatch");

  const auto policy_at = [&](double lambda) -> TabularPolicy {
    TabularPolicy out = current;
    std::vector<double> row(q.n_actions);
    for (int s = 0; s < q.n_states; ++s) {
      tilt_row(q.row(s), reference.row(s), current.row(s), alpha, lambda, row);
      for (int a = 0; a < q.n_actions; ++a) out.p(s, a) = row[a];
    }
    return out;
  };
  const auto kl_max_of = [&](const TabularPolicy& pol) -> double {
    double kl = 0.0;
    for (int s = 0; s < q.n_states; ++s)
      kl = std::max(kl, kl_row(pol.row(s), current.row(s)));
    return kl;
  };

  // lambda = 0 needs alpha > 0 for the tilt to be defined; the alpha = 0 family
  // starts from an effectively greedy step at a tiny lambda instead.
  double q_scale = 1.0;
  for (double val : q.values) q_scale = std::max(q_scale, std::abs(val));
  const double lambda_floor = alpha > 0.0 ? 0.0 : 1e-12 * q_scale;

  ImprovementResult res;
  res.lambda = lambda_floor;
  res.policy = policy_at(res.lambda);
  res.kl_max = kl_max_of(res.policy);
  if (res.kl_max <= epsilon_trust) return res;

  // Bracket: KL(lambda) decreases to 0 as lambda grows, so doubling finds a
  // feasible upper end.
  const double kl_at_floor = res.kl_max;
  double lo = res.lambda;
  double hi = alpha > 0.0 ? alpha : 1.0;
  int iters = 0;
  TabularPolicy pol_hi = policy_at(hi);
  double kl_hi = kl_max_of(pol_hi);
  while (kl_hi > epsilon_trust) {
    lo = hi;
    hi *= 2.0;
    if (++iters > 200 || !(hi < 1e300)) {
      std::ostringstream msg;
      msg << "constrained_improvement_step: no feasible lambda bracket after " << iters
          << " doublings; lo=" << lo << " hi=" << hi << " kl(floor)=" << kl_at_floor
          << " kl(hi)=" << kl_hi << " eps=" << epsilon_trust;
      throw std::runtime_error(msg.str());
    }
    pol_hi = policy_at(hi);
    kl_hi = kl_max_of(pol_hi);
  }

  // Bisect until the constraint is active within 1e-6 (from below).
  constexpr double kTightTol = 1e-6;
  for (int i = 0; i < 200; ++i) {
    if (epsilon_trust - kl_hi <= kTightTol || hi - lo <= 1e-15 * hi) {
      res.policy = std::move(pol_hi);
      res.lambda = hi;
      res.kl_max = kl_hi;
      return res;
    }
    const double mid = 0.5 * (lo + hi);
    TabularPolicy pol_mid = policy_at(mid);
    const double kl_mid = kl_max_of(pol_mid);
    if (kl_mid > epsilon_trust) {
      lo = mid;
    } else {
      hi = mid;
      pol_hi = std::move(pol_mid);
      kl_hi = kl_mid;
    }
  }
  std::ostringstream msg;
  msg << "constrained_improvement_step: bisection failed after 200 iterations; lo=" << lo
      << " hi=" << hi << " kl(hi)=" << kl_hi << " eps=" << epsilon_trust;
  throw std::runtime_error(msg.str());
}

TiltImprovementResult constrained_improvement_step_tilt(
    const LinearQ& q, const TiltPolicy& current,
    const std::vector<std::vector<double>>& batch_features, double alpha,
    double epsilon_trust, KlAggregation agg, const std::vector<double>& batch_weights) {
  if (alpha < 0.0)
    throw std::invalid_argument("constrained_improvement_step_tilt: alpha must be >= 0");
  if (!(epsilon_trust > 0.0))
    throw std::invalid_argument("constrained_improvement_step_tilt: epsilon_trust > 0");
  if (batch_features.empty())
    throw std::invalid_argument("constrained_improvement_step_tilt: empty state batch");
  if (!batch_weights.empty() && batch_weights.size() != batch_features.size())
    throw std::invalid_argument("constrained_improvement_step_tilt: weight size mismatch");
  const int na = current.n_actions();
  if (q.n_actions() != na)
    throw std::invalid_argument("constrained_improvement_step_tilt: action mismatch");

  // Per-state caches: current tilt logits u = G phi, Q row w = W phi.
  const std::size_t n = batch_features.size();
  std::vector<std::vector<double>> u(n, std::vector<double>(na));
  std::vector<std::vector<double>> w(n, std::vector<double>(na));
  std::vector<std::vector<double>> cur_probs(n, std::vector<double>(na));
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& phi = batch_features[i];
    for (int a = 0; a < na; ++a) {
      double ua = 0.0, wa = 0.0;
      for (int k = 0; k < current.tilt.cols(); ++k) ua += current.tilt(a, k) * phi[k];
      for (int k = 0; k < q.weights.cols(); ++k) wa += q.weights(a, k) * phi[k];
      u[i][a] = ua;
      w[i][a] = wa;
    }
    current.probs(phi, cur_probs[i]);
  }

  const auto kl_at = [&](double lambda) -> double {
    const double denom = alpha + lambda;
    std::vector<double> row(na);
    double agg_val = 0.0;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int a = 0; a < na; ++a) {
        const double lg = (current.base[a] > 0.0 ? std::log(current.base[a]) : -1e300) +
                          (lambda * u[i][a] + w[i][a]) / denom;
        row[a] = lg;
        mx = std::max(mx, lg);
      }
      double z = 0.0;
      for (int a = 0; a < na; ++a) {
        row[a] = std::exp(row[a] - mx);
        z += row[a];
      }
      for (int a = 0; a < na; ++a) row[a] /= z;
      const double kl = kl_row(row, cur_probs[i]);
      if (agg == KlAggregation::max_state) {
        agg_val = std::max(agg_val, kl);
      } else {
        const double wt = batch_weights.empty() ? 1.0 : batch_weights[i];
        agg_val += wt * kl;
        weight_sum += wt;
      }
    }
    if (agg == KlAggregation::occupancy_mean && weight_sum > 0.0)
      agg_val /= weight_sum;
    return agg_val;
  };
  const auto policy_at = [&](double lambda) -> TiltPolicy {
    TiltPolicy out = current;
    out.tilt = (lambda * current.tilt + q.weights) / (alpha + lambda);
    return out;
  };

  double q_scale = 1.0;
  q_scale = std::max(q_scale, q.weights.cwiseAbs().maxCoeff());
  const double lambda_floor = alpha > 0.0 ? 0.0 : 1e-12 * q_scale;

  TiltImprovementResult res;
  res.lambda = lambda_floor;
  res.kl_agg = kl_at(res.lambda);
  if (res.kl_agg <= epsilon_trust) {
    res.policy = policy_at(res.lambda);
    return res;
  }

  double lo = res.lambda;
  double hi = alpha > 0.0 ? alpha : 1.0;
  double kl_hi = kl_at(hi);
  int iters = 0;
  while (kl_hi > epsilon_trust) {
    lo = hi;
    hi *= 2.0;
    if (++iters > 200 || !(hi < 1e300)) {
      std::ostringstream msg;
      msg << "constrained_improvement_step_tilt: no feasible bracket; lo=" << lo
          << " hi=" << hi << " kl(hi)=" << kl_hi << " eps=" << epsilon_trust;
      throw std::runtime_error(msg.str());
    }
    kl_hi = kl_at(hi);
  }
  constexpr double kTightTol = 1e-6;
  for (int i = 0; i < 200; ++i) {
    if (epsilon_trust - kl_hi <= kTightTol || hi - lo <= 1e-15 * hi) {
      res.policy = policy_at(hi);
      res.lambda = hi;
      res.kl_agg = kl_hi;
      return res;
    }
    const double mid = 0.5 * (lo + hi);
    const double kl_mid = kl_at(mid);
    if (kl_mid > epsilon_trust) {
      lo = mid;
    } else {
      hi = mid;
      kl_hi = kl_mid;
    }
  }
  std::ostringstream msg;
  msg << "constrained_improvement_step_tilt: bisection failed after 200 iterations; lo="
      << lo << " hi=" << hi << " kl(hi)=" << kl_hi << " eps=" << epsilon_trust;
  throw std::runtime_error(msg.str());
}

// ---------------------------------------------------------------------------
// Shared training helpers

TabularPolicy empirical_behavior_policy(const OfflineDataset& real_data, int n_states,
                                        int n_actions, double smoothing) {
  if (real_data.empty())
    throw std::invalid_argument("empirical_behavior_policy: dataset empty");
  if (!(smoothing > 0.0))
    throw std::invalid_argument("empirical_behavior_policy: smoothing must be > 0");
  std::vector<double> counts(static_cast<std::size_t>(n_states) * n_actions, 0.0);
  for (const TransitionRecord& rec : real_data) {
    if (rec.provenance != Provenance::real) continue;
    const int s = tabular_state(rec.state);
    if (s >= n_states || rec.action < 0 || rec.action >= n_actions)
      throw std::invalid_argument("empirical_behavior_policy: record out of range");
    counts[static_cast<std::size_t>(s) * n_actions + rec.action] += 1.0;
  }
  TabularPolicy mu;
  mu.n_states = n_states;
  mu.n_actions = n_actions;
  mu.probs.assign(counts.size(), 0.0);
  for (int s = 0; s < n_states; ++s) {
    double total = 0.0;
    for (int a = 0; a < n_actions; ++a)
      total += counts[static_cast<std::size_t>(s) * n_actions + a];
    for (int a = 0; a < n_actions; ++a)
      mu.p(s, a) = (counts[static_cast<std::size_t>(s) * n_actions + a] + smoothing) /
                   (total + smoothing * n_actions);
  }
  mu.validate();
  return mu;
}

namespace {

TabularPolicy uniform_like(const TabularPolicy& pol) {
  return TabularPolicy::uniform(pol.n_states, pol.n_actions);
}

TargetQuery query_from_record(const TransitionRecord& rec) {
  TargetQuery q;
  q.s = tabular_state(rec.state);
  q.a = rec.action;
  q.observed_reward = rec.reward;
  q.done = rec.done;
  return q;
}

const TransitionRecord& pick_mixed(const OfflineDataset& real,
                                   const OfflineDataset& synth, double real_ratio,
                                   Rng& rng) {
  if (synth.empty() || rng.uniform01() < real_ratio)
    return real[rng.uniform_index(real.size())];
  return synth[rng.uniform_index(synth.size())];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tabular training loop

TabularTrainResult pspo_train_tabular(const OfflineDataset& real_data,
                                      const PspoConfig& config, const TabularMdp& truth,
                                      const ModelEnsemble& ensemble,
                                      std::uint64_t master_seed) {
  config.validate();
  truth.validate();
  ensemble.validate();
  if (real_data.empty()) throw std::invalid_argument("pspo_train_tabular: dataset empty");
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::invalid_argument("pspo_train_tabular: categorical ensemble required");
  if (std::abs(config.gamma - truth.gamma) > 1e-12)
    throw std::invalid_argument(
        "pspo_train_tabular: config gamma must match the environment's");
  if (ensemble.size() != config.ensemble_size)
    throw std::invalid_argument("pspo_train_tabular: ensemble size mismatch with config");

  const int S = truth.n_states, A = truth.n_actions;
  const double alpha_used =
      config.without_regularization && config.ablation_no_reg_mode == NoRegMode::alpha_zero
          ? 0.0
          : config.alpha;

  TabularTrainResult res;
  res.mu = empirical_behavior_policy(real_data, S, A, config.mu_smoothing);
  const TabularPolicy mu_used =
      config.without_regularization && config.ablation_no_reg_mode == NoRegMode::uniform_mu
          ? uniform_like(res.mu)
          : res.mu;
  res.policy = mu_used;
  res.q = TabularQ::zeros(S, A);
  res.target_policy = res.policy;
  res.target_q = res.q;
  res.belief = Belief::uniform(ensemble.size(), config.beta);
  const std::vector<double> prior = res.belief.prior;

  Rng rng_batch(derive_seed(master_seed, "evidence-batch"));
  Rng rng_targets(derive_seed(master_seed, "targets"));
  Rng rng_starts(derive_seed(master_seed, "rollout-starts"));
  std::uint64_t schedule_t = 0;
  const std::string variant = variant_name(config);

  for (int iter = 0; iter < config.iterations; ++iter) {
    IterationReport rep;
    rep.iteration = iter;
    rep.variant = variant;

    // Evidence minibatch (real records only).
    OfflineDataset evidence;
    evidence.reserve(config.batch_size);
    for (int k = 0; k < config.batch_size; ++k)
      evidence.push_back(real_data[rng_batch.uniform_index(real_data.size())]);

    // Belief refresh from the run prior (never chained).
    if (iter % config.belief_update_every == 0) {
      ConsistencyScore scores(ensemble.size());
      for (int m = 0; m < ensemble.size(); ++m)
        scores[m] = consistency_metric(m, ensemble, evidence, res.q, mu_used,
                                       alpha_used, config.gamma, config.backup_kind);
      Belief fresh;
      fresh.prior = prior;
      fresh.posterior = prior;
      fresh.beta = config.beta;
      res.belief = posterior_update(fresh, scores);
    }
    if (config.average_utilization) res.belief.posterior = res.belief.prior;
    rep.prior = res.belief.prior;
    rep.posterior = res.belief.posterior;

    const TabularMdp mix = mixture_mdp(ensemble, res.belief.posterior, config.gamma,
                                       truth.rho0, truth.r_max);
    rep.mixture_j_before = expected_return(mix, res.policy);

    // Synthetic rollouts from the current policy, one member per rollout.
    std::vector<std::vector<double>> starts;
    starts.reserve(config.rollout_batch);
    for (int k = 0; k < config.rollout_batch; ++k)
      starts.push_back(real_data[rng_starts.uniform_index(real_data.size())].state);
    const TabularPolicy& pi_now = res.policy;
    OfflineDataset synth = generate_synthetic(
        ensemble, res.belief.posterior,
        [&pi_now](const std::vector<double>& state) {
          const int s = tabular_state(state);
          return std::vector<double>(pi_now.row(s).begin(), pi_now.row(s).end());
        },
        starts, config.rollout_horizon, derive_seed(master_seed, "rollout", iter));

    // Policy evaluation.
    std::vector<TargetQuery> queries;
    queries.reserve(config.batch_size);
    const auto fill_queries = [&]() {
      queries.clear();
      for (int k = 0; k < config.batch_size; ++k)
        queries.push_back(query_from_record(
            pick_mixed(real_data, synth, config.real_ratio, rng_targets)));
    };
    TargetStats stats;
    if (config.exact_eval) {
      const TabularPolicy& backup_ref =
          config.backup_kind == BackupKind::optimality ? mu_used : res.policy;
      FixedPointResult fp = iterate_backup(backup_ref, ensemble, res.belief,
                                           config.backup_kind, alpha_used, config.gamma,
                                           res.q, 1e-12, 100000);
      res.q = std::move(fp.q);
      // Probe targets (no Q movement): report the stochastic-target statistics
      // the non-exact path would see.
      fill_queries();
      stats = probe_target_stats(queries, backup_ref, ensemble, res.belief,
                                 res.target_q, config.backup_kind, alpha_used,
                                 config.gamma, truth.r_max, rng_targets);
    } else {
      const TabularPolicy& backup_ref =
          config.backup_kind == BackupKind::optimality ? mu_used : res.target_policy;
      for (int step = 0; step < config.q_steps; ++step) {
        fill_queries();
        // Report keeps the last step's statistics.
        stats = stochastic_q_update(res.q, queries, backup_ref, ensemble, res.belief,
                                    res.target_q, schedule_t, config.schedule,
                                    config.backup_kind, alpha_used, config.gamma,
                                    truth.r_max, rng_targets);
      }
    }
    rep.mean_target = stats.mean;
    rep.target_variance = stats.variance;
    const double span = truth.r_max / (1.0 - config.gamma);
    rep.variance_bound = span * span;

    // Trust-region improvement.
    ImprovementResult step = constrained_improvement_step(res.q, res.policy, mu_used,
                                                          alpha_used,
                                                          config.epsilon_trust);
    rep.kl_step = step.kl_max;
    rep.lambda_used = step.lambda;

    if (config.check_improvement) {
      const ImprovementConditionResult icc = improvement_condition_check(
          mix, res.policy, mu_used, alpha_used, config.fd_step);
      rep.improvement_condition = icc.holds ? 1 : 0;
    }
    rep.mixture_j_after = expected_return(mix, step.policy);
    if (rep.improvement_condition == 1)
      rep.monotone_ok = rep.mixture_j_after >= rep.mixture_j_before - 1e-8 ? 1 : 0;

    res.policy = std::move(step.policy);
    rep.exact_j = expected_return(truth, res.policy);
    rep.jreg_estimate = regularized_return(mix, res.policy, mu_used, alpha_used);

    // Diagnostic sample: spread of member predictions vs one fresh TD target
    // at the first evidence record.
    {
      const TransitionRecord& probe = evidence.front();
      rep.uncertainty_sample = uncertainty_metric(ensemble, res.belief, probe.state,
                                                  probe.action, 0);
      const std::vector<double> v = state_values(
          res.target_q, config.backup_kind == BackupKind::optimality ? mu_used
                                                                     : res.target_policy,
          config.backup_kind, alpha_used, span);
      std::vector<double> row(S);
      const TargetQuery tq = query_from_record(probe);
      rep.td_target_sample =
          one_target(tq, ensemble, res.belief, v, config.gamma, rng_targets, row);
    }

    // Polyak-averaged targets.
    for (std::size_t k = 0; k < res.target_q.values.size(); ++k)
      res.target_q.values[k] = config.polyak * res.q.values[k] +
                               (1.0 - config.polyak) * res.target_q.values[k];
    for (std::size_t k = 0; k < res.target_policy.probs.size(); ++k)
      res.target_policy.probs[k] = config.polyak * res.policy.probs[k] +
                                   (1.0 - config.polyak) * res.target_policy.probs[k];

    res.reports.push_back(std::move(rep));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Liquidation training loop

LiquidationTrainResult pspo_train_liquidation(const OfflineDataset& real_data,
                                              const PspoConfig& config,
                                              const LiquidationConfig& env,
                                              const ModelEnsemble& ensemble,
                                              std::uint64_t master_seed) {
  config.validate();
  env.validate();
  ensemble.validate();
  if (real_data.empty())
    throw std::invalid_argument("pspo_train_liquidation: dataset empty");
  if (ensemble.kind != ModelEnsemble::Kind::gaussian)
    throw std::invalid_argument("pspo_train_liquidation: gaussian ensemble required");
  if (ensemble.size() != config.ensemble_size)
    throw std::invalid_argument("pspo_train_liquidation: ensemble size mismatch");

  const FeatureMap features = env.make_feature_map();
  const int A = env.n_actions();
  const int F = features.dim();
  const double alpha_used =
      config.without_regularization && config.ablation_no_reg_mode == NoRegMode::alpha_zero
          ? 0.0
          : config.alpha;

  LiquidationTrainResult res;
  res.mu_probs = behavior_action_probs(env);
  std::vector<double> mu_used = res.mu_probs;
  if (config.without_regularization &&
      config.ablation_no_reg_mode == NoRegMode::uniform_mu)
    mu_used.assign(A, 1.0 / A);
  res.policy = TiltPolicy::from_base(mu_used, F);
  res.q = LinearQ::zeros(A, F);
  res.target_policy = res.policy;
  res.target_q = res.q;
  res.belief = Belief::uniform(ensemble.size(), config.beta);
  const std::vector<double> prior = res.belief.prior;

  const double r_max = env.initial_inventory * env.rate_cap;
  const double clamp_bound = r_max / (1.0 - config.gamma);
  const double horizon_edge = static_cast<double>(env.horizon) - 0.5;
  const auto is_terminal = [horizon_edge](const std::vector<double>& s) {
    return s[0] >= horizon_edge || s[1] <= 1e-9;
  };

  Rng rng_batch(derive_seed(master_seed, "evidence-batch"));
  Rng rng_targets(derive_seed(master_seed, "targets"));
  Rng rng_starts(derive_seed(master_seed, "rollout-starts"));
  std::uint64_t schedule_t = 0;
  const std::string variant = variant_name(config);

  std::vector<double> phi(F), phi2(F), q_row(A), probs(A);

  // Soft state value of a record's successor under the target critic.
  const auto next_value = [&](const TransitionRecord& rec) -> double {
    if (rec.done) return 0.0;
    features.eval(rec.next_state, phi2);
    res.target_q.row(phi2, q_row);
    for (int a = 0; a < A; ++a) q_row[a] = std::clamp(q_row[a], -clamp_bound, clamp_bound);
    return generalized_soft_value(q_row, mu_used, alpha_used);
  };

  for (int iter = 0; iter < config.iterations; ++iter) {
    IterationReport rep;
    rep.iteration = iter;
    rep.variant = variant;

    OfflineDataset evidence;
    evidence.reserve(config.batch_size);
    for (int k = 0; k < config.batch_size; ++k)
      evidence.push_back(real_data[rng_batch.uniform_index(real_data.size())]);

    if (iter % config.belief_update_every == 0) {
      ConsistencyScore scores(ensemble.size());
      for (int m = 0; m < ensemble.size(); ++m)
        scores[m] = consistency_metric(
            m, ensemble, evidence, res.q, features, mu_used, alpha_used, config.gamma,
            config.n_next_samples, derive_seed(master_seed, "consistency", iter));
      Belief fresh;
      fresh.prior = prior;
      fresh.posterior = prior;
      fresh.beta = config.beta;
      res.belief = posterior_update(fresh, scores);
    }
    if (config.average_utilization) res.belief.posterior = res.belief.prior;
    rep.prior = res.belief.prior;
    rep.posterior = res.belief.posterior;

    // Synthetic rollouts under the current policy.
    std::vector<std::vector<double>> starts;
    starts.reserve(config.rollout_batch);
    for (int k = 0; k < config.rollout_batch; ++k) {
      const TransitionRecord& rec = real_data[rng_starts.uniform_index(real_data.size())];
      if (!is_terminal(rec.state)) starts.push_back(rec.state);
    }
    const TiltPolicy& pi_now = res.policy;
    OfflineDataset synth = generate_synthetic(
        ensemble, res.belief.posterior,
        [&](const std::vector<double>& state) {
          features.eval(state, phi);
          return pi_now.probs(phi);
        },
        starts, config.rollout_horizon, derive_seed(master_seed, "rollout", iter),
        &features, is_terminal);

    // Critic: semi-gradient TD steps toward the soft target.
    RunningStats target_stats;
    double first_target = 0.0;
    std::vector<const TransitionRecord*> batch(config.batch_size);
    for (int step = 0; step < config.q_steps; ++step) {
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(A, F);
      for (int k = 0; k < config.batch_size; ++k)
        batch[k] = &pick_mixed(real_data, synth, config.real_ratio, rng_targets);
      for (int k = 0; k < config.batch_size; ++k) {
        const TransitionRecord& rec = *batch[k];
        const double y = rec.reward + config.gamma * next_value(rec);
        features.eval(rec.state, phi);
        const double q_sa = res.q.value(phi, rec.action);
        target_stats.add(y);
        if (step == 0 && k == 0) first_target = y;
        const double scale = (q_sa - y) / config.batch_size;
        for (int f = 0; f < F; ++f) grad(rec.action, f) += scale * phi[f];
      }
      res.q.weights -= config.schedule.rate(schedule_t++) * grad;
    }
    rep.mean_target = target_stats.mean;
    rep.target_variance = target_stats.variance();
    rep.variance_bound = clamp_bound * clamp_bound;
    rep.td_target_sample = first_target;

    // Improvement step on the evidence + synthetic state batch.
    std::vector<std::vector<double>> batch_features;
    batch_features.reserve(evidence.size() + synth.size());
    for (const TransitionRecord& rec : evidence)
      batch_features.push_back(features.eval(rec.state));
    for (const TransitionRecord& rec : synth)
      batch_features.push_back(features.eval(rec.state));
    TiltImprovementResult step = constrained_improvement_step_tilt(
        res.q, res.policy, batch_features, alpha_used, config.epsilon_trust,
        config.kl_aggregation);
    rep.kl_step = step.kl_agg;
    rep.lambda_used = step.lambda;
    res.policy = std::move(step.policy);

    // Batch estimate of the regularized objective under the new policy.
    {
      double jreg = 0.0;
      for (const std::vector<double>& f : batch_features) {
        res.q.row(f, q_row);
        res.policy.probs(f, probs);
        double v = 0.0;
        for (int a = 0; a < A; ++a) v += probs[a] * q_row[a];
        if (alpha_used > 0.0) v -= alpha_used * kl_row(probs, mu_used);
        jreg += v;
      }
      rep.jreg_estimate = jreg / static_cast<double>(batch_features.size());
    }

    // Diagnostic pair at the first evidence record.
    rep.uncertainty_sample = uncertainty_metric(ensemble, res.belief,
                                                evidence.front().state,
                                                evidence.front().action, 0, 0, &features);

    // Polyak-averaged target parameters.
    res.target_q.weights = config.polyak * res.q.weights +
                           (1.0 - config.polyak) * res.target_q.weights;
    res.target_policy.tilt = config.polyak * res.policy.tilt +
                             (1.0 - config.polyak) * res.target_policy.tilt;

    res.reports.push_back(std::move(rep));
  }
  return res;
}

}  // namespace pspo
