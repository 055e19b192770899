#include "pspo/belief.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace pspo {

namespace {

void check_scores(const ConsistencyScore& scores, std::size_t n) {
  if (scores.size() != n)
    throw std::invalid_argument("consistency scores: wrong length for ensemble");
  for (double f : scores)
    if (!std::isfinite(f) || f < 0.0)
      throw std::invalid_argument("consistency scores must be finite and >= 0");
}

double record_residual_sq(double q_sa, double r, double gamma, double next_value,
                          bool done) {
  const double target = r + (done ? 0.0 : gamma * next_value);
  const double d = q_sa - target;
  return d * d;
}

}  // namespace

Belief Belief::uniform(int n, double beta) {
  if (n <= 0) throw std::invalid_argument("Belief::uniform: n must be positive");
  Belief b;
  b.beta = beta;
  b.prior.assign(n, 1.0 / n);
  b.posterior = b.prior;
  b.validate();
  return b;
}

void Belief::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("Belief: beta must be positive and finite");
  if (prior.empty() || prior.size() != posterior.size())
    throw std::invalid_argument("Belief: prior/posterior size mismatch");
  for (const std::vector<double>* v : {&prior, &posterior}) {
    double sum = 0.0;
    for (double w : *v) {
      if (!std::isfinite(w) || w < 0.0)
        throw std::invalid_argument("Belief: weights must be finite and >= 0");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("Belief: weights must sum to 1 within 1e-12");
  }
}

double consistency_metric(int model_index, const ModelEnsemble& ensemble,
                          std::span<const TransitionRecord> batch, const TabularQ& q,
                          const TabularPolicy& policy, double alpha, double gamma,
                          BackupKind kind) {
  if (batch.empty()) throw std::invalid_argument("consistency_metric: empty batch");
  if (model_index < 0 || model_index >= ensemble.size())
    throw std::invalid_argument("consistency_metric: model index out of range");
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::logic_error("consistency_metric: tabular form needs categorical models");
  const CategoricalModel& model = ensemble.cat(model_index);

  // Next-state values under the chosen bootstrap, computed once per state.
  std::vector<double> v(q.n_states);
  for (int s = 0; s < q.n_states; ++s) {
    if (kind == BackupKind::optimality) {
      v[s] = generalized_soft_value(q.row(s), policy.row(s), alpha);
    } else {
      double ev = 0.0;
      for (int a = 0; a < q.n_actions; ++a) ev += policy.p(s, a) * q.q(s, a);
      v[s] = ev;
    }
  }

  std::vector<double> row(model.n_states);
  double total = 0.0;
  for (const TransitionRecord& rec : batch) {
    if (rec.provenance != Provenance::real)
      throw std::invalid_argument("consistency_metric: batch must be real records");
    const int s = tabular_state(rec.state);
    model.next_dist(s, rec.action, row);
    double next_value = 0.0;
    for (int s2 = 0; s2 < model.n_states; ++s2) next_value += row[s2] * v[s2];
    total += record_residual_sq(q.q(s, rec.action), rec.reward, gamma, next_value,
                                rec.done);
  }
  return total / static_cast<double>(batch.size());
}

double consistency_metric(int model_index, const ModelEnsemble& ensemble,
                          std::span<const TransitionRecord> batch, const LinearQ& q,
                          const FeatureMap& features, std::span<const double> mu_probs,
                          double alpha, double gamma, int n_next_samples,
                          std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("consistency_metric: empty batch");
  if (model_index < 0 || model_index >= ensemble.size())
    throw std::invalid_argument("consistency_metric: model index out of range");
  if (ensemble.kind != ModelEnsemble::Kind::gaussian)
    throw std::logic_error("consistency_metric: continuous form needs gaussian models");
  if (n_next_samples < 1)
    throw std::invalid_argument("consistency_metric: n_next_samples must be >= 1");
  const GaussianModel& model = ensemble.gauss(model_index);

  Rng rng(seed);
  std::vector<double> phi(features.dim());
  std::vector<double> q_row(q.n_actions());
  double total = 0.0;
  for (const TransitionRecord& rec : batch) {
    if (rec.provenance != Provenance::real)
      throw std::invalid_argument("consistency_metric: batch must be real records");
    features.eval(rec.state, phi);
    const double q_sa = q.value(phi, rec.action);
    double next_value = 0.0;
    if (!rec.done) {
      for (int k = 0; k < n_next_samples; ++k) {
        const auto [next, r_unused] = sample_next(model, features, rec.state,
                                                  rec.action, rng);
        (void)r_unused;
        features.eval(next, phi);
        q.row(phi, q_row);
        next_value += generalized_soft_value(q_row, mu_probs, alpha);
      }
      next_value /= n_next_samples;
      features.eval(rec.state, phi);  // phi was overwritten by next-state evals
    }
    total += record_residual_sq(q_sa, rec.reward, gamma, next_value, rec.done);
  }
  return total / static_cast<double>(batch.size());
}

Belief posterior_update(const Belief& belief, const ConsistencyScore& scores) {
  belief.validate();
  check_scores(scores, belief.prior.size());
  const double f_min = *std::min_element(scores.begin(), scores.end());
  Belief out = belief;
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.posterior[i] = belief.prior[i] * std::exp(-belief.beta * (scores[i] - f_min));
    z += out.posterior[i];
  }
  if (!(z > 0.0))
    throw std::runtime_error("posterior_update: all weights underflowed to zero");
  for (double& w : out.posterior) w /= z;
  return out;
}

std::vector<double> posterior_brute_force(const Belief& belief,
                                          const ConsistencyScore& scores,
                                          double grid_step) {
  belief.validate();
  check_scores(scores, belief.prior.size());
  const int n = static_cast<int>(belief.prior.size());
  if (n > 4)
    throw std::invalid_argument("posterior_brute_force: N must be <= 4 (grid search)");
  if (!(grid_step > 0.0 && grid_step <= 0.1))
    throw std::invalid_argument("posterior_brute_force: grid_step must be in (0, 0.1]");
  const int resolution = static_cast<int>(std::lround(1.0 / grid_step));

  const auto objective = [&](const std::vector<double>& w) -> double {
    double val = 0.0;
    for (int i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      if (belief.prior[i] == 0.0) return std::numeric_limits<double>::infinity();
      val += w[i] * std::log(w[i] / belief.prior[i]) + belief.beta * w[i] * scores[i];
    }
    return val;
  };

  std::vector<double> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<int> ticks(n, 0);
  // Enumerate all compositions of `resolution` into n parts.
  const std::function<void(int, int)> enumerate = [&](int dim, int remaining) {
    if (dim == n - 1) {
      ticks[dim] = remaining;
      std::vector<double> w(n);
      for (int i = 0; i < n; ++i) w[i] = static_cast<double>(ticks[i]) / resolution;
      const double val = objective(w);
      if (val < best_val) {
        best_val = val;
        best = w;
      }
      return;
    }
    for (int k = 0; k <= remaining; ++k) {
      ticks[dim] = k;
      enumerate(dim + 1, remaining - k);
    }
  };
  enumerate(0, resolution);
  return best;
}

int sample_model(const Belief& belief, Rng& rng) {
  return static_cast<int>(rng.categorical(belief.posterior));
}

int sample_model(const Belief& belief, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return sample_model(belief, rng);
}

std::vector<double> posterior_predictive(const Belief& belief,
                                         const ModelEnsemble& ensemble, int state,
                                         int action) {
  belief.validate();
  ensemble.validate();
  if (ensemble.kind != ModelEnsemble::Kind::categorical)
    throw std::logic_error(
        "posterior_predictive: unsupported for continuous models; sample instead");
  if (static_cast<int>(belief.posterior.size()) != ensemble.size())
    throw std::invalid_argument("posterior_predictive: belief/ensemble size mismatch");
  const int n_states = ensemble.cat(0).n_states;
  std::vector<double> mix(n_states, 0.0);
  std::vector<double> row(n_states);
  for (int i = 0; i < ensemble.size(); ++i) {
    const double w = belief.posterior[i];
    if (w == 0.0) continue;
    ensemble.cat(i).next_dist(state, action, row);
    for (int s2 = 0; s2 < n_states; ++s2) mix[s2] += w * row[s2];
  }
  return mix;
}

double uncertainty_metric(const ModelEnsemble& ensemble, const Belief& belief,
                          std::span<const double> state, int action,
                          int n_model_samples, std::uint64_t seed,
                          const FeatureMap* features) {
  belief.validate();
  ensemble.validate();
  if (static_cast<int>(belief.posterior.size()) != ensemble.size())
    throw std::invalid_argument("uncertainty_metric: belief/ensemble size mismatch");
  if (n_model_samples == 1 || n_model_samples < 0)
    throw std::invalid_argument(
        "uncertainty_metric: n_model_samples must be >= 2, or 0 for exhaustive");
  const bool tabular = ensemble.kind == ModelEnsemble::Kind::categorical;
  if (!tabular && features == nullptr)
    throw std::invalid_argument("uncertainty_metric: gaussian ensemble needs features");
  const int dims = tabular ? 1 : ensemble.gauss(0).state_dim;

  std::vector<double> phi;
  if (!tabular) {
    phi.resize(features->dim());
    features->eval(state, phi);
  }
  const auto member_mean = [&](int member, std::vector<double>& out) {
    if (tabular) {
      out[0] = ensemble.cat(member).next_state_mean(tabular_state(state), action);
    } else {
      const Eigen::VectorXd mean = ensemble.gauss(member).predict_mean(phi, action);
      for (int d = 0; d < dims; ++d) out[d] = mean(d);
    }
  };

  // (member index, weight) pairs: the whole posterior in exhaustive mode, or
  // equal weights over sampled members.
  std::vector<std::pair<int, double>> support;
  if (n_model_samples == 0) {
    for (int i = 0; i < ensemble.size(); ++i)
      if (belief.posterior[i] > 0.0) support.emplace_back(i, belief.posterior[i]);
  } else {
    Rng rng(seed);
    const double w = 1.0 / n_model_samples;
    for (int k = 0; k < n_model_samples; ++k)
      support.emplace_back(sample_model(belief, rng), w);
  }

  std::vector<double> mean_acc(dims, 0.0), m2_acc(dims, 0.0), buf(dims);
  std::vector<std::vector<double>> means(support.size(), std::vector<double>(dims));
  for (std::size_t k = 0; k < support.size(); ++k) {
    member_mean(support[k].first, means[k]);
    for (int d = 0; d < dims; ++d) mean_acc[d] += support[k].second * means[k][d];
  }
  for (std::size_t k = 0; k < support.size(); ++k)
    for (int d = 0; d < dims; ++d) {
      const double c = means[k][d] - mean_acc[d];
      m2_acc[d] += support[k].second * c * c;
    }
  double avg_std = 0.0;
  for (int d = 0; d < dims; ++d) avg_std += std::sqrt(std::max(0.0, m2_acc[d]));
  avg_std /= dims;
  return std::log(std::max(avg_std, 1e-12));
}

}  // namespace pspo
