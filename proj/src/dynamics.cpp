#include "pspo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pspo {

namespace {

constexpr double kLogStdLo = -6.907755278982137;  // log(1e-3)
constexpr double kLogStdHi = 2.302585092994046;   // log(10)

OfflineDataset bootstrap_resample(const OfflineDataset& dataset,
                                  std::optional<std::uint64_t> seed) {
  if (!seed) return dataset;
  Rng rng(*seed);
  OfflineDataset out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    out.push_back(dataset[rng.uniform_index(dataset.size())]);
  return out;
}

}  // namespace

void CategoricalModel::next_dist(int s, int a, std::span<double> out) const {
  double row_sum = 0.0;
  for (int s2 = 0; s2 < n_states; ++s2) row_sum += count(s, a, s2);
  const double denom = row_sum + smoothing * n_states;
  if (denom <= 0.0) {
    for (int s2 = 0; s2 < n_states; ++s2) out[s2] = 1.0 / n_states;
    return;
  }
  for (int s2 = 0; s2 < n_states; ++s2) out[s2] = (count(s, a, s2) + smoothing) / denom;
}

double CategoricalModel::prob(int s, int a, int s2) const {
  double row_sum = 0.0;
  for (int k = 0; k < n_states; ++k) row_sum += count(s, a, k);
  const double denom = row_sum + smoothing * n_states;
  if (denom <= 0.0) return 1.0 / n_states;
  return (count(s, a, s2) + smoothing) / denom;
}

double CategoricalModel::next_state_mean(int s, int a) const {
  std::vector<double> row(n_states);
  next_dist(s, a, row);
  double m = 0.0;
  for (int s2 = 0; s2 < n_states; ++s2) m += row[s2] * s2;
  return m;
}

Eigen::VectorXd GaussianModel::predict_mean(std::span<const double> features,
                                            int action) const {
  const Eigen::MatrixXd& w = w_blocks[action];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w.rows());
  for (int d = 0; d < w.rows(); ++d) {
    double v = 0.0;
    for (int k = 0; k < w.cols(); ++k) v += w(d, k) * features[k];
    out(d) = v;
  }
  return out;
}

void ModelEnsemble::validate() const {
  if (active.empty()) throw std::invalid_argument("ModelEnsemble: no active members");
  const int pool = pool_size();
  if (static_cast<int>(active.size()) > pool)
    throw std::invalid_argument("ModelEnsemble: more members than pool entries");
  for (int idx : active)
    if (idx < 0 || idx >= pool)
      throw std::invalid_argument("ModelEnsemble: active index out of pool range");
}

ModelEnsemble ModelEnsemble::of_categorical(std::vector<CategoricalModel> models) {
  ModelEnsemble e;
  e.kind = Kind::categorical;
  e.cat_pool = std::move(models);
  e.active.resize(e.cat_pool.size());
  std::iota(e.active.begin(), e.active.end(), 0);
  e.validate();
  return e;
}

ModelEnsemble ModelEnsemble::of_gaussian(std::vector<GaussianModel> models) {
  ModelEnsemble e;
  e.kind = Kind::gaussian;
  e.gauss_pool = std::move(models);
  e.active.resize(e.gauss_pool.size());
  std::iota(e.active.begin(), e.active.end(), 0);
  e.validate();
  return e;
}

CategoricalModel fit_categorical(const OfflineDataset& dataset, int n_states,
                                 int n_actions, double smoothing,
                                 std::optional<std::uint64_t> bootstrap_seed) {
  if (dataset.empty()) throw std::invalid_argument("fit_categorical: dataset empty");
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("fit_categorical: sizes must be positive");
  if (smoothing < 0.0) throw std::invalid_argument("fit_categorical: smoothing < 0");
  OfflineDataset data = bootstrap_resample(dataset, bootstrap_seed);

  CategoricalModel m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.smoothing = smoothing;
  m.counts.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  m.reward_estimate.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
  std::vector<double> visits(static_cast<std::size_t>(n_states) * n_actions, 0.0);

  for (const TransitionRecord& rec : data) {
    const int s = tabular_state(rec.state);
    const int s2 = tabular_state(rec.next_state);
    if (s >= n_states || s2 >= n_states || rec.action < 0 || rec.action >= n_actions)
      throw std::invalid_argument("fit_categorical: record index out of range");
    m.counts[(static_cast<std::size_t>(s) * n_actions + rec.action) * n_states + s2] += 1.0;
    const std::size_t sa = static_cast<std::size_t>(s) * n_actions + rec.action;
    visits[sa] += 1.0;
    m.reward_estimate[sa] += rec.reward;
  }
  for (std::size_t sa = 0; sa < visits.size(); ++sa)
    if (visits[sa] > 0.0) m.reward_estimate[sa] /= visits[sa];
  return m;
}

GaussianModel fit_gaussian(const OfflineDataset& dataset, const FeatureMap& features,
                           int n_actions, int epochs, double learning_rate,
                           std::optional<std::uint64_t> bootstrap_seed,
                           std::uint64_t init_seed) {
  if (dataset.empty()) throw std::invalid_argument("fit_gaussian: dataset empty");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("fit_gaussian: learning_rate must be > 0");
  if (n_actions <= 0 || epochs < 0)
    throw std::invalid_argument("fit_gaussian: bad n_actions or epochs");
  OfflineDataset data = bootstrap_resample(dataset, bootstrap_seed);

  const int fdim = features.dim();
  const int sdim = 3;
  const int odim = sdim + 1;
  const std::size_t n = data.size();

  // Targets span O(100) (time, inventory, reward) while the features are O(1),
  // so gradient descent on raw targets is badly conditioned: the weights would
  // have to grow to ~100 while sigma saturates its upper clamp, which in turn
  // kills the weight gradients. Whiten each target dim, fit in whitened space,
  // and fold the affine map back into the stored weights at the end.
  const int pdim = fdim - 1;  // non-bias features
  Eigen::VectorXd y_mean = Eigen::VectorXd::Zero(odim);
  Eigen::VectorXd y_sq = Eigen::VectorXd::Zero(odim);
  std::vector<Eigen::VectorXd> x_mean(n_actions, Eigen::VectorXd::Zero(pdim));
  std::vector<Eigen::MatrixXd> x_outer(n_actions, Eigen::MatrixXd::Zero(pdim, pdim));
  std::vector<double> n_act(n_actions, 0.0);
  std::vector<double> phi(fdim);
  for (const TransitionRecord& rec : data) {
    if (rec.action < 0 || rec.action >= n_actions)
      throw std::invalid_argument("fit_gaussian: record action out of range");
    if (rec.state.size() != 3 || rec.next_state.size() != 3)
      throw std::invalid_argument("fit_gaussian: records must carry 3-dim states");
    for (int d = 0; d < sdim; ++d) {
      y_mean(d) += rec.next_state[d];
      y_sq(d) += rec.next_state[d] * rec.next_state[d];
    }
    y_mean(sdim) += rec.reward;
    y_sq(sdim) += rec.reward * rec.reward;
    features.eval(rec.state, phi);
    Eigen::Map<const Eigen::VectorXd> p(phi.data() + 1, pdim);
    x_mean[rec.action] += p;
    x_outer[rec.action].selfadjointView<Eigen::Lower>().rankUpdate(p);
    n_act[rec.action] += 1.0;
  }
  y_mean /= static_cast<double>(n);
  Eigen::VectorXd y_scale(odim);
  for (int d = 0; d < odim; ++d) {
    const double var = std::max(0.0, y_sq(d) / static_cast<double>(n) - y_mean(d) * y_mean(d));
    y_scale(d) = std::sqrt(var);
    if (!(y_scale(d) > 1e-8)) y_scale(d) = 1.0;  // constant dim: center only
  }
  // ZCA-whiten the non-bias features per action block (feature 0 stays the
  // constant 1 so each block keeps a free intercept). The RBF block is
  // strongly correlated and each action sees a differently skewed slice of
  // states, so the per-block Gram matrices are badly conditioned for
  // first-order steps. Whitening each block against its own covariance makes
  // every Gram near-isotropic; it is plain data preprocessing, folded back out
  // of the weights afterwards. Directions with negligible within-block
  // variance are projected out, which also zeroes extrapolation along feature
  // directions the block's data never exercised.
  std::vector<Eigen::MatrixXd> whiten(n_actions);
  for (int a = 0; a < n_actions; ++a) {
    if (n_act[a] < 1.0) {
      x_mean[a].setZero();
      whiten[a] = Eigen::MatrixXd::Zero(pdim, pdim);  // bias-only fallback
      continue;
    }
    x_mean[a] /= n_act[a];
    Eigen::MatrixXd cov = x_outer[a].selfadjointView<Eigen::Lower>();
    cov = cov / n_act[a] - x_mean[a] * x_mean[a].transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success)
      throw std::runtime_error("fit_gaussian: feature covariance eigensolve failed");
    const double lam_max = eig.eigenvalues().maxCoeff();
    Eigen::VectorXd inv_sqrt = Eigen::VectorXd::Zero(pdim);
    for (int k = 0; k < pdim; ++k) {
      const double lam = eig.eigenvalues()(k);
      if (lam_max > 0.0 && lam > 1e-9 * lam_max) inv_sqrt(k) = 1.0 / std::sqrt(lam);
    }
    whiten[a] = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  }

  // Per-action sufficient statistics over whitened features/targets;
  // afterwards every NLL/gradient evaluation is independent of n.
  std::vector<Eigen::MatrixXd> sxx(n_actions, Eigen::MatrixXd::Zero(fdim, fdim));
  std::vector<Eigen::MatrixXd> sxy(n_actions, Eigen::MatrixXd::Zero(fdim, odim));
  std::vector<Eigen::VectorXd> syy(n_actions, Eigen::VectorXd::Zero(odim));
  Eigen::VectorXd y(odim);
  Eigen::VectorXd x(fdim);
  for (const TransitionRecord& rec : data) {
    features.eval(rec.state, phi);
    Eigen::Map<const Eigen::VectorXd> p(phi.data() + 1, pdim);
    x(0) = 1.0;
    x.tail(pdim).noalias() = whiten[rec.action] * (p - x_mean[rec.action]);
    for (int d = 0; d < sdim; ++d) y(d) = (rec.next_state[d] - y_mean(d)) / y_scale(d);
    y(sdim) = (rec.reward - y_mean(sdim)) / y_scale(sdim);
    sxx[rec.action].selfadjointView<Eigen::Lower>().rankUpdate(x);
    sxy[rec.action] += x * y.transpose();
    for (int d = 0; d < odim; ++d) syy[rec.action](d) += y(d) * y(d);
  }
  for (int a = 0; a < n_actions; ++a) {
    Eigen::MatrixXd full = sxx[a].selfadjointView<Eigen::Lower>();
    sxx[a] = std::move(full);
  }

  GaussianModel m;
  m.feature_map_id = features.id();
  m.state_dim = sdim;
  m.state_lo = {0.0, 0.0, 0.0};
  m.state_hi = {static_cast<double>(features.horizon()), features.inventory_cap(),
                features.rate_cap()};
  Rng init_rng(init_seed);
  m.w_blocks.assign(n_actions, Eigen::MatrixXd::Zero(odim, fdim));
  for (int a = 0; a < n_actions; ++a)
    for (int d = 0; d < odim; ++d)
      for (int k = 0; k < fdim; ++k) m.w_blocks[a](d, k) = 0.01 * init_rng.normal();
  // The sigma clamp is a raw-unit contract; translate it into whitened space
  // so the folded model lands inside it exactly.
  Eigen::VectorXd ls_lo(odim), ls_hi(odim);
  for (int d = 0; d < odim; ++d) {
    ls_lo(d) = kLogStdLo - std::log(y_scale(d));
    ls_hi(d) = kLogStdHi - std::log(y_scale(d));
  }
  m.log_std = Eigen::VectorXd::Zero(odim);
  for (int d = 0; d < odim; ++d) m.log_std(d) = std::clamp(0.0, ls_lo(d), ls_hi(d));

  // Mean NLL over records (includes the 0.5*log(2*pi) constant per dim).
  auto nll_of = [&](const std::vector<Eigen::MatrixXd>& w, const Eigen::VectorXd& ls,
                    Eigen::VectorXd* sse_out) -> double {
    Eigen::VectorXd sse = Eigen::VectorXd::Zero(odim);
    for (int a = 0; a < n_actions; ++a) {
      for (int d = 0; d < odim; ++d) {
        const Eigen::VectorXd wd = w[a].row(d).transpose();
        sse(d) += wd.dot(sxx[a] * wd) - 2.0 * wd.dot(sxy[a].col(d)) + syy[a](d);
      }
    }
    double total = 0.0;
    for (int d = 0; d < odim; ++d) {
      const double var = std::exp(2.0 * ls(d));
      total += ls(d) + sse(d) / (2.0 * var * n) + 0.5 * std::log(2.0 * 3.14159265358979323846);
    }
    if (sse_out) *sse_out = sse;
    return total;
  };

  // Report NLLs in raw units: raw density = whitened density / prod(y_scale).
  const double log_scale_sum = y_scale.array().log().sum();
  Eigen::VectorXd sse(odim);
  double nll = nll_of(m.w_blocks, m.log_std, &sse);
  if (!std::isfinite(nll)) throw FitDivergenceError(0);
  m.initial_nll = nll + log_scale_sum;

  // First-order steps with per-coordinate adaptive scaling (Adam moments):
  // the NLL is a sum of independent per-dim problems whose curvatures differ
  // by the block counts and by 1/sigma^2, so a single shared step size cannot
  // serve them all. A backtracking safeguard keeps the training NLL exactly
  // non-increasing.
  std::vector<Eigen::MatrixXd> mw(n_actions, Eigen::MatrixXd::Zero(odim, fdim));
  std::vector<Eigen::MatrixXd> vw(n_actions, Eigen::MatrixXd::Zero(odim, fdim));
  Eigen::VectorXd mls = Eigen::VectorXd::Zero(odim);
  Eigen::VectorXd vls = Eigen::VectorXd::Zero(odim);
  const double b1 = 0.9, b2 = 0.999, eps_adam = 1e-8;
  double trial = learning_rate;
  const double trial_cap = std::max(learning_rate, 10.0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Gradients of the mean NLL at the current point.
    std::vector<Eigen::MatrixXd> gw(n_actions, Eigen::MatrixXd::Zero(odim, fdim));
    Eigen::VectorXd gls(odim);
    for (int d = 0; d < odim; ++d) {
      const double inv_var = std::exp(-2.0 * m.log_std(d));
      for (int a = 0; a < n_actions; ++a) {
        const Eigen::VectorXd wd = m.w_blocks[a].row(d).transpose();
        gw[a].row(d) = (inv_var / n) * (sxx[a] * wd - sxy[a].col(d)).transpose();
      }
      gls(d) = 1.0 - sse(d) * inv_var / n;
    }
    bool grads_finite = gls.allFinite();
    for (int a = 0; a < n_actions && grads_finite; ++a)
      grads_finite = gw[a].allFinite();
    if (!grads_finite) throw FitDivergenceError(epoch);

    const double corr1 = 1.0 - std::pow(b1, epoch + 1);
    const double corr2 = 1.0 - std::pow(b2, epoch + 1);
    std::vector<Eigen::MatrixXd> dw(n_actions);
    for (int a = 0; a < n_actions; ++a) {
      mw[a] = b1 * mw[a] + (1.0 - b1) * gw[a];
      vw[a] = b2 * vw[a] + (1.0 - b2) * gw[a].cwiseProduct(gw[a]);
      dw[a] = (mw[a] / corr1).cwiseQuotient(
          (vw[a] / corr2).cwiseSqrt().array().matrix() +
          Eigen::MatrixXd::Constant(odim, fdim, eps_adam));
    }
    mls = b1 * mls + (1.0 - b1) * gls;
    vls = b2 * vls + (1.0 - b2) * gls.cwiseProduct(gls);
    const Eigen::VectorXd dls =
        (mls / corr1).cwiseQuotient((vls / corr2).cwiseSqrt().array().matrix() +
                                    Eigen::VectorXd::Constant(odim, eps_adam));

    // Backtracking: halve the step until the NLL stops increasing. A fully
    // rejected step is skipped (the momentum direction can be transiently
    // non-descending); the moments realign on later epochs.
    double step = trial;
    for (int halvings = 0; halvings < 60; ++halvings) {
      std::vector<Eigen::MatrixXd> w_try = m.w_blocks;
      for (int a = 0; a < n_actions; ++a) w_try[a] -= step * dw[a];
      Eigen::VectorXd ls_try = m.log_std - step * dls;
      for (int d = 0; d < odim; ++d)
        ls_try(d) = std::clamp(ls_try(d), ls_lo(d), ls_hi(d));
      Eigen::VectorXd sse_try(odim);
      const double nll_try = nll_of(w_try, ls_try, &sse_try);
      if (std::isfinite(nll_try) && nll_try <= nll) {
        m.w_blocks = std::move(w_try);
        m.log_std = ls_try;
        sse = sse_try;
        nll = nll_try;
        // Reward a clean first-try acceptance with a larger next trial step.
        trial = halvings == 0 ? std::min(step * 2.0, trial_cap) : step;
        break;
      }
      step *= 0.5;
    }
  }
  m.final_nll = nll + log_scale_sum;

  // Fold the whitening back into raw-unit parameters. Feature 0 is the
  // constant 1, so both centerings land on the bias column.
  for (int a = 0; a < n_actions; ++a) {
    for (int d = 0; d < odim; ++d) {
      const Eigen::VectorXd wp = m.w_blocks[a].row(d).tail(pdim).transpose();
      const Eigen::VectorXd raw = whiten[a].transpose() * wp;
      m.w_blocks[a](d, 0) =
          y_mean(d) + y_scale(d) * (m.w_blocks[a](d, 0) - raw.dot(x_mean[a]));
      m.w_blocks[a].row(d).tail(pdim) = (y_scale(d) * raw).transpose();
    }
  }
  for (int d = 0; d < odim; ++d) m.log_std(d) += std::log(y_scale(d));
  return m;
}

std::pair<std::vector<double>, double> sample_next(const CategoricalModel& model,
                                                   std::span<const double> state,
                                                   int action, Rng& rng) {
  const int s = tabular_state(state);
  std::vector<double> row(model.n_states);
  model.next_dist(s, action, row);
  const int s2 = static_cast<int>(rng.categorical(row));
  return {{static_cast<double>(s2)}, model.r_hat(s, action)};
}

std::pair<std::vector<double>, double> sample_next(const GaussianModel& model,
                                                   const FeatureMap& features,
                                                   std::span<const double> state,
                                                   int action, Rng& rng) {
  std::vector<double> phi(features.dim());
  features.eval(state, phi);
  const Eigen::VectorXd mean = model.predict_mean(phi, action);
  std::vector<double> next(model.state_dim);
  for (int d = 0; d < model.state_dim; ++d) {
    const double draw = mean(d) + std::exp(model.log_std(d)) * rng.normal();
    next[d] = std::clamp(draw, model.state_lo[d], model.state_hi[d]);
  }
  const double reward =
      mean(model.state_dim) + std::exp(model.log_std(model.state_dim)) * rng.normal();
  return {next, reward};
}

OfflineDataset generate_synthetic(
    const ModelEnsemble& ensemble, std::span<const double> posterior,
    const std::function<std::vector<double>(const std::vector<double>&)>& action_probs,
    const std::vector<std::vector<double>>& start_states, int horizon,
    std::uint64_t rng_seed, const FeatureMap* features,
    const std::function<bool(const std::vector<double>&)>& is_terminal,
    RolloutTrace* trace) {
  ensemble.validate();
  if (horizon < 1) throw std::invalid_argument("generate_synthetic: horizon must be >= 1");
  if (posterior.size() != static_cast<std::size_t>(ensemble.size()))
    throw std::invalid_argument("generate_synthetic: posterior size mismatch");
  if (ensemble.kind == ModelEnsemble::Kind::gaussian && features == nullptr)
    throw std::invalid_argument("generate_synthetic: gaussian ensemble needs features");

  OfflineDataset out;
  out.reserve(start_states.size() * static_cast<std::size_t>(horizon));
  if (trace) {
    trace->model_per_rollout.clear();
    trace->member_calls.assign(ensemble.size(), 0);
  }
  for (std::size_t i = 0; i < start_states.size(); ++i) {
    Rng rng(rng_seed + i);
    const int member = static_cast<int>(rng.categorical(posterior));
    if (trace) trace->model_per_rollout.push_back(member);
    std::vector<double> state = start_states[i];
    for (int h = 0; h < horizon; ++h) {
      const std::vector<double> probs = action_probs(state);
      const int action = static_cast<int>(rng.categorical(probs));
      std::pair<std::vector<double>, double> step =
          ensemble.kind == ModelEnsemble::Kind::categorical
              ? sample_next(ensemble.cat(member), state, action, rng)
              : sample_next(ensemble.gauss(member), *features, state, action, rng);
      if (trace) ++trace->member_calls[member];
      TransitionRecord rec;
      rec.state = state;
      rec.action = action;
      rec.reward = step.second;
      rec.next_state = step.first;
      rec.provenance = Provenance::synthetic;
      rec.done = is_terminal && is_terminal(step.first);
      out.push_back(rec);
      if (rec.done) break;
      state = std::move(step.first);
    }
  }
  return out;
}

}  // namespace pspo
