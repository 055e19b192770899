#include "pspo/mdp_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pspo {

namespace {

constexpr double kResidualTol = 1e-10;

// Shared linear solve: Q = r_vec + gamma * T * Pi * Q in the flattened (s,a)
// index. r_vec lets regularized evaluation substitute a modified reward.
TabularQ solve_q(const TabularMdp& mdp, const TabularPolicy& pi,
                 const Eigen::VectorXd& r_vec) {
  const int n = mdp.n_states * mdp.n_actions;
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const int row = s * mdp.n_actions + a;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const double t = mdp.t(s, a, s2);
        if (t == 0.0) continue;
        for (int a2 = 0; a2 < mdp.n_actions; ++a2)
          m(row, s2 * mdp.n_actions + a2) -= mdp.gamma * t * pi.p(s2, a2);
      }
    }
  }
  Eigen::VectorXd q = m.partialPivLu().solve(r_vec);
  const double residual = (m * q - r_vec).lpNorm<Eigen::Infinity>();
  if (!(residual < kResidualTol))
    throw std::runtime_error("exact_policy_eval: solve residual " +
                             std::to_string(residual) + " exceeds 1e-10");
  TabularQ out = TabularQ::zeros(mdp.n_states, mdp.n_actions);
  for (int i = 0; i < n; ++i) out.values[i] = q(i);
  return out;
}

void check_compatible(const TabularMdp& mdp, const TabularPolicy& pi) {
  mdp.validate();
  pi.validate();
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw std::invalid_argument("policy shape does not match MDP");
}

}  // namespace

TabularQ exact_policy_eval(const TabularMdp& mdp, const TabularPolicy& pi) {
  check_compatible(mdp, pi);
  Eigen::VectorXd r(mdp.n_states * mdp.n_actions);
  for (int i = 0; i < r.size(); ++i) r(i) = mdp.reward[i];
  return solve_q(mdp, pi, r);
}

double expected_return(const TabularMdp& mdp, const TabularPolicy& pi) {
  TabularQ q = exact_policy_eval(mdp, pi);
  double j = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.rho0[s] == 0.0) continue;
    double v = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) v += pi.p(s, a) * q.q(s, a);
    j += mdp.rho0[s] * v;
  }
  return j;
}

double regularized_return(const TabularMdp& mdp, const TabularPolicy& pi,
                          const TabularPolicy& mu, double alpha) {
  check_compatible(mdp, pi);
  mu.validate();
  if (mu.n_states != mdp.n_states || mu.n_actions != mdp.n_actions)
    throw std::invalid_argument("reference policy shape does not match MDP");
  if (alpha < 0.0 || !std::isfinite(alpha))
    throw std::invalid_argument("regularized_return: alpha must be finite and >= 0");

  // The KL penalty is a per-state cost, so fold it into the reward of every
  // action at that state: r'(s,a) = r(s,a) - alpha * KL(pi(.|s) || mu(.|s)).
  // Evaluating pi against r' gives exactly J - alpha * E[sum gamma^t KL].
  Eigen::VectorXd r(mdp.n_states * mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double kl = kl_row(pi.row(s), mu.row(s));
    for (int a = 0; a < mdp.n_actions; ++a)
      r(s * mdp.n_actions + a) = mdp.r(s, a) - alpha * kl;
  }
  TabularQ q = solve_q(mdp, pi, r);
  double j = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.rho0[s] == 0.0) continue;
    double v = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) v += pi.p(s, a) * q.q(s, a);
    j += mdp.rho0[s] * v;
  }
  return j;
}

double soft_value_row(std::span<const double> q_row, std::span<const double> mu_row,
                      double alpha) {
  if (q_row.size() != mu_row.size())
    throw std::invalid_argument("soft_value_row: size mismatch");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("soft_value_row: alpha must be positive and finite");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < q_row.size(); ++a)
    if (mu_row[a] > 0.0) m = std::max(m, q_row[a]);
  if (!std::isfinite(m))
    throw std::invalid_argument("soft_value_row: reference distribution has empty support");
  double acc = 0.0;
  for (std::size_t a = 0; a < q_row.size(); ++a)
    if (mu_row[a] > 0.0) acc += mu_row[a] * std::exp((q_row[a] - m) / alpha);
  return m + alpha * std::log(acc);
}

double hard_max_over_support(std::span<const double> q_row,
                             std::span<const double> mu_row) {
  if (q_row.size() != mu_row.size())
    throw std::invalid_argument("hard_max_over_support: size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < q_row.size(); ++a)
    if (mu_row[a] > 0.0) m = std::max(m, q_row[a]);
  if (!std::isfinite(m))
    throw std::invalid_argument("hard_max_over_support: empty support");
  return m;
}

double kl_row(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_row: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;  // 0 * log 0 = 0 by convention
    if (q[i] == 0.0)
      throw InfiniteKlError("kl_row: left distribution puts mass outside right support");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  // Tiny negative values can appear from rounding when p ~ q; clamp to zero.
  return kl < 0.0 && kl > -1e-12 ? 0.0 : kl;
}

double soft_value(const TabularQ& q, const TabularPolicy& mu, double alpha, int state) {
  if (state < 0 || state >= q.n_states)
    throw std::invalid_argument("soft_value: state out of range");
  return soft_value_row(q.row(state), mu.row(state), alpha);
}

double kl_divergence(const TabularPolicy& p, const TabularPolicy& q, int state) {
  if (p.n_states != q.n_states || p.n_actions != q.n_actions)
    throw std::invalid_argument("kl_divergence: policy shapes differ");
  if (state < 0 || state >= p.n_states)
    throw std::invalid_argument("kl_divergence: state out of range");
  return kl_row(p.row(state), q.row(state));
}

std::vector<double> discounted_occupancy(const TabularMdp& mdp, const TabularPolicy& pi) {
  check_compatible(mdp, pi);
  const int n = mdp.n_states;
  // d = rho0 + gamma * P_pi^T d  =>  (I - gamma * P_pi^T) d = rho0
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double pa = pi.p(s, a);
      if (pa == 0.0) continue;
      for (int s2 = 0; s2 < n; ++s2) m(s2, s) -= mdp.gamma * pa * mdp.t(s, a, s2);
    }
  Eigen::VectorXd rho(n);
  for (int s = 0; s < n; ++s) rho(s) = mdp.rho0[s];
  Eigen::VectorXd d = m.partialPivLu().solve(rho);
  std::vector<double> out(n);
  for (int s = 0; s < n; ++s) out[s] = std::max(0.0, d(s));
  return out;
}

}  // namespace pspo
