#pragma once

#include <span>
#include <stdexcept>

#include "pspo/tabular.hpp"

namespace pspo {

// Thrown when a KL divergence is +infinity: some action has positive mass
// under the left distribution and zero mass under the right one.
struct InfiniteKlError : std::domain_error {
  using std::domain_error::domain_error;
};

// Exact Q^pi: solves the (S*A)-dimensional linear system
//   Q(s,a) = r(s,a) + gamma * sum_{s'} T(s'|s,a) * sum_{a'} pi(a'|s') Q(s',a')
// by LU factorization. Guarantees max-norm residual below 1e-10 (throws
// std::runtime_error otherwise, which would indicate a numerically degenerate
// kernel rather than an expected failure mode).
TabularQ exact_policy_eval(const TabularMdp& mdp, const TabularPolicy& pi);

// J(pi) = E_{s ~ rho0, a ~ pi}[Q^pi(s,a)], computed from the exact solve.
double expected_return(const TabularMdp& mdp, const TabularPolicy& pi);

// KL-regularized return:
//   J_reg(pi) = J(pi) - alpha * E[ sum_t gamma^t KL(pi(.|s_t) || mu(.|s_t)) ]
// evaluated exactly via a state-space linear solve. alpha must be >= 0.
// Throws InfiniteKlError if pi puts mass where mu has none in a state that is
// reachable in the discounted occupancy sense (the KL term is computed for all
// states, so any support violation throws).
double regularized_return(const TabularMdp& mdp, const TabularPolicy& pi,
                          const TabularPolicy& mu, double alpha);

// Soft value of one state's Q row under reference distribution mu:
//   V = alpha * log sum_a mu(a) exp(q(a) / alpha),   alpha > 0,
// computed with max-subtraction over the support of mu so large values never
// overflow. Throws std::invalid_argument if alpha <= 0 or mu has empty support.
double soft_value_row(std::span<const double> q_row, std::span<const double> mu_row,
                      double alpha);

// Limit of soft_value_row as alpha -> 0: max of q over the support of mu.
double hard_max_over_support(std::span<const double> q_row,
                             std::span<const double> mu_row);

// Soft value for alpha > 0, hard max over support at alpha = 0 (the
// no-regularization limit). Negative alpha is rejected by the callees.
inline double generalized_soft_value(std::span<const double> q_row,
                                     std::span<const double> mu_row, double alpha) {
  return alpha > 0.0 ? soft_value_row(q_row, mu_row, alpha)
                     : hard_max_over_support(q_row, mu_row);
}

// KL(p || q) for one distribution row. Terms with p = 0 contribute zero
// regardless of q; p > 0 with q = 0 throws InfiniteKlError.
double kl_row(std::span<const double> p, std::span<const double> q);

// Convenience wrappers over the row helpers for tabular objects.
double soft_value(const TabularQ& q, const TabularPolicy& mu, double alpha, int state);
double kl_divergence(const TabularPolicy& p, const TabularPolicy& q, int state);

// Unnormalized discounted state occupancy of pi from rho0:
//   d(s) = sum_t gamma^t P(s_t = s), so sum_s d(s) = 1 / (1 - gamma).
std::vector<double> discounted_occupancy(const TabularMdp& mdp, const TabularPolicy& pi);

}  // namespace pspo
