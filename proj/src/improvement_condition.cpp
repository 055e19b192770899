#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "pspo/mdp_core.hpp"
#include "pspo/pspo.hpp"

namespace pspo {

namespace {

// Softmax re-normalization of one state's logits.
void softmax_row(const Eigen::VectorXd& logits, std::span<double> out) {
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (int a = 0; a < logits.size(); ++a) {
    out[a] = std::exp(logits[a] - mx);
    z += out[a];
  }
  for (int a = 0; a < logits.size(); ++a) out[a] /= z;
}

}  // namespace

PolicyGradients fd_policy_gradients(const TabularMdp& mdp, const TabularPolicy& policy,
                                    const TabularPolicy& reference, double alpha,
                                    double fd_step) {
  mdp.validate();
  policy.validate();
  reference.validate();
  if (policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions)
    throw std::invalid_argument("fd_policy_gradients: policy shape mismatch");
  if (!(fd_step >= 1e-6 && fd_step <= 1e-3))
    throw std::invalid_argument("fd_policy_gradients: fd_step must lie in [1e-6, 1e-3]");
  for (double p : policy.probs)
    if (!(p > 0.0))
      throw std::invalid_argument("fd_policy_gradients: policy must be strictly positive");

  const int S = mdp.n_states, A = mdp.n_actions;

  Eigen::MatrixXd theta(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) theta(s, a) = std::log(policy.p(s, a));

  TabularPolicy probe = policy;
  const auto objectives_at = [&](int s, int a, double delta, double& j_out,
                                 double& jreg_out) {
    Eigen::VectorXd logits = theta.row(s);
    logits[a] += delta;
    softmax_row(logits, probe.row(s));
    j_out = expected_return(mdp, probe);
    jreg_out = regularized_return(mdp, probe, reference, alpha);
    // restore
    for (int b = 0; b < A; ++b) probe.p(s, b) = policy.p(s, b);
  };

  PolicyGradients g;
  g.grad_j.resize(static_cast<std::size_t>(S) * A);
  g.grad_c.resize(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double jp, jrp, jm, jrm;
      objectives_at(s, a, fd_step, jp, jrp);
      objectives_at(s, a, -fd_step, jm, jrm);
      const double gj = (jp - jm) / (2.0 * fd_step);
      const double gjreg = (jrp - jrm) / (2.0 * fd_step);
      g.grad_j[static_cast<std::size_t>(s) * A + a] = gj;
      // C = J - Jreg is the KL penalty term alone.
      g.grad_c[static_cast<std::size_t>(s) * A + a] = gj - gjreg;
    }
  return g;
}

ImprovementConditionResult improvement_condition_check(const TabularMdp& mdp,
                                                       const TabularPolicy& policy,
                                                       const TabularPolicy& reference,
                                                       double alpha, double fd_step) {
  const PolicyGradients g = fd_policy_gradients(mdp, policy, reference, alpha, fd_step);
  const int S = mdp.n_states, A = mdp.n_actions;
  const int dim = S * A;
  Eigen::VectorXd grad_j(dim), grad_c(dim);
  for (int i = 0; i < dim; ++i) {
    grad_j[i] = g.grad_j[i];
    grad_c[i] = g.grad_c[i];
  }

  // Block-diagonal Fisher metric of the softmax family weighted by the
  // discounted occupancy: F_s = occ(s) * (diag(pi_s) - pi_s pi_s^T).
  const std::vector<double> occ = discounted_occupancy(mdp, policy);
  ImprovementConditionResult res;
  Eigen::VectorXd fj = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd fc = Eigen::VectorXd::Zero(dim);
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd pi_s(A);
    for (int a = 0; a < A; ++a) pi_s[a] = policy.p(s, a);
    Eigen::MatrixXd block =
        occ[s] * (Eigen::MatrixXd(pi_s.asDiagonal()) - pi_s * pi_s.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double cutoff = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    double kept_min = 0.0, kept_max = 0.0;
    Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(A);
    for (int k = 0; k < A; ++k) {
      if (ev[k] > cutoff && ev[k] > 0.0) {
        inv_ev[k] = 1.0 / ev[k];
        if (kept_min == 0.0 || ev[k] < kept_min) kept_min = ev[k];
        kept_max = std::max(kept_max, ev[k]);
      }
    }
    if (kept_min > 0.0) {
      const double cond = kept_max / kept_min;
      res.max_block_condition = std::max(res.max_block_condition, cond);
      if (cond > 1e12) res.condition_warning = true;
    }
    const Eigen::MatrixXd pinv =
        eig.eigenvectors() * inv_ev.asDiagonal() * eig.eigenvectors().transpose();
    fj.segment(s * A, A) = pinv * grad_j.segment(s * A, A);
    fc.segment(s * A, A) = pinv * grad_c.segment(s * A, A);
  }

  res.lhs = grad_j.dot(fj);
  res.rhs = grad_j.dot(fc);
  res.holds = res.lhs > res.rhs;
  return res;
}

}  // namespace pspo
