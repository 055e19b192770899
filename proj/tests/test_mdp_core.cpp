#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "pspo/checks.hpp"
#include "pspo/mdp_core.hpp"
#include "pspo/rng.hpp"
#include "pspo/tabular.hpp"

using namespace pspo;

namespace {

TabularMdp single_state_mdp(double reward, double gamma) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.transition = {1.0};
  mdp.reward = {reward};
  mdp.gamma = gamma;
  mdp.rho0 = {1.0};
  mdp.r_max = std::max(1.0, std::abs(reward));
  return mdp;
}

// Truncated power iteration: Q <- r + gamma T pi Q, repeated. Independent of
// the linear-solve path under test.
TabularQ power_iteration_q(const TabularMdp& mdp, const TabularPolicy& pi, int sweeps) {
  TabularQ q = TabularQ::zeros(mdp.n_states, mdp.n_actions);
  TabularQ next = q;
  for (int it = 0; it < sweeps; ++it) {
    for (int s = 0; s < mdp.n_states; ++s)
      for (int a = 0; a < mdp.n_actions; ++a) {
        double acc = 0.0;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          double v = 0.0;
          for (int a2 = 0; a2 < mdp.n_actions; ++a2) v += pi.p(s2, a2) * q.q(s2, a2);
          acc += mdp.t(s, a, s2) * v;
        }
        next.q(s, a) = mdp.r(s, a) + mdp.gamma * acc;
      }
    q = next;
  }
  return q;
}

double max_abs_diff(const TabularQ& a, const TabularQ& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

// One Bellman application, used to measure residuals of solved Q tables.
TabularQ one_step_backup(const TabularMdp& mdp, const TabularPolicy& pi,
                         const TabularQ& q) {
  TabularQ next = TabularQ::zeros(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        double v = 0.0;
        for (int a2 = 0; a2 < mdp.n_actions; ++a2) v += pi.p(s2, a2) * q.q(s2, a2);
        acc += mdp.t(s, a, s2) * v;
      }
      next.q(s, a) = mdp.r(s, a) + mdp.gamma * acc;
    }
  return next;
}

}  // namespace

TEST_CASE("exact eval on a one-state self-loop is the geometric series") {
  const TabularMdp mdp = single_state_mdp(1.0, 0.5);
  const TabularPolicy pi = TabularPolicy::uniform(1, 1);
  const TabularQ q = exact_policy_eval(mdp, pi);
  CHECK(q.q(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("exact eval with zero reward is identically zero") {
  Rng rng(21);
  const TabularMdp base = random_tabular_mdp(4, 3, 0.9, 1.0, rng);
  TabularMdp mdp = base;
  mdp.reward.assign(mdp.reward.size(), 0.0);
  const TabularPolicy pi = random_policy(4, 3, rng);
  const TabularQ q = exact_policy_eval(mdp, pi);
  for (double v : q.values) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("exact eval matches truncated power iteration") {
  Rng rng(7);
  const TabularMdp mdp = random_tabular_mdp(5, 3, 0.9, 1.0, rng);
  const TabularPolicy pi = random_policy(5, 3, rng);
  const TabularQ solved = exact_policy_eval(mdp, pi);
  const TabularQ iterated = power_iteration_q(mdp, pi, 10000);
  CHECK(max_abs_diff(solved, iterated) < 1e-8);
}

TEST_CASE("exact eval Bellman residual stays tiny across random instances") {
  Rng rng(123);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int s = 2 + static_cast<int>(rng.uniform_index(5));
    const int a = 1 + static_cast<int>(rng.uniform_index(4));
    const TabularMdp mdp = random_tabular_mdp(s, a, 0.3 + 0.69 * rng.uniform01(), 1.0, rng);
    const TabularPolicy pi = random_policy(s, a, rng);
    const TabularQ q = exact_policy_eval(mdp, pi);
    const TabularQ backed = one_step_backup(mdp, pi, q);
    worst = std::max(worst, max_abs_diff(backed, q));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("exact eval rejects mismatched policy dimensions") {
  Rng rng(3);
  const TabularMdp mdp = random_tabular_mdp(3, 2, 0.9, 1.0, rng);
  const TabularPolicy pi = TabularPolicy::uniform(4, 2);
  CHECK_THROWS_AS(exact_policy_eval(mdp, pi), std::invalid_argument);
}

TEST_CASE("expected return of a constant reward is c over one minus gamma") {
  Rng rng(5);
  TabularMdp mdp = random_tabular_mdp(4, 2, 0.8, 2.0, rng);
  mdp.reward.assign(mdp.reward.size(), 0.7);
  const TabularPolicy pi = random_policy(4, 2, rng);
  CHECK(expected_return(mdp, pi) == doctest::Approx(0.7 / (1.0 - 0.8)).epsilon(1e-10));
}

TEST_CASE("expected return of a forced two-state chain is the hand geometric sum") {
  // State 0 deterministically moves to state 1 (reward 0); state 1 self-loops
  // with reward 1. Start in state 0: 0 + 0.9 * 1/(1-0.9) = 9.
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.transition = {0.0, 1.0, 0.0, 1.0};
  mdp.reward = {0.0, 1.0};
  mdp.gamma = 0.9;
  mdp.rho0 = {1.0, 0.0};
  mdp.r_max = 1.0;
  const TabularPolicy pi = TabularPolicy::uniform(2, 1);
  CHECK(expected_return(mdp, pi) == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("expected return matches a long Monte-Carlo rollout average") {
  Rng rng(11);
  const TabularMdp mdp = random_tabular_mdp(4, 2, 0.9, 1.0, rng);
  const TabularPolicy pi = random_policy(4, 2, rng);
  const double exact = expected_return(mdp, pi);

  // 200k truncated episodes; horizon 200 leaves a tail below 1e-9.
  Rng sim(987654);
  const int episodes = 200000;
  const int horizon = 200;
  double sum = 0.0, sum_sq = 0.0;
  std::vector<double> row(mdp.n_states);
  for (int e = 0; e < episodes; ++e) {
    int s = static_cast<int>(sim.categorical(mdp.rho0));
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const int a = static_cast<int>(sim.categorical(pi.row(s)));
      ret += disc * mdp.r(s, a);
      disc *= mdp.gamma;
      s = static_cast<int>(sim.categorical(mdp.next_dist(s, a)));
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double mean = sum / episodes;
  const double var = sum_sq / episodes - mean * mean;
  const double se = std::sqrt(var / episodes);
  CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("regularized return equals plain return when the policy is the reference") {
  Rng rng(17);
  const TabularMdp mdp = random_tabular_mdp(3, 3, 0.85, 1.0, rng);
  const TabularPolicy pi = random_policy(3, 3, rng);
  CHECK(regularized_return(mdp, pi, pi, 1.3) ==
        doctest::Approx(expected_return(mdp, pi)).epsilon(1e-12));
}

TEST_CASE("regularized return with alpha zero equals the plain return") {
  Rng rng(19);
  const TabularMdp mdp = random_tabular_mdp(3, 2, 0.9, 1.0, rng);
  const TabularPolicy pi = random_policy(3, 2, rng);
  const TabularPolicy mu = random_policy(3, 2, rng);
  CHECK(regularized_return(mdp, pi, mu, 0.0) ==
        doctest::Approx(expected_return(mdp, pi)).epsilon(1e-12));
}

TEST_CASE("regularized return on a zero-reward self-loop is the discounted KL stream") {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 2;
  mdp.transition = {1.0, 1.0};  // both actions self-loop (single state)
  mdp.reward = {0.0, 0.0};
  mdp.gamma = 0.5;
  mdp.rho0 = {1.0};
  mdp.r_max = 1.0;
  TabularPolicy pi;
  pi.n_states = 1;
  pi.n_actions = 2;
  pi.probs = {0.75, 0.25};
  TabularPolicy mu;
  mu.n_states = 1;
  mu.n_actions = 2;
  mu.probs = {0.5, 0.5};
  const double kl = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  // KL cost accrues every step: -alpha * kl / (1 - gamma) = -2 kl.
  CHECK(regularized_return(mdp, pi, mu, 1.0) ==
        doctest::Approx(-2.0 * kl).epsilon(1e-12));
}

TEST_CASE("regularized return throws when the reference lacks support") {
  TabularMdp mdp = single_state_mdp(0.0, 0.5);
  mdp.n_actions = 2;
  mdp.transition = {1.0, 1.0};
  mdp.reward = {0.0, 0.0};
  TabularPolicy pi;
  pi.n_states = 1;
  pi.n_actions = 2;
  pi.probs = {0.5, 0.5};
  TabularPolicy mu;
  mu.n_states = 1;
  mu.n_actions = 2;
  mu.probs = {1.0, 0.0};
  CHECK_THROWS_AS(regularized_return(mdp, pi, mu, 1.0), InfiniteKlError);
}

TEST_CASE("regularized return is non-increasing in alpha") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = 2 + static_cast<int>(rng.uniform_index(3));
    const int a = 2 + static_cast<int>(rng.uniform_index(2));
    const TabularMdp mdp = random_tabular_mdp(s, a, 0.9, 1.0, rng);
    const TabularPolicy pi = random_policy(s, a, rng);
    const TabularPolicy mu = random_policy(s, a, rng);
    const double j1 = regularized_return(mdp, pi, mu, 0.1);
    const double j2 = regularized_return(mdp, pi, mu, 1.0);
    const double j3 = regularized_return(mdp, pi, mu, 10.0);
    CHECK(j1 >= j2 - 1e-12);
    CHECK(j2 >= j3 - 1e-12);
    CHECK(j1 <= expected_return(mdp, pi) + 1e-12);
  }
}

TEST_CASE("soft value of a constant row is that constant") {
  const std::vector<double> q = {3.2, 3.2, 3.2};
  const std::vector<double> mu = {0.2, 0.5, 0.3};
  CHECK(soft_value_row(q, mu, 0.7) == doctest::Approx(3.2).epsilon(1e-12));
}

TEST_CASE("soft value: uniform reference over values zero and ln three gives log two") {
  const std::vector<double> q = {0.0, std::log(3.0)};
  const std::vector<double> mu = {0.5, 0.5};
  CHECK(soft_value_row(q, mu, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("soft value shifts by exactly the constant added to Q") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> q(4), q_shift(4);
    const double k = 10.0 * (rng.uniform01() - 0.5);
    for (int i = 0; i < 4; ++i) {
      q[i] = 5.0 * (rng.uniform01() - 0.5);
      q_shift[i] = q[i] + k;
    }
    std::vector<double> mu = {0.1, 0.2, 0.3, 0.4};
    const double alpha = 0.05 + 2.0 * rng.uniform01();
    CHECK(soft_value_row(q_shift, mu, alpha) ==
          doctest::Approx(soft_value_row(q, mu, alpha) + k).epsilon(1e-10));
  }
}

TEST_CASE("soft value survives extreme magnitudes via max subtraction") {
  const std::vector<double> q = {5000.0, 4999.0};
  const std::vector<double> mu = {0.5, 0.5};
  const double v = soft_value_row(q, mu, 1e-3);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(5000.0 + 1e-3 * std::log(0.5)).epsilon(1e-9));
}

TEST_CASE("soft value rejects non-positive alpha and empty support") {
  const std::vector<double> q = {1.0, 2.0};
  const std::vector<double> mu = {0.5, 0.5};
  const std::vector<double> dead = {0.0, 0.0};
  CHECK_THROWS_AS(soft_value_row(q, mu, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_value_row(q, mu, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(soft_value_row(q, dead, 1.0), std::invalid_argument);
}

TEST_CASE("soft value is a non-expansion in the max norm") {
  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<double> q1(n), q2(n), mu(n);
    double norm = 0.0, total = 0.0;
    for (int i = 0; i < n; ++i) {
      q1[i] = 10.0 * (rng.uniform01() - 0.5);
      q2[i] = 10.0 * (rng.uniform01() - 0.5);
      mu[i] = 0.05 + rng.uniform01();
      total += mu[i];
      norm = std::max(norm, std::abs(q1[i] - q2[i]));
    }
    for (double& m : mu) m /= total;
    const double alpha = 0.01 + 3.0 * rng.uniform01();
    const double gap = std::abs(soft_value_row(q1, mu, alpha) - soft_value_row(q2, mu, alpha));
    CHECK(gap <= norm + 1e-12);
  }
}

TEST_CASE("soft value approaches the supported max as alpha shrinks") {
  const std::vector<double> q = {1.0, 0.4, 2.0};
  const std::vector<double> mu = {0.6, 0.4, 0.0};  // action 2 unsupported
  const double v_small = soft_value_row(q, mu, 1e-3);
  CHECK(std::abs(v_small - 1.0) < 1e-2);
  CHECK(hard_max_over_support(q, mu) == doctest::Approx(1.0));
  // Large alpha limit: the mu-expectation of Q.
  const double v_large = soft_value_row(q, mu, 1e3);
  CHECK(std::abs(v_large - (0.6 * 1.0 + 0.4 * 0.4)) < 1e-2);
}

TEST_CASE("generalized soft value at alpha zero is the hard max over support") {
  const std::vector<double> q = {1.0, 5.0};
  const std::vector<double> mu = {1.0, 0.0};
  CHECK(generalized_soft_value(q, mu, 0.0) == doctest::Approx(1.0));
  CHECK(generalized_soft_value(q, mu, 1.0) == doctest::Approx(soft_value_row(q, mu, 1.0)));
}

TEST_CASE("kl of identical rows is zero") {
  const std::vector<double> p = {0.3, 0.7};
  CHECK(kl_row(p, p) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kl of a point mass against uniform is log two") {
  const std::vector<double> p = {1.0, 0.0};
  const std::vector<double> q = {0.5, 0.5};
  CHECK(kl_row(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl throws on support violation") {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<double> q = {1.0, 0.0};
  CHECK_THROWS_AS(kl_row(p, q), InfiniteKlError);
}

TEST_CASE("kl is non-negative on random rows") {
  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<double> p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      p[i] = 0.01 + rng.uniform01();
      q[i] = 0.01 + rng.uniform01();
      sp += p[i];
      sq += q[i];
    }
    for (int i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    CHECK(kl_row(p, q) >= -1e-15);
  }
}

TEST_CASE("discounted occupancy sums to one over one minus gamma") {
  Rng rng(61);
  const TabularMdp mdp = random_tabular_mdp(5, 3, 0.92, 1.0, rng);
  const TabularPolicy pi = random_policy(5, 3, rng);
  const std::vector<double> occ = discounted_occupancy(mdp, pi);
  double total = 0.0;
  for (double d : occ) {
    CHECK(d >= 0.0);
    total += d;
  }
  CHECK(total == doctest::Approx(1.0 / (1.0 - 0.92)).epsilon(1e-10));
}

TEST_CASE("mdp validation rejects structural violations") {
  Rng rng(71);
  TabularMdp good = random_tabular_mdp(3, 2, 0.9, 1.0, rng);
  CHECK_NOTHROW(good.validate());

  TabularMdp bad_row = good;
  bad_row.transition[0] += 0.5;  // row no longer sums to 1
  CHECK_THROWS_AS(bad_row.validate(), std::invalid_argument);

  TabularMdp bad_rho = good;
  bad_rho.rho0[0] += 0.2;
  CHECK_THROWS_AS(bad_rho.validate(), std::invalid_argument);

  TabularMdp bad_reward = good;
  bad_reward.reward[0] = 5.0;  // exceeds r_max = 1
  CHECK_THROWS_AS(bad_reward.validate(), std::invalid_argument);

  TabularMdp bad_gamma = good;
  bad_gamma.gamma = 1.0;
  CHECK_THROWS_AS(bad_gamma.validate(), std::invalid_argument);
}

TEST_CASE("policy validation rejects rows that do not normalize") {
  TabularPolicy pi = TabularPolicy::uniform(2, 2);
  CHECK_NOTHROW(pi.validate());
  pi.probs[0] = 0.9;
  CHECK_THROWS_AS(pi.validate(), std::invalid_argument);
}

TEST_CASE("tabular state accessor accepts indices and rejects junk") {
  const std::vector<double> ok = {3.0};
  CHECK(tabular_state(ok) == 3);
  const std::vector<double> frac = {1.5};
  CHECK_THROWS_AS(tabular_state(frac), std::invalid_argument);
  const std::vector<double> neg = {-1.0};
  CHECK_THROWS_AS(tabular_state(neg), std::invalid_argument);
  const std::vector<double> wide = {1.0, 2.0};
  CHECK_THROWS_AS(tabular_state(wide), std::invalid_argument);
}
