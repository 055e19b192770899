#include "pspo/tabular.hpp"

#include <numeric>

namespace pspo {

namespace {

constexpr double kRowSumTol = 1e-9;

void check_distribution(std::span<const double> row, const std::string& what) {
  double sum = 0.0;
  for (double p : row) {
    if (!std::isfinite(p) || p < 0.0)
      throw std::invalid_argument(what + ": entries must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowSumTol)
    throw std::invalid_argument(what + ": row sums to " + std::to_string(sum) +
                                ", expected 1 within 1e-9");
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("TabularMdp: n_states and n_actions must be positive");
  std::size_t sa = static_cast<std::size_t>(n_states) * n_actions;
  if (transition.size() != sa * n_states)
    throw std::invalid_argument("TabularMdp: transition table has wrong size");
  if (reward.size() != sa)
    throw std::invalid_argument("TabularMdp: reward table has wrong size");
  if (rho0.size() != static_cast<std::size_t>(n_states))
    throw std::invalid_argument("TabularMdp: rho0 has wrong size");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("TabularMdp: gamma must lie in [0, 1)");
  if (!(r_max > 0.0) || !std::isfinite(r_max))
    throw std::invalid_argument("TabularMdp: r_max must be positive and finite");
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      check_distribution(next_dist(s, a),
                         "TabularMdp: transition row (s=" + std::to_string(s) +
                             ", a=" + std::to_string(a) + ")");
  for (double rv : reward)
    if (!std::isfinite(rv) || std::abs(rv) > r_max)
      throw std::invalid_argument("TabularMdp: reward exceeds r_max bound");
  check_distribution(rho0, "TabularMdp: rho0");
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("TabularPolicy::uniform: sizes must be positive");
  TabularPolicy pi;
  pi.n_states = n_states;
  pi.n_actions = n_actions;
  pi.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 1.0 / n_actions);
  return pi;
}

void TabularPolicy::validate() const {
  if (n_states <= 0 || n_actions <= 0)
    throw std::invalid_argument("TabularPolicy: sizes must be positive");
  if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
    throw std::invalid_argument("TabularPolicy: probability table has wrong size");
  for (int s = 0; s < n_states; ++s)
    check_distribution(row(s), "TabularPolicy: row s=" + std::to_string(s));
}

}  // namespace pspo
