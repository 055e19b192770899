#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pspo {

// Where a transition came from. Synthetic records are model rollouts and are
// tagged so downstream consumers can weight or audit them separately.
enum class Provenance { real, synthetic };

// One environment transition. `state`/`next_state` are generic feature vectors
// so the same record type serves the tabular track (single entry holding the
// state index) and the liquidation track (time, inventory, rate).
struct TransitionRecord {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
  Provenance provenance = Provenance::real;
};

using OfflineDataset = std::vector<TransitionRecord>;

// Tabular state index of a record. Tabular states are stored as a one-element
// feature vector; anything else is a caller bug.
inline int tabular_state(std::span<const double> state) {
  if (state.size() != 1)
    throw std::invalid_argument("tabular_state: expected a single-entry state vector");
  double v = state[0];
  int idx = static_cast<int>(v);
  if (static_cast<double>(idx) != v || idx < 0)
    throw std::invalid_argument("tabular_state: state entry is not a valid index");
  return idx;
}

// Finite MDP with dense transition kernel, stored row-major as
// transition[(s * n_actions + a) * n_states + s'].
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;  // reward[s * n_actions + a]
  double gamma = 0.99;
  std::vector<double> rho0;
  double r_max = 1.0;

  double t(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double& t(int s, int a, int s2) {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
  double& r(int s, int a) { return reward[static_cast<std::size_t>(s) * n_actions + a]; }

  std::span<const double> next_dist(int s, int a) const {
    return {transition.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states,
            static_cast<std::size_t>(n_states)};
  }

  // Throws std::invalid_argument on any structural violation. Called by every
  // operation that takes an MDP, so malformed inputs fail loudly at the edge.
  void validate() const;
};

// Stochastic tabular policy, probs[s * n_actions + a].
struct TabularPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;

  static TabularPolicy uniform(int n_states, int n_actions);

  double p(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
  double& p(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }

  std::span<const double> row(int s) const {
    return {probs.data() + static_cast<std::size_t>(s) * n_actions,
            static_cast<std::size_t>(n_actions)};
  }
  std::span<double> row(int s) {
    return {probs.data() + static_cast<std::size_t>(s) * n_actions,
            static_cast<std::size_t>(n_actions)};
  }

  void validate() const;
};

// Tabular state-action value table, values[s * n_actions + a].
struct TabularQ {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> values;

  static TabularQ zeros(int n_states, int n_actions) {
    TabularQ q;
    q.n_states = n_states;
    q.n_actions = n_actions;
    q.values.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    return q;
  }

  double q(int s, int a) const { return values[static_cast<std::size_t>(s) * n_actions + a]; }
  double& q(int s, int a) { return values[static_cast<std::size_t>(s) * n_actions + a]; }

  std::span<const double> row(int s) const {
    return {values.data() + static_cast<std::size_t>(s) * n_actions,
            static_cast<std::size_t>(n_actions)};
  }
};

}  // namespace pspo
