#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace pspo {

// Q function linear in a shared state feature basis, one weight row per
// discrete action: q(s, a) = weights.row(a) . phi(s).
struct LinearQ {
  Eigen::MatrixXd weights;  // n_actions x feature_dim

  static LinearQ zeros(int n_actions, int feature_dim) {
    LinearQ q;
    q.weights = Eigen::MatrixXd::Zero(n_actions, feature_dim);
    return q;
  }

  int n_actions() const { return static_cast<int>(weights.rows()); }

  double value(std::span<const double> features, int action) const {
    double v = 0.0;
    for (int k = 0; k < weights.cols(); ++k) v += weights(action, k) * features[k];
    return v;
  }

  // Q(s, .) for all actions at once.
  void row(std::span<const double> features, std::span<double> out) const {
    for (int a = 0; a < n_actions(); ++a) out[a] = value(features, a);
  }
};

// Exponential-tilt policy over a discrete action grid:
//   pi(a|s) proportional to base[a] * exp(tilt.row(a) . phi(s)).
// The family is closed under both the soft-greedy step and the trust-region
// step when Q is linear in the same basis, so policy updates stay exact.
struct TiltPolicy {
  std::vector<double> base;  // reference action distribution, state-independent
  Eigen::MatrixXd tilt;      // n_actions x feature_dim

  static TiltPolicy from_base(std::vector<double> base_probs, int feature_dim) {
    TiltPolicy pi;
    pi.base = std::move(base_probs);
    pi.tilt = Eigen::MatrixXd::Zero(static_cast<int>(pi.base.size()), feature_dim);
    return pi;
  }

  int n_actions() const { return static_cast<int>(base.size()); }

  void probs(std::span<const double> features, std::span<double> out) const {
    const int na = n_actions();
    if (out.size() != static_cast<std::size_t>(na))
      throw std::invalid_argument("TiltPolicy::probs: output span has wrong size");
    double mx = -1e300;
    for (int a = 0; a < na; ++a) {
      double logit = base[a] > 0.0 ? std::log(base[a]) : -1e300;
      for (int k = 0; k < tilt.cols(); ++k) logit += tilt(a, k) * features[k];
      out[a] = logit;
      if (logit > mx) mx = logit;
    }
    double z = 0.0;
    for (int a = 0; a < na; ++a) {
      out[a] = std::exp(out[a] - mx);
      z += out[a];
    }
    for (int a = 0; a < na; ++a) out[a] /= z;
  }

  std::vector<double> probs(std::span<const double> features) const {
    std::vector<double> out(n_actions());
    probs(features, out);
    return out;
  }
};

}  // namespace pspo
