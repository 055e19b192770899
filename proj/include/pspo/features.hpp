#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pspo {

// Fixed basis over liquidation states (t, inventory, rate), shared by the
// Gaussian dynamics models and the linear Q function so both live in the same
// hypothesis space. Layout (dim = 23):
//   [0]      bias
//   [1..3]   normalized coordinates t/T, m/inventory_cap, p/rate_cap
//   [4..6]   pairwise products t*m, t*p, m*p (normalized coords)
//   [7..22]  4x4 Gaussian RBF grid over (t_norm, p_norm), centers at
//            {0.125, 0.375, 0.625, 0.875}^2, width 0.25
// States outside [0,T]x[0,cap]x[0,rate_cap] are clamped into the box and a
// warning counter is bumped; instances are single-owner, so the counter is a
// plain integer.
class FeatureMap {
 public:
  FeatureMap(int horizon, double inventory_cap = 100.0, double rate_cap = 3.0)
      : horizon_(horizon), inventory_cap_(inventory_cap), rate_cap_(rate_cap) {
    if (horizon <= 0 || inventory_cap <= 0.0 || rate_cap <= 0.0)
      throw std::invalid_argument("FeatureMap: horizon and caps must be positive");
  }

  static constexpr int kRbfPerAxis = 4;
  static constexpr double kRbfWidth = 0.25;

  int dim() const { return 7 + kRbfPerAxis * kRbfPerAxis; }
  std::string id() const { return "liq-quad-rbf4x4-v1"; }
  int horizon() const { return horizon_; }
  double inventory_cap() const { return inventory_cap_; }
  double rate_cap() const { return rate_cap_; }

  void eval(std::span<const double> state, std::span<double> out) const {
    if (state.size() != 3)
      throw std::invalid_argument("FeatureMap: state must be (t, inventory, rate)");
    if (out.size() != static_cast<std::size_t>(dim()))
      throw std::invalid_argument("FeatureMap: output span has wrong size");
    const double t = clamp(state[0], 0.0, static_cast<double>(horizon_));
    const double m = clamp(state[1], 0.0, inventory_cap_);
    const double p = clamp(state[2], 0.0, rate_cap_);
    const double tn = t / horizon_;
    const double mn = m / inventory_cap_;
    const double pn = p / rate_cap_;
    out[0] = 1.0;
    out[1] = tn;
    out[2] = mn;
    out[3] = pn;
    out[4] = tn * mn;
    out[5] = tn * pn;
    out[6] = mn * pn;
    int k = 7;
    const double inv2w2 = 1.0 / (2.0 * kRbfWidth * kRbfWidth);
    for (int i = 0; i < kRbfPerAxis; ++i) {
      const double cx = (2.0 * i + 1.0) / (2.0 * kRbfPerAxis);
      for (int j = 0; j < kRbfPerAxis; ++j) {
        const double cy = (2.0 * j + 1.0) / (2.0 * kRbfPerAxis);
        const double d2 = (tn - cx) * (tn - cx) + (pn - cy) * (pn - cy);
        out[k++] = std::exp(-d2 * inv2w2);
      }
    }
  }

  std::vector<double> eval(std::span<const double> state) const {
    std::vector<double> out(dim());
    eval(state, out);
    return out;
  }

  std::uint64_t clamp_events() const { return clamp_events_; }
  void reset_clamp_events() { clamp_events_ = 0; }

 private:
  double clamp(double v, double lo, double hi) const {
    if (v < lo) {
      ++clamp_events_;
      return lo;
    }
    if (v > hi) {
      ++clamp_events_;
      return hi;
    }
    return v;
  }

  int horizon_;
  double inventory_cap_;
  double rate_cap_;
  mutable std::uint64_t clamp_events_ = 0;
};

}  // namespace pspo
