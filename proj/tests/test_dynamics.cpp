#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pspo/checks.hpp"
#include "pspo/dynamics.hpp"
#include "pspo/features.hpp"
#include "pspo/rng.hpp"

using namespace pspo;

namespace {

TransitionRecord make_record(int s, int a, double r, int s2, bool done = false) {
  TransitionRecord rec;
  rec.state = {static_cast<double>(s)};
  rec.action = a;
  rec.reward = r;
  rec.next_state = {static_cast<double>(s2)};
  rec.done = done;
  rec.provenance = Provenance::real;
  return rec;
}

// Ground-truth linear rule in the feature basis: one scaled coefficient set
// per action, touching the bias, the linear terms, a product term, and one
// RBF coordinate so every block of the basis is exercised.
std::vector<double> true_mean(const std::vector<double>& phi, int action) {
  const double k = 1.0 + 0.5 * action;
  return {
      k * (2.0 + 10.0 * phi[1] - 3.0 * phi[2]),
      k * (50.0 * phi[2]),
      k * (1.0 + 0.5 * phi[3] + 0.3 * phi[5]),
      k * (-1.0 + 4.0 * phi[6] + 2.0 * phi[7]),
  };
}

std::vector<double> random_liq_state(Rng& rng, const FeatureMap& features) {
  return {features.horizon() * rng.uniform01(),
          features.inventory_cap() * rng.uniform01(),
          features.rate_cap() * rng.uniform01()};
}

OfflineDataset linear_gaussian_dataset(const FeatureMap& features, int n_records,
                                       double noise_std, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> phi(features.dim());
  OfflineDataset data;
  data.reserve(n_records);
  for (int i = 0; i < n_records; ++i) {
    TransitionRecord rec;
    rec.state = random_liq_state(rng, features);
    rec.action = static_cast<int>(rng.uniform_index(2));
    features.eval(rec.state, phi);
    const std::vector<double> mean = true_mean(phi, rec.action);
    rec.next_state = {mean[0] + noise_std * rng.normal(),
                      mean[1] + noise_std * rng.normal(),
                      mean[2] + noise_std * rng.normal()};
    rec.reward = mean[3] + noise_std * rng.normal();
    rec.provenance = Provenance::real;
    data.push_back(rec);
  }
  return data;
}

double l1_counts(const CategoricalModel& a, const CategoricalModel& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i)
    total += std::abs(a.counts[i] - b.counts[i]);
  return total;
}

}  // namespace

TEST_CASE("count model reproduces a single repeated transition exactly") {
  OfflineDataset data(100, make_record(0, 0, 0.7, 1));
  const CategoricalModel m = fit_categorical(data, 3, 2, 0.0, std::nullopt);
  CHECK(m.prob(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.prob(0, 0, 0) == 0.0);
  CHECK(m.prob(0, 0, 2) == 0.0);
  CHECK(m.r_hat(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(m.count(0, 0, 1) == 100.0);
}

TEST_CASE("count model turns a three-to-one split into exact frequencies") {
  OfflineDataset data;
  for (int i = 0; i < 30; ++i) data.push_back(make_record(0, 0, 1.0, 1));
  for (int i = 0; i < 10; ++i) data.push_back(make_record(0, 0, -1.0, 2));
  const CategoricalModel m = fit_categorical(data, 3, 1, 0.0, std::nullopt);
  CHECK(m.prob(0, 0, 0) == 0.0);
  CHECK(m.prob(0, 0, 1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.prob(0, 0, 2) == doctest::Approx(0.25).epsilon(1e-15));
  // reward mean over the same records: (30 - 10) / 40
  CHECK(m.r_hat(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("unvisited pairs fall back to a uniform row and zero reward") {
  OfflineDataset data(5, make_record(0, 0, 1.0, 1));
  const CategoricalModel m = fit_categorical(data, 3, 2, 0.0, std::nullopt);
  for (int s2 = 0; s2 < 3; ++s2)
    CHECK(m.prob(2, 1, s2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(m.r_hat(2, 1) == 0.0);
}

TEST_CASE("smoothing makes every transition probability strictly positive") {
  OfflineDataset data(5, make_record(0, 0, 1.0, 1));
  const CategoricalModel m = fit_categorical(data, 4, 2, 0.5, std::nullopt);
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < 4; ++s2) {
        CHECK(m.prob(s, a, s2) > 0.0);
        total += m.prob(s, a, s2);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("bootstrap resamples are seed-deterministic and seed-sensitive") {
  Rng rng(21);
  OfflineDataset data;
  for (int i = 0; i < 200; ++i)
    data.push_back(make_record(static_cast<int>(rng.uniform_index(3)),
                               static_cast<int>(rng.uniform_index(2)),
                               rng.uniform01(), static_cast<int>(rng.uniform_index(3))));
  const CategoricalModel a = fit_categorical(data, 3, 2, 0.0, 5);
  const CategoricalModel b = fit_categorical(data, 3, 2, 0.0, 5);
  const CategoricalModel c = fit_categorical(data, 3, 2, 0.0, 6);
  CHECK(l1_counts(a, b) == 0.0);
  CHECK(l1_counts(a, c) > 0.0);
}

TEST_CASE("count estimates converge to the sampling distribution") {
  // max-norm error of the fitted rows against the generator, median over
  // seeds, must shrink as the dataset grows
  const std::vector<double> truth = {0.6, 0.3, 0.1, 0.2, 0.5, 0.3,
                                     0.1, 0.1, 0.8, 0.4, 0.4, 0.2};
  const std::vector<int> sizes = {200, 2000, 20000};
  std::vector<double> medians;
  for (int n : sizes) {
    std::vector<double> errors;
    for (int seed = 0; seed < 12; ++seed) {
      Rng rng(1000 + seed);
      OfflineDataset data;
      data.reserve(n);
      for (int i = 0; i < n; ++i) {
        const int s = static_cast<int>(rng.uniform_index(3));
        const int a = static_cast<int>(rng.uniform_index(2));
        const std::vector<double> row(truth.begin() + (s * 2 + a) % 4 * 3,
                                      truth.begin() + ((s * 2 + a) % 4 * 3 + 3));
        data.push_back(make_record(s, a, 0.0, static_cast<int>(rng.categorical(row))));
      }
      const CategoricalModel m = fit_categorical(data, 3, 2, 0.0, std::nullopt);
      double err = 0.0;
      for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a)
          for (int s2 = 0; s2 < 3; ++s2)
            err = std::max(err,
                           std::abs(m.prob(s, a, s2) - truth[(s * 2 + a) % 4 * 3 + s2]));
      errors.push_back(err);
    }
    std::sort(errors.begin(), errors.end());
    medians.push_back((errors[5] + errors[6]) / 2.0);
  }
  CHECK(medians[1] < medians[0]);
  CHECK(medians[2] < medians[1]);
  CHECK(medians[2] < 0.03);
}

TEST_CASE("gaussian fit recovers a realizable linear rule") {
  const FeatureMap features(20);
  const OfflineDataset data = linear_gaussian_dataset(features, 5000, 0.01, 31);
  const GaussianModel m = fit_gaussian(data, features, 2, 400, 0.1, std::nullopt, 7);
  CHECK(m.feature_map_id == features.id());
  CHECK(m.final_nll <= m.initial_nll);

  Rng rng(32);
  std::vector<double> phi(features.dim());
  double sq = 0.0;
  int count = 0;
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> s = random_liq_state(rng, features);
    features.eval(s, phi);
    for (int a = 0; a < 2; ++a) {
      const std::vector<double> mean = true_mean(phi, a);
      const Eigen::VectorXd pred = m.predict_mean(phi, a);
      for (int d = 0; d < 4; ++d) {
        sq += (pred(d) - mean[d]) * (pred(d) - mean[d]);
        ++count;
      }
    }
  }
  CHECK(std::sqrt(sq / count) < 0.05);
}

TEST_CASE("gaussian fit clamps the noise scale on deterministic targets") {
  const FeatureMap features(20);
  Rng rng(41);
  OfflineDataset data;
  for (int i = 0; i < 500; ++i) {
    TransitionRecord rec;
    rec.state = random_liq_state(rng, features);
    rec.action = static_cast<int>(rng.uniform_index(2));
    rec.next_state = {3.0, 42.0, 1.5};
    rec.reward = 7.0;
    rec.provenance = Provenance::real;
    data.push_back(rec);
  }
  const GaussianModel m = fit_gaussian(data, features, 2, 800, 0.1, std::nullopt, 7);
  // The noise scale collapses toward the floor (approach is asymptotic, so
  // allow a small gap) and never crosses it.
  for (int d = 0; d < 4; ++d) {
    CHECK(m.log_std(d) >= std::log(1e-3) - 1e-9);
    CHECK(m.log_std(d) <= std::log(4e-3));
  }
}

TEST_CASE("gaussian fit pins the noise scale at the cap on pure-noise targets") {
  const FeatureMap features(20);
  Rng rng(43);
  OfflineDataset data;
  for (int i = 0; i < 500; ++i) {
    TransitionRecord rec;
    rec.state = random_liq_state(rng, features);
    rec.action = static_cast<int>(rng.uniform_index(2));
    rec.next_state = {50.0 * rng.normal(), 50.0 * rng.normal(), 50.0 * rng.normal()};
    rec.reward = 50.0 * rng.normal();
    rec.provenance = Provenance::real;
    data.push_back(rec);
  }
  // The unconstrained optimum sits near sigma = 50, beyond the cap of 10, so
  // the fit must land exactly on the cap in raw units.
  const GaussianModel m = fit_gaussian(data, features, 2, 200, 0.1, std::nullopt, 7);
  for (int d = 0; d < 4; ++d)
    CHECK(m.log_std(d) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("gaussian fit is bit-identical for repeated seeds") {
  const FeatureMap features(20);
  const OfflineDataset data = linear_gaussian_dataset(features, 600, 0.05, 51);
  const GaussianModel a = fit_gaussian(data, features, 2, 60, 0.1, 9, 7);
  const GaussianModel b = fit_gaussian(data, features, 2, 60, 0.1, 9, 7);
  const GaussianModel c = fit_gaussian(data, features, 2, 60, 0.1, 10, 7);
  for (int act = 0; act < 2; ++act)
    CHECK((a.w_blocks[act].array() == b.w_blocks[act].array()).all());
  CHECK((a.log_std.array() == b.log_std.array()).all());
  CHECK(a.final_nll == b.final_nll);
  bool any_diff = false;
  for (int act = 0; act < 2; ++act)
    if (!(a.w_blocks[act].array() == c.w_blocks[act].array()).all()) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("gaussian fit never increases the loss it reports") {
  const FeatureMap features(20);
  for (std::uint64_t seed : {61, 62, 63}) {
    const OfflineDataset data = linear_gaussian_dataset(features, 400, 0.2, seed);
    const GaussianModel m = fit_gaussian(data, features, 2, 40, 0.1, std::nullopt, seed);
    CHECK(m.final_nll <= m.initial_nll);
    CHECK(std::isfinite(m.final_nll));
  }
}

TEST_CASE("fit rejects empty data, bad sizes, and malformed records") {
  const FeatureMap features(20);
  OfflineDataset empty;
  CHECK_THROWS_AS(fit_categorical(empty, 2, 2, 0.0, std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_gaussian(empty, features, 2, 10, 0.1, std::nullopt, 1),
                  std::invalid_argument);
  OfflineDataset data(3, make_record(0, 0, 1.0, 1));
  CHECK_THROWS_AS(fit_categorical(data, 0, 2, 0.0, std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(fit_categorical(data, 2, 2, -0.1, std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_gaussian(data, features, 2, 10, 0.0, std::nullopt, 1),
                  std::invalid_argument);
  // 1-dim tabular states are not valid continuous records
  CHECK_THROWS_AS(fit_gaussian(data, features, 2, 10, 0.1, std::nullopt, 1),
                  std::invalid_argument);
  OfflineDataset bad_action = linear_gaussian_dataset(features, 10, 0.1, 71);
  bad_action[0].action = 5;
  CHECK_THROWS_AS(fit_gaussian(bad_action, features, 2, 10, 0.1, std::nullopt, 1),
                  std::invalid_argument);
}

TEST_CASE("sampling a deterministic count row always lands on its support") {
  OfflineDataset data(10, make_record(0, 1, 0.3, 2));
  const CategoricalModel m = fit_categorical(data, 3, 2, 0.0, std::nullopt);
  Rng rng(81);
  const std::vector<double> state = {0.0};
  for (int k = 0; k < 200; ++k) {
    auto [s2, r] = sample_next(m, state, 1, rng);
    CHECK(s2.size() == 1);
    CHECK(s2[0] == 2.0);
    CHECK(r == doctest::Approx(0.3).epsilon(1e-15));
  }
}

TEST_CASE("transition sampling replays identically under one seed") {
  Rng gen(82);
  const ModelEnsemble ens = random_categorical_ensemble(4, 2, 1, 1.0, gen);
  Rng r1(7), r2(7);
  const std::vector<double> state = {1.0};
  for (int k = 0; k < 200; ++k) {
    auto a = sample_next(ens.cat(0), state, k % 2, r1);
    auto b = sample_next(ens.cat(0), state, k % 2, r2);
    CHECK(a.first[0] == b.first[0]);
    CHECK(a.second == b.second);
  }
}

TEST_CASE("gaussian sampling with a tiny noise scale hugs the mean") {
  const FeatureMap features(20);
  GaussianModel m;
  m.feature_map_id = features.id();
  m.state_dim = 3;
  m.state_lo = {0.0, 0.0, 0.0};
  m.state_hi = {20.0, 100.0, 3.0};
  m.w_blocks.assign(1, Eigen::MatrixXd::Zero(4, features.dim()));
  m.w_blocks[0](0, 0) = 5.0;
  m.w_blocks[0](1, 0) = 50.0;
  m.w_blocks[0](2, 0) = 1.5;
  m.w_blocks[0](3, 0) = 2.5;
  m.log_std = Eigen::VectorXd::Constant(4, std::log(1e-3));
  Rng rng(83);
  const std::vector<double> state = {10.0, 50.0, 1.0};
  for (int k = 0; k < 1000; ++k) {
    auto [s2, r] = sample_next(m, features, state, 0, rng);
    CHECK(std::abs(s2[0] - 5.0) < 0.01);
    CHECK(std::abs(s2[1] - 50.0) < 0.01);
    CHECK(std::abs(s2[2] - 1.5) < 0.01);
    CHECK(std::abs(r - 2.5) < 0.01);
  }
}

TEST_CASE("gaussian next states are clamped to the box but rewards are not") {
  const FeatureMap features(20);
  GaussianModel m;
  m.feature_map_id = features.id();
  m.state_dim = 3;
  m.state_lo = {0.0, 0.0, 0.0};
  m.state_hi = {20.0, 100.0, 3.0};
  m.w_blocks.assign(1, Eigen::MatrixXd::Zero(4, features.dim()));
  m.w_blocks[0](0, 0) = -5.0;   // below lo -> clamps to 0
  m.w_blocks[0](1, 0) = 150.0;  // above hi -> clamps to 100
  m.w_blocks[0](2, 0) = 10.0;   // above hi -> clamps to 3
  m.w_blocks[0](3, 0) = -50.0;  // reward passes through unclamped
  m.log_std = Eigen::VectorXd::Constant(4, std::log(1e-3));
  Rng rng(84);
  const std::vector<double> state = {10.0, 50.0, 1.0};
  for (int k = 0; k < 100; ++k) {
    auto [s2, r] = sample_next(m, features, state, 0, rng);
    CHECK(s2[0] == 0.0);
    CHECK(s2[1] == 100.0);
    CHECK(s2[2] == 3.0);
    CHECK(r < -49.0);
  }
}

TEST_CASE("a deterministic model and policy roll out the exact trajectory") {
  CategoricalModel m;
  m.n_states = 3;
  m.n_actions = 1;
  m.smoothing = 0.0;
  m.counts.assign(9, 0.0);
  for (int s = 0; s < 3; ++s) m.counts[s * 3 + (s + 1) % 3] = 10.0;  // cycle
  m.reward_estimate = {0.5, 1.5, 2.5};
  const ModelEnsemble ens = ModelEnsemble::of_categorical({m});
  auto policy = [](const std::vector<double>&) { return std::vector<double>{1.0}; };
  const std::vector<double> posterior = {1.0};
  const OfflineDataset out =
      generate_synthetic(ens, posterior, policy, {{0.0}}, 3, 99);
  REQUIRE(out.size() == 3);
  for (int h = 0; h < 3; ++h) {
    CHECK(out[h].state[0] == static_cast<double>(h));
    CHECK(out[h].action == 0);
    CHECK(out[h].reward == doctest::Approx(0.5 + h).epsilon(1e-15));
    CHECK(out[h].next_state[0] == static_cast<double>((h + 1) % 3));
    CHECK(out[h].done == false);
    CHECK(out[h].provenance == Provenance::synthetic);
  }
}

TEST_CASE("rollouts honor a point-mass posterior and log one model each") {
  Rng gen(85);
  const ModelEnsemble ens = random_categorical_ensemble(3, 2, 2, 1.0, gen);
  auto policy = [](const std::vector<double>&) {
    return std::vector<double>{0.5, 0.5};
  };
  const std::vector<double> posterior = {1.0, 0.0};
  std::vector<std::vector<double>> starts(50, {0.0});
  RolloutTrace trace;
  const OfflineDataset out =
      generate_synthetic(ens, posterior, policy, starts, 4, 11, nullptr, nullptr, &trace);
  REQUIRE(trace.model_per_rollout.size() == 50);
  for (int member : trace.model_per_rollout) CHECK(member == 0);
  CHECK(trace.member_calls[0] == out.size());
  CHECK(trace.member_calls[1] == 0);
  for (const TransitionRecord& rec : out) CHECK(rec.provenance == Provenance::synthetic);
}

TEST_CASE("a unit horizon yields at most one record per start state") {
  Rng gen(86);
  const ModelEnsemble ens = random_categorical_ensemble(3, 2, 2, 1.0, gen);
  auto policy = [](const std::vector<double>&) {
    return std::vector<double>{0.5, 0.5};
  };
  const std::vector<double> posterior = {0.5, 0.5};
  std::vector<std::vector<double>> starts(100, {1.0});
  const OfflineDataset out = generate_synthetic(ens, posterior, policy, starts, 1, 12);
  CHECK(out.size() == 100);
}

TEST_CASE("rollouts stop at terminal states and keep the done flag") {
  CategoricalModel m;
  m.n_states = 3;
  m.n_actions = 1;
  m.smoothing = 0.0;
  m.counts.assign(9, 0.0);
  for (int s = 0; s < 3; ++s) m.counts[s * 3 + std::min(s + 1, 2)] = 10.0;
  m.reward_estimate = {0.0, 0.0, 0.0};
  const ModelEnsemble ens = ModelEnsemble::of_categorical({m});
  auto policy = [](const std::vector<double>&) { return std::vector<double>{1.0}; };
  auto terminal = [](const std::vector<double>& s) { return s[0] >= 2.0; };
  const std::vector<double> posterior = {1.0};
  const OfflineDataset out = generate_synthetic(ens, posterior, policy, {{0.0}}, 10, 13,
                                                nullptr, terminal);
  REQUIRE(out.size() == 2);
  CHECK(out[0].done == false);
  CHECK(out[1].done == true);
  CHECK(out[1].next_state[0] == 2.0);
}

TEST_CASE("synthetic generation replays identically under one seed") {
  Rng gen(87);
  const ModelEnsemble ens = random_categorical_ensemble(4, 2, 3, 1.0, gen);
  auto policy = [](const std::vector<double>& s) {
    return s[0] < 2.0 ? std::vector<double>{0.9, 0.1} : std::vector<double>{0.2, 0.8};
  };
  const std::vector<double> posterior = {0.5, 0.3, 0.2};
  std::vector<std::vector<double>> starts;
  for (int i = 0; i < 20; ++i) starts.push_back({static_cast<double>(i % 4)});
  const OfflineDataset a = generate_synthetic(ens, posterior, policy, starts, 5, 14);
  const OfflineDataset b = generate_synthetic(ens, posterior, policy, starts, 5, 14);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].state == b[i].state);
    CHECK(a[i].action == b[i].action);
    CHECK(a[i].reward == b[i].reward);
    CHECK(a[i].next_state == b[i].next_state);
    CHECK(a[i].done == b[i].done);
  }
}

TEST_CASE("synthetic generation validates its arguments") {
  Rng gen(88);
  const ModelEnsemble ens = random_categorical_ensemble(3, 2, 2, 1.0, gen);
  auto policy = [](const std::vector<double>&) {
    return std::vector<double>{0.5, 0.5};
  };
  const std::vector<double> short_posterior = {1.0};
  const std::vector<double> full_posterior = {0.5, 0.5};
  CHECK_THROWS_AS(generate_synthetic(ens, short_posterior, policy, {{0.0}}, 3, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(ens, full_posterior, policy, {{0.0}}, 0, 1),
                  std::invalid_argument);
  GaussianModel g;
  g.w_blocks = {Eigen::MatrixXd::Zero(4, 23)};
  g.log_std = Eigen::VectorXd::Zero(4);
  g.state_dim = 3;
  g.state_lo = {0.0, 0.0, 0.0};
  g.state_hi = {1.0, 1.0, 1.0};
  const ModelEnsemble gens = ModelEnsemble::of_gaussian({g});
  CHECK_THROWS_AS(
      generate_synthetic(gens, short_posterior, policy, {{0.0, 0.0, 0.0}}, 3, 1),
      std::invalid_argument);
}

TEST_CASE("bootstrap pools produce distinct members") {
  Rng rng(89);
  OfflineDataset data;
  for (int i = 0; i < 300; ++i)
    data.push_back(make_record(static_cast<int>(rng.uniform_index(3)),
                               static_cast<int>(rng.uniform_index(2)),
                               rng.uniform01(), static_cast<int>(rng.uniform_index(3))));
  const ModelEnsemble ens = bootstrap_categorical_ensemble(data, 3, 2, 4, 1e-3, 17);
  CHECK(ens.size() == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) CHECK(l1_counts(ens.cat(i), ens.cat(j)) > 0.0);
}

TEST_CASE("ensemble validation catches structural errors") {
  Rng rng(90);
  ModelEnsemble ens = random_categorical_ensemble(2, 2, 2, 1.0, rng);
  CHECK_NOTHROW(ens.validate());
  ModelEnsemble no_active = ens;
  no_active.active.clear();
  CHECK_THROWS_AS(no_active.validate(), std::invalid_argument);
  ModelEnsemble out_of_range = ens;
  out_of_range.active = {0, 5};
  CHECK_THROWS_AS(out_of_range.validate(), std::invalid_argument);
  ModelEnsemble too_many = ens;
  too_many.active = {0, 1, 0, 1};
  CHECK_THROWS_AS(too_many.validate(), std::invalid_argument);
}
