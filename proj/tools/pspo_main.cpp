#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pspo/checks.hpp"
#include "pspo/config.hpp"
#include "pspo/csv.hpp"
#include "pspo/serialize.hpp"

namespace {

using namespace pspo;
using ordered = nlohmann::ordered_json;

struct PhaseTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

// Run manifest: config snapshot, artifact hashes, per-check flags, timing.
// Everything needed to re-invoke the identical run lives under "config".
class Manifest {
 public:
  Manifest(const std::string& command, const ExperimentConfig& config) {
    j_["command"] = command;
    j_["config"] = nlohmann::json::parse(experiment_config_to_json(config));
    j_["artifacts"] = ordered::object();
    j_["checks"] = ordered::object();
    j_["timing_seconds"] = ordered::object();
  }
  void artifact(const std::string& name, const std::string& path) {
    j_["artifacts"][name] = ordered{{"path", path}, {"hash", file_hash_hex(path)}};
  }
  void check(const std::string& name, bool pass) { j_["checks"][name] = pass; }
  void timing(const std::string& phase, double secs) {
    j_["timing_seconds"][phase] = secs;
  }
  void extra(const std::string& key, ordered value) { j_[key] = std::move(value); }
  void write(const std::string& out_dir, const std::string& filename) const {
    write_text_file(out_dir + "/" + filename, j_.dump(2) + "\n");
  }

 private:
  ordered j_;
};

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_variant) {
  cmd->add_option("--config", opts.config_path, "experiment config JSON file");
  cmd->add_option("--seed", opts.seed, "master seed override");
  cmd->add_option("--out", opts.out, "output directory override");
  if (with_variant)
    cmd->add_option("--variant", opts.variant,
                    "full | average_utilization | without_regularization "
                    "(combine with '+')");
}

void apply_variant(ExperimentConfig& cfg, const std::string& variant) {
  if (variant.empty()) return;
  cfg.pspo.average_utilization = false;
  cfg.pspo.without_regularization = false;
  if (variant == "full") return;
  std::size_t start = 0;
  while (start < variant.size()) {
    std::size_t plus = variant.find('+', start);
    if (plus == std::string::npos) plus = variant.size();
    const std::string token = variant.substr(start, plus - start);
    if (token == "average_utilization")
      cfg.pspo.average_utilization = true;
    else if (token == "without_regularization")
      cfg.pspo.without_regularization = true;
    else
      throw std::invalid_argument(
          "unknown variant '" + token +
          "'; expected full, average_utilization, without_regularization");
    start = plus + 1;
  }
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg = opts.config_path.empty()
                             ? parse_experiment_config("{}", true)
                             : load_experiment_config(opts.config_path);
  if (opts.seed) cfg.master_seed = *opts.seed;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  apply_variant(cfg, opts.variant);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline pieces shared by the subcommands

OfflineDataset build_dataset(const ExperimentConfig& cfg, ordered* report) {
  if (cfg.track == Track::tabular) {
    const TabularMdp mdp =
        make_tabular_instance(cfg.tabular, derive_seed(cfg.master_seed, "instance"));
    const TabularPolicy behavior = make_tabular_behavior(mdp, cfg.tabular.behavior_mix);
    OfflineDataset data =
        rollout_tabular_dataset(mdp, behavior, cfg.tabular.n_records,
                                cfg.tabular.episode_len,
                                derive_seed(cfg.master_seed, "dataset"));
    if (report) {
      std::vector<int> counts(
          static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0);
      for (const TransitionRecord& rec : data)
        ++counts[static_cast<std::size_t>(tabular_state(rec.state)) * mdp.n_actions +
                 rec.action];
      const int min_count = *std::min_element(counts.begin(), counts.end());
      const int unvisited =
          static_cast<int>(std::count(counts.begin(), counts.end(), 0));
      (*report)["state_action_pairs"] = static_cast<int>(counts.size());
      (*report)["unvisited_pairs"] = unvisited;
      (*report)["min_pair_count"] = min_count;
    }
    return data;
  }
  OfflineDataset data = generate_liquidation_dataset(
      cfg.liquidation, cfg.n_episodes, derive_seed(cfg.master_seed, "dataset"));
  if (report) {
    std::size_t holds = 0;
    for (const TransitionRecord& rec : data) holds += rec.action == 0 ? 1 : 0;
    (*report)["records"] = data.size();
    (*report)["hold_fraction"] =
        static_cast<double>(holds) / static_cast<double>(data.size());
  }
  return data;
}

ModelEnsemble build_ensemble(const ExperimentConfig& cfg, const OfflineDataset& data,
                             std::uint64_t seed, ordered* members_report) {
  ModelEnsemble ens;
  if (cfg.track == Track::tabular) {
    ens = bootstrap_categorical_ensemble(data, cfg.tabular.n_states,
                                         cfg.tabular.n_actions,
                                         cfg.pspo.model_pool_size,
                                         cfg.pspo.mu_smoothing, seed);
    ens.active.resize(cfg.pspo.ensemble_size);  // first N of the pool
    ens.validate();
    if (members_report) {
      ordered members = ordered::array();
      for (int i = 0; i < ens.pool_size(); ++i) {
        const CategoricalModel& m = ens.cat_pool[i];
        double nll = 0.0;
        for (const TransitionRecord& rec : data)
          nll -= std::log(m.prob(tabular_state(rec.state), rec.action,
                                 tabular_state(rec.next_state)));
        nll /= static_cast<double>(data.size());
        members.push_back(ordered{{"index", i}, {"final_nll", nll}});
      }
      *members_report = std::move(members);
    }
    return ens;
  }
  const FeatureMap features = cfg.liquidation.make_feature_map();
  std::vector<GaussianModel> pool;
  pool.reserve(cfg.pspo.model_pool_size);
  for (int i = 0; i < cfg.pspo.model_pool_size; ++i)
    pool.push_back(fit_gaussian(data, features, cfg.liquidation.n_actions(),
                                cfg.pspo.dynamics_epochs, cfg.pspo.dynamics_lr,
                                derive_seed(seed, "bootstrap", i),
                                derive_seed(seed, "init", i)));
  ens = ModelEnsemble::of_gaussian(std::move(pool));
  // Activate the N lowest-NLL members; index breaks ties so selection is
  // deterministic.
  std::vector<int> order(ens.pool_size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ens.gauss_pool[a].final_nll < ens.gauss_pool[b].final_nll;
  });
  order.resize(cfg.pspo.ensemble_size);
  std::sort(order.begin(), order.end());
  ens.active = order;
  ens.validate();
  if (members_report) {
    ordered members = ordered::array();
    for (int i = 0; i < ens.pool_size(); ++i)
      members.push_back(ordered{{"index", i},
                                {"final_nll", ens.gauss_pool[i].final_nll},
                                {"active", std::find(ens.active.begin(),
                                                     ens.active.end(),
                                                     i) != ens.active.end()}});
    *members_report = std::move(members);
  }
  return ens;
}

struct TrainOutcome {
  std::vector<IterationReport> reports;
  bool variance_ok = true;
  bool trust_ok = true;
};

// Trains in `dir` (policy.json, q.json, iterations.csv) and scans the per-
// iteration invariants the run must respect.
TrainOutcome run_training(const ExperimentConfig& cfg, const OfflineDataset& data,
                          const ModelEnsemble& ensemble, const std::string& dir,
                          std::uint64_t master_seed, bool verbose) {
  TrainOutcome outcome;
  if (cfg.track == Track::tabular) {
    const TabularMdp mdp =
        make_tabular_instance(cfg.tabular, derive_seed(cfg.master_seed, "instance"));
    const TabularTrainResult result =
        pspo_train_tabular(data, cfg.pspo, mdp, ensemble, master_seed);
    save_policy_json(dir + "/policy.json", result.policy);
    save_q_json(dir + "/q.json", result.q);
    outcome.reports = result.reports;
  } else {
    const LiquidationTrainResult result = pspo_train_liquidation(
        data, cfg.pspo, cfg.liquidation, ensemble, master_seed);
    const std::string map_id = cfg.liquidation.make_feature_map().id();
    save_policy_json(dir + "/policy.json", result.policy, map_id);
    save_q_json(dir + "/q.json", result.q, map_id);
    outcome.reports = result.reports;
  }
  CsvTable table;
  table.header = iteration_csv_header();
  for (const IterationReport& rep : outcome.reports) {
    table.rows.push_back(iteration_csv_row(rep, master_seed));
    outcome.variance_ok =
        outcome.variance_ok && rep.target_variance <= rep.variance_bound;
    outcome.trust_ok =
        outcome.trust_ok && rep.kl_step <= cfg.pspo.epsilon_trust + 1e-6;
  }
  write_csv(dir + "/iterations.csv", table);
  if (verbose) {
    const int stride = std::max(1, static_cast<int>(outcome.reports.size()) / 10);
    for (std::size_t i = 0; i < outcome.reports.size(); i += stride) {
      const IterationReport& rep = outcome.reports[i];
      std::cout << "iter " << rep.iteration << " jreg " << format_g9(rep.jreg_estimate)
                << " target_var " << format_g9(rep.target_variance) << " kl "
                << format_g9(rep.kl_step) << "\n";
    }
  }
  return outcome;
}

struct EvalOutcome {
  double raw = 0.0;
  double spread = 0.0;
  bool exact = false;
  double normalized = std::numeric_limits<double>::quiet_NaN();
  int episodes = 0;
};

EvalOutcome evaluate_policy(const ExperimentConfig& cfg, const PolicyArtifact& artifact,
                            std::uint64_t eval_seed) {
  EvalOutcome out;
  if (cfg.track == Track::tabular) {
    if (artifact.kind != PolicyArtifact::Kind::tabular)
      throw std::runtime_error("eval: policy artifact is not tabular");
    const TabularMdp mdp =
        make_tabular_instance(cfg.tabular, derive_seed(cfg.master_seed, "instance"));
    if (artifact.tabular.n_states != mdp.n_states ||
        artifact.tabular.n_actions != mdp.n_actions)
      throw std::runtime_error("eval: policy shape does not match the instance");
    out.raw = expected_return(mdp, artifact.tabular);
    out.exact = true;
    return out;
  }
  if (artifact.kind != PolicyArtifact::Kind::tilt)
    throw std::runtime_error("eval: policy artifact is not a tilt policy");
  const FeatureMap features = cfg.liquidation.make_feature_map();
  if (artifact.feature_map_id != features.id())
    throw std::runtime_error("eval: policy feature map '" + artifact.feature_map_id +
                             "' does not match environment '" + features.id() + "'");
  if (artifact.tilt.n_actions() != cfg.liquidation.n_actions())
    throw std::runtime_error("eval: policy action count does not match environment");
  const TiltPolicy& pi = artifact.tilt;
  const EvalStats stats = evaluate_stochastic_in_env(
      cfg.liquidation,
      [&](const LiquidationState& st) { return pi.probs(features.eval(st.as_vector())); },
      cfg.n_eval_episodes, eval_seed);
  out.raw = stats.mean_raw;
  out.spread = stats.std_raw;
  out.episodes = stats.episodes;
  out.normalized = normalized_score(stats.mean_raw, "liquidation");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  Manifest man("gen-data", cfg);
  PhaseTimer t_gen;
  ordered report = ordered::object();
  const OfflineDataset data = build_dataset(cfg, &report);
  man.timing("generate", t_gen.seconds());
  PhaseTimer t_save;
  save_dataset_jsonl(cfg.dataset_file(), data);
  man.timing("save", t_save.seconds());
  man.artifact("dataset", cfg.dataset_file());
  man.extra("report", report);
  man.write(cfg.out_dir, "gen_data_manifest.json");
  std::cout << "wrote " << data.size() << " records to " << cfg.dataset_file() << "\n";
  for (const auto& [key, value] : report.items())
    std::cout << "  " << key << ": "
              << (value.is_number_float() ? format_g9(value.get<double>())
                                          : value.dump())
              << "\n";
  return 0;
}

int cmd_train_dynamics(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  Manifest man("train-dynamics", cfg);
  PhaseTimer t_load;
  const OfflineDataset data = load_dataset_jsonl(cfg.dataset_file());
  man.timing("load_dataset", t_load.seconds());
  PhaseTimer t_fit;
  ordered members;
  const ModelEnsemble ens =
      build_ensemble(cfg, data, derive_seed(cfg.master_seed, "ensemble"), &members);
  man.timing("fit", t_fit.seconds());
  PhaseTimer t_save;
  const std::string path = cfg.out_dir + "/ensemble.json";
  save_ensemble_json(path, ens);
  man.timing("save", t_save.seconds());
  man.artifact("dataset", cfg.dataset_file());
  man.artifact("ensemble", path);
  man.extra("members", members);
  man.write(cfg.out_dir, "train_dynamics_manifest.json");
  std::cout << "fit " << ens.pool_size() << " members (" << ens.size()
            << " active) -> " << path << "\n";
  for (const auto& m : members)
    std::cout << "  member " << m.at("index").get<int>() << " nll "
              << format_g9(m.at("final_nll").get<double>()) << "\n";
  return 0;
}

int cmd_train_pspo(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  Manifest man("train-pspo", cfg);
  PhaseTimer t_load;
  const OfflineDataset data = load_dataset_jsonl(cfg.dataset_file());
  const ModelEnsemble ens = load_ensemble_json(cfg.out_dir + "/ensemble.json");
  man.timing("load", t_load.seconds());
  PhaseTimer t_train;
  const TrainOutcome outcome =
      run_training(cfg, data, ens, cfg.out_dir, cfg.master_seed, /*verbose=*/true);
  man.timing("train", t_train.seconds());
  man.artifact("dataset", cfg.dataset_file());
  man.artifact("ensemble", cfg.out_dir + "/ensemble.json");
  man.artifact("policy", cfg.out_dir + "/policy.json");
  man.artifact("q", cfg.out_dir + "/q.json");
  man.artifact("iterations", cfg.out_dir + "/iterations.csv");
  man.check("variance_bound", outcome.variance_ok);
  man.check("trust_region", outcome.trust_ok);
  man.write(cfg.out_dir, "train_pspo_manifest.json");
  std::cout << "trained " << outcome.reports.size() << " iterations, variant "
            << variant_name(cfg.pspo) << "\n";
  if (!outcome.variance_ok || !outcome.trust_ok) {
    std::cerr << "invariant violation: variance_bound="
              << (outcome.variance_ok ? "ok" : "FAILED")
              << " trust_region=" << (outcome.trust_ok ? "ok" : "FAILED") << "\n";
    return 1;
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  Manifest man("eval", cfg);
  const PolicyArtifact artifact = load_policy_json(cfg.out_dir + "/policy.json");
  PhaseTimer t_eval;
  const EvalOutcome out =
      evaluate_policy(cfg, artifact, derive_seed(cfg.master_seed, "eval"));
  man.timing("eval", t_eval.seconds());
  ordered report;
  if (out.exact) {
    report["exact_expected_return"] = out.raw;
    std::cout << "exact expected return " << format_g9(out.raw) << "\n";
  } else {
    report["mean_raw"] = out.raw;
    report["std_raw"] = out.spread;
    report["episodes"] = out.episodes;
    report["normalized_score"] = out.normalized;
    std::cout << "raw return " << format_g9(out.raw) << " +- " << format_g9(out.spread)
              << " over " << out.episodes << " episodes, normalized score "
              << format_g9(out.normalized) << "\n";
  }
  man.artifact("policy", cfg.out_dir + "/policy.json");
  man.extra("report", report);
  man.write(cfg.out_dir, "eval_manifest.json");
  return 0;
}

int cmd_check(const CommonOpts& opts, std::vector<std::string> suites) {
  const ExperimentConfig cfg = resolve_config(opts);
  if (suites.empty()) suites = cfg.check_suites;
  if (suites.empty()) suites = available_check_suites();
  Manifest man("check", cfg);
  ordered details = ordered::array();
  bool all_pass = true;
  for (const std::string& suite : suites) {
    for (const CheckResult& r : run_check_suite(suite, cfg.master_seed)) {
      const char* tag = r.informational ? "[INFO]" : (r.pass ? "[PASS]" : "[FAIL]");
      std::cout << tag << " " << r.name << ": " << r.details << "\n";
      if (!r.informational) {
        all_pass = all_pass && r.pass;
        man.check(r.name, r.pass);
      }
      details.push_back(ordered{{"name", r.name},
                                {"pass", r.pass},
                                {"informational", r.informational},
                                {"details", r.details}});
    }
  }
  man.extra("check_details", details);
  man.write(cfg.out_dir, "check_manifest.json");
  std::cout << (all_pass ? "all checks passed" : "CHECK FAILURES PRESENT") << "\n";
  return all_pass ? 0 : 1;
}

const std::vector<std::string>& plot_metrics() {
  static const std::vector<std::string> kMetrics = {
      "mean_target",   "target_variance",  "variance_bound", "jreg_estimate",
      "exact_j",       "mixture_j_before", "mixture_j_after", "kl_step",
      "lambda_used",   "uncertainty_sample", "td_target_sample"};
  return kMetrics;
}

int cmd_export_plots(const std::vector<std::string>& inputs,
                     std::vector<std::string> metrics, bool metrics_given,
                     const std::string& out_dir) {
  metrics.erase(std::remove(metrics.begin(), metrics.end(), std::string()),
                metrics.end());
  if (!metrics_given) metrics = plot_metrics();
  std::string available;
  for (const std::string& m : plot_metrics()) available += " " + m;
  if (metrics.empty())
    throw std::invalid_argument("no metrics selected; available:" + available);
  for (const std::string& m : metrics)
    if (std::find(plot_metrics().begin(), plot_metrics().end(), m) ==
        plot_metrics().end())
      throw std::invalid_argument("unknown metric '" + m + "'; available:" + available);

  CsvTable curves;
  curves.header = {"iteration", "metric", "value", "seed", "variant"};
  CsvTable scatter;
  scatter.header = {"uncertainty", "td_target"};
  for (const std::string& path : inputs) {
    const CsvTable table = read_csv(path);
    auto column = [&](const std::string& name) {
      const auto it = std::find(table.header.begin(), table.header.end(), name);
      if (it == table.header.end())
        throw std::runtime_error(path + ": missing column '" + name + "'");
      return static_cast<std::size_t>(it - table.header.begin());
    };
    const std::size_t c_iter = column("iteration");
    const std::size_t c_seed = column("seed");
    const std::size_t c_variant = column("variant");
    const std::size_t c_unc = column("uncertainty_sample");
    const std::size_t c_td = column("td_target_sample");
    std::vector<std::size_t> metric_cols;
    for (const std::string& m : metrics) metric_cols.push_back(column(m));
    for (const auto& row : table.rows) {
      for (std::size_t k = 0; k < metrics.size(); ++k)
        curves.rows.push_back({row[c_iter], metrics[k], row[metric_cols[k]],
                               row[c_seed], row[c_variant]});
      scatter.rows.push_back({row[c_unc], row[c_td]});
    }
  }
  write_csv(out_dir + "/curves.csv", curves);
  write_csv(out_dir + "/scatter.csv", scatter);
  std::cout << "wrote " << curves.rows.size() << " curve points and "
            << scatter.rows.size() << " scatter points to " << out_dir << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, int n_seeds) {
  if (n_seeds < 1) throw std::invalid_argument("ablate: --n-seeds must be >= 1");
  const ExperimentConfig base = resolve_config(opts);
  Manifest man("ablate", base);
  const std::vector<std::string> variants = {"full", "average_utilization",
                                             "without_regularization"};
  CsvTable summary;
  summary.header = {"variant", "seed", "raw_score", "normalized_score"};
  std::map<std::string, std::vector<double>> scores;
  PhaseTimer t_all;
  for (int k = 0; k < n_seeds; ++k) {
    ExperimentConfig cfg = base;
    cfg.master_seed = base.master_seed + static_cast<std::uint64_t>(k);
    const std::string seed_dir = base.out_dir + "/seed_" + std::to_string(k);
    cfg.out_dir = seed_dir;
    cfg.dataset_path = seed_dir + "/dataset.jsonl";
    const OfflineDataset data = build_dataset(cfg, nullptr);
    save_dataset_jsonl(cfg.dataset_file(), data);
    const ModelEnsemble ens =
        build_ensemble(cfg, data, derive_seed(cfg.master_seed, "ensemble"), nullptr);
    save_ensemble_json(seed_dir + "/ensemble.json", ens);
    for (const std::string& variant : variants) {
      ExperimentConfig run_cfg = cfg;
      apply_variant(run_cfg, variant);
      const std::string dir = seed_dir + "/" + variant;
      run_training(run_cfg, data, ens, dir, run_cfg.master_seed, /*verbose=*/false);
      const PolicyArtifact artifact = load_policy_json(dir + "/policy.json");
      const EvalOutcome out =
          evaluate_policy(run_cfg, artifact, derive_seed(cfg.master_seed, "eval"));
      const double score = out.exact ? out.raw : out.normalized;
      scores[variant].push_back(score);
      summary.rows.push_back({variant, std::to_string(k), format_g9(out.raw),
                              format_g9(out.exact ? out.raw : out.normalized)});
      std::cout << variant << " seed " << k << " score " << format_g9(score) << "\n";
    }
  }
  man.timing("total", t_all.seconds());
  write_csv(base.out_dir + "/ablate_summary.csv", summary);
  man.artifact("summary", base.out_dir + "/ablate_summary.csv");
  ordered medians;
  for (const std::string& variant : variants) {
    std::vector<double>& v = scores[variant];
    std::sort(v.begin(), v.end());
    const double median = v.size() % 2 == 1
                              ? v[v.size() / 2]
                              : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    medians[variant] = median;
    std::cout << "median " << variant << ": " << format_g9(median) << "\n";
  }
  man.extra("median_scores", medians);
  man.write(base.out_dir, "ablate_manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Posterior-sampling policy optimization toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  CLI::App* gen = app.add_subcommand("gen-data", "generate an offline dataset");
  add_common(gen, gen_opts, false);

  CommonOpts dyn_opts;
  CLI::App* dyn = app.add_subcommand("train-dynamics", "fit the model ensemble");
  add_common(dyn, dyn_opts, false);

  CommonOpts train_opts;
  CLI::App* train = app.add_subcommand("train-pspo", "run the training loop");
  add_common(train, train_opts, true);

  CommonOpts eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained policy");
  add_common(eval, eval_opts, false);

  CommonOpts check_opts;
  std::vector<std::string> suites;
  CLI::App* check = app.add_subcommand("check", "run theorem check suites");
  add_common(check, check_opts, false);
  check->add_option("--suite", suites, "suites to run (comma separated)")
      ->delimiter(',');

  std::vector<std::string> plot_inputs;
  std::vector<std::string> plot_metric_names;
  std::string plot_out = "plots";
  CLI::App* plots = app.add_subcommand("export-plots", "emit tidy plot data");
  plots->add_option("inputs", plot_inputs, "iteration CSV files")->required();
  CLI::Option* metrics_opt =
      plots->add_option("--metrics", plot_metric_names, "metrics to export")
          ->delimiter(',');
  plots->add_option("--out", plot_out, "output directory");

  CommonOpts ablate_opts;
  int n_seeds = 4;
  CLI::App* ablate = app.add_subcommand("ablate", "train all variants across seeds");
  add_common(ablate, ablate_opts, false);
  ablate->add_option("--n-seeds", n_seeds, "seeds per variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (dyn->parsed()) return cmd_train_dynamics(dyn_opts);
    if (train->parsed()) return cmd_train_pspo(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts);
    if (check->parsed()) return cmd_check(check_opts, suites);
    if (plots->parsed())
      return cmd_export_plots(plot_inputs, plot_metric_names,
                              metrics_opt->count() > 0, plot_out);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, n_seeds);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
