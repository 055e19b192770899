#include "pspo/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "json.hpp"
#include "pspo/serialize.hpp"

namespace pspo {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

std::string track_name(Track t) {
  return t == Track::tabular ? "tabular" : "liquidation";
}
Track track_of(const std::string& s) {
  if (s == "tabular") return Track::tabular;
  if (s == "liquidation") return Track::liquidation;
  throw std::invalid_argument("config: unknown track '" + s + "'");
}

std::string schedule_kind_name(LrSchedule::Kind k) {
  return k == LrSchedule::Kind::robbins_monro ? "robbins_monro" : "constant";
}
LrSchedule::Kind schedule_kind_of(const std::string& s) {
  if (s == "robbins_monro") return LrSchedule::Kind::robbins_monro;
  if (s == "constant") return LrSchedule::Kind::constant;
  throw std::invalid_argument("config: unknown schedule_kind '" + s + "'");
}

std::string no_reg_name(NoRegMode m) {
  return m == NoRegMode::uniform_mu ? "uniform_mu" : "alpha_zero";
}
NoRegMode no_reg_of(const std::string& s) {
  if (s == "uniform_mu") return NoRegMode::uniform_mu;
  if (s == "alpha_zero") return NoRegMode::alpha_zero;
  throw std::invalid_argument("config: unknown ablation_no_reg_mode '" + s + "'");
}

std::string backup_name(BackupKind k) {
  return k == BackupKind::optimality ? "optimality" : "evaluation";
}
BackupKind backup_of(const std::string& s) {
  if (s == "optimality") return BackupKind::optimality;
  if (s == "evaluation") return BackupKind::evaluation;
  throw std::invalid_argument("config: unknown backup_kind '" + s + "'");
}

std::string kl_agg_name(KlAggregation k) {
  return k == KlAggregation::max_state ? "max_state" : "occupancy_mean";
}
KlAggregation kl_agg_of(const std::string& s) {
  if (s == "max_state") return KlAggregation::max_state;
  if (s == "occupancy_mean") return KlAggregation::occupancy_mean;
  throw std::invalid_argument("config: unknown kl_aggregation '" + s + "'");
}

std::string terminal_name(TerminalRule r) {
  return r == TerminalRule::expire_worthless ? "expire_worthless" : "force_liquidate";
}
TerminalRule terminal_of(const std::string& s) {
  if (s == "expire_worthless") return TerminalRule::expire_worthless;
  if (s == "force_liquidate") return TerminalRule::force_liquidate;
  throw std::invalid_argument("config: unknown terminal_rule '" + s + "'");
}

ordered config_to_json_obj(const ExperimentConfig& c) {
  ordered j;
  j["experiment"] = c.experiment;
  j["track"] = track_name(c.track);
  j["master_seed"] = c.master_seed;
  j["out_dir"] = c.out_dir;
  j["dataset_path"] = c.dataset_path;
  j["n_eval_episodes"] = c.n_eval_episodes;
  j["n_episodes"] = c.n_episodes;
  j["check_suites"] = c.check_suites;

  const PspoConfig& p = c.pspo;
  j["alpha"] = p.alpha;
  j["epsilon_trust"] = p.epsilon_trust;
  j["beta"] = p.beta;
  j["gamma"] = p.gamma;
  j["ensemble_size"] = p.ensemble_size;
  j["model_pool_size"] = p.model_pool_size;
  j["schedule_kind"] = schedule_kind_name(p.schedule.kind);
  j["schedule_c"] = p.schedule.c;
  j["schedule_t0"] = p.schedule.t0;
  j["polyak"] = p.polyak;
  j["iterations"] = p.iterations;
  j["rollout_horizon"] = p.rollout_horizon;
  j["real_ratio"] = p.real_ratio;
  j["belief_update_every"] = p.belief_update_every;
  j["average_utilization"] = p.average_utilization;
  j["without_regularization"] = p.without_regularization;
  j["ablation_no_reg_mode"] = no_reg_name(p.ablation_no_reg_mode);
  j["backup_kind"] = backup_name(p.backup_kind);
  j["kl_aggregation"] = kl_agg_name(p.kl_aggregation);
  j["exact_eval"] = p.exact_eval;
  j["q_steps"] = p.q_steps;
  j["batch_size"] = p.batch_size;
  j["rollout_batch"] = p.rollout_batch;
  j["n_next_samples"] = p.n_next_samples;
  j["mu_smoothing"] = p.mu_smoothing;
  j["dynamics_lr"] = p.dynamics_lr;
  j["dynamics_epochs"] = p.dynamics_epochs;
  j["check_improvement"] = p.check_improvement;
  j["fd_step"] = p.fd_step;

  ordered tab;
  tab["n_states"] = c.tabular.n_states;
  tab["n_actions"] = c.tabular.n_actions;
  tab["gamma"] = c.tabular.gamma;
  tab["r_max"] = c.tabular.r_max;
  tab["n_records"] = c.tabular.n_records;
  tab["episode_len"] = c.tabular.episode_len;
  tab["behavior_mix"] = c.tabular.behavior_mix;
  j["tabular"] = std::move(tab);

  const LiquidationConfig& l = c.liquidation;
  ordered liq;
  liq["horizon"] = l.horizon;
  liq["initial_inventory"] = l.initial_inventory;
  liq["convert_fractions"] = l.convert_fractions;
  liq["terminal_rule"] = terminal_name(l.terminal_rule);
  liq["behavior_hold_prob"] = l.behavior_hold_prob;
  liq["rate_cap"] = l.rate_cap;
  liq["theta"] = l.ou.theta;
  liq["mu_rate"] = l.ou.mu_rate;
  liq["sigma"] = l.ou.sigma;
  liq["dt"] = l.ou.dt;
  liq["p0_mean"] = l.ou.p0_mean;
  liq["p0_std"] = l.ou.p0_std;
  j["liquidation"] = std::move(liq);
  return j;
}

ExperimentConfig config_from_json_obj(const json& j) {
  ExperimentConfig c;
  c.experiment = j.at("experiment").get<std::string>();
  c.track = track_of(j.at("track").get<std::string>());
  c.master_seed = j.at("master_seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.dataset_path = j.at("dataset_path").get<std::string>();
  c.n_eval_episodes = j.at("n_eval_episodes").get<int>();
  c.n_episodes = j.at("n_episodes").get<int>();
  c.check_suites = j.at("check_suites").get<std::vector<std::string>>();

  PspoConfig& p = c.pspo;
  p.alpha = j.at("alpha").get<double>();
  p.epsilon_trust = j.at("epsilon_trust").get<double>();
  p.beta = j.at("beta").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.ensemble_size = j.at("ensemble_size").get<int>();
  p.model_pool_size = j.at("model_pool_size").get<int>();
  p.schedule.kind = schedule_kind_of(j.at("schedule_kind").get<std::string>());
  p.schedule.c = j.at("schedule_c").get<double>();
  p.schedule.t0 = j.at("schedule_t0").get<double>();
  p.polyak = j.at("polyak").get<double>();
  p.iterations = j.at("iterations").get<int>();
  p.rollout_horizon = j.at("rollout_horizon").get<int>();
  p.real_ratio = j.at("real_ratio").get<double>();
  p.belief_update_every = j.at("belief_update_every").get<int>();
  p.average_utilization = j.at("average_utilization").get<bool>();
  p.without_regularization = j.at("without_regularization").get<bool>();
  p.ablation_no_reg_mode = no_reg_of(j.at("ablation_no_reg_mode").get<std::string>());
  p.backup_kind = backup_of(j.at("backup_kind").get<std::string>());
  p.kl_aggregation = kl_agg_of(j.at("kl_aggregation").get<std::string>());
  p.exact_eval = j.at("exact_eval").get<bool>();
  p.q_steps = j.at("q_steps").get<int>();
  p.batch_size = j.at("batch_size").get<int>();
  p.rollout_batch = j.at("rollout_batch").get<int>();
  p.n_next_samples = j.at("n_next_samples").get<int>();
  p.mu_smoothing = j.at("mu_smoothing").get<double>();
  p.dynamics_lr = j.at("dynamics_lr").get<double>();
  p.dynamics_epochs = j.at("dynamics_epochs").get<int>();
  p.check_improvement = j.at("check_improvement").get<bool>();
  p.fd_step = j.at("fd_step").get<double>();

  const json& tab = j.at("tabular");
  c.tabular.n_states = tab.at("n_states").get<int>();
  c.tabular.n_actions = tab.at("n_actions").get<int>();
  c.tabular.gamma = tab.at("gamma").get<double>();
  c.tabular.r_max = tab.at("r_max").get<double>();
  c.tabular.n_records = tab.at("n_records").get<int>();
  c.tabular.episode_len = tab.at("episode_len").get<int>();
  c.tabular.behavior_mix = tab.at("behavior_mix").get<double>();

  const json& liq = j.at("liquidation");
  LiquidationConfig& l = c.liquidation;
  l.horizon = liq.at("horizon").get<int>();
  l.initial_inventory = liq.at("initial_inventory").get<double>();
  l.convert_fractions = liq.at("convert_fractions").get<std::vector<double>>();
  l.terminal_rule = terminal_of(liq.at("terminal_rule").get<std::string>());
  l.behavior_hold_prob = liq.at("behavior_hold_prob").get<double>();
  l.rate_cap = liq.at("rate_cap").get<double>();
  l.ou.theta = liq.at("theta").get<double>();
  l.ou.mu_rate = liq.at("mu_rate").get<double>();
  l.ou.sigma = liq.at("sigma").get<double>();
  l.ou.dt = liq.at("dt").get<double>();
  l.ou.p0_mean = liq.at("p0_mean").get<double>();
  l.ou.p0_std = liq.at("p0_std").get<double>();
  return c;
}

bool same_json_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// Merge `patch` into `base`; every patch key must already exist in base with a
// compatible kind, so typos fail loudly instead of being ignored.
void merge_into(ordered& base, const json& patch, const std::string& prefix) {
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key))
      throw std::invalid_argument("config: unknown key '" + prefix + key + "'");
    ordered& slot = base[key];
    if (slot.is_object()) {
      if (!value.is_object())
        throw std::invalid_argument("config: key '" + prefix + key +
                                    "' must be an object");
      merge_into(slot, value, prefix + key + ".");
    } else {
      if (!same_json_kind(slot, value))
        throw std::invalid_argument("config: key '" + prefix + key +
                                    "' has the wrong type");
      slot = value;
    }
  }
}

std::string upper(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string piece =
        s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

json env_value_for(const ordered& slot, const std::string& name,
                   const std::string& raw) {
  try {
    if (slot.is_boolean()) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw std::invalid_argument("expected a boolean");
    }
    if (slot.is_number_float()) return std::stod(raw);
    if (slot.is_number_unsigned()) return static_cast<std::uint64_t>(std::stoull(raw));
    if (slot.is_number_integer()) return static_cast<std::int64_t>(std::stoll(raw));
    if (slot.is_string()) return raw;
    if (slot.is_array()) {
      json arr = json::array();
      const bool numeric = !slot.empty() && slot.at(0).is_number();
      for (const std::string& piece : split_commas(raw)) {
        if (numeric)
          arr.push_back(std::stod(piece));
        else
          arr.push_back(piece);
      }
      return arr;
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: bad value for " + name + ": " + e.what());
  }
  throw std::invalid_argument("config: " + name + " targets an unsupported key kind");
}

void apply_env(ordered& base, const std::string& prefix) {
  for (auto& [key, slot] : base.items()) {
    const std::string path = prefix.empty() ? key : prefix + "__" + key;
    if (slot.is_object()) {
      apply_env(slot, path);
      continue;
    }
    const std::string var = "PSPO__" + upper(path);
    if (const char* raw = std::getenv(var.c_str()))
      slot = env_value_for(slot, var, std::string(raw));
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  pspo.validate();
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir must be set");
  if (n_eval_episodes < 1)
    throw std::invalid_argument("config: n_eval_episodes must be >= 1");
  if (n_episodes < 1) throw std::invalid_argument("config: n_episodes must be >= 1");
  if (track == Track::tabular) {
    if (tabular.n_states < 2 || tabular.n_actions < 2)
      throw std::invalid_argument("config: tabular instance needs >= 2 states/actions");
    if (!(tabular.gamma >= 0.0 && tabular.gamma < 1.0) || !(tabular.r_max > 0.0))
      throw std::invalid_argument("config: bad tabular gamma/r_max");
    if (tabular.n_records < 1 || tabular.episode_len < 1)
      throw std::invalid_argument("config: bad tabular dataset spec");
    if (tabular.behavior_mix < 0.0 || tabular.behavior_mix > 1.0)
      throw std::invalid_argument("config: tabular behavior_mix outside [0,1]");
    if (std::abs(pspo.gamma - tabular.gamma) > 1e-12)
      throw std::invalid_argument(
          "config: gamma must equal tabular.gamma on the tabular track");
  } else {
    liquidation.validate();
  }
}

ExperimentConfig default_tabular_experiment() {
  ExperimentConfig c;
  c.experiment = "tabular-default";
  c.track = Track::tabular;
  c.pspo.gamma = 0.9;
  c.pspo.alpha = 0.1;
  c.pspo.epsilon_trust = 0.01;
  c.pspo.iterations = 60;
  c.pspo.exact_eval = true;
  c.pspo.ensemble_size = 5;
  c.pspo.model_pool_size = 5;
  c.pspo.batch_size = 256;
  c.pspo.rollout_batch = 32;
  c.pspo.check_improvement = true;
  return c;
}

ExperimentConfig default_liquidation_experiment() {
  ExperimentConfig c;
  c.experiment = "liquidation-default";
  c.track = Track::liquidation;
  c.pspo.gamma = 0.999;
  c.pspo.alpha = 1.0;
  c.pspo.epsilon_trust = 0.05;
  c.pspo.beta = 1.0;
  c.pspo.ensemble_size = 10;
  c.pspo.model_pool_size = 10;
  c.pspo.schedule.kind = LrSchedule::Kind::constant;
  c.pspo.schedule.c = 0.03;
  c.pspo.polyak = 1.0;
  c.pspo.iterations = 1200;
  c.pspo.rollout_horizon = 5;
  c.pspo.real_ratio = 0.5;
  c.pspo.q_steps = 64;
  c.pspo.batch_size = 256;
  c.pspo.rollout_batch = 64;
  c.pspo.n_next_samples = 8;
  c.pspo.exact_eval = false;
  c.n_episodes = 2000;
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& config) {
  return config_to_json_obj(config).dump(2) + "\n";
}

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         bool apply_env_overrides) {
  json file;
  try {
    file = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  if (!file.is_object()) throw std::invalid_argument("config: root must be an object");

  // Track decides the default preset the file patches.
  std::string track = "tabular";
  if (file.contains("track")) track = file.at("track").get<std::string>();
  if (apply_env_overrides)
    if (const char* t = std::getenv("PSPO__TRACK")) track = t;

  const ExperimentConfig defaults = track_of(track) == Track::tabular
                                        ? default_tabular_experiment()
                                        : default_liquidation_experiment();
  ordered base = config_to_json_obj(defaults);
  merge_into(base, file, "");
  if (apply_env_overrides) apply_env(base, "");
  ExperimentConfig out = config_from_json_obj(base);
  out.validate();
  return out;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path), true);
}

}  // namespace pspo
