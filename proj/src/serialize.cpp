#include "pspo/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pspo {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

json vec_to_json(const std::vector<double>& v) { return json(v); }

std::vector<double> json_to_vec(const json& j) {
  return j.get<std::vector<double>>();
}

ordered matrix_to_json(const Eigen::MatrixXd& m) {
  ordered rows = ordered::array();
  for (int r = 0; r < m.rows(); ++r) {
    ordered row = ordered::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_to_matrix(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j.at(r).size()) != cols)
      throw std::runtime_error("matrix json: ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

std::ofstream open_out(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

}  // namespace

void save_dataset_jsonl(const std::string& path, const OfflineDataset& dataset) {
  std::ofstream out = open_out(path);
  for (const TransitionRecord& rec : dataset) {
    ordered j;
    j["s"] = rec.state;
    j["a"] = rec.action;
    j["r"] = rec.reward;
    j["s2"] = rec.next_state;
    j["done"] = rec.done;
    j["provenance"] = rec.provenance == Provenance::real ? "real" : "synthetic";
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

OfflineDataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in = open_in(path);
  OfflineDataset dataset;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": bad record: " + e.what());
    }
    TransitionRecord rec;
    rec.state = json_to_vec(j.at("s"));
    rec.action = j.at("a").get<int>();
    rec.reward = j.at("r").get<double>();
    rec.next_state = json_to_vec(j.at("s2"));
    rec.done = j.at("done").get<bool>();
    const std::string prov = j.at("provenance").get<std::string>();
    if (prov == "real")
      rec.provenance = Provenance::real;
    else if (prov == "synthetic")
      rec.provenance = Provenance::synthetic;
    else
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": unknown provenance '" + prov + "'");
    dataset.push_back(std::move(rec));
  }
  return dataset;
}

void save_ensemble_json(const std::string& path, const ModelEnsemble& ensemble) {
  ensemble.validate();
  ordered root;
  root["kind"] =
      ensemble.kind == ModelEnsemble::Kind::categorical ? "categorical" : "gaussian";
  root["active"] = ensemble.active;
  ordered members = ordered::array();
  if (ensemble.kind == ModelEnsemble::Kind::categorical) {
    for (const CategoricalModel& m : ensemble.cat_pool) {
      ordered j;
      j["n_states"] = m.n_states;
      j["n_actions"] = m.n_actions;
      j["smoothing"] = m.smoothing;
      j["counts"] = m.counts;
      j["reward_estimate"] = m.reward_estimate;
      members.push_back(std::move(j));
    }
  } else {
    for (const GaussianModel& m : ensemble.gauss_pool) {
      ordered j;
      j["feature_map_id"] = m.feature_map_id;
      j["state_dim"] = m.state_dim;
      j["state_lo"] = m.state_lo;
      j["state_hi"] = m.state_hi;
      ordered blocks = ordered::array();
      for (const Eigen::MatrixXd& w : m.w_blocks) blocks.push_back(matrix_to_json(w));
      j["w_blocks"] = std::move(blocks);
      std::vector<double> ls(m.log_std.data(), m.log_std.data() + m.log_std.size());
      j["log_std"] = ls;
      j["initial_nll"] = m.initial_nll;
      j["final_nll"] = m.final_nll;
      members.push_back(std::move(j));
    }
  }
  root["members"] = std::move(members);
  std::ofstream out = open_out(path);
  out << root.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

ModelEnsemble load_ensemble_json(const std::string& path) {
  std::ifstream in = open_in(path);
  json root;
  in >> root;
  ModelEnsemble ens;
  const std::string kind = root.at("kind").get<std::string>();
  if (kind == "categorical") {
    ens.kind = ModelEnsemble::Kind::categorical;
    for (const json& j : root.at("members")) {
      CategoricalModel m;
      m.n_states = j.at("n_states").get<int>();
      m.n_actions = j.at("n_actions").get<int>();
      m.smoothing = j.at("smoothing").get<double>();
      m.counts = json_to_vec(j.at("counts"));
      m.reward_estimate = json_to_vec(j.at("reward_estimate"));
      ens.cat_pool.push_back(std::move(m));
    }
  } else if (kind == "gaussian") {
    ens.kind = ModelEnsemble::Kind::gaussian;
    for (const json& j : root.at("members")) {
      GaussianModel m;
      m.feature_map_id = j.at("feature_map_id").get<std::string>();
      m.state_dim = j.at("state_dim").get<int>();
      m.state_lo = json_to_vec(j.at("state_lo"));
      m.state_hi = json_to_vec(j.at("state_hi"));
      for (const json& b : j.at("w_blocks")) m.w_blocks.push_back(json_to_matrix(b));
      const std::vector<double> ls = json_to_vec(j.at("log_std"));
      m.log_std = Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
      m.initial_nll = j.at("initial_nll").get<double>();
      m.final_nll = j.at("final_nll").get<double>();
      ens.gauss_pool.push_back(std::move(m));
    }
  } else {
    throw std::runtime_error(path + ": unknown ensemble kind '" + kind + "'");
  }
  ens.active = root.at("active").get<std::vector<int>>();
  ens.validate();
  return ens;
}

void save_policy_json(const std::string& path, const TabularPolicy& policy) {
  policy.validate();
  ordered j;
  j["kind"] = "tabular_policy";
  j["n_states"] = policy.n_states;
  j["n_actions"] = policy.n_actions;
  j["probs"] = policy.probs;
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_policy_json(const std::string& path, const TiltPolicy& policy,
                      const std::string& feature_map_id) {
  ordered j;
  j["kind"] = "tilt_policy";
  j["feature_map_id"] = feature_map_id;
  j["base"] = policy.base;
  j["tilt"] = matrix_to_json(policy.tilt);
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicyArtifact load_policy_json(const std::string& path) {
  std::ifstream in = open_in(path);
  json j;
  in >> j;
  PolicyArtifact art;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "tabular_policy") {
    art.kind = PolicyArtifact::Kind::tabular;
    art.tabular.n_states = j.at("n_states").get<int>();
    art.tabular.n_actions = j.at("n_actions").get<int>();
    art.tabular.probs = json_to_vec(j.at("probs"));
    art.tabular.validate();
  } else if (kind == "tilt_policy") {
    art.kind = PolicyArtifact::Kind::tilt;
    art.feature_map_id = j.at("feature_map_id").get<std::string>();
    art.tilt.base = json_to_vec(j.at("base"));
    art.tilt.tilt = json_to_matrix(j.at("tilt"));
  } else {
    throw std::runtime_error(path + ": unknown policy kind '" + kind + "'");
  }
  return art;
}

void save_q_json(const std::string& path, const TabularQ& q) {
  ordered j;
  j["kind"] = "tabular_q";
  j["n_states"] = q.n_states;
  j["n_actions"] = q.n_actions;
  j["values"] = q.values;
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_q_json(const std::string& path, const LinearQ& q,
                 const std::string& feature_map_id) {
  ordered j;
  j["kind"] = "linear_q";
  j["feature_map_id"] = feature_map_id;
  j["weights"] = matrix_to_json(q.weights);
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

QArtifact load_q_json(const std::string& path) {
  std::ifstream in = open_in(path);
  json j;
  in >> j;
  QArtifact art;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "tabular_q") {
    art.kind = QArtifact::Kind::tabular;
    art.tabular.n_states = j.at("n_states").get<int>();
    art.tabular.n_actions = j.at("n_actions").get<int>();
    art.tabular.values = json_to_vec(j.at("values"));
  } else if (kind == "linear_q") {
    art.kind = QArtifact::Kind::linear;
    art.feature_map_id = j.at("feature_map_id").get<std::string>();
    art.linear.weights = json_to_matrix(j.at("weights"));
  } else {
    throw std::runtime_error(path + ": unknown q kind '" + kind + "'");
  }
  return art;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in = open_in(path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

void write_text_file(const std::string& path, const std::string& text) {
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream existing;
    existing << in.rdbuf();
    if (in && existing.str() == text) return;
  }
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in = open_in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace pspo
