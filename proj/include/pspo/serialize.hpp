#pragma once

#include <cstdint>
#include <string>

#include "pspo/dynamics.hpp"
#include "pspo/linear.hpp"
#include "pspo/tabular.hpp"

namespace pspo {

// Newline-delimited JSON, one record per line:
//   {"s":[...],"a":int,"r":double,"s2":[...],"done":bool,"provenance":"real"|"synthetic"}
// Writing is deterministic (fixed key order, shortest round-trip floats), so
// identical datasets produce identical bytes.
void save_dataset_jsonl(const std::string& path, const OfflineDataset& dataset);
OfflineDataset load_dataset_jsonl(const std::string& path);

// Ensemble artifact: {"kind": "categorical"|"gaussian", "active": [...],
// "members": [...]} with per-kind member payloads. Round-trips exactly.
void save_ensemble_json(const std::string& path, const ModelEnsemble& ensemble);
ModelEnsemble load_ensemble_json(const std::string& path);

// Policy artifacts are tagged unions so eval can load either track's policy
// from one file kind.
struct PolicyArtifact {
  enum class Kind { tabular, tilt };
  Kind kind = Kind::tabular;
  TabularPolicy tabular;
  TiltPolicy tilt;
  std::string feature_map_id;  // tilt only
};
void save_policy_json(const std::string& path, const TabularPolicy& policy);
void save_policy_json(const std::string& path, const TiltPolicy& policy,
                      const std::string& feature_map_id);
PolicyArtifact load_policy_json(const std::string& path);

struct QArtifact {
  enum class Kind { tabular, linear };
  Kind kind = Kind::tabular;
  TabularQ tabular;
  LinearQ linear;
  std::string feature_map_id;  // linear only
};
void save_q_json(const std::string& path, const TabularQ& q);
void save_q_json(const std::string& path, const LinearQ& q,
                 const std::string& feature_map_id);
QArtifact load_q_json(const std::string& path);

// FNV-1a over the file's bytes, as 16 hex digits. Used for manifest artifact
// hashes and the determinism checks.
std::string file_hash_hex(const std::string& path);

// Writes `text` only if the file does not already hold exactly these bytes
// (keeps re-runs from touching mtimes needlessly). Creates parent directories.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace pspo
