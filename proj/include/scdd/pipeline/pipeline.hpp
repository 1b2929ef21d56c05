#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scdd/core/errors.hpp"
#include "scdd/pipeline/config.hpp"

namespace scdd {

/// A pipeline stage failed; what() carries the stage name and the cause.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error("stage failed", stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names{"squeeze", "probe", "recover", "relabel", "posttrain", "baseline", "analyze"};
  return names;
}

struct FileRecord {
  std::string path;  // relative to the stage directory
  std::string sha256;
};

struct StageRecord {
  std::string name;
  std::string status;  // completed, failed or disabled
  std::string key;     // digest of everything the stage's outputs depend on
  std::string run_id;  // fresh each time the stage executes
  std::string inputs;  // digest over the run ids of the stages it consumed
  std::filesystem::path dir;
  std::vector<FileRecord> outputs;
  double wall_seconds = 0;
  std::string finished_at;
  std::string checked_at;
  std::string error;
};

nlohmann::json to_json(const StageRecord& r);
StageRecord stage_record_from_json(const nlohmann::json& j);

struct RunManifest {
  std::string config_hash;
  std::string tool_version;
  std::uint64_t global_seed = 0;
  bool deterministic = false;
  nlohmann::json config;
  std::vector<StageRecord> stages;
  std::string failed_stage;
  std::string error;
  std::string created_at;
  std::string updated_at;
  std::filesystem::path run_dir;
  /// Headline numbers and artifact paths gathered after the last stage.
  nlohmann::json summary;

  const StageRecord* stage(const std::string& name) const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& file);

struct RunOptions {
  bool deterministic = false;
  /// Stop after this stage (empty: run all).
  std::string stop_after;
};

/// <output_root>/runs/<first 16 hex digits of the config hash>
std::filesystem::path run_directory(const ExperimentConfig& cfg);

/// Runs squeeze, probe, recover, relabel, posttrain, baseline and analyze.
/// Stage outputs live in content-keyed directories under output_root and are
/// reused when their recorded checksums and upstream run ids still match; a
/// stage that re-executes forces every consumer to re-execute. The run
/// manifest is rewritten atomically after each stage. Throws StageError.
RunManifest run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts = {});

struct TeacherComparison {
  nlohmann::json report;
  std::filesystem::path file;
};

/// Runs both arms and reports iteration-0 BN loss, the BN informativeness
/// verdict and paired student accuracy. The arms must differ in
/// pretrain.objective and nothing else; otherwise ConfigError lists the drift.
TeacherComparison compare_teachers(const ExperimentConfig& a, const ExperimentConfig& b, const RunOptions& opts = {});
/// Arms built from `base` with supervised and contrastive pretraining.
TeacherComparison compare_teachers(const ExperimentConfig& base, const RunOptions& opts = {});

}  // namespace scdd
