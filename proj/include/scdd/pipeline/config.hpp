#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scdd/netcore/network_spec.hpp"
#include "scdd/posttrain/posttrain.hpp"
#include "scdd/recover/recover.hpp"
#include "scdd/relabel/relabel.hpp"
#include "scdd/squeeze/augment.hpp"
#include "scdd/squeeze/pretrain.hpp"
#include "scdd/squeeze/probe.hpp"

namespace scdd {

struct BaselineConfig {
  bool noise_control = true;
  bool real_subset_control = true;
  /// Same student trained on the whole real training set.
  bool full_data = true;
  int full_data_epochs = 30;
  RrcParams full_data_crop{0.6, 1.0};

  void validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

struct AnalysisConfig {
  std::vector<int> classes{0, 1, 2};
  int k = 0;  // 0: one cluster per class
  std::string space = "pixels";  // or "features" (teacher embedding)
  bool plots = true;

  void validate() const;
  bool operator==(const AnalysisConfig&) const = default;
};

/// One experiment. On disk it is JSON grouped by stage:
///
///   { "dataset": "procedural", "global_seed": 0, "output_root": "runs",
///     "pretrain":   { "network": {...}, <PretrainConfig>, "probe": {...} },
///     "recover":    { <RecoveryConfig>, "relabel": {...} },
///     "validation": { <PostTrainConfig>, "baselines": {...}, "analysis": {...} } }
///
/// Every stage seed follows global_seed; network class count and input shape
/// follow the dataset.
struct ExperimentConfig {
  std::string dataset = "procedural";
  NetworkSpec network;
  PretrainConfig pretrain;
  ProbeConfig probe;
  RecoveryConfig recovery;
  RelabelConfig relabel;
  PostTrainConfig posttrain;
  BaselineConfig baselines;
  AnalysisConfig analysis;
  std::string output_root = "scdd-runs";
  std::uint64_t global_seed = 0;

  /// Copies global_seed into every stage configuration.
  void apply_global_seed();
  void validate() const;
  /// SHA-256 of the canonical JSON form; any field change changes it.
  std::string hash() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Rejects unknown keys and stage seeds that disagree with global_seed.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

struct ConfigDifference {
  std::string path;  // JSON pointer
  nlohmann::json a;
  nlohmann::json b;
};

/// Leaf-level differences between two configurations.
std::vector<ConfigDifference> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace scdd
