#include "scdd/pipeline/config.hpp"

#include <fstream>
#include <set>

#include "scdd/core/checksum.hpp"
#include "scdd/core/errors.hpp"
#include "scdd/squeeze/dataset.hpp"

namespace scdd {

using nlohmann::json;

void BaselineConfig::validate() const {
  if (full_data && full_data_epochs < 1) throw ConfigError("baselines.full_data_epochs must be >= 1");
  full_data_crop.validate();
}

void AnalysisConfig::validate() const {
  if (classes.empty()) throw ConfigError("analysis.classes must name at least one class");
  if (std::set<int>(classes.begin(), classes.end()).size() != classes.size())
    throw ConfigError("analysis.classes contains duplicates");
  for (int c : classes)
    if (c < 0) throw ConfigError("analysis.classes must be non-negative");
  if (k < 0) throw ConfigError("analysis.k must be >= 0");
  if (space != "pixels" && space != "features") throw ConfigError("analysis.space must be 'pixels' or 'features'");
}

void ExperimentConfig::apply_global_seed() {
  pretrain.seed = probe.seed = recovery.seed = relabel.seed = posttrain.seed = global_seed;
}

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset must be given");
  parse_dataset_source(dataset);
  network.validate();
  posttrain.student_spec.validate();
  pretrain.validate();
  probe.validate();
  recovery.validate();
  relabel.validate();
  posttrain.validate();
  baselines.validate();
  analysis.validate();
  if (output_root.empty()) throw ConfigError("output_root must be given");
  for (std::uint64_t seed : {pretrain.seed, probe.seed, recovery.seed, relabel.seed, posttrain.seed})
    if (seed != global_seed) throw ConfigError("stage seeds must equal global_seed");
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json(*this).dump()); }

namespace {

json network_json(const NetworkSpec& s) {
  return {{"architecture", to_string(s.architecture)}, {"depth", s.depth}, {"width_multiplier", s.width_multiplier}};
}

NetworkSpec network_from(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  NetworkSpec s;
  for (const auto& [key, value] : j.items())
    if (key != "architecture" && key != "depth" && key != "width_multiplier")
      throw ConfigError("unknown key '" + key + "' in " + where + " (class count and input shape come from the dataset)");
  if (j.contains("architecture")) s.architecture = parse_architecture(j.at("architecture").get<std::string>());
  s.depth = j.value("depth", s.depth);
  s.width_multiplier = j.value("width_multiplier", s.width_multiplier);
  return s;
}

// Keys accepted in a section: those the defaults serialize to, plus extras.
void check_keys(const json& section, const json& defaults, std::initializer_list<const char*> extra,
                const std::string& where) {
  if (!section.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : section.items()) {
    bool ok = defaults.contains(key);
    for (const char* e : extra) ok = ok || key == e;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

template <class T>
T parse_section(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void leaf_diff(const json& a, const json& b, const std::string& path, std::vector<ConfigDifference>& out) {
  if (a.is_object() && b.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys)
      leaf_diff(a.contains(k) ? a.at(k) : json(), b.contains(k) ? b.at(k) : json(), path + "/" + k, out);
  } else if (a != b) {
    out.push_back({path, a, b});
  }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json pretrain = c.pretrain;
  pretrain["network"] = network_json(c.network);
  pretrain["probe"] = c.probe;
  json recover = c.recovery;
  recover["relabel"] = c.relabel;
  json validation = c.posttrain;
  validation["baselines"] = {{"noise_control", c.baselines.noise_control},
                             {"real_subset_control", c.baselines.real_subset_control},
                             {"full_data", c.baselines.full_data},
                             {"full_data_epochs", c.baselines.full_data_epochs},
                             {"full_data_crop", c.baselines.full_data_crop}};
  validation["analysis"] = {{"classes", c.analysis.classes},
                            {"k", c.analysis.k},
                            {"space", c.analysis.space},
                            {"plots", c.analysis.plots}};
  return {{"dataset", c.dataset},
          {"global_seed", c.global_seed},
          {"output_root", c.output_root},
          {"pretrain", pretrain},
          {"recover", recover},
          {"validation", validation}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (key != "dataset" && key != "global_seed" && key != "output_root" && key != "pretrain" && key != "recover" &&
        key != "validation")
      throw ConfigError("unknown top-level key '" + key + "'");
  ExperimentConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.global_seed = j.value("global_seed", c.global_seed);
    c.output_root = j.value("output_root", c.output_root);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }

  std::vector<std::pair<std::string, json>> explicit_seeds;
  auto note_seed = [&](const json& s, const char* key, const std::string& where) {
    if (s.contains(key)) explicit_seeds.push_back({where, s.at(key)});
  };

  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    check_keys(p, json(PretrainConfig{}), {"network", "probe"}, "pretrain");
    if (p.contains("network")) c.network = network_from(p.at("network"), "pretrain.network");
    if (p.contains("probe")) {
      check_keys(p.at("probe"), json(ProbeConfig{}), {}, "pretrain.probe");
      c.probe = parse_section<ProbeConfig>(p.at("probe"), "pretrain.probe");
      note_seed(p.at("probe"), "seed", "pretrain.probe.seed");
    }
    c.pretrain = parse_section<PretrainConfig>(without(p, {"network", "probe"}), "pretrain");
    note_seed(p, "seed", "pretrain.seed");
  }
  if (j.contains("recover")) {
    const auto& r = j.at("recover");
    check_keys(r, json(RecoveryConfig{}), {"relabel"}, "recover");
    if (r.contains("relabel")) {
      check_keys(r.at("relabel"), json(RelabelConfig{}), {}, "recover.relabel");
      c.relabel = parse_section<RelabelConfig>(r.at("relabel"), "recover.relabel");
      note_seed(r.at("relabel"), "seed", "recover.relabel.seed");
    }
    c.recovery = parse_section<RecoveryConfig>(without(r, {"relabel"}), "recover");
    if (r.contains("init") && r.at("init").is_object()) note_seed(r.at("init"), "seed", "recover.init.seed");
  }
  if (j.contains("validation")) {
    const auto& v = j.at("validation");
    check_keys(v, json(PostTrainConfig{}), {"baselines", "analysis", "crops_per_epoch"}, "validation");
    if (v.contains("student")) network_from(v.at("student"), "validation.student");
    c.posttrain = parse_section<PostTrainConfig>(without(v, {"baselines", "analysis"}), "validation");
    note_seed(v, "seed", "validation.seed");
    if (v.contains("baselines")) {
      const auto& b = v.at("baselines");
      check_keys(b, json(to_json(ExperimentConfig{})["validation"]["baselines"]), {}, "validation.baselines");
      BaselineConfig d;
      try {
        c.baselines.noise_control = b.value("noise_control", d.noise_control);
        c.baselines.real_subset_control = b.value("real_subset_control", d.real_subset_control);
        c.baselines.full_data = b.value("full_data", d.full_data);
        c.baselines.full_data_epochs = b.value("full_data_epochs", d.full_data_epochs);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("validation.baselines: ") + e.what());
      }
      if (b.contains("full_data_crop"))
        c.baselines.full_data_crop = parse_section<RrcParams>(b.at("full_data_crop"), "validation.baselines.full_data_crop");
    }
    if (v.contains("analysis")) {
      const auto& a = v.at("analysis");
      check_keys(a, json(to_json(ExperimentConfig{})["validation"]["analysis"]), {}, "validation.analysis");
      AnalysisConfig d;
      try {
        c.analysis.classes = a.value("classes", d.classes);
        c.analysis.k = a.value("k", d.k);
        c.analysis.space = a.value("space", d.space);
        c.analysis.plots = a.value("plots", d.plots);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("validation.analysis: ") + e.what());
      }
    }
  }
  for (const auto& [where, seed] : explicit_seeds)
    if (!seed.is_number_integer() || seed.get<std::int64_t>() < 0 || seed.get<std::uint64_t>() != c.global_seed)
      throw ConfigError(where + " = " + seed.dump() + " disagrees with global_seed = " + std::to_string(c.global_seed) +
                        "; stage seeds follow global_seed");
  c.apply_global_seed();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config " + file.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::vector<ConfigDifference> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::vector<ConfigDifference> out;
  leaf_diff(to_json(a), to_json(b), "", out);
  return out;
}

}  // namespace scdd
