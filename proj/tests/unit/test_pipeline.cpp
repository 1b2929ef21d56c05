#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "scdd/core/errors.hpp"
#include "scdd/pipeline/pipeline.hpp"

using namespace scdd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scdd_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_config(const fs::path& root) {
  ExperimentConfig c;
  c.dataset = "procedural?classes=3&size=8&train=16&val=8&seed=3";
  c.output_root = root.string();
  c.network.width_multiplier = 0.25;
  c.pretrain.epochs = 1;
  c.pretrain.batch_size = 16;
  c.pretrain.projection_dim = 8;
  c.probe.epochs = 2;
  c.recovery.ipc = 2;
  c.recovery.iterations = 4;
  c.relabel.n_crops = 2;
  c.posttrain.student_spec.width_multiplier = 0.25;
  c.posttrain.epochs = 2;
  c.posttrain.batch_size = 8;
  c.baselines.full_data_epochs = 1;
  c.analysis.plots = false;
  c.apply_global_seed();
  return c;
}

// Manifest JSON with the fields that legitimately change on a no-op rerun removed.
json without_timestamps(json m) {
  m.erase("created_at");
  m.erase("updated_at");
  for (auto& s : m["stages"]) s.erase("checked_at");
  return m;
}

std::map<std::string, std::string> run_ids(const RunManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& s : m.stages) out[s.name] = s.run_id;
  return out;
}

}  // namespace

TEST_CASE("experiment config round-trips and rejects unknown keys") {
  ExperimentConfig c = tiny_config("out");
  c.global_seed = 7;
  c.apply_global_seed();
  const json j = to_json(c);
  const ExperimentConfig back = experiment_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.hash() == c.hash());

  json bad = j;
  bad["pretrain"]["learning_rte"] = 0.1;
  CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["pretrain"]["network"]["num_classes"] = 10;
  CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  bad = j;
  bad["validation"]["analysis"]["space"] = "logits";
  CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
}

TEST_CASE("stage seeds must follow global_seed") {
  const json j = to_json(tiny_config("out"));
  for (const char* ptr : {"/pretrain/seed", "/pretrain/probe/seed", "/recover/init/seed", "/recover/relabel/seed",
                          "/validation/seed"}) {
    CAPTURE(ptr);
    json bad = j;
    bad[json::json_pointer(ptr)] = 5;
    CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  }
  json ok = j;
  ok["global_seed"] = 5;
  for (const char* ptr : {"/pretrain/seed", "/pretrain/probe/seed", "/recover/init/seed", "/recover/relabel/seed", "/validation/seed"}) ok[json::json_pointer(ptr)] = 5;
  const auto c = experiment_from_json(ok);
  CHECK(c.recovery.seed == 5);
  CHECK(c.posttrain.seed == 5);

  ExperimentConfig drifted = tiny_config("out");
  drifted.probe.seed = 3;
  CHECK_THROWS_AS(drifted.validate(), ConfigError);
}

TEST_CASE("config file loads with comments and reports parse errors") {
  const fs::path dir = scratch("cfgfile");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "ok.json");
    out << "// tiny\n{ \"global_seed\": 2, \"recover\": { \"iterations\": 9 } }\n";
    std::ofstream broken(dir / "broken.json");
    broken << "{ \"global_seed\": ";
  }
  const auto c = load_experiment_config(dir / "ok.json");
  CHECK(c.global_seed == 2);
  CHECK(c.recovery.iterations == 9);
  CHECK(c.pretrain.seed == 2);
  CHECK_THROWS_AS(load_experiment_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), IoError);
}

TEST_CASE("every field change changes the hash") {
  const ExperimentConfig base = tiny_config("out");
  std::vector<std::function<void(ExperimentConfig&)>> edits{
      [](auto& c) { c.dataset = "procedural?classes=4"; },
      [](auto& c) { c.network.depth = 14; },
      [](auto& c) { c.pretrain.objective = Objective::contrastive; },
      [](auto& c) { c.pretrain.temperature = 0.3; },
      [](auto& c) { c.probe.learning_rate = 0.1; },
      [](auto& c) { c.recovery.alpha = 0.01; },
      [](auto& c) { c.recovery.first_bn_multiplier = 5; },
      [](auto& c) { c.relabel.temperature = 2; },
      [](auto& c) { c.posttrain.weight_decay = 0.02; },
      [](auto& c) { c.baselines.noise_control = false; },
      [](auto& c) { c.analysis.k = 4; },
      [](auto& c) { c.output_root = "elsewhere"; },
      [](auto& c) {
        c.global_seed = 1;
        c.apply_global_seed();
      }};
  std::set<std::string> hashes{base.hash()};
  for (const auto& edit : edits) {
    ExperimentConfig c = base;
    edit(c);
    hashes.insert(c.hash());
  }
  CHECK(hashes.size() == edits.size() + 1);
}

TEST_CASE("config_diff names leaf paths") {
  const ExperimentConfig a = tiny_config("out");
  CHECK(config_diff(a, a).empty());
  ExperimentConfig b = a;
  b.pretrain.objective = Objective::contrastive;
  b.recovery.learning_rate = 0.2;
  const auto d = config_diff(a, b);
  REQUIRE(d.size() == 2);
  std::set<std::string> paths{d[0].path, d[1].path};
  CHECK(paths.count("/pretrain/objective"));
  CHECK(paths.count("/recover/optimizer/lr") + paths.count("/recover/learning_rate") == 1);
}

TEST_CASE("teacher comparison refuses configuration drift") {
  const fs::path root = scratch("drift");
  ExperimentConfig a = tiny_config(root);
  ExperimentConfig b = a;
  b.pretrain.objective = Objective::contrastive;
  b.recovery.learning_rate = 0.2;
  try {
    compare_teachers(a, b);
    FAIL("drift accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lr") != std::string::npos);
  }
  CHECK_THROWS_AS(compare_teachers(a, a), ConfigError);
  CHECK_FALSE(fs::exists(root));
}

TEST_CASE("teacher comparison runs both arms when only the objective differs") {
  const fs::path root = scratch("compare");
  ExperimentConfig base = tiny_config(root);
  base.baselines = {false, false, false};
  const auto cmp = compare_teachers(base, {true, ""});
  REQUIRE(fs::exists(cmp.file));
  const json& r = cmp.report;
  REQUIRE(r["arms"].size() == 2);
  std::set<std::string> objectives;
  for (const auto& arm : r["arms"]) {
    objectives.insert(arm["objective"].get<std::string>());
    CHECK(arm["iteration0_bn"].get<double>() > 0);
    CHECK(arm["first_layer_var_of_means"].get<double>() >= 0);
    CHECK(arm["trajectory"].size() == 4);
    CHECK(arm.contains("student_top1"));
  }
  CHECK(objectives == std::set<std::string>{"supervised", "contrastive"});
  CHECK(r.contains("informativeness"));
  CHECK(r.contains("paired_top1"));
  CHECK(fs::exists(cmp.file.parent_path() / "plots"));
}

TEST_CASE("pipeline runs, resumes and reruns what was invalidated") {
  const fs::path root = scratch("run");
  ExperimentConfig cfg = tiny_config(root);
  cfg.analysis.plots = true;
  const RunOptions opts{true, ""};

  const RunManifest first = run_pipeline(cfg, opts);
  REQUIRE(first.stages.size() == pipeline_stages().size());
  for (const auto& s : first.stages) {
    CAPTURE(s.name);
    CHECK(s.status == "completed");
    CHECK_FALSE(s.outputs.empty());
    for (const auto& f : s.outputs) CHECK(fs::exists(s.dir / f.path));
  }
  const fs::path mfile = run_directory(cfg) / "run_manifest.json";
  REQUIRE(fs::exists(mfile));
  REQUIRE(fs::exists(run_directory(cfg) / "report.json"));
  const auto& sum = first.summary;
  for (const char* k : {"student_top1", "noise_top1", "real_subset_top1", "full_data_top1", "purity", "loss_gap"})
    CHECK_MESSAGE(sum.contains(k), k);
  CHECK(first.stage("recover")->dir == first.stage("relabel")->dir);
  CHECK(fs::exists(first.stage("analyze")->dir / "plots" / "trajectory.png"));

  SUBCASE("a second run skips every stage") {
    const json before = without_timestamps(to_json(read_run_manifest(mfile)));
    const RunManifest again = run_pipeline(cfg, opts);
    CHECK(run_ids(again) == run_ids(first));
    CHECK(without_timestamps(to_json(read_run_manifest(mfile))) == before);
  }

  SUBCASE("deleting the distilled set reruns its consumers only") {
    fs::remove_all(root / "distilled");
    const RunManifest again = run_pipeline(cfg, opts);
    const auto a = run_ids(first), b = run_ids(again);
    for (const char* s : {"squeeze", "probe", "baseline"}) CHECK_MESSAGE(a.at(s) == b.at(s), s);
    for (const char* s : {"recover", "relabel", "posttrain", "analyze"}) CHECK_MESSAGE(a.at(s) != b.at(s), s);
    CHECK(again.summary["student_top1"] == first.summary["student_top1"]);
  }

  SUBCASE("a tampered output forces its stage to rerun") {
    const fs::path ckpt = first.stage("posttrain")->dir / "posttrain.json";
    { std::ofstream(ckpt, std::ios::app) << " "; }
    const RunManifest again = run_pipeline(cfg, opts);
    const auto a = run_ids(first), b = run_ids(again);
    CHECK(a.at("posttrain") != b.at("posttrain"));
    CHECK(a.at("analyze") == b.at("analyze"));
  }

  SUBCASE("changing a downstream setting leaves upstream stages alone") {
    ExperimentConfig other = cfg;
    other.posttrain.epochs = 3;
    const RunManifest m = run_pipeline(other, opts);
    const auto a = run_ids(first), b = run_ids(m);
    for (const char* s : {"squeeze", "probe", "recover", "relabel", "analyze"}) CHECK_MESSAGE(a.at(s) == b.at(s), s);
    CHECK(a.at("posttrain") != b.at("posttrain"));
    CHECK(m.run_dir != first.run_dir);
  }
}

TEST_CASE("same seed gives the same numbers in separate output roots") {
  const RunOptions opts{true, ""};
  ExperimentConfig a = tiny_config(scratch("seed_a"));
  ExperimentConfig b = tiny_config(scratch("seed_b"));
  a.baselines.full_data = b.baselines.full_data = false;
  const auto ma = run_pipeline(a, opts);
  const auto mb = run_pipeline(b, opts);
  CHECK(ma.summary["student_top1"] == mb.summary["student_top1"]);
  CHECK(ma.summary["noise_top1"] == mb.summary["noise_top1"]);
  CHECK(ma.summary["purity"] == mb.summary["purity"]);
  CHECK(ma.summary["recovery"] == mb.summary["recovery"]);
  CHECK(ma.stage("baseline")->status == "disabled");
}

TEST_CASE("a failing stage is named in the error and the manifest") {
  const fs::path root = scratch("fail");
  ExperimentConfig cfg = tiny_config(root);
  cfg.baselines = {false, false, false};
  cfg.analysis.classes = {0, 7};
  try {
    run_pipeline(cfg, {true, ""});
    FAIL("analysis with a missing class succeeded");
  } catch (const StageError& e) {
    CHECK(e.stage() == "analyze");
    CHECK(std::string(e.what()).find("analyze") != std::string::npos);
  }
  const auto m = read_run_manifest(run_directory(cfg) / "run_manifest.json");
  CHECK(m.failed_stage == "analyze");
  CHECK(m.stage("analyze")->status == "failed");
  CHECK(m.stage("posttrain")->status == "completed");

  SUBCASE("stop_after ends early") {
    ExperimentConfig ok = tiny_config(scratch("stop"));
    const auto partial = run_pipeline(ok, {true, "probe"});
    CHECK(partial.stages.size() == 2);
    CHECK_THROWS_AS(run_pipeline(ok, {true, "nonsense"}), ConfigError);
  }
}
