#include "scdd/pipeline/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "scdd/analysis/cluster.hpp"
#include "scdd/analysis/plots.hpp"
#include "scdd/bnstats/informativeness.hpp"
#include "scdd/core/checksum.hpp"
#include "scdd/core/log.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/netcore/checkpoint.hpp"
#include "scdd/squeeze/dataset.hpp"

namespace scdd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string fresh_run_id() {
  std::random_device rd;
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8) << rd() << std::setw(8) << rd();
  return os.str();
}

std::string short_key(const std::string& hex) { return hex.substr(0, 16); }

void write_atomic(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, file);
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

json curve_json(const std::vector<BudgetPoint>& curve) {
  json out = json::array();
  for (const auto& p : curve) out.push_back({{"epoch", p.epoch}, {"top1", p.top1}, {"train_loss", p.train_loss}});
  return out;
}

json trajectory_json(const std::vector<TrajectoryPoint>& t) {
  json out = json::array();
  for (const auto& p : t) out.push_back({{"iter", p.iter}, {"ce", p.ce}, {"bn", p.bn}, {"total", p.total}});
  return out;
}

// Lists every regular file below `dir` (relative, sorted), skipping stage records.
std::vector<std::string> files_below(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel.rfind("stage_", 0) == 0) continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct StageDef {
  std::string name;
  std::string family;                 // directory family under output_root
  std::vector<std::string> consumes;  // upstream stages whose run ids feed `inputs`
  json key_material;
  bool owns_dir = true;               // false: shares the directory of `consumes[0]`
  bool enabled = true;
  std::function<std::vector<std::string>(const fs::path&)> body;  // returns output files
};

class PipelineRun {
 public:
  PipelineRun(const ExperimentConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts) {}

  RunManifest run() {
    cfg_.validate();
    parallel::set_deterministic(opts_.deterministic);
    root_ = cfg_.output_root;
    manifest_.config_hash = cfg_.hash();
    manifest_.tool_version = SCDD_VERSION;
    manifest_.global_seed = cfg_.global_seed;
    manifest_.deterministic = opts_.deterministic;
    manifest_.config = to_json(cfg_);
    manifest_.run_dir = run_directory(cfg_);
    const fs::path mfile = manifest_.run_dir / "run_manifest.json";
    manifest_.created_at = now_iso();
    if (fs::exists(mfile)) {
      try {
        manifest_.created_at = read_run_manifest(mfile).created_at;
      } catch (const Error&) {
      }
    }
    if (!opts_.stop_after.empty() &&
        std::find(pipeline_stages().begin(), pipeline_stages().end(), opts_.stop_after) == pipeline_stages().end())
      throw ConfigError("unknown stage '" + opts_.stop_after + "'");

    for (auto& def : definitions()) {
      execute(def);
      if (def.name == opts_.stop_after) break;
    }
    manifest_.summary = summarize();
    write_manifest();
    write_atomic(manifest_.run_dir / "report.json", manifest_.summary.dump(2) + "\n");
    return manifest_;
  }

 private:
  const DatasetSplits& data() {
    if (!data_) {
      log::info("loading dataset ", cfg_.dataset);
      data_ = load_dataset(parse_dataset_source(cfg_.dataset));
    }
    return *data_;
  }

  NetworkSpec teacher_spec() {
    NetworkSpec s = cfg_.network;
    s.num_classes = data().train.num_classes;
    s.input_shape = data().train.shape;
    return s;
  }

  fs::path dir_of(const std::string& stage) const { return records_.at(stage).dir; }

  std::vector<StageDef> definitions() {
    const json dataset = cfg_.dataset;
    const std::string squeeze_key = sha256_hex(json{{"dataset", dataset},
                                                    {"network", to_json(cfg_)["pretrain"]["network"]},
                                                    {"pretrain", json(cfg_.pretrain)}}
                                                   .dump());
    const std::string probe_key = sha256_hex(json{{"squeeze", squeeze_key}, {"probe", json(cfg_.probe)}}.dump());
    const std::string recover_key =
        sha256_hex(json{{"probe", probe_key}, {"recovery", json(cfg_.recovery)}, {"relabel", json(cfg_.relabel)}}.dump());
    const std::string relabel_key = sha256_hex(json{{"recover", recover_key}, {"relabel", json(cfg_.relabel)}}.dump());
    const json validation = to_json(cfg_)["validation"];
    const std::string posttrain_key = sha256_hex(
        json{{"relabel", relabel_key}, {"posttrain", json(cfg_.posttrain)},
             {"noise", cfg_.baselines.noise_control}, {"real", cfg_.baselines.real_subset_control}}
            .dump());
    const std::string baseline_key = sha256_hex(
        json{{"dataset", dataset}, {"posttrain", json(cfg_.posttrain)}, {"baselines", validation["baselines"]}}.dump());
    const std::string analyze_key =
        sha256_hex(json{{"relabel", relabel_key}, {"analysis", validation["analysis"]}}.dump());

    std::vector<StageDef> defs;
    defs.push_back({"squeeze", "pretrained", {}, squeeze_key, true, true, [this](const fs::path& d) { return squeeze(d); }});
    defs.push_back({"probe", "teachers", {"squeeze"}, probe_key, true, true, [this](const fs::path& d) { return probe(d); }});
    defs.push_back({"recover", "distilled", {"probe"}, recover_key, true, true, [this](const fs::path& d) { return recover(d); }});
    defs.push_back({"relabel", "distilled", {"recover", "probe"}, relabel_key, false, true,
                    [this](const fs::path& d) { return relabel(d); }});
    defs.push_back({"posttrain", "students", {"relabel"}, posttrain_key, true, true,
                    [this](const fs::path& d) { return posttrain(d); }});
    defs.push_back({"baseline", "baselines", {}, baseline_key, true, cfg_.baselines.full_data,
                    [this](const fs::path& d) { return baseline(d); }});
    defs.push_back({"analyze", "analysis", {"relabel", "probe"}, analyze_key, true, true,
                    [this](const fs::path& d) { return analyze(d); }});
    return defs;
  }

  std::string inputs_digest(const StageDef& def) const {
    json ids = json::array();
    for (const auto& c : def.consumes) ids.push_back({c, records_.at(c).run_id});
    return sha256_hex(ids.dump());
  }

  static fs::path record_file(const fs::path& dir, const std::string& stage) { return dir / ("stage_" + stage + ".json"); }

  std::optional<StageRecord> cached(const StageDef& def, const fs::path& dir, const std::string& inputs) const {
    const fs::path file = record_file(dir, def.name);
    if (!fs::exists(file)) return std::nullopt;
    StageRecord r;
    try {
      r = stage_record_from_json(read_json(file));
    } catch (const Error&) {
      return std::nullopt;
    }
    if (r.status != "completed" || r.key != def.key_material.get<std::string>() || r.inputs != inputs)
      return std::nullopt;
    for (const auto& f : r.outputs)
      if (!fs::exists(dir / f.path) || sha256_file(dir / f.path) != f.sha256) return std::nullopt;
    r.dir = dir;
    return r;
  }

  void execute(StageDef& def) {
    const std::string key = def.key_material.get<std::string>();
    const fs::path dir = def.owns_dir ? root_ / def.family / short_key(key) : dir_of(def.consumes.front());
    StageRecord rec;
    rec.name = def.name;
    rec.key = key;
    rec.dir = dir;
    if (!def.enabled) {
      rec.status = "disabled";
      records_[def.name] = rec;
      upsert(rec);
      write_manifest();
      return;
    }
    const std::string inputs = inputs_digest(def);
    if (auto hit = cached(def, dir, inputs)) {
      hit->checked_at = now_iso();
      log::info(def.name, ": up to date (", dir.string(), ")");
      records_[def.name] = *hit;
      upsert(*hit);
      write_manifest();
      return;
    }
    log::info(def.name, ": running in ", dir.string());
    if (def.owns_dir) {
      std::error_code ec;
      fs::remove_all(dir, ec);
    } else {
      fs::remove(record_file(dir, def.name));
    }
    fs::create_directories(dir);
    rec.inputs = inputs;
    rec.run_id = fresh_run_id();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto outputs = def.body(dir);
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& f : outputs) rec.outputs.push_back({f, sha256_file(dir / f)});
      rec.status = "completed";
      rec.finished_at = rec.checked_at = now_iso();
      write_atomic(record_file(dir, def.name), to_json(rec).dump(2) + "\n");
    } catch (const std::exception& e) {
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.status = "failed";
      rec.error = e.what();
      rec.finished_at = rec.checked_at = now_iso();
      upsert(rec);
      manifest_.failed_stage = def.name;
      manifest_.error = e.what();
      write_manifest();
      throw StageError(def.name, e.what());
    }
    log::info(def.name, ": done in ", rec.wall_seconds, " s");
    records_[def.name] = rec;
    upsert(rec);
    write_manifest();
  }

  void upsert(const StageRecord& r) {
    for (auto& s : manifest_.stages)
      if (s.name == r.name) {
        s = r;
        return;
      }
    manifest_.stages.push_back(r);
  }

  void write_manifest() {
    manifest_.updated_at = now_iso();
    if (manifest_.failed_stage.empty()) manifest_.error.clear();
    write_atomic(manifest_.run_dir / "run_manifest.json", to_json(manifest_).dump(2) + "\n");
  }

  // ---- stages ----

  std::vector<std::string> squeeze(const fs::path& dir) {
    const auto& d = data();
    std::ofstream log_csv(dir / "pretrain_log.csv");
    log_csv << "epoch,loss\n";
    auto on_epoch = [&](int epoch, double loss) {
      log_csv << epoch << ',' << std::setprecision(10) << loss << '\n';
      log::info("squeeze: epoch ", epoch, " loss ", loss);
    };
    TrainedBackbone m = cfg_.pretrain.objective == Objective::supervised
                            ? pretrain_supervised(d.train, teacher_spec(), cfg_.pretrain, AugmentationPolicy::supervised(), on_epoch)
                            : pretrain_contrastive(UnlabeledImages(d.train), teacher_spec(), cfg_.pretrain,
                                                   AugmentationPolicy::contrastive(), on_epoch);
    log_csv.close();
    save_checkpoint(dir / "pretrained.ckpt", m);
    return {"pretrain_log.csv", "pretrained.ckpt"};
  }

  std::vector<std::string> probe(const fs::path& dir) {
    const auto& d = data();
    TrainedBackbone pre = load_checkpoint(dir_of("squeeze") / "pretrained.ckpt");
    // A supervised backbone keeps the head it was trained with.
    TrainedBackbone teacher = pre.is_aligned() ? pre : linear_probe(pre, d.train, cfg_.probe);
    const double val_acc = classification_accuracy(teacher, d.val);
    save_checkpoint(dir / "teacher.ckpt", teacher);
    json info = {{"objective", to_string(*teacher.provenance.objective)},
                 {"probed", !pre.is_aligned()},
                 {"val_accuracy", val_acc},
                 {"informativeness", to_json(informativeness(extract_bn_statistics(teacher), "teacher"))}};
    if (teacher.provenance.train_accuracy) info["train_accuracy"] = *teacher.provenance.train_accuracy;
    if (teacher.provenance.probe_accuracy) info["probe_accuracy"] = *teacher.provenance.probe_accuracy;
    write_atomic(dir / "teacher.json", info.dump(2) + "\n");
    log::info("probe: teacher val accuracy ", val_acc);
    return {"teacher.ckpt", "teacher.json"};
  }

  std::vector<std::string> recover(const fs::path& dir) {
    const TrainedBackbone teacher = load_checkpoint(dir_of("probe") / "teacher.ckpt");
    const int every = std::max(1, cfg_.recovery.iterations / 10);
    auto r = recover_dataset(teacher, cfg_.recovery, [&](int batch, const TrajectoryPoint& p) {
      if (p.iter % every == 0 || p.iter + 1 == cfg_.recovery.iterations)
        log::info("recover: batch ", batch, " iter ", p.iter, " ce ", p.ce, " bn ", p.bn);
    });
    write_recovery(dir, r, teacher);
    return files_below(dir);
  }

  std::vector<std::string> relabel(const fs::path& dir) {
    TrainedBackbone teacher = load_checkpoint(dir_of("probe") / "teacher.ckpt");
    std::vector<Image16> images;
    std::vector<int> labels;
    read_recovered_images(dir, images, labels);
    const auto d = relabel_images(teacher, std::move(images), std::move(labels), cfg_.relabel, cfg_.recovery);
    pack_distilled(d, dir);
    return {"manifest.json", "labels/labels.bin", "crops.csv"};
  }

  std::vector<std::string> posttrain(const fs::path& dir) {
    const auto& d = data();
    const auto distilled = load_distilled(dir_of("relabel"));
    auto student = train_on_distilled(distilled, cfg_.posttrain, &d.val);
    const double top1 = evaluate(student.model, d.val);
    save_checkpoint(dir / "student.ckpt", student.model);
    json report = {{"top1", top1}, {"budget_curve", curve_json(student.budget_curve)}, {"controls", json::object()}};
    log::info("posttrain: distilled student top1 ", top1);
    if (cfg_.baselines.noise_control) {
      auto run = train_on_distilled(noise_control(distilled, cfg_.global_seed), cfg_.posttrain, &d.val);
      const double acc = evaluate(run.model, d.val);
      report["controls"]["noise"] = {{"top1", acc}, {"budget_curve", curve_json(run.budget_curve)}};
      log::info("posttrain: noise control top1 ", acc);
    }
    if (cfg_.baselines.real_subset_control) {
      auto run = train_on_distilled(real_subset_control(d.train, distilled, cfg_.global_seed), cfg_.posttrain, &d.val);
      const double acc = evaluate(run.model, d.val);
      report["controls"]["real_subset"] = {{"top1", acc}, {"budget_curve", curve_json(run.budget_curve)}};
      log::info("posttrain: real subset control top1 ", acc);
    }
    write_atomic(dir / "posttrain.json", report.dump(2) + "\n");
    return {"student.ckpt", "posttrain.json"};
  }

  std::vector<std::string> baseline(const fs::path& dir) {
    const auto& d = data();
    const auto& shape = d.train.shape;
    const Normalization norm = compute_normalization(d.train.pixels, shape.channels, shape.height * shape.width);
    PostTrainConfig pc = cfg_.posttrain;
    pc.epochs = cfg_.baselines.full_data_epochs;
    auto run = train_full_data(d.train, norm, pc, cfg_.baselines.full_data_crop, &d.val);
    const double top1 = evaluate(run.model, d.val);
    save_checkpoint(dir / "full_student.ckpt", run.model);
    const json report = {{"top1", top1}, {"epochs", pc.epochs}, {"budget_curve", curve_json(run.budget_curve)}};
    write_atomic(dir / "full.json", report.dump(2) + "\n");
    log::info("baseline: full-data student top1 ", top1);
    return {"full_student.ckpt", "full.json"};
  }

  std::vector<std::string> analyze(const fs::path& dir) {
    TrainedBackbone teacher = load_checkpoint(dir_of("probe") / "teacher.ckpt");
    const auto distilled = load_distilled(dir_of("relabel"));
    const auto trajectory = read_trajectory_csv(dir_of("recover") / "trajectory.csv");
    const auto snapshot = extract_bn_statistics(teacher);

    const auto report = cluster_distilled(distilled, cfg_.analysis.classes, cfg_.analysis.space, &teacher,
                                          cfg_.global_seed, cfg_.analysis.k);
    std::vector<std::string> outputs{"analysis.json"};
    if (cfg_.analysis.plots) {
      outputs.push_back(fs::relative(emit_trajectory_plot(trajectory, dir / "plots"), dir).generic_string());
      for (const auto& f : emit_bn_plots({{"teacher", snapshot}}, dir / "plots"))
        outputs.push_back(fs::relative(f, dir).generic_string());
      outputs.push_back(fs::relative(emit_cluster_plot(report, dir / "plots"), dir).generic_string());
    }
    const json out = {{"informativeness", to_json(informativeness(snapshot, "teacher"))},
                      {"cluster", to_json(report)},
                      {"cluster_space", cfg_.analysis.space},
                      {"iteration0_bn", trajectory.front().bn},
                      {"final_bn", trajectory.back().bn}};
    write_atomic(dir / "analysis.json", out.dump(2) + "\n");
    log::info("analyze: purity ", report.purity);
    return outputs;
  }

  json summarize() {
    json s = {{"config_hash", manifest_.config_hash}, {"dataset", cfg_.dataset}, {"global_seed", cfg_.global_seed}};
    json paths = json::object();
    auto done = [&](const std::string& n) { return records_.count(n) && records_.at(n).status == "completed"; };
    if (done("probe")) {
      paths["teacher"] = (dir_of("probe") / "teacher.ckpt").string();
      s["teacher"] = read_json(dir_of("probe") / "teacher.json");
      s["teacher"].erase("informativeness");
    }
    if (done("recover")) {
      std::vector<double> initial, final;
      int improved = 0, total = 0;
      for (const auto& b : read_json(dir_of("recover") / "batches.json")) {
        ++total;
        improved += b["final"]["bn"].get<double>() < b["initial"]["bn"].get<double>();
      }
      const auto traj = read_trajectory_csv(dir_of("recover") / "trajectory.csv");
      s["recovery"] = {{"iteration0_bn", traj.front().bn}, {"final_bn", traj.back().bn},
                       {"batches_improved", improved}, {"batches", total}};
      paths["distilled"] = dir_of("recover").string();
    }
    if (done("posttrain")) {
      const json p = read_json(dir_of("posttrain") / "posttrain.json");
      s["student_top1"] = p["top1"];
      for (const auto& [name, c] : p["controls"].items()) s[name + "_top1"] = c["top1"];
      if (p["controls"].contains("noise"))
        s["margin_over_noise"] = p["top1"].get<double>() - p["controls"]["noise"]["top1"].get<double>();
      paths["student"] = (dir_of("posttrain") / "student.ckpt").string();
    }
    if (done("baseline")) {
      s["full_data_top1"] = read_json(dir_of("baseline") / "full.json")["top1"];
      paths["full_student"] = (dir_of("baseline") / "full_student.ckpt").string();
    }
    if (done("posttrain") && done("baseline")) {
      const double full = s["full_data_top1"].get<double>();
      s["fraction_of_full"] = full > 0 ? s["student_top1"].get<double>() / full : 0.0;
      TrainedBackbone a = load_checkpoint(dir_of("baseline") / "full_student.ckpt");
      TrainedBackbone b = load_checkpoint(dir_of("posttrain") / "student.ckpt");
      const auto gap = deviation_gap(a, b, data().val);
      s["loss_gap"] = {{"mean_abs", gap.mean_abs}, {"sup", gap.sup}};
    }
    if (done("analyze")) {
      const json a = read_json(dir_of("analyze") / "analysis.json");
      s["purity"] = a["cluster"]["purity"];
      s["first_layer_var_of_means"] = a.at("informativeness").at("headline").at("first_layer_var_of_means");
      paths["analysis"] = dir_of("analyze").string();
    }
    s["paths"] = paths;
    return s;
  }

  ExperimentConfig cfg_;
  RunOptions opts_;
  fs::path root_;
  RunManifest manifest_;
  std::map<std::string, StageRecord> records_;
  std::optional<DatasetSplits> data_;
};

}  // namespace

json to_json(const StageRecord& r) {
  json outputs = json::array();
  for (const auto& f : r.outputs) outputs.push_back({{"path", f.path}, {"sha256", f.sha256}});
  json j = {{"name", r.name},         {"status", r.status},        {"key", r.key},
            {"run_id", r.run_id},     {"inputs", r.inputs},        {"dir", r.dir.string()},
            {"outputs", outputs},     {"wall_seconds", r.wall_seconds}, {"finished_at", r.finished_at},
            {"checked_at", r.checked_at}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

StageRecord stage_record_from_json(const json& j) {
  try {
    StageRecord r;
    r.name = j.at("name").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.key = j.at("key").get<std::string>();
    r.run_id = j.value("run_id", "");
    r.inputs = j.value("inputs", "");
    r.dir = j.value("dir", "");
    for (const auto& f : j.at("outputs")) r.outputs.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.finished_at = j.value("finished_at", "");
    r.checked_at = j.value("checked_at", "");
    r.error = j.value("error", "");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("stage record: ") + e.what());
  }
}

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

json to_json(const RunManifest& m) {
  json stages = json::array();
  for (const auto& s : m.stages) stages.push_back(to_json(s));
  json j = {{"config_hash", m.config_hash},     {"tool_version", m.tool_version}, {"global_seed", m.global_seed},
            {"deterministic", m.deterministic}, {"config", m.config},             {"stages", stages},
            {"created_at", m.created_at},       {"updated_at", m.updated_at},     {"run_dir", m.run_dir.string()},
            {"summary", m.summary}};
  if (!m.failed_stage.empty()) j["failure"] = {{"stage", m.failed_stage}, {"error", m.error}};
  return j;
}

RunManifest read_run_manifest(const fs::path& file) {
  const json j = read_json(file);
  try {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.tool_version = j.value("tool_version", "");
    m.global_seed = j.value("global_seed", std::uint64_t{0});
    m.deterministic = j.value("deterministic", false);
    m.config = j.value("config", json::object());
    for (const auto& s : j.at("stages")) m.stages.push_back(stage_record_from_json(s));
    if (j.contains("failure")) {
      m.failed_stage = j["failure"].value("stage", "");
      m.error = j["failure"].value("error", "");
    }
    m.created_at = j.value("created_at", "");
    m.updated_at = j.value("updated_at", "");
    m.run_dir = j.value("run_dir", "");
    m.summary = j.value("summary", json::object());
    return m;
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

fs::path run_directory(const ExperimentConfig& cfg) { return fs::path(cfg.output_root) / "runs" / short_key(cfg.hash()); }

RunManifest run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) { return PipelineRun(cfg, opts).run(); }

TeacherComparison compare_teachers(const ExperimentConfig& a, const ExperimentConfig& b, const RunOptions& opts) {
  const auto diff = config_diff(a, b);
  std::string drift;
  bool objective_differs = false;
  for (const auto& d : diff) {
    if (d.path == "/pretrain/objective") {
      objective_differs = true;
      continue;
    }
    drift += "\n  " + d.path + ": " + d.a.dump() + " vs " + d.b.dump();
  }
  if (!drift.empty()) throw ConfigError("teacher arms may differ only in pretrain.objective; drift:" + drift);
  if (!objective_differs) throw ConfigError("teacher arms must differ in pretrain.objective");

  json arms = json::array();
  std::vector<BNStatSnapshot> snapshots;
  std::vector<std::string> names;
  for (const ExperimentConfig* cfg : {&a, &b}) {
    const auto m = run_pipeline(*cfg, opts);
    const std::string name = to_string(cfg->pretrain.objective);
    const auto traj = read_trajectory_csv(m.stage("recover")->dir / "trajectory.csv");
    const auto snapshot = extract_bn_statistics(load_checkpoint(m.stage("probe")->dir / "teacher.ckpt"));
    const auto info = informativeness(snapshot, name);
    json arm = {{"objective", name},
                {"run_dir", m.run_dir.string()},
                {"config_hash", m.config_hash},
                {"iteration0_bn", traj.front().bn},
                {"final_bn", traj.back().bn},
                {"first_layer_var_of_means", info.first_layer_var_of_means},
                {"trajectory", trajectory_json(traj)}};
    if (m.summary.contains("student_top1")) arm["student_top1"] = m.summary["student_top1"];
    if (m.summary.contains("teacher")) arm["teacher"] = m.summary["teacher"];
    arms.push_back(arm);
    snapshots.push_back(snapshot);
    names.push_back(name);
  }
  const auto cmp = compare_informativeness(snapshots[0], snapshots[1], names[0], names[1]);
  auto higher = [&](const char* field) {
    const double x = arms[0][field].get<double>(), y = arms[1][field].get<double>();
    return x > y ? json(names[0]) : y > x ? json(names[1]) : json("tie");
  };
  json report = {{"arms", arms},
                 {"informativeness", to_json(cmp)},
                 {"iteration0_bn_higher", higher("iteration0_bn")},
                 {"first_layer_var_of_means_higher", higher("first_layer_var_of_means")}};
  if (arms[0].contains("student_top1") && arms[1].contains("student_top1"))
    report["paired_top1"] = {{names[0], arms[0]["student_top1"]}, {names[1], arms[1]["student_top1"]}};

  const fs::path dir = fs::path(a.output_root) / "comparisons" / short_key(sha256_hex(a.hash() + b.hash()));
  emit_bn_plots({{names[0], snapshots[0]}, {names[1], snapshots[1]}}, dir / "plots");
  const fs::path file = dir / "comparison.json";
  write_atomic(file, report.dump(2) + "\n");
  return {report, file};
}

TeacherComparison compare_teachers(const ExperimentConfig& base, const RunOptions& opts) {
  ExperimentConfig sl = base, ssl = base;
  sl.pretrain.objective = Objective::supervised;
  ssl.pretrain.objective = Objective::contrastive;
  return compare_teachers(ssl, sl, opts);
}

}  // namespace scdd
