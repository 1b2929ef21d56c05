// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
//
//   scdd_acceptance [criterion ...]
//
// Pipeline outputs are cached under $SCDD_ACCEPTANCE_ROOT (default: ./acceptance)
// so a rerun only repeats what changed. $SCDD_ACCEPTANCE_DATASET overrides the
// dataset source.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "../unit/toy_models.hpp"
#include "scdd/bnstats/informativeness.hpp"
#include "scdd/core/errors.hpp"
#include "scdd/core/log.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/netcore/checkpoint.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/pipeline/pipeline.hpp"
#include "scdd/squeeze/dataset.hpp"

using namespace scdd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  return json::parse(in);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------- shared runs

class Experiments {
 public:
  Experiments() {
    const char* root = std::getenv("SCDD_ACCEPTANCE_ROOT");
    root_ = root && *root ? root : "acceptance";
    const char* ds = std::getenv("SCDD_ACCEPTANCE_DATASET");
    dataset_ = ds && *ds ? ds : "procedural";
  }

  const fs::path& root() const { return root_; }

  ExperimentConfig arm(std::uint64_t seed, Objective objective) const {
    ExperimentConfig c;
    c.dataset = dataset_;
    c.output_root = (root_ / "runs").string();
    c.global_seed = seed;
    c.pretrain.objective = objective;
    c.pretrain.epochs = 30;
    c.recovery.ipc = 10;
    c.recovery.iterations = 500;
    c.posttrain.epochs = 100;
    // Four fresh crops per image every epoch, labelled ahead of time.
    c.posttrain.crops_per_epoch = 4;
    c.relabel.n_crops = 4 * c.posttrain.epochs;
    // The headline seed carries the controls and the full-data student.
    c.baselines.noise_control = c.baselines.real_subset_control = c.baselines.full_data = seed == 0;
    c.apply_global_seed();
    return c;
  }

  /// compare_teachers for one seed, computed once.
  const json& comparison(std::uint64_t seed) {
    auto it = comparisons_.find(seed);
    if (it != comparisons_.end()) return it->second;
    log::info("acceptance: teacher comparison, seed ", seed);
    auto cmp = compare_teachers(arm(seed, Objective::contrastive), arm(seed, Objective::supervised), {true, ""});
    return comparisons_[seed] = cmp.report;
  }

  /// Pipeline manifest of one arm (after comparison(seed) this is all cached).
  RunManifest manifest(std::uint64_t seed, Objective objective) {
    comparison(seed);
    return run_pipeline(arm(seed, objective), {true, ""});
  }

 private:
  fs::path root_;
  std::string dataset_;
  std::map<std::uint64_t, json> comparisons_;
};

Experiments& experiments() {
  static Experiments e;
  return e;
}

// ------------------------------------------------------------- criteria

Outcome entropy_formulas() {
  const auto t0 = std::chrono::steady_clock::now();
  const double pi = std::acos(-1.0);
  const double h0 = gaussian_entropy(1.0 / (2 * pi * std::exp(1.0)));
  const double h1 = gaussian_entropy(1.0);
  Rng rng = make_rng(2024);
  std::vector<Real> samples(100000);
  for (auto& s : samples) s = normal(rng);
  const double est = empirical_differential_entropy(samples, 64);
  const double secs = seconds_since(t0);
  const bool pass = std::abs(h0) <= 1e-6 && std::abs(h1 - 1.418939) <= 1e-6 && std::abs(est - h1) <= 0.05 && secs < 10;
  return {pass,
          "H(1/2pi e)=" + fmt(h0, 3) + " H(1)=" + fmt(h1, 8) + " histogram=" + fmt(est, 5) + " (|diff| " +
              fmt(std::abs(est - h1), 3) + " <= 0.05), " + fmt(secs, 2) + " s",
          {{"h0", h0}, {"h1", h1}, {"estimate", est}, {"seconds", secs}}};
}

Outcome bn_loss_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(8);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int layers = 1 + static_cast<int>(uniform(rng) * 4), channels = 1 + static_cast<int>(uniform(rng) * 8);
    BNStatSnapshot g;
    BatchStatRecord b;
    std::vector<double> beta, gamma;
    for (int k = 0; k < layers; ++k) {
      BNLayerStats gl{k, {}, {}};
      BatchLayerStats bl{k, {}, {}};
      for (int c = 0; c < channels; ++c) {
        gl.mean.push_back(normal(rng));
        gl.variance.push_back(uniform(rng, 0.0, 3.0));
        bl.batch_mean.push_back(normal(rng));
        bl.batch_variance.push_back(uniform(rng, 0.0, 3.0));
      }
      g.layers.push_back(gl);
      b.layers.push_back(bl);
      beta.push_back(uniform(rng, 0, 10));
      gamma.push_back(uniform(rng, 0, 10));
    }
    double oracle = 0;
    for (int k = 0; k < layers; ++k) {
      double sm = 0, sv = 0;
      for (int c = 0; c < channels; ++c) {
        const double dm = b.layers[k].batch_mean[c] - g.layers[k].mean[c];
        const double dv = b.layers[k].batch_variance[c] - g.layers[k].variance[c];
        sm += dm * dm;
        sv += dv * dv;
      }
      oracle += beta[k] * std::sqrt(sm) + gamma[k] * std::sqrt(sv);
    }
    worst = std::max(worst, std::abs(bn_matching_loss(b, g, beta, gamma) - oracle));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10, "100 instances, max |loss - scalar loop| = " + fmt(worst, 3) + ", " + fmt(secs, 2) + " s",
          {{"max_abs_error", worst}, {"seconds", secs}}};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  auto teacher = test::random_teacher(5);
  const auto global = extract_bn_statistics(teacher);
  auto x = init_synthetic(3, std::vector<int>{0, 1}, {3, 8, 8}, 9);
  RecoveryConfig c;
  const auto v = recovery_objective(teacher, x.images, x.labels, global, c, true);
  Rng rng = make_rng(31);
  const double h = 1e-3;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto i = static_cast<std::size_t>(uniform(rng) * static_cast<double>(x.images.size()));
    Tensor p = x.images, m = x.images;
    p[i] += h;
    m[i] -= h;
    const double fd = (recovery_objective(teacher, p, x.labels, global, c, false).total -
                       recovery_objective(teacher, m, x.labels, global, c, false).total) /
                      (2 * h);
    const double an = v.image_grad[i];
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 60, "20 pixels of a 6x3x8x8 batch, max relative error " + fmt(worst, 3) + ", " + fmt(secs, 2) + " s",
          {{"max_relative_error", worst}, {"seconds", secs}}};
}

Outcome frozen_backbone() {
  const auto t0 = std::chrono::steady_clock::now();
  ProceduralParams p;
  p.classes = 2;
  p.size = 8;
  p.train_per_class = 40;
  p.val_per_class = 10;
  const auto data = make_procedural_dataset(p);
  NetworkSpec spec = test::small_spec(2);
  PretrainConfig pc;
  pc.objective = Objective::contrastive;
  pc.epochs = 2;
  pc.batch_size = 16;
  auto model = pretrain_contrastive(UnlabeledImages(data.train), spec, pc);
  const auto digest = model_digest(model, false);
  const auto stats = snapshot_to_json(extract_bn_statistics(model)).dump();
  ProbeConfig probe;
  probe.epochs = 20;
  auto teacher = linear_probe(model, data.train, probe);
  const bool weights = model_digest(teacher, false) == digest;
  const bool bn = snapshot_to_json(extract_bn_statistics(teacher)).dump() == stats;
  const double secs = seconds_since(t0);
  return {weights && bn && teacher.is_aligned() && secs < 300,
          std::string("backbone digest ") + (weights ? "unchanged" : "CHANGED") + ", BN running stats " +
              (bn ? "unchanged" : "CHANGED") + ", probe accuracy " + fmt(teacher.provenance.probe_accuracy.value_or(-1), 3) +
              ", " + fmt(secs, 2) + " s",
          {{"weights_unchanged", weights}, {"bn_unchanged", bn}, {"seconds", secs}}};
}

Outcome bn_loss_decreases() {
  auto& ex = experiments();
  int improved = 0, total = 0, sl_improved = 0, sl_total = 0;
  double recover_seconds = 0;
  bool csv = true;
  json seeds = json::array();
  for (std::uint64_t seed : {0, 1, 2}) {
    for (Objective obj : {Objective::contrastive, Objective::supervised}) {
      const auto m = ex.manifest(seed, obj);
      const auto* rec = m.stage("recover");
      int up = 0, n = 0;
      for (const auto& b : read_json(rec->dir / "batches.json")) {
        ++n;
        up += b["final"]["bn"].get<double>() < b["initial"]["bn"].get<double>();
      }
      std::ifstream traj(rec->dir / "trajectory.csv");
      std::string header;
      std::getline(traj, header);
      if (obj == Objective::contrastive) {
        improved += up;
        total += n;
        recover_seconds += rec->wall_seconds;
        csv = csv && header == "iter,ce,bn,total";
      } else {
        sl_improved += up;
        sl_total += n;
      }
      seeds.push_back({{"seed", seed}, {"objective", to_string(obj)}, {"improved", up}, {"batches", n},
                       {"recover_seconds", rec->wall_seconds}});
    }
  }
  const double frac = total ? static_cast<double>(improved) / total : 0.0;
  const bool pass = total > 0 && frac >= 0.95 && csv && recover_seconds < 1800;
  return {pass,
          "contrastive teachers: " + std::to_string(improved) + "/" + std::to_string(total) + " class-batches end below their start (" +
              fmt(100 * frac, 3) + "% >= 95%); supervised teachers " + std::to_string(sl_improved) + "/" +
              std::to_string(sl_total) + "; trajectory CSV " + (csv ? "present" : "MISSING") + "; recovery " +
              fmt(recover_seconds / 60, 3) + " min for 3 seeds",
          {{"runs", seeds}, {"fraction", frac}, {"recover_seconds", recover_seconds}}};
}

Outcome ssl_more_fluctuant() {
  auto& ex = experiments();
  int var_wins = 0, bn_wins = 0;
  json seeds = json::array();
  std::string log;
  for (std::uint64_t seed : {0, 1, 2}) {
    const json& r = ex.comparison(seed);
    const bool var = r["first_layer_var_of_means_higher"] == "contrastive";
    const bool bn = r["iteration0_bn_higher"] == "contrastive";
    var_wins += var;
    bn_wins += bn;
    json arms = json::object();
    for (const auto& a : r["arms"])
      arms[a["objective"].get<std::string>()] = {{"first_layer_var_of_means", a["first_layer_var_of_means"]},
                                                 {"iteration0_bn", a["iteration0_bn"]},
                                                 {"student_top1", a.value("student_top1", json())}};
    seeds.push_back({{"seed", seed}, {"arms", arms}});
    log += " seed" + std::to_string(seed) + ":var " + fmt(arms["contrastive"]["first_layer_var_of_means"].get<double>(), 3) +
           "/" + fmt(arms["supervised"]["first_layer_var_of_means"].get<double>(), 3) + " bn0 " +
           fmt(arms["contrastive"]["iteration0_bn"].get<double>(), 4) + "/" +
           fmt(arms["supervised"]["iteration0_bn"].get<double>(), 4) + (var && bn ? "" : " (seed fails)");
  }
  return {var_wins >= 2 && bn_wins >= 2,
          "contrastive > supervised: first-layer var of means " + std::to_string(var_wins) + "/3, iteration-0 bn loss " +
              std::to_string(bn_wins) + "/3 (ssl/sl:" + log + ")",
          {{"seeds", seeds}, {"var_of_means_wins", var_wins}, {"iteration0_bn_wins", bn_wins}}};
}

Outcome distillation_utility() {
  auto m = experiments().manifest(0, Objective::contrastive);
  const json& s = m.summary;
  const double top1 = s.at("student_top1"), noise = s.at("noise_top1"), full = s.at("full_data_top1");
  double secs = 0;
  for (const char* st : {"squeeze", "probe", "recover", "relabel", "posttrain", "baseline"}) secs += m.stage(st)->wall_seconds;
  const double margin = top1 - noise, frac = full > 0 ? top1 / full : 0;
  return {margin >= 0.10 && frac >= 0.5 && secs < 7200,
          "student top1 " + fmt(top1, 3) + ", noise control " + fmt(noise, 3) + " (+" + fmt(100 * margin, 3) +
              " pp >= 10), full data " + fmt(full, 3) + " (" + fmt(100 * frac, 3) + "% >= 50%), real subset " +
              fmt(s.value("real_subset_top1", -1.0), 3) + "; " + fmt(secs / 60, 3) + " min",
          {{"summary", s}, {"seconds", secs}}};
}

Outcome soft_label_validity() {
  auto m = experiments().manifest(0, Objective::contrastive);
  const auto d = load_distilled(m.stage("relabel")->dir);
  double worst_sum = 0;
  for (const auto& l : d.soft_labels) {
    double s = 0;
    for (float v : l) s += v;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }

  Rng rng = make_rng(12);
  bool exact = true;
  for (int trial = 0; trial < 200 && exact; ++trial) {
    const int n = 1 + static_cast<int>(uniform(rng) * 16), c = 2 + static_cast<int>(uniform(rng) * 10);
    Tensor logits({n, c}), onehot({n, c});
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : logits.values()) v = normal(rng, 0, 5);
    for (int i = 0; i < n; ++i) {
      y[static_cast<std::size_t>(i)] = static_cast<int>(uniform(rng) * c);
      onehot.values()[static_cast<std::size_t>(i * c + y[static_cast<std::size_t>(i)])] = 1;
    }
    const auto hard = cross_entropy(logits, y), soft = soft_cross_entropy(logits, onehot);
    exact = hard.loss == soft.loss && hard.grad.values() == soft.grad.values();
  }

  auto teacher = load_checkpoint(m.stage("probe")->dir / "teacher.ckpt");
  const int n = d.manifest.relabel.n_crops;
  double worst_replay = 0;
  for (int i = 0; i < d.size(); ++i) {
    std::span<const CropRecord> crops(d.crops.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n));
    const auto replay = soft_labels(teacher, d.pixels(i), crops, d.manifest.relabel.temperature);
    for (int k = 0; k < n; ++k) {
      const auto& stored = d.soft_labels[static_cast<std::size_t>(i * n + k)];
      for (std::size_t c = 0; c < stored.size(); ++c)
        worst_replay = std::max(worst_replay, static_cast<double>(std::abs(replay[static_cast<std::size_t>(k)][c] - stored[c])));
    }
  }
  return {worst_sum <= 1e-5 && exact && worst_replay <= 1e-6,
          std::to_string(d.soft_labels.size()) + " soft labels, max |sum - 1| " + fmt(worst_sum, 3) +
              "; soft CE on one-hot " + (exact ? "bit-identical to" : "DIFFERS from") + " hard CE (200 cases); replay max error " +
              fmt(worst_replay, 3),
          {{"max_sum_error", worst_sum}, {"soft_equals_hard", exact}, {"max_replay_error", worst_replay}}};
}

Outcome ablation_machinery() {
  auto& ex = experiments();
  ex.comparison(0);
  struct Point {
    std::string sweep;
    int iterations;
    double multiplier;
  };
  std::vector<Point> points;
  for (int it : {100, 500, 1000}) points.push_back({"iterations", it, 10});
  for (double mult : {1.0, 5.0, 10.0, 15.0, 20.0}) points.push_back({"first_bn_multiplier", 500, mult});

  json rows = json::array();
  std::ostringstream md;
  md << "| sweep | iterations | first-BN multiplier | iteration-0 bn | final bn | student top1 |\n"
     << "|---|---|---|---|---|---|\n";
  bool ok = true;
  for (const auto& p : points) {
    ExperimentConfig c = ex.arm(0, Objective::contrastive);
    c.recovery.iterations = p.iterations;
    c.recovery.first_bn_multiplier = p.multiplier;
    c.posttrain.epochs = 20;
    c.relabel.n_crops = 4 * c.posttrain.epochs;
    c.baselines = {false, false, false};
    c.analysis.plots = false;
    const auto m = run_pipeline(c, {true, ""});
    const json& s = m.summary;
    const double bn0 = s["recovery"]["iteration0_bn"], bn1 = s["recovery"]["final_bn"], top1 = s["student_top1"];
    ok = ok && std::isfinite(bn0) && std::isfinite(bn1) && top1 >= 0 && top1 <= 1;
    rows.push_back({{"sweep", p.sweep}, {"iterations", p.iterations}, {"first_bn_multiplier", p.multiplier},
                    {"iteration0_bn", bn0}, {"final_bn", bn1}, {"student_top1", top1}, {"run_dir", m.run_dir.string()}});
    md << "| " << p.sweep << " | " << p.iterations << " | " << p.multiplier << " | " << fmt(bn0, 5) << " | " << fmt(bn1, 5)
       << " | " << fmt(top1, 4) << " |\n";
  }
  const fs::path dir = ex.root() / "ablation";
  fs::create_directories(dir);
  std::ofstream(dir / "ablation.json") << json{{"rows", rows}}.dump(2) << '\n';
  std::ofstream(dir / "ablation.md") << md.str();
  const auto back = read_json(dir / "ablation.json");
  ok = ok && back["rows"].size() == points.size();
  std::string tops;
  for (const auto& r : rows) tops += " " + fmt(r["student_top1"].get<double>(), 3);
  return {ok, std::to_string(points.size()) + " sweep points completed; table at " + (dir / "ablation.md").string() + "; top1:" + tops,
          {{"rows", rows}}};
}

Outcome format_round_trip() {
  auto m = experiments().manifest(0, Objective::contrastive);
  const fs::path src = m.stage("relabel")->dir;
  const auto a = load_distilled(src);
  const fs::path copy = experiments().root() / "roundtrip";
  fs::remove_all(copy);
  pack_distilled(a, copy);
  const auto b = load_distilled(copy);
  bool labels = a.soft_labels.size() == b.soft_labels.size();
  for (std::size_t i = 0; labels && i < a.soft_labels.size(); ++i)
    labels = a.soft_labels[i].size() == b.soft_labels[i].size() &&
             std::memcmp(a.soft_labels[i].data(), b.soft_labels[i].data(), a.soft_labels[i].size() * sizeof(float)) == 0;
  const bool images = a.images == b.images && a.labels == b.labels;
  const bool crops = a.crops == b.crops;

  // A flipped byte in the packed labels must be caught by the checksums.
  bool tamper_caught = false;
  {
    const fs::path labels_file = copy / "labels" / "labels.bin";
    std::fstream f(labels_file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(16);
    char ch = 0;
    f.read(&ch, 1);
    ch = static_cast<char>(ch ^ 0x5a);
    f.seekp(16);
    f.write(&ch, 1);
  }
  try {
    load_distilled(copy);
  } catch (const Error&) {
    tamper_caught = true;
  }
  return {labels && images && crops && tamper_caught,
          std::to_string(a.size()) + " images, " + std::to_string(a.soft_labels.size()) + " labels: labels " +
              (labels ? "bit-exact" : "DIFFER") + ", images " + (images ? "lossless" : "DIFFER") + ", crops " +
              (crops ? "equal" : "DIFFER") + ", tampered labels " + (tamper_caught ? "rejected" : "ACCEPTED"),
          {{"labels_exact", labels}, {"images_lossless", images}, {"crops_equal", crops}, {"tamper_caught", tamper_caught}}};
}

}  // namespace

int main(int argc, char** argv) {
  parallel::set_deterministic(true);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"formula exactness", entropy_formulas},
      {"BN matching loss oracle", bn_loss_oracle},
      {"recovery gradient", gradient_check},
      {"frozen backbone under linear probe", frozen_backbone},
      {"BN loss decreases during recovery", bn_loss_decreases},
      {"contrastive teachers have more fluctuant BN statistics", ssl_more_fluctuant},
      {"distillation utility", distillation_utility},
      {"soft label validity", soft_label_validity},
      {"ablation machinery", ablation_machinery},
      {"format round trip", format_round_trip}};

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  json report = json::object();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
    report[std::to_string(id)] = {{"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail}, {"data", o.data}};
  }
  const fs::path out = experiments().root() / "acceptance_report.json";
  fs::create_directories(out.parent_path());
  std::ofstream(out) << report.dump(2) << '\n';
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << "; report at " << out.string()
            << std::endl;
  return failed ? 1 : 0;
}
