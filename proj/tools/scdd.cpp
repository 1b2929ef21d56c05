#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "scdd/analysis/cluster.hpp"
#include "scdd/analysis/plots.hpp"
#include "scdd/bnstats/informativeness.hpp"
#include "scdd/core/errors.hpp"
#include "scdd/core/log.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/netcore/checkpoint.hpp"
#include "scdd/pipeline/pipeline.hpp"
#include "scdd/squeeze/dataset.hpp"

using namespace scdd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool quiet = false;
};

ExperimentConfig base_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) c.global_seed = *g.seed;
  c.apply_global_seed();
  return c;
}

void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + file.string());
}

json curve_json(const std::vector<BudgetPoint>& curve) {
  json out = json::array();
  for (const auto& p : curve) out.push_back({{"epoch", p.epoch}, {"top1", p.top1}, {"train_loss", p.train_loss}});
  return out;
}

std::vector<int> parse_classes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad class list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty class list");
  return out;
}

// Every verb runs under a stage name so failures report it.
int guarded(const Globals& g, const std::string& stage, const std::function<void()>& body) {
  if (g.quiet) log::level() = log::Level::quiet;
  parallel::set_deterministic(g.deterministic);
  try {
    body();
    return 0;
  } catch (const StageError& e) {
    std::cerr << "scdd: stage '" << e.stage() << "' failed: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "scdd: stage '" << stage << "' failed: " << e.what() << '\n';
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised dataset distillation: squeeze, recover, relabel, post-train."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SCDD_VERSION));
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed; every stage seed follows it");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded kernels, bit-reproducible runs");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress logging");
  int status = 0;

  // ---- squeeze
  auto* squeeze = app.add_subcommand("squeeze", "Pretrain a backbone (supervised or contrastive)");
  struct {
    std::string data, objective, arch, out;
    std::optional<int> epochs, depth;
    std::optional<double> width;
  } sq;
  squeeze->add_option("--data", sq.data, "Dataset source (default: config dataset)");
  squeeze->add_option("--objective", sq.objective, "supervised or contrastive");
  squeeze->add_option("--arch", sq.arch, "tiny_resnet or resnet");
  squeeze->add_option("--depth", sq.depth);
  squeeze->add_option("--width", sq.width, "Width multiplier");
  squeeze->add_option("--epochs", sq.epochs);
  squeeze->add_option("--out", sq.out, "Checkpoint to write")->required();
  squeeze->callback([&] {
    status = guarded(g, "squeeze", [&] {
      auto cfg = base_config(g);
      if (!sq.data.empty()) cfg.dataset = sq.data;
      if (!sq.objective.empty()) cfg.pretrain.objective = parse_objective(sq.objective);
      if (!sq.arch.empty()) cfg.network.architecture = parse_architecture(sq.arch);
      if (sq.depth) cfg.network.depth = *sq.depth;
      if (sq.width) cfg.network.width_multiplier = *sq.width;
      if (sq.epochs) cfg.pretrain.epochs = *sq.epochs;
      cfg.validate();
      const auto data = load_dataset(parse_dataset_source(cfg.dataset));
      NetworkSpec spec = cfg.network;
      spec.num_classes = data.train.num_classes;
      spec.input_shape = data.train.shape;
      auto on_epoch = [](int e, double loss) { log::info("squeeze: epoch ", e, " loss ", loss); };
      auto model = cfg.pretrain.objective == Objective::supervised
                       ? pretrain_supervised(data.train, spec, cfg.pretrain, AugmentationPolicy::supervised(), on_epoch)
                       : pretrain_contrastive(UnlabeledImages(data.train), spec, cfg.pretrain,
                                              AugmentationPolicy::contrastive(), on_epoch);
      save_checkpoint(sq.out, model);
      std::cout << "wrote " << sq.out << '\n';
    });
  });

  // ---- probe
  auto* probe = app.add_subcommand("probe", "Fit a linear classifier on a frozen backbone");
  struct {
    std::string ckpt, data, out;
    std::optional<int> epochs;
  } pr;
  probe->add_option("--ckpt", pr.ckpt, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--data", pr.data, "Dataset source (default: config dataset)");
  probe->add_option("--epochs", pr.epochs);
  probe->add_option("--out", pr.out, "Teacher checkpoint to write")->required();
  probe->callback([&] {
    status = guarded(g, "probe", [&] {
      auto cfg = base_config(g);
      if (!pr.data.empty()) cfg.dataset = pr.data;
      if (pr.epochs) cfg.probe.epochs = *pr.epochs;
      cfg.probe.validate();
      const auto data = load_dataset(parse_dataset_source(cfg.dataset));
      auto teacher = linear_probe(load_checkpoint(pr.ckpt), data.train, cfg.probe);
      const double acc = classification_accuracy(teacher, data.val);
      save_checkpoint(pr.out, teacher);
      std::cout << "validation accuracy " << acc << "\nwrote " << pr.out << '\n';
    });
  });

  // ---- recover
  auto* recover = app.add_subcommand("recover", "Synthesize images by BN statistic matching");
  struct {
    std::string teacher, out;
    std::optional<int> ipc, iters;
    std::optional<double> alpha, first_bn_mult, lr;
  } rc;
  recover->add_option("--teacher", rc.teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  recover->add_option("--ipc", rc.ipc, "Images per class");
  recover->add_option("--iters", rc.iters, "Optimization iterations");
  recover->add_option("--alpha", rc.alpha, "Weight of the BN matching term");
  recover->add_option("--first-bn-mult", rc.first_bn_mult, "Multiplier on the first BN layer");
  recover->add_option("--lr", rc.lr);
  recover->add_option("--out", rc.out, "Output directory")->required();
  recover->callback([&] {
    status = guarded(g, "recover", [&] {
      auto cfg = base_config(g);
      RecoveryConfig& r = cfg.recovery;
      if (rc.ipc) r.ipc = *rc.ipc;
      if (rc.iters) r.iterations = *rc.iters;
      if (rc.alpha) r.alpha = *rc.alpha;
      if (rc.first_bn_mult) r.first_bn_multiplier = *rc.first_bn_mult;
      if (rc.lr) r.learning_rate = *rc.lr;
      r.validate();
      const auto teacher = load_checkpoint(rc.teacher);
      const auto result = recover_dataset(teacher, r, [&](int batch, const TrajectoryPoint& p) {
        if (p.iter % std::max(1, r.iterations / 10) == 0)
          log::info("recover: batch ", batch, " iter ", p.iter, " ce ", p.ce, " bn ", p.bn);
      });
      write_recovery(rc.out, result, teacher);
      int improved = 0;
      for (const auto& b : result.batches) improved += b.final.bn < b.initial.bn;
      std::cout << "bn loss " << result.trajectory.front().bn << " -> " << result.trajectory.back().bn << " ("
                << improved << "/" << result.batches.size() << " class-batches improved)\nwrote " << rc.out << '\n';
    });
  });

  // ---- relabel
  auto* relabel = app.add_subcommand("relabel", "Attach crop-level soft labels and pack the distilled set");
  struct {
    std::string teacher, data, out;
    std::optional<int> crops;
    std::optional<double> temperature;
  } rl;
  relabel->add_option("--teacher", rl.teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  relabel->add_option("--data", rl.data, "Directory written by recover")->required()->check(CLI::ExistingDirectory);
  relabel->add_option("--crops", rl.crops, "Crops per image");
  relabel->add_option("--temperature", rl.temperature);
  relabel->add_option("--out", rl.out, "Output directory (default: --data)");
  relabel->callback([&] {
    status = guarded(g, "relabel", [&] {
      auto cfg = base_config(g);
      if (rl.crops) cfg.relabel.n_crops = *rl.crops;
      if (rl.temperature) cfg.relabel.temperature = *rl.temperature;
      cfg.relabel.validate();
      auto teacher = load_checkpoint(rl.teacher);
      std::vector<Image16> images;
      std::vector<int> labels;
      read_recovered_images(rl.data, images, labels);
      const auto d = relabel_images(teacher, std::move(images), std::move(labels), cfg.relabel, cfg.recovery);
      const fs::path out = rl.out.empty() ? fs::path(rl.data) : fs::path(rl.out);
      pack_distilled(d, out);
      std::cout << d.size() << " images, " << d.crops.size() << " crops\nwrote " << out.string() << '\n';
    });
  });

  // ---- posttrain
  auto* posttrain = app.add_subcommand("posttrain", "Train a student on a distilled set and evaluate it");
  struct {
    std::string data, val, arch, out, reference, save;
    std::optional<int> epochs, depth, crops_per_epoch;
    std::optional<double> width;
    bool controls = false;
  } pt;
  posttrain->add_option("--data", pt.data, "Distilled dataset directory")->required()->check(CLI::ExistingDirectory);
  posttrain->add_option("--val", pt.val, "Validation dataset source (default: config dataset)");
  posttrain->add_option("--arch", pt.arch, "Student architecture");
  posttrain->add_option("--depth", pt.depth);
  posttrain->add_option("--width", pt.width);
  posttrain->add_option("--epochs", pt.epochs);
  posttrain->add_option("--crops-per-epoch", pt.crops_per_epoch, "Crops per image each epoch (0: all stored crops)");
  posttrain->add_option("--reference", pt.reference, "Full-data student checkpoint for the loss gap")
      ->check(CLI::ExistingFile);
  posttrain->add_flag("--controls", pt.controls, "Also train the noise and real-subset controls");
  posttrain->add_option("--save-student", pt.save, "Write the student checkpoint here");
  posttrain->add_option("--out", pt.out, "Report JSON")->required();
  posttrain->callback([&] {
    status = guarded(g, "posttrain", [&] {
      auto cfg = base_config(g);
      PostTrainConfig& p = cfg.posttrain;
      if (!pt.arch.empty()) p.student_spec.architecture = parse_architecture(pt.arch);
      if (pt.depth) p.student_spec.depth = *pt.depth;
      if (pt.width) p.student_spec.width_multiplier = *pt.width;
      if (pt.epochs) p.epochs = *pt.epochs;
      if (pt.crops_per_epoch) p.crops_per_epoch = *pt.crops_per_epoch;
      p.validate();
      const auto data = load_dataset(parse_dataset_source(pt.val.empty() ? cfg.dataset : pt.val));
      const auto distilled = load_distilled(pt.data);
      auto run = train_on_distilled(distilled, p, &data.val);
      EvalReport report;
      report.top1 = evaluate(run.model, data.val);
      report.budget_curve = run.budget_curve;
      if (!pt.reference.empty()) {
        auto full = load_checkpoint(pt.reference);
        report.loss_gap = deviation_gap(full, run.model, data.val);
      }
      json j = to_json(report);
      if (pt.controls) {
        auto noise = train_on_distilled(noise_control(distilled, cfg.global_seed), p, &data.val);
        auto real = train_on_distilled(real_subset_control(data.train, distilled, cfg.global_seed), p, &data.val);
        j["controls"] = {{"noise", {{"top1", evaluate(noise.model, data.val)}, {"budget_curve", curve_json(noise.budget_curve)}}},
                         {"real_subset", {{"top1", evaluate(real.model, data.val)}, {"budget_curve", curve_json(real.budget_curve)}}}};
      }
      if (!pt.save.empty()) save_checkpoint(pt.save, run.model);
      write_json(pt.out, j);
      std::cout << "top1 " << report.top1 << "\nwrote " << pt.out << '\n';
    });
  });

  // ---- analyze cluster
  auto* analyze = app.add_subcommand("analyze", "Analyses of a distilled set");
  analyze->require_subcommand(1);
  auto* cluster = analyze->add_subcommand("cluster", "PCA to 3-D and k-means over chosen classes");
  struct {
    std::string data, classes = "0,1,2", out, plots, space = "pixels", teacher;
    int k = 0;
  } an;
  cluster->add_option("--data", an.data, "Distilled dataset directory")->required()->check(CLI::ExistingDirectory);
  cluster->add_option("--classes", an.classes, "Comma-separated class indices");
  cluster->add_option("--k", an.k, "Clusters (0: one per class)");
  cluster->add_option("--space", an.space, "pixels or features")->check(CLI::IsMember({"pixels", "features"}));
  cluster->add_option("--teacher", an.teacher, "Teacher checkpoint (feature space)")->check(CLI::ExistingFile);
  cluster->add_option("--out", an.out, "Report JSON")->required();
  cluster->add_option("--plots", an.plots, "Directory for the scatter plot");
  cluster->callback([&] {
    status = guarded(g, "analyze", [&] {
      const auto cfg = base_config(g);
      const auto d = load_distilled(an.data);
      std::optional<TrainedBackbone> teacher;
      if (!an.teacher.empty()) teacher = load_checkpoint(an.teacher);
      const auto report =
          cluster_distilled(d, parse_classes(an.classes), an.space, teacher ? &*teacher : nullptr, cfg.global_seed, an.k);
      json j = to_json(report);
      if (!an.plots.empty()) j["plot"] = emit_cluster_plot(report, an.plots).string();
      write_json(an.out, j);
      std::cout << "purity " << report.purity << "\nwrote " << an.out << '\n';
    });
  });

  // ---- bnstats
  auto* bnstats = app.add_subcommand("bnstats", "Compare BN statistic informativeness of two checkpoints");
  struct {
    std::vector<std::string> ckpts;
    std::string out, plot;
  } bs;
  bnstats->add_option("--ckpt", bs.ckpts, "Checkpoint (give twice)")->required()->expected(2)->check(CLI::ExistingFile);
  bnstats->add_option("--out", bs.out, "Report JSON")->required();
  bnstats->add_option("--plot", bs.plot, "Directory for per-layer bar plots");
  bnstats->callback([&] {
    status = guarded(g, "bnstats", [&] {
      const auto a = load_checkpoint_snapshot(bs.ckpts[0]);
      const auto b = load_checkpoint_snapshot(bs.ckpts[1]);
      const std::string ia = fs::path(bs.ckpts[0]).stem().string(), ib = fs::path(bs.ckpts[1]).stem().string();
      const auto cmp = compare_informativeness(a, b, ia, ib);
      json j = to_json(cmp);
      if (!bs.plot.empty()) {
        json files = json::array();
        for (const auto& f : emit_bn_plots({{ia, a}, {ib, b}}, bs.plot)) files.push_back(f.string());
        j["plots"] = files;
      }
      write_json(bs.out, j);
      std::cout << "first layer: " << to_string(cmp.first_layer) << ", majority: " << to_string(cmp.majority)
                << "\nwrote " << bs.out << '\n';
    });
  });

  // ---- run
  auto* run = app.add_subcommand("run", "Run the whole pipeline from a config, resuming finished stages");
  std::string stop_after;
  run->add_option("--stop-after", stop_after, "Last stage to run");
  run->callback([&] {
    status = guarded(g, "run", [&] {
      const auto cfg = base_config(g);
      const auto m = run_pipeline(cfg, {g.deterministic, stop_after});
      std::cout << m.summary.dump(2) << "\nmanifest " << (m.run_dir / "run_manifest.json").string() << '\n';
    });
  });

  // ---- compare-teachers
  auto* compare = app.add_subcommand("compare-teachers", "Run the pipeline with supervised and contrastive teachers");
  std::string other;
  compare->add_option("--against", other, "Second arm config (default: the --config arm with the other objective)")
      ->check(CLI::ExistingFile);
  compare->callback([&] {
    status = guarded(g, "compare-teachers", [&] {
      const auto cfg = base_config(g);
      TeacherComparison cmp;
      if (other.empty()) {
        cmp = compare_teachers(cfg, {g.deterministic, ""});
      } else {
        auto b = load_experiment_config(other);
        if (g.seed) {
          b.global_seed = *g.seed;
          b.apply_global_seed();
        }
        cmp = compare_teachers(cfg, b, {g.deterministic, ""});
      }
      const auto& r = cmp.report;
      std::cout << "iteration-0 bn higher: " << r["iteration0_bn_higher"].get<std::string>()
                << "\nfirst-layer var of means higher: " << r["first_layer_var_of_means_higher"].get<std::string>()
                << "\nwrote " << cmp.file.string() << '\n';
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return status;
}
