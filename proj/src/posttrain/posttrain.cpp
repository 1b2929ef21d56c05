#include "scdd/posttrain/posttrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scdd/core/errors.hpp"
#include "scdd/core/log.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/netcore/optim.hpp"
#include "scdd/squeeze/pretrain.hpp"

namespace scdd {

void PostTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("posttrain epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("posttrain batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ConfigError("posttrain learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("posttrain weight_decay must be >= 0");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    throw ConfigError("posttrain Adam betas must lie in [0, 1)");
  if (lr_schedule != "cosine") throw ConfigError("unsupported lr_schedule '" + lr_schedule + "'");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (crops_per_epoch < 0) throw ConfigError("crops_per_epoch must be >= 0");
}

void to_json(nlohmann::json& j, const PostTrainConfig& c) {
  j = {{"student", {{"architecture", to_string(c.student_spec.architecture)},
                    {"depth", c.student_spec.depth},
                    {"width_multiplier", c.student_spec.width_multiplier}}},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"optimizer", {{"kind", "adamw"}, {"lr", c.learning_rate}, {"weight_decay", c.weight_decay},
                      {"betas", {c.adam_beta1, c.adam_beta2}}}},
       {"lr_schedule", c.lr_schedule},
       {"seed", c.seed},
       {"eval_every", c.eval_every}};
  if (c.crops_per_epoch > 0) j["crops_per_epoch"] = c.crops_per_epoch;
}

void from_json(const nlohmann::json& j, PostTrainConfig& c) {
  PostTrainConfig d;
  c = d;
  if (j.contains("student")) {
    const auto& s = j.at("student");
    if (s.contains("architecture")) c.student_spec.architecture = parse_architecture(s.at("architecture").get<std::string>());
    c.student_spec.depth = s.value("depth", d.student_spec.depth);
    c.student_spec.width_multiplier = s.value("width_multiplier", d.student_spec.width_multiplier);
  }
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.value("kind", std::string("adamw")) != "adamw") throw ConfigError("posttrain optimizer must be adamw");
    c.learning_rate = o.value("lr", d.learning_rate);
    c.weight_decay = o.value("weight_decay", d.weight_decay);
    if (o.contains("betas")) {
      c.adam_beta1 = o.at("betas").at(0).get<double>();
      c.adam_beta2 = o.at("betas").at(1).get<double>();
    }
  }
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.crops_per_epoch = j.value("crops_per_epoch", d.crops_per_epoch);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.budget_curve) curve.push_back({{"epoch", p.epoch}, {"top1", p.top1}, {"train_loss", p.train_loss}});
  nlohmann::json gap = nullptr;
  if (r.loss_gap) gap = {{"mean_abs", r.loss_gap->mean_abs}, {"sup", r.loss_gap->sup}};
  return {{"top1", r.top1}, {"loss_gap", gap}, {"budget_curve", curve}};
}

namespace {

// Crop/target pairs over a pool of [0, 1] images.
struct CropSet {
  InputShape shape;
  std::vector<std::vector<double>> images;
  std::vector<CropRecord> crops;
  Tensor targets;  // (num_crops, classes)
};

StudentRun train_on_crops(const CropSet& set, int num_classes, const Normalization& norm, const PostTrainConfig& cfg,
                          const ImageDataset* val, const std::string& dataset_id,
                          const std::function<void(int, Rng&, CropSet&)>& refresh = {}) {
  cfg.validate();
  NetworkSpec spec = cfg.student_spec;
  spec.num_classes = num_classes;
  spec.input_shape = set.shape;
  spec.validate();
  if (val && val->num_classes != num_classes) throw DataError("validation class count differs from the student");
  StudentRun run;
  run.model = build_network(spec, mix_seed(cfg.seed, 0x73747564ULL));
  run.model.provenance.objective = Objective::supervised;
  run.model.provenance.dataset_id = dataset_id;
  run.model.provenance.seed = cfg.seed;
  run.model.provenance.normalization = norm;
  run.model.aligned = true;
  auto params = run.model.parameters(true);
  Adam opt(params, {cfg.adam_beta1, cfg.adam_beta2, 1e-8, cfg.weight_decay, true});
  CropSet working = set;
  if (working.crops.size() < 2) throw DataError("student training needs at least two crops");
  auto active_crops = [&](int epoch) {
    std::vector<int> out;
    if (cfg.crops_per_epoch == 0) {
      out.resize(working.crops.size());
      std::iota(out.begin(), out.end(), 0);
      return out;
    }
    std::vector<std::vector<int>> by_image;
    for (std::size_t c = 0; c < working.crops.size(); ++c) {
      const auto id = static_cast<std::size_t>(working.crops[c].image_id);
      if (by_image.size() <= id) by_image.resize(id + 1);
      by_image[id].push_back(static_cast<int>(c));
    }
    for (const auto& own : by_image) {
      if (own.empty()) continue;
      const int n = static_cast<int>(own.size());
      const int take = std::min(cfg.crops_per_epoch, n);
      for (int j = 0; j < take; ++j)
        out.push_back(own[static_cast<std::size_t>((static_cast<long>(epoch) * take + j) % n)]);
    }
    return out;
  };
  auto batch_ranges = [&](int N) {
    std::vector<std::pair<int, int>> ranges;
    for (int b = 0; b < N; b += cfg.batch_size) {
      const int e = std::min(N, b + cfg.batch_size);
      if (e - b >= 2) ranges.emplace_back(b, e);
      else if (!ranges.empty()) ranges.back().second = e;
    }
    return ranges;
  };
  long total = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int N = static_cast<int>(active_crops(epoch).size());
    if (N < 2) throw DataError("student training needs at least two crops per epoch");
    total += static_cast<long>(batch_ranges(N).size());
  }
  long step = 0;
  const int K = num_classes;
  const std::size_t per = static_cast<std::size_t>(set.shape.channels) * set.shape.height * set.shape.width;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, 0x706f737400ULL + static_cast<std::uint64_t>(epoch));
    if (refresh) refresh(epoch, rng, working);
    std::vector<int> order = active_crops(epoch);
    const int N = static_cast<int>(order.size());
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (const auto& [b, e] : batch_ranges(N)) {
      const int B = e - b;
      Tensor x({B, set.shape.channels, set.shape.height, set.shape.width});
      Tensor t({B, K});
      SCDD_PARALLEL_FOR
      for (int i = 0; i < B; ++i) {
        const int ci = order[static_cast<std::size_t>(b + i)];
        const CropRecord& cr = working.crops[static_cast<std::size_t>(ci)];
        Tensor one = crop_batch(working.images[static_cast<std::size_t>(cr.image_id)], set.shape,
                                std::span<const CropRecord>(&cr, 1), norm);
        std::copy(one.values().begin(), one.values().end(), x.values().begin() + static_cast<std::ptrdiff_t>(i * per));
        std::copy_n(working.targets.data() + static_cast<std::size_t>(ci) * K, K, t.data() + static_cast<std::size_t>(i) * K);
      }
      for (auto& p : params) p.grad->zero();
      auto loss = soft_cross_entropy(run.model.forward(x, Mode::train), t);
      if (!std::isfinite(loss.loss))
        throw DivergenceError("student training diverged at epoch " + std::to_string(epoch));
      run.model.backward(loss.grad, nullptr, true, false);
      opt.step(cosine_lr(cfg.learning_rate, step++, total));
      epoch_loss += loss.loss * B;
    }
    epoch_loss /= N;
    const bool last = epoch + 1 == cfg.epochs;
    if (val && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const double top1 = evaluate(run.model, *val);
      run.budget_curve.push_back({epoch + 1, top1, epoch_loss});
      log::debug("student epoch ", epoch + 1, " loss ", epoch_loss, " top1 ", top1);
    }
  }
  run.model.provenance.epochs = cfg.epochs;
  return run;
}

CropSet crop_set_of(const DistilledDataset& data) {
  CropSet s;
  s.shape = data.shape;
  for (int i = 0; i < data.size(); ++i) s.images.push_back(data.pixels(i));
  s.crops = data.crops;
  s.targets = Tensor({static_cast<int>(data.crops.size()), data.num_classes});
  for (std::size_t i = 0; i < data.soft_labels.size(); ++i)
    for (int k = 0; k < data.num_classes; ++k)
      s.targets[i * data.num_classes + k] = static_cast<Real>(data.soft_labels[i][static_cast<std::size_t>(k)]);
  return s;
}

}  // namespace

StudentRun train_on_distilled(const DistilledDataset& data, const PostTrainConfig& cfg, const ImageDataset* val) {
  try {
    data.validate();
  } catch (const DataError& e) {
    throw FormatError(std::string("distilled dataset is corrupt: ") + e.what());
  }
  return train_on_crops(crop_set_of(data), data.num_classes, data.manifest.teacher_provenance.normalization, cfg, val,
                        "distilled:" + data.manifest.teacher_provenance.dataset_id);
}

double top1_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
    throw ShapeError("logits and labels disagree in length");
  if (labels.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax_row(logits, static_cast<int>(i)) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(TrainedBackbone& model, const ImageDataset& val) {
  if (val.num_classes != model.spec.num_classes)
    throw DataError("validation set has " + std::to_string(val.num_classes) + " classes, model predicts " +
                    std::to_string(model.spec.num_classes));
  return classification_accuracy(model, val);
}

DeviationGap deviation_gap(TrainedBackbone& full_model, TrainedBackbone& distilled_model, const ImageDataset& val) {
  if (val.num_classes != full_model.spec.num_classes || val.num_classes != distilled_model.spec.num_classes)
    throw DataError("deviation gap needs models matching the validation class count");
  DeviationGap g;
  const int N = val.size();
  if (N == 0) return g;
  std::vector<int> idx;
  for (int b = 0; b < N; b += 256) {
    const int e = std::min(N, b + 256);
    idx.resize(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    std::span<const int> y(val.labels.data() + b, static_cast<std::size_t>(e - b));
    const auto la = per_sample_cross_entropy(
        full_model.forward(make_batch(val, idx, full_model.provenance.normalization), Mode::eval), y);
    const auto lb = per_sample_cross_entropy(
        distilled_model.forward(make_batch(val, idx, distilled_model.provenance.normalization), Mode::eval), y);
    for (std::size_t i = 0; i < la.size(); ++i) {
      const double d = std::abs(la[i] - lb[i]);
      g.mean_abs += d;
      g.sup = std::max(g.sup, d);
    }
  }
  g.mean_abs /= N;
  return g;
}

DistilledDataset noise_control(const DistilledDataset& data, std::uint64_t seed) {
  DistilledDataset out = data;
  std::vector<int> classes(static_cast<std::size_t>(data.num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  Rng rng = make_rng(seed, 0x6e6f697365ULL);
  SyntheticBatch noise;
  noise.images = Tensor({data.size(), data.shape.channels, data.shape.height, data.shape.width});
  for (auto& v : noise.images.values()) v = normal(rng);
  noise.labels = data.labels;
  out.images = export_images(noise, data.manifest.teacher_provenance.normalization, data.shape);
  return out;
}

DistilledDataset real_subset_control(const ImageDataset& train, const DistilledDataset& like, std::uint64_t seed) {
  if (train.num_classes != like.num_classes) throw DataError("real subset control: class count mismatch");
  const int ipc = like.size() / std::max(like.num_classes, 1);
  ImageDataset sub = random_class_subset(train, std::max(ipc, 1), seed);
  DistilledDataset out;
  out.shape = like.shape;
  out.num_classes = like.num_classes;
  out.manifest = like.manifest;
  const auto& rc = like.manifest.relabel;
  for (int i = 0; i < sub.size(); ++i) {
    const auto img = sub.image(i);
    out.images.push_back(quantize16(std::vector<double>(img.begin(), img.end()), sub.shape));
    out.labels.push_back(sub.labels[static_cast<std::size_t>(i)]);
    auto crops = generate_crops(i, sub.shape.height, sub.shape.width, rc.n_crops, rc.rrc, rc.flip_p, seed);
    for (auto& c : crops) {
      out.crops.push_back(c);
      std::vector<float> onehot(static_cast<std::size_t>(like.num_classes), 0.0f);
      onehot[static_cast<std::size_t>(sub.labels[static_cast<std::size_t>(i)])] = 1.0f;
      out.soft_labels.push_back(onehot);
    }
  }
  out.validate();
  return out;
}

StudentRun train_full_data(const ImageDataset& train, const Normalization& norm, const PostTrainConfig& cfg,
                           const RrcParams& crop, const ImageDataset* val) {
  if (!train.labeled()) throw DataError("full-data student needs labels");
  CropSet set;
  set.shape = train.shape;
  const int N = train.size(), K = train.num_classes;
  for (int i = 0; i < N; ++i) {
    const auto img = train.image(i);
    set.images.emplace_back(img.begin(), img.end());
  }
  set.crops.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) set.crops[static_cast<std::size_t>(i)].image_id = i;
  set.targets = Tensor({N, K});
  for (int i = 0; i < N; ++i) set.targets[static_cast<std::size_t>(i) * K + train.labels[static_cast<std::size_t>(i)]] = 1.0;
  auto refresh = [&](int, Rng& rng, CropSet& s) {
    for (int i = 0; i < N; ++i) {
      auto& c = s.crops[static_cast<std::size_t>(i)];
      c.image_id = i;
      c.region = sample_rrc(rng, train.shape.height, train.shape.width, crop);
      c.flip = uniform(rng) < 0.5;
    }
  };
  return train_on_crops(set, K, norm, cfg, val, train.id, refresh);
}

}  // namespace scdd
