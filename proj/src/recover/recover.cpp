#include "scdd/recover/recover.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "scdd/core/errors.hpp"
#include "scdd/core/log.hpp"
#include "scdd/kernels/resample.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/netcore/optim.hpp"

namespace scdd {

void RecoveryConfig::validate() const {
  if (ipc < 1) throw ConfigError("recovery ipc must be >= 1");
  if (iterations < 1) throw ConfigError("recovery iterations must be >= 1");
  if (!(alpha >= 0)) throw ConfigError("recovery alpha must be >= 0");
  if (!(first_bn_multiplier > 0)) throw ConfigError("first_bn_multiplier must be positive");
  if (batch_size < 2) throw ConfigError("recovery batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ConfigError("recovery learning_rate must be positive");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    throw ConfigError("recovery Adam betas must lie in [0, 1)");
  if (lr_schedule != "cosine") throw ConfigError("unsupported lr_schedule '" + lr_schedule + "'");
  for (double v : beta)
    if (!(v >= 0)) throw ConfigError("beta coefficients must be >= 0");
  for (double v : gamma)
    if (!(v >= 0)) throw ConfigError("gamma coefficients must be >= 0");
  if (random_crop) crop.validate();
}

std::pair<std::vector<double>, std::vector<double>> RecoveryConfig::effective_coefficients(int layers) const {
  auto expand = [&](const std::vector<double>& v, const char* name) {
    if (v.empty()) return std::vector<double>(static_cast<std::size_t>(layers), 1.0);
    if (static_cast<int>(v.size()) != layers)
      throw ConfigError(std::string(name) + " has " + std::to_string(v.size()) + " entries, the teacher has " +
                        std::to_string(layers) + " BN layers");
    return v;
  };
  auto b = expand(beta, "beta");
  auto g = expand(gamma, "gamma");
  if (layers > 0) {
    b[0] *= first_bn_multiplier;
    g[0] *= first_bn_multiplier;
  }
  return {b, g};
}

void to_json(nlohmann::json& j, const RecoveryConfig& c) {
  j = {{"ipc", c.ipc},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"gamma", c.gamma},
       {"first_bn_multiplier", c.first_bn_multiplier},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"optimizer", {{"kind", "adam"}, {"lr", c.learning_rate}, {"betas", {c.adam_beta1, c.adam_beta2}}}},
       {"lr_schedule", c.lr_schedule},
       {"init", {{"distribution", "standard_normal"}, {"seed", c.seed}}},
       {"random_crop", c.random_crop},
       {"crop", c.crop}};
}

void from_json(const nlohmann::json& j, RecoveryConfig& c) {
  RecoveryConfig d;
  c.ipc = j.value("ipc", d.ipc);
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.gamma = j.value("gamma", d.gamma);
  c.first_bn_multiplier = j.value("first_bn_multiplier", d.first_bn_multiplier);
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = d.learning_rate;
  c.adam_beta1 = d.adam_beta1;
  c.adam_beta2 = d.adam_beta2;
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.value("kind", std::string("adam")) != "adam") throw ConfigError("recovery optimizer must be adam");
    c.learning_rate = o.value("lr", d.learning_rate);
    if (o.contains("betas")) {
      c.adam_beta1 = o.at("betas").at(0).get<double>();
      c.adam_beta2 = o.at("betas").at(1).get<double>();
    }
  }
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.seed = j.contains("init") ? j.at("init").value("seed", d.seed) : d.seed;
  c.random_crop = j.value("random_crop", d.random_crop);
  c.crop = j.contains("crop") ? j.at("crop").get<RrcParams>() : d.crop;
}

void SyntheticBatch::validate(int num_classes) const {
  if (images.rank() != 4 || images.dim(0) != size()) throw ShapeError("synthetic images and labels disagree");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("synthetic label out of range");
  for (Real v : images.values())
    if (!std::isfinite(v)) throw DataError("synthetic images contain non-finite values");
}

SyntheticBatch init_synthetic(int ipc, std::span<const int> classes, const InputShape& shape, std::uint64_t seed) {
  if (ipc < 1 || classes.empty()) throw ConfigError("init_synthetic needs ipc >= 1 and at least one class");
  SyntheticBatch b;
  const int n = ipc * static_cast<int>(classes.size());
  b.images = Tensor({n, shape.channels, shape.height, shape.width});
  for (int c : classes)
    for (int i = 0; i < ipc; ++i) b.labels.push_back(c);
  Rng rng = make_rng(seed, 0x696e6974ULL);
  for (auto& v : b.images.values()) v = normal(rng);
  return b;
}

namespace {

void check_coefficients(const BatchStatRecord& batch, const BNStatSnapshot& global, std::span<const double> beta,
                        std::span<const double> gamma) {
  batch.check_compatible(global);
  if (beta.size() != global.layers.size() || gamma.size() != global.layers.size())
    throw ShapeError("coefficient vectors must have one entry per BN layer");
  for (double v : beta)
    if (!(v >= 0)) throw ConfigError("negative BN mean coefficient");
  for (double v : gamma)
    if (!(v >= 0)) throw ConfigError("negative BN variance coefficient");
}

Real l2_distance(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

BnMatchTerms bn_matching_terms(const BatchStatRecord& batch, const BNStatSnapshot& global,
                               std::span<const double> beta, std::span<const double> gamma) {
  check_coefficients(batch, global, beta, gamma);
  BnMatchTerms t;
  for (std::size_t k = 0; k < global.layers.size(); ++k) {
    const Real m = beta[k] * l2_distance(batch.layers[k].batch_mean, global.layers[k].mean);
    const Real v = gamma[k] * l2_distance(batch.layers[k].batch_variance, global.layers[k].variance);
    t.mean_terms.push_back(m);
    t.variance_terms.push_back(v);
    t.total += m + v;
  }
  return t;
}

Real bn_matching_loss(const BatchStatRecord& batch, const BNStatSnapshot& global, std::span<const double> beta,
                      std::span<const double> gamma) {
  return bn_matching_terms(batch, global, beta, gamma).total;
}

StatGradients bn_matching_gradient(const BatchStatRecord& batch, const BNStatSnapshot& global,
                                   std::span<const double> beta, std::span<const double> gamma, Real weight) {
  check_coefficients(batch, global, beta, gamma);
  StatGradients out(global.layers.size());
  auto unit = [](const std::vector<Real>& a, const std::vector<Real>& b, Real scale) {
    std::vector<Real> g(a.size(), 0.0);
    const Real norm = l2_distance(a, b);
    if (norm == 0 || scale == 0) return g;
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = scale * (a[i] - b[i]) / norm;
    return g;
  };
  for (std::size_t k = 0; k < global.layers.size(); ++k) {
    out[k].d_mean = unit(batch.layers[k].batch_mean, global.layers[k].mean, weight * beta[k]);
    out[k].d_variance = unit(batch.layers[k].batch_variance, global.layers[k].variance, weight * gamma[k]);
  }
  return out;
}

ObjectiveValue recovery_objective(TrainedBackbone& model, const Tensor& images, std::span<const int> labels,
                                  const BNStatSnapshot& global, const RecoveryConfig& cfg, bool want_grad) {
  if (!model.is_aligned()) throw StateError("recovery needs an aligned teacher (run the linear probe first)");
  if (static_cast<std::size_t>(images.dim(0)) != labels.size()) throw ShapeError("images and labels disagree");
  auto fwd = forward_with_batch_stats(model, images);
  const auto [beta, gamma] = cfg.effective_coefficients(static_cast<int>(global.layers.size()));
  ObjectiveValue v;
  v.terms = bn_matching_terms(fwd.stats, global, beta, gamma);
  auto ce = cross_entropy(fwd.logits, labels);
  v.ce = ce.loss;
  v.bn = v.terms.total;
  v.total = v.ce + cfg.alpha * v.bn;
  if (want_grad) {
    if (cfg.alpha > 0) {
      const auto stat = bn_matching_gradient(fwd.stats, global, beta, gamma, cfg.alpha);
      v.image_grad = model.backward(ce.grad, &stat, false, true);
    } else {
      v.image_grad = model.backward(ce.grad, nullptr, false, true);
    }
  }
  return v;
}

std::vector<std::vector<int>> plan_class_batches(const std::vector<int>& labels, int batch_size) {
  if (batch_size < 2) throw ConfigError("recovery batch_size must be >= 2");
  if (labels.size() < 2) throw PreconditionError("recovery needs at least two images");
  std::vector<std::pair<int, std::vector<int>>> groups;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (groups.empty() || groups.back().first != labels[static_cast<std::size_t>(i)])
      groups.push_back({labels[static_cast<std::size_t>(i)], {}});
    groups.back().second.push_back(i);
  }
  std::vector<std::vector<int>> plan;
  std::vector<int> singles;
  auto flush_singles = [&](bool final) {
    while (static_cast<int>(singles.size()) >= batch_size || (final && !singles.empty())) {
      const std::size_t take = std::min<std::size_t>(singles.size(), static_cast<std::size_t>(batch_size));
      std::vector<int> chunk(singles.begin(), singles.begin() + static_cast<std::ptrdiff_t>(take));
      singles.erase(singles.begin(), singles.begin() + static_cast<std::ptrdiff_t>(take));
      if (chunk.size() == 1 && !plan.empty()) plan.back().push_back(chunk[0]);
      else plan.push_back(std::move(chunk));
    }
  };
  for (const auto& [cls, idx] : groups) {
    if (idx.size() == 1) {
      singles.push_back(idx[0]);
      flush_singles(false);
      continue;
    }
    for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(batch_size));
      if (e - b == 1) plan.back().push_back(idx[b]);
      else plan.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  flush_singles(true);
  if (plan.size() > 1 && plan.front().size() == 1) {
    plan[1].insert(plan[1].begin(), plan.front()[0]);
    plan.erase(plan.begin());
  }
  return plan;
}

namespace {

Tensor gather(const Tensor& images, const std::vector<int>& idx) {
  std::vector<int> shape = images.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  const std::size_t per = images.stride0();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(images.data() + static_cast<std::size_t>(idx[i]) * per, per, out.data() + i * per);
  return out;
}

void scatter(Tensor& images, const std::vector<int>& idx, const Tensor& part) {
  const std::size_t per = images.stride0();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(part.data() + i * per, per, images.data() + static_cast<std::size_t>(idx[i]) * per);
}

struct CropPlan {
  std::vector<kernels::PixelBox> boxes;
  std::vector<bool> flips;
};

Tensor apply_crops(const Tensor& x, const CropPlan& plan) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out(x.shape());
  const std::size_t per = x.stride0();
  for (int n = 0; n < N; ++n)
    kernels::crop_resize_bilinear(std::span<const Real>(x.data() + n * per, per), C, H, W,
                                  plan.boxes[static_cast<std::size_t>(n)], plan.flips[static_cast<std::size_t>(n)],
                                  H, W, std::span<Real>(out.data() + n * per, per));
  return out;
}

Tensor crops_backward(const Tensor& dy, const CropPlan& plan) {
  const int N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  Tensor dx(dy.shape());
  const std::size_t per = dy.stride0();
  for (int n = 0; n < N; ++n)
    kernels::crop_resize_bilinear_backward(std::span<const Real>(dy.data() + n * per, per), C, H, W,
                                           plan.boxes[static_cast<std::size_t>(n)],
                                           plan.flips[static_cast<std::size_t>(n)], H, W,
                                           std::span<Real>(dx.data() + n * per, per));
  return dx;
}

TrajectoryPoint point_of(int iter, const ObjectiveValue& v) { return {iter, v.ce, v.bn, v.total}; }

}  // namespace

RecoveryResult recover_dataset(const TrainedBackbone& teacher, const RecoveryConfig& cfg,
                               const IterationCallback& on_iteration) {
  cfg.validate();
  if (!teacher.is_aligned()) throw StateError("recovery needs an aligned teacher (run the linear probe first)");
  if (!teacher.provenance.complete()) throw StateError("teacher provenance is incomplete");
  TrainedBackbone model = teacher;
  const BNStatSnapshot global = extract_bn_statistics(model);
  const InputShape shape = model.spec.input_shape;
  std::vector<int> classes(static_cast<std::size_t>(model.spec.num_classes));
  std::iota(classes.begin(), classes.end(), 0);

  RecoveryResult result;
  result.batch = init_synthetic(cfg.ipc, classes, shape, cfg.seed);
  const auto plan = plan_class_batches(result.batch.labels, cfg.batch_size);
  result.trajectory.assign(static_cast<std::size_t>(cfg.iterations), TrajectoryPoint{});

  for (std::size_t b = 0; b < plan.size(); ++b) {
    const auto& idx = plan[b];
    ClassBatchResult br;
    br.image_indices = idx;
    std::vector<int> labels;
    for (int i : idx) {
      labels.push_back(result.batch.labels[static_cast<std::size_t>(i)]);
      if (br.classes.empty() || br.classes.back() != labels.back()) br.classes.push_back(labels.back());
    }
    Tensor x = gather(result.batch.images, idx);
    Tensor grad(x.shape());
    Adam opt({{"images", &x, &grad}}, {cfg.adam_beta1, cfg.adam_beta2, 1e-8, 0.0, false});
    br.initial = point_of(0, recovery_objective(model, x, labels, global, cfg, false));
    for (int it = 0; it < cfg.iterations; ++it) {
      ObjectiveValue v;
      if (cfg.random_crop) {
        CropPlan crops;
        for (std::size_t n = 0; n < idx.size(); ++n) {
          Rng rng = make_rng(cfg.seed, mix_seed(0x63726f70ULL + b, static_cast<std::uint64_t>(it) * 4096 + n));
          crops.boxes.push_back(sample_rrc(rng, shape.height, shape.width, cfg.crop));
          crops.flips.push_back(uniform(rng) < 0.5);
        }
        v = recovery_objective(model, apply_crops(x, crops), labels, global, cfg, true);
        grad = crops_backward(v.image_grad, crops);
      } else {
        v = recovery_objective(model, x, labels, global, cfg, true);
        grad = std::move(v.image_grad);
      }
      if (!std::isfinite(v.total))
        throw DivergenceError("recovery diverged at iteration " + std::to_string(it) + " of class-batch " +
                              std::to_string(b) + " (total loss " + std::to_string(v.total) + ")");
      const TrajectoryPoint p = point_of(it, v);
      br.trajectory.push_back(p);
      if (on_iteration) on_iteration(static_cast<int>(b), p);
      opt.step(cosine_lr(cfg.learning_rate, it, cfg.iterations));
    }
    br.final = point_of(cfg.iterations, recovery_objective(model, x, labels, global, cfg, false));
    if (!std::isfinite(br.final.total))
      throw DivergenceError("recovery diverged after the last iteration of class-batch " + std::to_string(b));
    log::debug("class-batch ", b, " bn ", br.initial.bn, " -> ", br.final.bn);
    scatter(result.batch.images, idx, x);
    result.batches.push_back(std::move(br));
  }
  const Real inv = 1.0 / static_cast<Real>(result.batches.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    TrajectoryPoint& m = result.trajectory[static_cast<std::size_t>(it)];
    m.iter = it;
    for (const auto& br : result.batches) {
      const auto& p = br.trajectory[static_cast<std::size_t>(it)];
      m.ce += p.ce * inv;
      m.bn += p.bn * inv;
      m.total += p.total * inv;
    }
  }
  return result;
}

std::vector<Image16> export_images(const SyntheticBatch& batch, const Normalization& norm, const InputShape& shape) {
  if (norm.mean.size() != static_cast<std::size_t>(shape.channels)) throw ShapeError("normalization channel mismatch");
  std::vector<Image16> out;
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  const std::size_t per = plane * shape.channels;
  std::vector<double> px(per);
  for (int n = 0; n < batch.size(); ++n) {
    for (int c = 0; c < shape.channels; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        px[c * plane + k] = batch.images[n * per + c * plane + k] * norm.std[c] + norm.mean[c];
    out.push_back(quantize16(px, shape));
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& file, const std::vector<TrajectoryPoint>& trajectory) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << "iter,ce,bn,total\n";
  char line[160];
  for (const auto& p : trajectory) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", p.iter, p.ce, p.bn, p.total);
    out << line;
  }
  if (!out) throw IoError("cannot write " + file.string());
}

std::vector<TrajectoryPoint> read_trajectory_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != "iter,ce,bn,total") throw FormatError(file.string() + ": unexpected trajectory header");
  std::vector<TrajectoryPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrajectoryPoint p;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &p.iter, &p.ce, &p.bn, &p.total) != 4)
      throw FormatError(file.string() + ": malformed trajectory row '" + line + "'");
    out.push_back(p);
  }
  return out;
}

void write_recovery(const std::filesystem::path& dir, const RecoveryResult& result, const TrainedBackbone& teacher) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto images = export_images(result.batch, teacher.provenance.normalization, teacher.spec.input_shape);
  std::map<int, int> counter;
  for (int n = 0; n < result.batch.size(); ++n) {
    const int c = result.batch.labels[static_cast<std::size_t>(n)];
    const int i = counter[c]++;
    write_png16(dir / "images" / ("class_" + std::to_string(c)) / ("img_" + std::to_string(i) + ".png"),
                images[static_cast<std::size_t>(n)]);
  }
  write_trajectory_csv(dir / "trajectory.csv", result.trajectory);
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& b : result.batches) {
    auto pt = [](const TrajectoryPoint& p) { return nlohmann::json{{"ce", p.ce}, {"bn", p.bn}, {"total", p.total}}; };
    batches.push_back({{"classes", b.classes}, {"images", b.image_indices}, {"initial", pt(b.initial)},
                       {"final", pt(b.final)}});
  }
  std::ofstream(dir / "batches.json") << batches.dump(2) << "\n";
}

}  // namespace scdd
