#include "scdd/squeeze/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scdd/core/errors.hpp"
#include "scdd/core/log.hpp"
#include "scdd/core/parallel.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/netcore/optim.hpp"

namespace scdd {

void PretrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("pretrain epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("pretrain batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ConfigError("pretrain learning_rate must be positive");
  if (weight_decay < 0 || momentum < 0 || momentum >= 1) throw ConfigError("pretrain weight_decay/momentum out of range");
  if (lr_schedule != "cosine") throw ConfigError("unsupported lr_schedule '" + lr_schedule + "'");
  if (objective == Objective::contrastive) {
    if (!(temperature > 0)) throw ConfigError("contrastive temperature must be positive");
    if (batch_size < 4) throw ConfigError("contrastive batch_size must be >= 4");
    if (negatives != "in_batch") throw ConfigError("unsupported negatives mode '" + negatives + "'");
    if (projection_dim < 1) throw ConfigError("projection_dim must be >= 1");
  }
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"objective", to_string(c.objective)},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"momentum", c.momentum},
       {"lr_schedule", c.lr_schedule},
       {"temperature", c.temperature},
       {"negatives", c.negatives},
       {"seed", c.seed},
       {"projection_dim", c.projection_dim}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.objective = j.contains("objective") ? parse_objective(j.at("objective").get<std::string>()) : d.objective;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.momentum = j.value("momentum", d.momentum);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.temperature = j.value("temperature", d.temperature);
  c.negatives = j.value("negatives", d.negatives);
  c.seed = j.value("seed", d.seed);
  c.projection_dim = j.value("projection_dim", d.projection_dim);
}

InfoNceResult info_nce(const Tensor& q, const Tensor& k, Real tau) {
  if (q.rank() != 2 || !q.same_shape(k)) throw ShapeError("info_nce expects equally shaped (B, D) inputs");
  if (!(tau > 0)) throw DomainError("info_nce temperature must be positive");
  const int B = q.dim(0), D = q.dim(1);
  Tensor logits({B, B});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      Real dot = 0;
      for (int d = 0; d < D; ++d) dot += q[static_cast<std::size_t>(i) * D + d] * k[static_cast<std::size_t>(j) * D + d];
      logits[static_cast<std::size_t>(i) * B + j] = dot / tau;
    }
  std::vector<int> positives(static_cast<std::size_t>(B));
  std::iota(positives.begin(), positives.end(), 0);
  auto ce = cross_entropy(logits, positives);
  InfoNceResult out;
  out.loss = ce.loss;
  out.grad_q = Tensor({B, D});
  out.grad_k = Tensor({B, D});
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      const Real g = ce.grad[static_cast<std::size_t>(i) * B + j] / tau;
      if (g == 0) continue;
      for (int d = 0; d < D; ++d) {
        out.grad_q[static_cast<std::size_t>(i) * D + d] += g * k[static_cast<std::size_t>(j) * D + d];
        out.grad_k[static_cast<std::size_t>(j) * D + d] += g * q[static_cast<std::size_t>(i) * D + d];
      }
    }
  return out;
}

InfoNceResult symmetric_info_nce(const Tensor& q, const Tensor& k, Real tau) {
  auto a = info_nce(q, k, tau);
  auto b = info_nce(k, q, tau);
  InfoNceResult out;
  out.loss = 0.5 * (a.loss + b.loss);
  out.grad_q = Tensor(q.shape());
  out.grad_k = Tensor(k.shape());
  for (std::size_t i = 0; i < q.size(); ++i) {
    out.grad_q[i] = 0.5 * (a.grad_q[i] + b.grad_k[i]);
    out.grad_k[i] = 0.5 * (a.grad_k[i] + b.grad_q[i]);
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  const int N = x.dim(0), D = x.dim(1);
  Tensor y(x.shape());
  for (int i = 0; i < N; ++i) {
    Real norm = 0;
    for (int d = 0; d < D; ++d) norm += x[static_cast<std::size_t>(i) * D + d] * x[static_cast<std::size_t>(i) * D + d];
    norm = std::max(std::sqrt(norm), Real{1e-12});
    for (int d = 0; d < D; ++d) y[static_cast<std::size_t>(i) * D + d] = x[static_cast<std::size_t>(i) * D + d] / norm;
  }
  return y;
}

Tensor l2_normalize_rows_backward(const Tensor& dy, const Tensor& x, const Tensor& y) {
  const int N = x.dim(0), D = x.dim(1);
  Tensor dx(x.shape());
  for (int i = 0; i < N; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * D;
    Real norm = 0, dot = 0;
    for (int d = 0; d < D; ++d) {
      norm += x[o + d] * x[o + d];
      dot += y[o + d] * dy[o + d];
    }
    norm = std::max(std::sqrt(norm), Real{1e-12});
    for (int d = 0; d < D; ++d) dx[o + d] = (dy[o + d] - y[o + d] * dot) / norm;
  }
  return dx;
}

namespace {

template <class Source>
void augmented_batch(const Source& data, const InputShape& shape, std::span<const int> indices,
                       const AugmentationPolicy& policy, const Normalization& norm, std::uint64_t seed,
                       std::uint64_t stream, Tensor& out, int row_offset) {
  const std::size_t per = static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  const int n = static_cast<int>(indices.size());
  SCDD_PARALLEL_FOR
  for (int i = 0; i < n; ++i) {
    const int idx = indices[static_cast<std::size_t>(i)];
    Rng rng = make_rng(seed, mix_seed(stream, static_cast<std::uint64_t>(idx)));
    std::vector<float> view(per);
    augment_image(data.image(idx), shape, policy, rng, view);
    Real* dst = out.data() + static_cast<std::size_t>(row_offset + i) * per;
    for (int c = 0; c < shape.channels; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        dst[c * plane + k] = (view[c * plane + k] - norm.mean[c]) / norm.std[c];
  }
}

std::vector<std::pair<int, int>> batch_ranges(int n, int batch_size, int min_size) {
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < n; b += batch_size) {
    const int e = std::min(n, b + batch_size);
    if (e - b >= min_size) out.emplace_back(b, e);
  }
  return out;
}

void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) p.grad->zero();
}

void check_finite(Real loss, const char* stage, int epoch, long step) {
  if (!std::isfinite(loss))
    throw DivergenceError(std::string(stage) + " diverged at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(step));
}

}  // namespace

TrainedBackbone pretrain_supervised(const ImageDataset& data, const NetworkSpec& spec, const PretrainConfig& cfg,
                                    const AugmentationPolicy& policy, const EpochCallback& on_epoch) {
  cfg.validate();
  policy.validate();
  if (cfg.objective != Objective::supervised) throw ConfigError("pretrain_supervised needs objective=supervised");
  if (!data.labeled()) throw DataError("supervised pretraining needs a labeled dataset");
  data.validate();
  spec.validate();
  if (data.num_classes != spec.num_classes) throw DataError("dataset class count differs from the network spec");
  const InputShape& shape = data.shape;
  TrainedBackbone model = build_network(spec, cfg.seed);
  model.check_input(Tensor({2, shape.channels, shape.height, shape.width}));
  const Normalization norm = compute_normalization(data.pixels, shape.channels, shape.height * shape.width);
  auto params = model.parameters(true);
  Sgd opt(params, {cfg.momentum, cfg.weight_decay});
  const int N = data.size();
  const auto ranges = batch_ranges(N, cfg.batch_size, 2);
  const long total = static_cast<long>(ranges.size()) * cfg.epochs;
  long step = 0;
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, 0x5348554600ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (const auto& [b, e] : ranges) {
      std::span<const int> idx(order.data() + b, static_cast<std::size_t>(e - b));
      Tensor x({e - b, shape.channels, shape.height, shape.width});
      augmented_batch(data, shape, idx, policy, norm, cfg.seed, static_cast<std::uint64_t>(epoch) * 2, x, 0);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = data.labels[static_cast<std::size_t>(idx[i])];
      zero_grads(params);
      Tensor logits = model.forward(x, Mode::train);
      auto ce = cross_entropy(logits, y);
      check_finite(ce.loss, "supervised pretraining", epoch, step);
      model.backward(ce.grad, nullptr, true, false);
      opt.step(cosine_lr(cfg.learning_rate, step, total));
      ++step;
      epoch_loss += ce.loss;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(ranges.size(), 1));
    log::debug("supervised epoch ", epoch, " loss ", epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  model.provenance.objective = Objective::supervised;
  model.provenance.epochs = cfg.epochs;
  model.provenance.dataset_id = data.id;
  model.provenance.seed = cfg.seed;
  model.provenance.normalization = norm;
  model.aligned = true;
  model.provenance.train_accuracy = classification_accuracy(model, data);
  return model;
}

TrainedBackbone pretrain_contrastive(const UnlabeledImages& data, const NetworkSpec& spec, const PretrainConfig& cfg,
                                     const AugmentationPolicy& policy, const EpochCallback& on_epoch) {
  cfg.validate();
  policy.validate();
  if (cfg.objective != Objective::contrastive) throw ConfigError("pretrain_contrastive needs objective=contrastive");
  spec.validate();
  const InputShape& shape = data.shape();
  const int N = data.size();
  if (N < 4) throw DataError("contrastive pretraining needs at least 4 images");
  TrainedBackbone model = build_network(spec, cfg.seed);
  model.check_input(Tensor({2, shape.channels, shape.height, shape.width}));
  const Normalization norm = compute_normalization(data.pixels(), shape.channels, shape.height * shape.width);
  const int F = model.backbone.feature_dim();
  Linear proj1(F, F), proj2(F, cfg.projection_dim);
  Rng proj_rng = make_rng(cfg.seed, 0x70726f6aULL);
  proj1.initialize(proj_rng, std::sqrt(2.0 / F));
  proj2.initialize(proj_rng, std::sqrt(1.0 / F));
  auto params = model.parameters(false);
  proj1.append_parameters(params, "proj1");
  proj2.append_parameters(params, "proj2");
  Sgd opt(params, {cfg.momentum, cfg.weight_decay});
  const auto ranges = batch_ranges(N, cfg.batch_size, 4);
  const long total = static_cast<long>(ranges.size()) * cfg.epochs;
  long step = 0;
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, 0x5348554600ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (const auto& [b, e] : ranges) {
      const int B = e - b;
      std::span<const int> idx(order.data() + b, static_cast<std::size_t>(B));
      Tensor x({2 * B, shape.channels, shape.height, shape.width});
      augmented_batch(data, shape, idx, policy, norm, cfg.seed, static_cast<std::uint64_t>(epoch) * 2, x, 0);
      augmented_batch(data, shape, idx, policy, norm, cfg.seed, static_cast<std::uint64_t>(epoch) * 2 + 1, x, B);
      zero_grads(params);
      Tensor h = model.backbone.forward(x, Mode::train);
      Tensor hidden = proj1.forward(h);
      relu_inplace(hidden);
      Tensor u = proj2.forward(hidden);
      Tensor z = l2_normalize_rows(u);
      auto nce = symmetric_info_nce(z.slice(0, B), z.slice(B, 2 * B), cfg.temperature);
      check_finite(nce.loss, "contrastive pretraining", epoch, step);
      Tensor dz(z.shape());
      std::copy(nce.grad_q.values().begin(), nce.grad_q.values().end(), dz.values().begin());
      std::copy(nce.grad_k.values().begin(), nce.grad_k.values().end(), dz.values().begin() + nce.grad_q.size());
      Tensor du = l2_normalize_rows_backward(dz, u, z);
      Tensor dhidden = proj2.backward(du, true, true);
      relu_backward_inplace(dhidden, hidden);
      Tensor dh = proj1.backward(dhidden, true, true);
      model.backbone.backward(dh, nullptr, true, false);
      opt.step(cosine_lr(cfg.learning_rate, step, total));
      ++step;
      epoch_loss += nce.loss;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(ranges.size(), 1));
    log::debug("contrastive epoch ", epoch, " loss ", epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  model.provenance.objective = Objective::contrastive;
  model.provenance.epochs = cfg.epochs;
  model.provenance.dataset_id = data.id();
  model.provenance.seed = cfg.seed;
  model.provenance.normalization = norm;
  model.aligned = false;
  return model;
}

double classification_accuracy(TrainedBackbone& model, const ImageDataset& data, int batch_size) {
  if (!data.labeled()) throw DataError("accuracy needs a labeled dataset");
  if (data.num_classes != model.spec.num_classes) throw DataError("dataset class count differs from the model");
  const int N = data.size();
  if (N == 0) return 0.0;
  int correct = 0;
  std::vector<int> idx;
  for (int b = 0; b < N; b += batch_size) {
    const int e = std::min(N, b + batch_size);
    idx.resize(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    Tensor logits = model.forward(make_batch(data, idx, model.provenance.normalization), Mode::eval);
    for (int i = 0; i < e - b; ++i)
      if (argmax_row(logits, i) == data.labels[static_cast<std::size_t>(b + i)]) ++correct;
  }
  return static_cast<double>(correct) / N;
}

}  // namespace scdd
