#include "scdd/squeeze/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scdd/core/errors.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/netcore/optim.hpp"

namespace scdd {

void ProbeConfig::validate() const {
  if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("probe batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("probe learning_rate must be positive");
  if (weight_decay < 0 || momentum < 0 || momentum >= 1) throw ConfigError("probe weight_decay/momentum out of range");
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"momentum", c.momentum},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.momentum = j.value("momentum", d.momentum);
  c.seed = j.value("seed", d.seed);
}

Tensor extract_features(TrainedBackbone& model, const ImageDataset& data, int batch_size) {
  const int N = data.size();
  const int F = model.backbone.feature_dim();
  Tensor features({N, F});
  std::vector<int> idx;
  for (int b = 0; b < N; b += batch_size) {
    const int e = std::min(N, b + batch_size);
    idx.resize(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    Tensor x = make_batch(data, idx, model.provenance.normalization);
    model.check_input(x);
    Tensor f = model.backbone.forward(x, Mode::eval);
    std::copy(f.values().begin(), f.values().end(), features.values().begin() + static_cast<std::ptrdiff_t>(b) * F);
  }
  return features;
}

Linear train_linear_head(const Tensor& features, std::span<const int> labels, int num_classes,
                         const ProbeConfig& cfg) {
  cfg.validate();
  if (features.rank() != 2 || static_cast<std::size_t>(features.dim(0)) != labels.size())
    throw ShapeError("probe features and labels disagree in length");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("probe label out of range");
  const int N = features.dim(0), F = features.dim(1);
  Linear head(F, num_classes);
  Rng rng = make_rng(cfg.seed, 0x70726f6265ULL);
  head.initialize(rng, 0.01);
  std::vector<Parameter> params;
  head.append_parameters(params, "head");
  Sgd opt(params, {cfg.momentum, cfg.weight_decay});
  const int batches = (N + cfg.batch_size - 1) / cfg.batch_size;
  const long total = static_cast<long>(batches) * cfg.epochs;
  long step = 0;
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, 0x50524f4200ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (int b = 0; b < N; b += cfg.batch_size) {
      const int e = std::min(N, b + cfg.batch_size);
      Tensor x({e - b, F});
      std::vector<int> y(static_cast<std::size_t>(e - b));
      for (int i = b; i < e; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        std::copy_n(features.data() + static_cast<std::size_t>(src) * F, F, x.data() + static_cast<std::size_t>(i - b) * F);
        y[static_cast<std::size_t>(i - b)] = labels[static_cast<std::size_t>(src)];
      }
      for (auto& p : params) p.grad->zero();
      auto ce = cross_entropy(head.forward(x), y);
      if (!std::isfinite(ce.loss)) throw DivergenceError("linear probe diverged at epoch " + std::to_string(epoch));
      head.backward(ce.grad, true, false);
      opt.step(cosine_lr(cfg.learning_rate, step++, total));
    }
  }
  return head;
}

double linear_accuracy(Linear& head, const Tensor& features, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  Tensor logits = head.forward(features);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax_row(logits, static_cast<int>(i)) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

TrainedBackbone linear_probe(const TrainedBackbone& model, const ImageDataset& data, const ProbeConfig& cfg) {
  cfg.validate();
  if (!data.labeled()) throw DataError("linear probing needs a labeled dataset");
  if (data.num_classes != model.spec.num_classes)
    throw DataError("probe dataset has " + std::to_string(data.num_classes) + " classes, model expects " +
                    std::to_string(model.spec.num_classes));
  if (model.provenance.normalization.mean.empty()) throw StateError("model has no input normalization recorded");
  TrainedBackbone out = model;
  const Tensor features = extract_features(out, data);
  out.head = train_linear_head(features, data.labels, data.num_classes, cfg);
  out.aligned = true;
  out.provenance.probe_accuracy = linear_accuracy(*out.head, features, data.labels);
  return out;
}

}  // namespace scdd
