#pragma once

#include <cstdint>

#include <json.hpp>

#include "scdd/netcore/network.hpp"
#include "scdd/squeeze/dataset.hpp"

namespace scdd {

struct ProbeConfig {
  int epochs = 100;
  int batch_size = 256;
  double learning_rate = 0.03;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

/// Pooled backbone features (N, k) in inference mode, using the model's
/// stored input normalization.
Tensor extract_features(TrainedBackbone& model, const ImageDataset& data, int batch_size = 256);

/// Trains a linear classifier on fixed features with SGD and a cosine schedule.
Linear train_linear_head(const Tensor& features, std::span<const int> labels, int num_classes,
                         const ProbeConfig& cfg);

double linear_accuracy(Linear& head, const Tensor& features, std::span<const int> labels);

/// Returns a copy of `model` with a freshly trained head; the backbone and
/// its BN running statistics are untouched.
TrainedBackbone linear_probe(const TrainedBackbone& model, const ImageDataset& data, const ProbeConfig& cfg);

}  // namespace scdd
