#pragma once

#include <cstdint>
#include <functional>

#include <json.hpp>

#include "scdd/netcore/network.hpp"
#include "scdd/squeeze/augment.hpp"
#include "scdd/squeeze/dataset.hpp"

namespace scdd {

struct PretrainConfig {
  Objective objective = Objective::supervised;
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 0.06;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::string lr_schedule = "cosine";
  double temperature = 0.2;
  std::string negatives = "in_batch";
  std::uint64_t seed = 0;
  int projection_dim = 64;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

/// Called after every epoch with (epoch index, mean training loss).
using EpochCallback = std::function<void(int, double)>;

struct InfoNceResult {
  Real loss = 0;
  Tensor grad_q;
  Tensor grad_k;
};

/// Mean over rows i of -log(exp(q_i.k_i / tau) / sum_j exp(q_i.k_j / tau)),
/// with the other rows of k as negatives.
InfoNceResult info_nce(const Tensor& q, const Tensor& k, Real tau);
/// Average of info_nce(q, k) and info_nce(k, q).
InfoNceResult symmetric_info_nce(const Tensor& q, const Tensor& k, Real tau);

/// Row-wise l2 normalization and its backward pass.
Tensor l2_normalize_rows(const Tensor& x);
Tensor l2_normalize_rows_backward(const Tensor& dy, const Tensor& x, const Tensor& y);

/// Cross-entropy training of backbone and head, with supervised augmentation.
TrainedBackbone pretrain_supervised(const ImageDataset& data, const NetworkSpec& spec,
                                    const PretrainConfig& cfg,
                                    const AugmentationPolicy& policy = AugmentationPolicy::supervised(),
                                    const EpochCallback& on_epoch = {});

/// In-batch InfoNCE training on two augmented views per image. The head is
/// left unaligned.
TrainedBackbone pretrain_contrastive(const UnlabeledImages& data, const NetworkSpec& spec,
                                     const PretrainConfig& cfg,
                                     const AugmentationPolicy& policy = AugmentationPolicy::contrastive(),
                                     const EpochCallback& on_epoch = {});

/// Top-1 accuracy of the model's head on `data` (inference mode).
double classification_accuracy(TrainedBackbone& model, const ImageDataset& data, int batch_size = 256);

}  // namespace scdd
