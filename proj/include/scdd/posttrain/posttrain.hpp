#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "scdd/netcore/network.hpp"
#include "scdd/relabel/relabel.hpp"
#include "scdd/squeeze/dataset.hpp"

namespace scdd {

struct PostTrainConfig {
  /// Architecture, depth and width of the student; classes and input shape
  /// come from the dataset.
  NetworkSpec student_spec;
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 0.005;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::string lr_schedule = "cosine";
  std::uint64_t seed = 0;
  /// Validation accuracy is recorded every this many epochs (and after the last).
  int eval_every = 1;
  /// Crops drawn per image in each epoch, cycling through the stored ones;
  /// 0 uses every stored crop every epoch.
  int crops_per_epoch = 0;

  void validate() const;
  bool operator==(const PostTrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const PostTrainConfig& c);
void from_json(const nlohmann::json& j, PostTrainConfig& c);

struct BudgetPoint {
  int epoch = 0;  // epochs completed
  double top1 = 0;
  double train_loss = 0;
};

struct StudentRun {
  TrainedBackbone model;
  std::vector<BudgetPoint> budget_curve;
};

struct DeviationGap {
  double mean_abs = 0;
  double sup = 0;
};

struct EvalReport {
  double top1 = 0;
  std::optional<DeviationGap> loss_gap;
  std::vector<BudgetPoint> budget_curve;
};

nlohmann::json to_json(const EvalReport& r);

/// Soft cross-entropy training on the stored (crop, soft label) pairs only.
/// `val`, when given, feeds the budget curve.
StudentRun train_on_distilled(const DistilledDataset& data, const PostTrainConfig& cfg,
                              const ImageDataset* val = nullptr);

/// Fraction of rows whose argmax equals the label.
double top1_accuracy(const Tensor& logits, std::span<const int> labels);

/// Top-1 accuracy on a labeled set; throws DataError on a class-count mismatch.
double evaluate(TrainedBackbone& model, const ImageDataset& val);

/// Mean and supremum over validation samples of |ce_full - ce_distilled|.
DeviationGap deviation_gap(TrainedBackbone& full_model, TrainedBackbone& distilled_model, const ImageDataset& val);

/// Same crops and soft labels, images replaced by clamped Gaussian noise.
DistilledDataset noise_control(const DistilledDataset& data, std::uint64_t seed);

/// `ipc` random real images per class with one-hot labels on freshly drawn crops.
DistilledDataset real_subset_control(const ImageDataset& train, const DistilledDataset& like, std::uint64_t seed);

/// Supervised student on the full real training set (same optimizer and schedule,
/// one-hot targets, the given crop policy).
StudentRun train_full_data(const ImageDataset& train, const Normalization& norm, const PostTrainConfig& cfg,
                           const RrcParams& crop, const ImageDataset* val = nullptr);

}  // namespace scdd
