#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "scdd/core/image_io.hpp"
#include "scdd/netcore/network.hpp"
#include "scdd/squeeze/augment.hpp"

namespace scdd {

struct RecoveryConfig {
  int ipc = 10;
  double alpha = 0.005;
  /// Per-layer coefficients; empty means 1 for every layer.
  std::vector<double> beta;
  std::vector<double> gamma;
  double first_bn_multiplier = 10.0;
  int iterations = 1000;
  int batch_size = 100;
  double learning_rate = 0.4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  std::string lr_schedule = "cosine";
  std::uint64_t seed = 0;
  bool random_crop = false;
  RrcParams crop{0.08, 1.0};

  void validate() const;
  /// beta/gamma expanded to `layers` entries with the first-layer multiplier applied.
  std::pair<std::vector<double>, std::vector<double>> effective_coefficients(int layers) const;
  bool operator==(const RecoveryConfig&) const = default;
};

void to_json(nlohmann::json& j, const RecoveryConfig& c);
void from_json(const nlohmann::json& j, RecoveryConfig& c);

/// Images in normalized input space plus their class labels.
struct SyntheticBatch {
  Tensor images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  void validate(int num_classes) const;
};

/// ipc standard-normal images per class, grouped by class in the given order.
SyntheticBatch init_synthetic(int ipc, std::span<const int> classes, const InputShape& shape, std::uint64_t seed);

struct BnMatchTerms {
  Real total = 0;
  std::vector<Real> mean_terms;      // beta_k * ||mu_k - RM_k||
  std::vector<Real> variance_terms;  // gamma_k * ||var_k - RV_k||
};

BnMatchTerms bn_matching_terms(const BatchStatRecord& batch, const BNStatSnapshot& global,
                               std::span<const double> beta, std::span<const double> gamma);
/// sum_k beta_k ||mu_k - RM_k||_2 + gamma_k ||var_k - RV_k||_2
Real bn_matching_loss(const BatchStatRecord& batch, const BNStatSnapshot& global, std::span<const double> beta,
                      std::span<const double> gamma);
/// Gradient of bn_matching_loss, scaled by `weight`, with respect to each
/// layer's batch mean and variance.
StatGradients bn_matching_gradient(const BatchStatRecord& batch, const BNStatSnapshot& global,
                                   std::span<const double> beta, std::span<const double> gamma, Real weight);

struct ObjectiveValue {
  Real total = 0;
  Real ce = 0;
  Real bn = 0;
  BnMatchTerms terms;
  Tensor image_grad;  // empty unless requested
};

/// ce(model(x), y) + alpha * bn_matching_loss, with the model in inference
/// mode. Only the images receive gradients.
ObjectiveValue recovery_objective(TrainedBackbone& model, const Tensor& images, std::span<const int> labels,
                                  const BNStatSnapshot& global, const RecoveryConfig& cfg, bool want_grad);

struct TrajectoryPoint {
  int iter = 0;
  Real ce = 0;
  Real bn = 0;
  Real total = 0;
};

struct ClassBatchResult {
  std::vector<int> image_indices;
  std::vector<int> classes;
  std::vector<TrajectoryPoint> trajectory;
  TrajectoryPoint initial;  // before any step, without augmentation
  TrajectoryPoint final;    // after the last step, without augmentation
};

struct RecoveryResult {
  SyntheticBatch batch;
  /// Mean over class-batches at each iteration.
  std::vector<TrajectoryPoint> trajectory;
  std::vector<ClassBatchResult> batches;
};

/// Splits images into single-class batches of at most batch_size. When a
/// class has a single image, neighbouring classes share a batch so every
/// batch holds at least two images.
std::vector<std::vector<int>> plan_class_batches(const std::vector<int>& labels, int batch_size);

using IterationCallback = std::function<void(int batch, const TrajectoryPoint&)>;

RecoveryResult recover_dataset(const TrainedBackbone& teacher, const RecoveryConfig& cfg,
                               const IterationCallback& on_iteration = {});

/// De-normalizes, clamps to [0, 1] and quantizes every image.
std::vector<Image16> export_images(const SyntheticBatch& batch, const Normalization& norm, const InputShape& shape);

/// Writes images/class_<c>/img_<i>.png and trajectory.csv (iter,ce,bn,total).
void write_recovery(const std::filesystem::path& dir, const RecoveryResult& result, const TrainedBackbone& teacher);
void write_trajectory_csv(const std::filesystem::path& file, const std::vector<TrajectoryPoint>& trajectory);
std::vector<TrajectoryPoint> read_trajectory_csv(const std::filesystem::path& file);

}  // namespace scdd
