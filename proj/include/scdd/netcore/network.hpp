#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scdd/core/checksum.hpp"
#include "scdd/core/tensor.hpp"
#include "scdd/netcore/bn_stats.hpp"
#include "scdd/netcore/layers.hpp"
#include "scdd/netcore/network_spec.hpp"

namespace scdd {

/// Convolutional feature extractor f: conv/BN/ReLU blocks followed by global
/// average pooling. Layers cache their inputs, so backward() refers to the
/// most recent forward().
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const NetworkSpec& spec);

  void initialize(Rng& rng);
  /// Returns (N, feature_dim) pooled features.
  Tensor forward(const Tensor& x, Mode mode);
  /// stat_grads, when given, has one entry per BN layer; empty entries are skipped.
  Tensor backward(const Tensor& d_features, const StatGradients* stat_grads, bool param_grads,
                  bool input_grad);

  std::vector<BatchNorm2d*> bn_layers();
  std::vector<const BatchNorm2d*> bn_layers() const;
  void append_parameters(std::vector<Parameter>& out);
  int feature_dim() const noexcept { return feature_dim_; }
  /// Feeds every parameter and running statistic, in layer order, to `h`.
  void digest(Sha256& h) const;

 private:
  struct ConvBn {
    Conv2d conv;
    BatchNorm2d bn;
    int bn_index = 0;
  };
  struct Block {
    ConvBn a;
    std::optional<ConvBn> b;         // second conv of a residual block
    std::optional<ConvBn> shortcut;  // projection shortcut
    bool residual = false;
    bool pool_after = false;
    Tensor input;
    Tensor hidden;  // post-ReLU output of `a` in residual blocks
    Tensor output;  // post-ReLU block output before pooling
  };

  static Tensor run(ConvBn& unit, const Tensor& x, Mode mode);
  static Tensor unwind(ConvBn& unit, const Tensor& dy, const StatGradients* stat_grads,
                       bool param_grads, bool input_grad);

  std::vector<Block> blocks_;
  std::vector<int> pooled_shape_;
  int feature_dim_ = 0;
};

enum class Objective { supervised, contrastive };
std::string to_string(Objective o);
Objective parse_objective(const std::string& name);

/// Per-channel input normalization: x_norm = (pixel - mean) / std.
struct Normalization {
  std::vector<Real> mean;
  std::vector<Real> std;
  bool operator==(const Normalization&) const = default;
};

struct Provenance {
  std::optional<Objective> objective;
  int epochs = 0;
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::optional<double> train_accuracy;
  std::optional<double> probe_accuracy;
  Normalization normalization;

  bool complete() const;
};

/// Backbone f plus the optional linear classifier v and training provenance.
class TrainedBackbone {
 public:
  NetworkSpec spec;
  Backbone backbone;
  std::optional<Linear> head;
  /// Set once the head has been trained against the current backbone.
  bool aligned = false;
  Provenance provenance;

  bool is_aligned() const noexcept { return head.has_value() && aligned; }

  /// Logits (N, num_classes); throws StateError without a head.
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& d_logits, const StatGradients* stat_grads, bool param_grads,
                  bool input_grad);

  std::vector<Parameter> parameters(bool include_head = true);
  void zero_grad();
  void check_input(const Tensor& x) const;
};

/// Randomly initialized network; deterministic per seed.
TrainedBackbone build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Copies every BN layer's running statistics.
BNStatSnapshot extract_bn_statistics(const TrainedBackbone& model);

/// Current-batch statistics of every BN input from the most recent forward.
BatchStatRecord collect_batch_stats(const Backbone& backbone);

struct ForwardWithStats {
  Tensor logits;
  BatchStatRecord stats;
};

/// Inference-mode forward (running statistics normalize, nothing is updated)
/// that also reports each BN layer's current-batch mean and population variance.
ForwardWithStats forward_with_batch_stats(TrainedBackbone& model, const Tensor& batch);

/// SHA-256 over backbone parameters and BN running statistics (and the head
/// when include_head is set).
std::string model_digest(const TrainedBackbone& model, bool include_head);

}  // namespace scdd
