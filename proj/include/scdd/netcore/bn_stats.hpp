#pragma once

#include <vector>

#include "scdd/core/tensor.hpp"
#include "scdd/netcore/layers.hpp"

namespace scdd {

/// Running (global) statistics of one BN layer.
struct BNLayerStats {
  int layer_index = 0;
  std::vector<Real> mean;
  std::vector<Real> variance;
  bool operator==(const BNLayerStats&) const = default;
};

/// Frozen copy of every BN layer's running mean/variance, in network order.
struct BNStatSnapshot {
  std::vector<BNLayerStats> layers;

  /// Throws DataError on negative variances, ragged layers or unordered indices.
  void validate() const;
  bool operator==(const BNStatSnapshot&) const = default;
};

/// Statistics of the current batch at one BN layer's input.
struct BatchLayerStats {
  int layer_index = 0;
  std::vector<Real> batch_mean;
  std::vector<Real> batch_variance;
};

struct BatchStatRecord {
  std::vector<BatchLayerStats> layers;

  /// Throws ShapeError unless layer count, indices and channel counts match.
  void check_compatible(const BNStatSnapshot& snapshot) const;
};

/// One entry per BN layer, indexed by layer_index.
using StatGradients = std::vector<StatGradient>;

}  // namespace scdd
