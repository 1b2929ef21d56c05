#include "scdd/netcore/bn_stats.hpp"

#include <cmath>
#include <string>

#include "scdd/core/errors.hpp"

namespace scdd {

void BNStatSnapshot::validate() const {
  int previous = -1;
  for (const auto& layer : layers) {
    const std::string where = "BN layer " + std::to_string(layer.layer_index);
    if (layer.layer_index <= previous) throw DataError(where + ": layer indices must strictly increase");
    previous = layer.layer_index;
    if (layer.mean.size() != layer.variance.size() || layer.mean.empty())
      throw DataError(where + ": mean/variance lengths differ or are empty");
    for (Real v : layer.variance)
      if (!(v >= 0)) throw DataError(where + ": negative or non-finite variance");
    for (Real m : layer.mean)
      if (!std::isfinite(m)) throw DataError(where + ": non-finite mean");
  }
}

void BatchStatRecord::check_compatible(const BNStatSnapshot& snapshot) const {
  if (layers.size() != snapshot.layers.size())
    throw ShapeError("batch record has " + std::to_string(layers.size()) + " layers, snapshot has " +
                     std::to_string(snapshot.layers.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& b = layers[i];
    const auto& g = snapshot.layers[i];
    if (b.layer_index != g.layer_index || b.batch_mean.size() != g.mean.size() ||
        b.batch_variance.size() != g.variance.size())
      throw ShapeError("batch record layer " + std::to_string(i) + " does not match snapshot shape");
  }
}

}  // namespace scdd
