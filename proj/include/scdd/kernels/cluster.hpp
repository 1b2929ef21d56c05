#pragma once

#include <span>

#include "scdd/core/tensor.hpp"

namespace scdd::kernels {

/// Assigns each of `n` row-major points of dimension `dim` to its nearest
/// centroid (squared Euclidean, ties to the lower index) and returns the
/// summed squared distance. Parallel over points; the sum is taken in point
/// order, so the result does not depend on the thread count.
Real assign_nearest(std::span<const Real> points, int n, int dim, std::span<const Real> centroids, int k,
                    std::span<int> assignment);

namespace reference {
Real assign_nearest(std::span<const Real> points, int n, int dim, std::span<const Real> centroids, int k,
                    std::span<int> assignment);
}

}  // namespace scdd::kernels
