#include "scdd/kernels/cluster.hpp"

#include <limits>
#include <vector>

#include "scdd/core/errors.hpp"
#include "scdd/core/parallel.hpp"

namespace scdd::kernels {

namespace {
void check(std::size_t p, int n, int dim, std::size_t c, int k, std::size_t a) {
  if (n < 1 || dim < 1 || k < 1 || p != static_cast<std::size_t>(n) * dim ||
      c != static_cast<std::size_t>(k) * dim || a != static_cast<std::size_t>(n))
    throw ShapeError("assign_nearest: buffer sizes do not match (n, dim, k)");
}
}  // namespace

Real assign_nearest(std::span<const Real> points, int n, int dim, std::span<const Real> centroids, int k,
                    std::span<int> assignment) {
  check(points.size(), n, dim, centroids.size(), k, assignment.size());
  std::vector<Real> best(static_cast<std::size_t>(n));
  SCDD_PARALLEL_FOR
  for (int i = 0; i < n; ++i) {
    const Real* p = points.data() + static_cast<std::size_t>(i) * dim;
    Real bd = std::numeric_limits<Real>::infinity();
    int bj = 0;
    for (int j = 0; j < k; ++j) {
      const Real* c = centroids.data() + static_cast<std::size_t>(j) * dim;
      Real d = 0;
      SCDD_SIMD
      for (int t = 0; t < dim; ++t) {
        const Real diff = p[t] - c[t];
        d += diff * diff;
      }
      if (d < bd) {
        bd = d;
        bj = j;
      }
    }
    assignment[static_cast<std::size_t>(i)] = bj;
    best[static_cast<std::size_t>(i)] = bd;
  }
  Real total = 0;
  for (Real d : best) total += d;
  return total;
}

namespace reference {

Real assign_nearest(std::span<const Real> points, int n, int dim, std::span<const Real> centroids, int k,
                    std::span<int> assignment) {
  check(points.size(), n, dim, centroids.size(), k, assignment.size());
  Real total = 0;
  for (int i = 0; i < n; ++i) {
    Real bd = std::numeric_limits<Real>::infinity();
    int bj = 0;
    for (int j = 0; j < k; ++j) {
      Real d = 0;
      for (int t = 0; t < dim; ++t) {
        const Real diff = points[static_cast<std::size_t>(i) * dim + t] - centroids[static_cast<std::size_t>(j) * dim + t];
        d += diff * diff;
      }
      if (d < bd) {
        bd = d;
        bj = j;
      }
    }
    assignment[static_cast<std::size_t>(i)] = bj;
    total += bd;
  }
  return total;
}

}  // namespace reference

}  // namespace scdd::kernels
