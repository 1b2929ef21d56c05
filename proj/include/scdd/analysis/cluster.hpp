#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scdd/core/tensor.hpp"
#include "scdd/relabel/relabel.hpp"

namespace scdd {

struct PcaResult {
  Tensor points;      // (N, dims) projections of the centered data
  Tensor components;  // (dims, D) unit principal directions
  std::vector<Real> mean;
  std::vector<Real> explained_variance;  // per component, divisor N - 1
};

/// Principal components of the rows of `data` (N, D). Each component's
/// largest-magnitude coordinate is made positive. Throws ShapeError when
/// N < dims or D < dims.
PcaResult pca(const Tensor& data, int dims = 3);
Tensor pca_reduce(const Tensor& data, int dims = 3);

struct KMeansResult {
  std::vector<int> assignments;
  Tensor centroids;  // (k, dim)
  Real inertia = 0;
  /// Inertia after seeding and after every Lloyd update.
  std::vector<Real> inertia_history;
  int iterations = 0;
  bool converged = false;
};

/// k-means++ seeding then Lloyd iterations until the assignment stops
/// changing or max_iterations. An emptied cluster keeps its centroid.
/// Throws ConfigError when k < 1 or k > N.
KMeansResult kmeans_cluster(const Tensor& points, int k, std::uint64_t seed, int max_iterations = 300);

/// Sum over clusters of the majority-class count, divided by N.
double clustering_purity(std::span<const int> assignments, std::span<const int> classes);

struct ClusterReport {
  Tensor points;  // (N, 3)
  std::vector<int> classes;
  std::vector<int> assignments;
  Tensor centroids;
  double purity = 0;
  Real inertia = 0;
  std::vector<Real> explained_variance;
};

/// PCA to three dimensions followed by k-means with k = number of distinct classes
/// (or the given k).
ClusterReport cluster_analysis(const Tensor& vectors, std::span<const int> classes, std::uint64_t seed, int k = 0);

/// cluster_analysis on the distilled images of the given classes, either as raw
/// pixels (space "pixels") or as pooled teacher features (space "features").
/// The teacher may be null in pixel space. Throws ConfigError for a class the
/// dataset does not have.
ClusterReport cluster_distilled(const DistilledDataset& data, const std::vector<int>& classes, const std::string& space,
                                TrainedBackbone* teacher, std::uint64_t seed, int k = 0);

nlohmann::json to_json(const ClusterReport& r);

}  // namespace scdd
