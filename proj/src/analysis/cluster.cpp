#include "scdd/analysis/cluster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "scdd/core/errors.hpp"
#include "scdd/core/random.hpp"
#include "scdd/kernels/cluster.hpp"
#include "scdd/squeeze/probe.hpp"

namespace scdd {

namespace {
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(0) < 1 || t.dim(1) < 1) throw ShapeError(std::string(what) + " must be a non-empty (N, D) matrix");
}
}  // namespace

PcaResult pca(const Tensor& data, int dims) {
  require_matrix(data, "pca input");
  const int N = data.dim(0), D = data.dim(1);
  if (dims < 1) throw ConfigError("pca needs at least one output dimension");
  if (N < dims || D < dims)
    throw ShapeError("pca to " + std::to_string(dims) + " dimensions needs at least that many rows and columns, got " +
                     shape_string(data.shape()));
  RowMatrix X = Eigen::Map<const RowMatrix>(data.data(), N, D);
  const Eigen::RowVectorX<Real> mu = X.colwise().mean();
  X.rowwise() -= mu;

  // Eigen-decompose whichever Gram matrix is smaller.
  RowMatrix V(D, dims);
  Eigen::VectorX<Real> lambda(dims);
  if (D <= N) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Real>> es(X.transpose() * X);
    for (int j = 0; j < dims; ++j) {
      V.col(j) = es.eigenvectors().col(D - 1 - j);
      lambda(j) = es.eigenvalues()(D - 1 - j);
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixX<Real>> es(X * X.transpose());
    for (int j = 0; j < dims; ++j) {
      lambda(j) = es.eigenvalues()(N - 1 - j);
      Eigen::VectorX<Real> v = X.transpose() * es.eigenvectors().col(N - 1 - j);
      const Real norm = v.norm();
      V.col(j) = norm > 0 ? Eigen::VectorX<Real>(v / norm) : Eigen::VectorX<Real>::Unit(D, j);
    }
  }
  for (int j = 0; j < dims; ++j) {
    Eigen::Index arg = 0;
    V.col(j).cwiseAbs().maxCoeff(&arg);
    if (V(arg, j) < 0) V.col(j) *= -1;
  }

  PcaResult r;
  r.points = Tensor({N, dims});
  Eigen::Map<RowMatrix>(r.points.data(), N, dims) = X * V;
  r.components = Tensor({dims, D});
  Eigen::Map<RowMatrix>(r.components.data(), dims, D) = V.transpose();
  r.mean.assign(mu.data(), mu.data() + D);
  const Real denom = N > 1 ? static_cast<Real>(N - 1) : Real{1};
  for (int j = 0; j < dims; ++j) r.explained_variance.push_back(std::max<Real>(lambda(j), 0) / denom);
  return r;
}

Tensor pca_reduce(const Tensor& data, int dims) { return pca(data, dims).points; }

KMeansResult kmeans_cluster(const Tensor& points, int k, std::uint64_t seed, int max_iterations) {
  require_matrix(points, "kmeans input");
  const int N = points.dim(0), dim = points.dim(1);
  if (k < 1 || k > N) throw ConfigError("kmeans needs 1 <= k <= N, got k=" + std::to_string(k) + ", N=" + std::to_string(N));
  if (max_iterations < 0) throw ConfigError("kmeans max_iterations must be >= 0");
  auto row = [&](int i) { return points.data() + static_cast<std::size_t>(i) * dim; };
  auto sqdist = [&](const Real* a, const Real* b) {
    Real d = 0;
    for (int t = 0; t < dim; ++t) d += (a[t] - b[t]) * (a[t] - b[t]);
    return d;
  };

  // k-means++ seeding
  Rng rng = make_rng(seed, 0x6b6d6561);
  KMeansResult r;
  r.centroids = Tensor({k, dim});
  auto set_centroid = [&](int j, int i) { std::copy(row(i), row(i) + dim, r.centroids.data() + static_cast<std::size_t>(j) * dim); };
  set_centroid(0, std::min(N - 1, static_cast<int>(uniform(rng) * N)));
  std::vector<Real> d2(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) d2[static_cast<std::size_t>(i)] = sqdist(row(i), r.centroids.data());
  for (int j = 1; j < k; ++j) {
    Real total = 0;
    for (Real v : d2) total += v;
    int pick = N - 1;
    if (total > 0) {
      const Real u = uniform(rng) * total;
      Real acc = 0;
      for (int i = 0; i < N; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(N - 1, static_cast<int>(uniform(rng) * N));
    }
    set_centroid(j, pick);
    const Real* c = r.centroids.data() + static_cast<std::size_t>(j) * dim;
    for (int i = 0; i < N; ++i) d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sqdist(row(i), c));
  }

  r.assignments.assign(static_cast<std::size_t>(N), -1);
  std::vector<int> next(static_cast<std::size_t>(N));
  r.inertia = kernels::assign_nearest(points.span(), N, dim, r.centroids.span(), k, next);
  r.assignments = next;
  r.inertia_history.push_back(r.inertia);
  for (int it = 0; it < max_iterations; ++it) {
    Tensor sums({k, dim});
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < N; ++i) {
      const int a = r.assignments[static_cast<std::size_t>(i)];
      ++counts[static_cast<std::size_t>(a)];
      for (int t = 0; t < dim; ++t) sums[static_cast<std::size_t>(a) * dim + t] += row(i)[t];
    }
    for (int j = 0; j < k; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0)
        for (int t = 0; t < dim; ++t)
          r.centroids[static_cast<std::size_t>(j) * dim + t] =
              sums[static_cast<std::size_t>(j) * dim + t] / counts[static_cast<std::size_t>(j)];
    r.inertia = kernels::assign_nearest(points.span(), N, dim, r.centroids.span(), k, next);
    r.inertia_history.push_back(r.inertia);
    r.iterations = it + 1;
    if (next == r.assignments) {
      r.converged = true;
      break;
    }
    r.assignments = next;
  }
  return r;
}

double clustering_purity(std::span<const int> assignments, std::span<const int> classes) {
  if (assignments.size() != classes.size())
    throw ShapeError("purity needs one class per assignment, got " + std::to_string(assignments.size()) + " and " +
                     std::to_string(classes.size()));
  if (assignments.empty()) throw ShapeError("purity of an empty assignment");
  std::map<int, std::map<int, int>> table;
  for (std::size_t i = 0; i < assignments.size(); ++i) ++table[assignments[i]][classes[i]];
  long majority = 0;
  for (const auto& [cluster, counts] : table) {
    int best = 0;
    for (const auto& [cls, n] : counts) best = std::max(best, n);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(assignments.size());
}

ClusterReport cluster_analysis(const Tensor& vectors, std::span<const int> classes, std::uint64_t seed, int k) {
  require_matrix(vectors, "cluster input");
  if (classes.size() != static_cast<std::size_t>(vectors.dim(0)))
    throw ShapeError("cluster analysis needs one class per row");
  if (k == 0) k = static_cast<int>(std::set<int>(classes.begin(), classes.end()).size());
  auto p = pca(vectors, 3);
  auto km = kmeans_cluster(p.points, k, seed);
  ClusterReport r;
  r.points = std::move(p.points);
  r.classes.assign(classes.begin(), classes.end());
  r.assignments = std::move(km.assignments);
  r.centroids = std::move(km.centroids);
  r.inertia = km.inertia;
  r.purity = clustering_purity(r.assignments, classes);
  r.explained_variance = std::move(p.explained_variance);
  return r;
}

nlohmann::json to_json(const ClusterReport& r) {
  nlohmann::json points = nlohmann::json::array();
  for (int i = 0; i < r.points.dim(0); ++i)
    points.push_back({r.points[static_cast<std::size_t>(i) * 3], r.points[static_cast<std::size_t>(i) * 3 + 1],
                      r.points[static_cast<std::size_t>(i) * 3 + 2]});
  nlohmann::json centroids = nlohmann::json::array();
  for (int j = 0; j < r.centroids.dim(0); ++j) {
    nlohmann::json c = nlohmann::json::array();
    for (int t = 0; t < r.centroids.dim(1); ++t) c.push_back(r.centroids[static_cast<std::size_t>(j) * r.centroids.dim(1) + t]);
    centroids.push_back(c);
  }
  return {{"purity", r.purity},
          {"inertia", r.inertia},
          {"k", r.centroids.dim(0)},
          {"explained_variance", r.explained_variance},
          {"classes", r.classes},
          {"assignments", r.assignments},
          {"centroids", centroids},
          {"points", points}};
}

ClusterReport cluster_distilled(const DistilledDataset& data, const std::vector<int>& classes, const std::string& space,
                                TrainedBackbone* teacher, std::uint64_t seed, int k) {
  for (int c : classes)
    if (c < 0 || c >= data.num_classes)
      throw ConfigError("class " + std::to_string(c) + " does not exist (" + std::to_string(data.num_classes) +
                        " classes)");
  if (space != "pixels" && space != "features") throw ConfigError("space must be 'pixels' or 'features'");
  if (space == "features" && !teacher) throw ConfigError("feature space needs a teacher");
  std::vector<int> picked, labels;
  for (int i = 0; i < data.size(); ++i) {
    const int y = data.labels[static_cast<std::size_t>(i)];
    if (std::find(classes.begin(), classes.end(), y) != classes.end()) {
      picked.push_back(i);
      labels.push_back(y);
    }
  }
  if (picked.empty()) throw DataError("no distilled images of the requested classes");
  Tensor vectors;
  if (space == "pixels") {
    const auto per = data.images.front().pixels.size();
    vectors = Tensor({static_cast<int>(picked.size()), static_cast<int>(per)});
    for (std::size_t r = 0; r < picked.size(); ++r) {
      const auto px = data.pixels(picked[r]);
      std::copy(px.begin(), px.end(), vectors.data() + r * per);
    }
  } else {
    ImageDataset set;
    set.id = "distilled";
    set.shape = data.shape;
    set.num_classes = data.num_classes;
    for (std::size_t r = 0; r < picked.size(); ++r) {
      for (double v : data.pixels(picked[r])) set.pixels.push_back(static_cast<float>(v));
      set.labels.push_back(labels[r]);
    }
    vectors = extract_features(*teacher, set);
  }
  return cluster_analysis(vectors, labels, seed, k);
}

}  // namespace scdd
