#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scdd/analysis/cluster.hpp"
#include "scdd/analysis/plots.hpp"
#include "scdd/core/errors.hpp"
#include "scdd/core/random.hpp"
#include "scdd/kernels/cluster.hpp"

using namespace scdd;
namespace fs = std::filesystem;

namespace {

Tensor gaussian_rows(Rng& rng, int n, int d, double scale = 1.0) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = normal(rng, 0.0, scale);
  return t;
}

// Points on a random 3-D affine subspace of R^d.
Tensor subspace_rows(Rng& rng, int n, int d) {
  Tensor basis = gaussian_rows(rng, 3, d);
  Tensor offset = gaussian_rows(rng, 1, d, 5.0);
  Tensor coef = gaussian_rows(rng, n, 3, 2.0);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < d; ++t) {
      Real v = offset[static_cast<std::size_t>(t)];
      for (int j = 0; j < 3; ++j) v += coef[static_cast<std::size_t>(i * 3 + j)] * basis[static_cast<std::size_t>(j * d + t)];
      out[static_cast<std::size_t>(i * d + t)] = v;
    }
  return out;
}

double dist(const Tensor& x, int i, int j) {
  const int d = x.dim(1);
  double s = 0;
  for (int t = 0; t < d; ++t) {
    const double diff = x[static_cast<std::size_t>(i * d + t)] - x[static_cast<std::size_t>(j * d + t)];
    s += diff * diff;
  }
  return std::sqrt(s);
}

Tensor two_blobs(Rng& rng, int per_blob, std::vector<int>& labels) {
  Tensor t({2 * per_blob, 3});
  labels.clear();
  for (int i = 0; i < 2 * per_blob; ++i) {
    const int b = i % 2;
    labels.push_back(b);
    for (int c = 0; c < 3; ++c) t[static_cast<std::size_t>(i * 3 + c)] = (b ? 50.0 : -50.0) + normal(rng, 0.0, 1.0);
  }
  return t;
}

bool is_png(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  char sig[8] = {};
  in.read(sig, 8);
  return in && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G';
}

}  // namespace

TEST_CASE("pca is exact on a three-dimensional affine subspace") {
  Rng rng = make_rng(1);
  for (int d : {3, 7, 40}) {
    for (int n : {12, 30}) {
      Tensor x = subspace_rows(rng, n, d);
      auto p = pca(x, 3);
      double worst = 0;
      for (int i = 0; i < n; ++i)
        for (int t = 0; t < d; ++t) {
          Real rec = p.mean[static_cast<std::size_t>(t)];
          for (int j = 0; j < 3; ++j)
            rec += p.points[static_cast<std::size_t>(i * 3 + j)] * p.components[static_cast<std::size_t>(j * d + t)];
          worst = std::max(worst, std::abs(rec - x[static_cast<std::size_t>(i * d + t)]));
        }
      CHECK(worst <= 1e-6);
      double dist_err = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) dist_err = std::max(dist_err, std::abs(dist(x, i, j) - dist(p.points, i, j)));
      CHECK(dist_err <= 1e-6);
    }
  }
}

TEST_CASE("pca components are orthonormal with the sign convention") {
  Rng rng = make_rng(2);
  for (int d : {5, 50}) {
    Tensor x = gaussian_rows(rng, 20, d);
    auto p = pca(x, 3);
    for (int a = 0; a < 3; ++a) {
      double largest = 0, signed_largest = 0;
      for (int b = 0; b < 3; ++b) {
        double dot = 0;
        for (int t = 0; t < d; ++t)
          dot += p.components[static_cast<std::size_t>(a * d + t)] * p.components[static_cast<std::size_t>(b * d + t)];
        CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
      }
      for (int t = 0; t < d; ++t) {
        const double v = p.components[static_cast<std::size_t>(a * d + t)];
        if (std::abs(v) > largest) {
          largest = std::abs(v);
          signed_largest = v;
        }
      }
      CHECK(signed_largest > 0);
      // explained variance is the variance of the projections
      double var = 0;
      for (int i = 0; i < 20; ++i) var += p.points[static_cast<std::size_t>(i * 3 + a)] * p.points[static_cast<std::size_t>(i * 3 + a)];
      CHECK(var / 19 == doctest::Approx(p.explained_variance[static_cast<std::size_t>(a)]).epsilon(1e-9));
    }
    CHECK(p.explained_variance[0] >= p.explained_variance[1]);
    CHECK(p.explained_variance[1] >= p.explained_variance[2]);
  }
}

TEST_CASE("pca on isotropic data spreads variance evenly") {
  Rng rng = make_rng(3);
  auto p = pca(gaussian_rows(rng, 10000, 3), 3);
  CHECK(p.explained_variance[0] / p.explained_variance[2] <= 1.1);
}

TEST_CASE("pca is unchanged by duplicating every point") {
  Rng rng = make_rng(4);
  Tensor x = gaussian_rows(rng, 25, 6);
  Tensor doubled({50, 6});
  for (int i = 0; i < 50; ++i)
    for (int t = 0; t < 6; ++t) doubled[static_cast<std::size_t>(i * 6 + t)] = x[static_cast<std::size_t>((i % 25) * 6 + t)];
  auto a = pca_reduce(x);
  auto b = pca_reduce(doubled);
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(b[static_cast<std::size_t>(i * 3 + j)] == doctest::Approx(a[static_cast<std::size_t>(i * 3 + j)]).epsilon(1e-9).scale(1.0));
  CHECK_THROWS_AS(pca(gaussian_rows(rng, 2, 6), 3), ShapeError);
  CHECK_THROWS_AS(pca(gaussian_rows(rng, 10, 2), 3), ShapeError);
}

TEST_CASE("kmeans basics") {
  Rng rng = make_rng(5);
  Tensor x = gaussian_rows(rng, 40, 3);
  auto one = kmeans_cluster(x, 1, 0);
  for (int t = 0; t < 3; ++t) {
    double mean = 0;
    for (int i = 0; i < 40; ++i) mean += x[static_cast<std::size_t>(i * 3 + t)];
    CHECK(one.centroids[static_cast<std::size_t>(t)] == doctest::Approx(mean / 40).epsilon(1e-12));
  }
  for (int a : one.assignments) CHECK(a == 0);
  CHECK_THROWS_AS(kmeans_cluster(x, 41, 0), ConfigError);
  CHECK_THROWS_AS(kmeans_cluster(x, 0, 0), ConfigError);

  auto r = kmeans_cluster(x, 4, 7);
  auto again = kmeans_cluster(x, 4, 7);
  CHECK(r.assignments == again.assignments);
  CHECK(r.centroids.values() == again.centroids.values());
  for (int a : r.assignments) CHECK((a >= 0 && a < 4));
  REQUIRE(r.inertia_history.size() >= 2);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-12);
  CHECK(r.inertia <= r.inertia_history.front());
  CHECK(r.converged);
}

TEST_CASE("kmeans inertia is monotone on many random problems") {
  Rng rng = make_rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 10 + static_cast<int>(uniform(rng) * 200);
    const int k = 1 + static_cast<int>(uniform(rng) * 8);
    auto r = kmeans_cluster(gaussian_rows(rng, n, 3), k, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
    CHECK(r.iterations <= 300);
  }
}

TEST_CASE("kmeans separates two distant blobs") {
  Rng rng = make_rng(7);
  std::vector<int> labels;
  Tensor x = two_blobs(rng, 50, labels);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = kmeans_cluster(x, 2, seed);
    CHECK(clustering_purity(r.assignments, labels) == 1.0);
  }
}

TEST_CASE("parallel assignment matches the reference kernel") {
  Rng rng = make_rng(8);
  Tensor p = gaussian_rows(rng, 500, 5);
  Tensor c = gaussian_rows(rng, 7, 5);
  std::vector<int> a(500), b(500);
  const Real ia = kernels::assign_nearest(p.span(), 500, 5, c.span(), 7, a);
  const Real ib = kernels::reference::assign_nearest(p.span(), 500, 5, c.span(), 7, b);
  CHECK(a == b);
  CHECK(ia == doctest::Approx(ib).epsilon(1e-13));
  CHECK_THROWS_AS(kernels::assign_nearest(p.span(), 499, 5, c.span(), 7, a), ShapeError);
}

TEST_CASE("purity") {
  const std::vector<int> classes{0, 0, 1, 1, 2, 2};
  CHECK(clustering_purity(classes, classes) == 1.0);
  const std::vector<int> single(6, 0);
  CHECK(clustering_purity(single, classes) == doctest::Approx(1.0 / 3));
  const std::vector<int> hand_assign{0, 0, 0, 1, 1, 1};
  const std::vector<int> hand_classes{0, 0, 1, 1, 1, 0};
  CHECK(clustering_purity(hand_assign, hand_classes) == doctest::Approx(2.0 / 3));
  const std::vector<int> relabeled{5, 5, 5, 2, 2, 2};
  CHECK(clustering_purity(relabeled, hand_classes) == clustering_purity(hand_assign, hand_classes));
  const std::vector<int> short_assign{0, 1};
  CHECK_THROWS_AS(clustering_purity(short_assign, classes), ShapeError);
}

TEST_CASE("cluster analysis on class-separated vectors") {
  Rng rng = make_rng(9);
  Tensor x({60, 12});
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(i % 3);
    for (int t = 0; t < 12; ++t) x[static_cast<std::size_t>(i * 12 + t)] = (t % 3 == i % 3 ? 10.0 : 0.0) + normal(rng, 0, 0.3);
  }
  auto r = cluster_analysis(x, labels, 0);
  CHECK(r.centroids.dim(0) == 3);
  CHECK(r.purity == 1.0);
  const auto j = to_json(r);
  CHECK(j["points"].size() == 60);
  CHECK(j["k"] == 3);
}

TEST_CASE("plots are written with deterministic names") {
  const fs::path dir = fs::temp_directory_path() / "scdd_test_plots";
  fs::remove_all(dir);
  std::vector<TrajectoryPoint> traj;
  for (int i = 0; i < 50; ++i) traj.push_back({i, 3.0 / (1 + i), 150.0 / (1 + 0.2 * i), 0});
  CHECK(emit_trajectory_plot(traj, dir) == dir / "trajectory.png");
  CHECK(is_png(dir / "trajectory.png"));

  Rng rng = make_rng(10);
  BNStatSnapshot a, b;
  for (int k = 0; k < 3; ++k) {
    BNLayerStats la{k, {}, {}}, lb{k, {}, {}};
    for (int c = 0; c < 4 + k; ++c) {
      la.mean.push_back(normal(rng));
      la.variance.push_back(uniform(rng, 0.1, 2));
      lb.mean.push_back(normal(rng));
      lb.variance.push_back(uniform(rng, 0.1, 2));
    }
    a.layers.push_back(la);
    b.layers.push_back(lb);
  }
  auto files = emit_bn_plots({{"ssl", a}, {"sl", b}}, dir);
  REQUIRE(files.size() == 3);
  for (int k = 0; k < 3; ++k) CHECK(is_png(dir / ("bn_layer_" + std::to_string(k) + ".png")));

  std::vector<int> labels;
  Tensor x = two_blobs(rng, 20, labels);
  auto report = cluster_analysis(x, labels, 1);
  CHECK(emit_cluster_plot(report, dir) == dir / "cluster_scatter.png");
  CHECK(is_png(dir / "cluster_scatter.png"));

  const fs::path blocker = dir / "file";
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(emit_trajectory_plot(traj, blocker / "sub"), IoError);
}
