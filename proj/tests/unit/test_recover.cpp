#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "scdd/core/errors.hpp"
#include "scdd/netcore/losses.hpp"
#include "scdd/netcore/optim.hpp"
#include "scdd/recover/recover.hpp"
#include "scdd/squeeze/pretrain.hpp"
#include "scdd/squeeze/probe.hpp"
#include "toy_models.hpp"

using namespace scdd;
using scdd::test::random_teacher;
using scdd::test::small_spec;
namespace fs = std::filesystem;

namespace {

BNStatSnapshot random_snapshot(Rng& rng, int layers, int channels) {
  BNStatSnapshot s;
  for (int k = 0; k < layers; ++k) {
    BNLayerStats l{k, {}, {}};
    for (int c = 0; c < channels; ++c) {
      l.mean.push_back(normal(rng));
      l.variance.push_back(uniform(rng, 0.0, 3.0));
    }
    s.layers.push_back(l);
  }
  return s;
}

BatchStatRecord random_record(Rng& rng, int layers, int channels) {
  BatchStatRecord r;
  for (int k = 0; k < layers; ++k) {
    BatchLayerStats l{k, {}, {}};
    for (int c = 0; c < channels; ++c) {
      l.batch_mean.push_back(normal(rng));
      l.batch_variance.push_back(uniform(rng, 0.0, 3.0));
    }
    r.layers.push_back(l);
  }
  return r;
}

// Explicit scalar loops, no helpers shared with the implementation.
double scalar_bn_loss(const BatchStatRecord& b, const BNStatSnapshot& g, const std::vector<double>& beta,
                      const std::vector<double>& gamma) {
  double total = 0;
  for (std::size_t k = 0; k < g.layers.size(); ++k) {
    double sm = 0, sv = 0;
    for (std::size_t c = 0; c < g.layers[k].mean.size(); ++c) {
      const double dm = b.layers[k].batch_mean[c] - g.layers[k].mean[c];
      const double dv = b.layers[k].batch_variance[c] - g.layers[k].variance[c];
      sm += dm * dm;
      sv += dv * dv;
    }
    total += beta[k] * std::sqrt(sm) + gamma[k] * std::sqrt(sv);
  }
  return total;
}

}  // namespace

TEST_CASE("init_synthetic") {
  const std::vector<int> classes{0, 1};
  auto b = init_synthetic(2, classes, {3, 8, 8}, 7);
  CHECK(b.labels == std::vector<int>{0, 0, 1, 1});
  CHECK(b.images.shape() == std::vector<int>{4, 3, 8, 8});
  CHECK(init_synthetic(2, classes, {3, 8, 8}, 7).images.values() == b.images.values());
  CHECK(init_synthetic(2, classes, {3, 8, 8}, 8).images.values() != b.images.values());
  const std::vector<int> one{0};
  auto big = init_synthetic(1, one, {1, 100, 100}, 3);
  double mean = 0, sq = 0;
  for (Real v : big.images.values()) {
    mean += v;
    sq += v * v;
  }
  mean /= 1e4;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sq / 1e4 - 1.0) < 0.05);
  CHECK_THROWS_AS(init_synthetic(0, classes, {3, 8, 8}, 0), ConfigError);
}

TEST_CASE("bn matching loss basics") {
  Rng rng = make_rng(1);
  auto g = random_snapshot(rng, 2, 3);
  BatchStatRecord same;
  for (const auto& l : g.layers) same.layers.push_back({l.layer_index, l.mean, l.variance});
  const std::vector<double> ones{1, 1};
  CHECK(bn_matching_loss(same, g, ones, ones) == 0.0);

  BNStatSnapshot g1{{{0, {0.0}, {1.0}}}};
  BatchStatRecord b1{{{0, {1.0}, {1.0}}}};
  const std::vector<double> one{1};
  CHECK(bn_matching_loss(b1, g1, one, one) == 1.0);

  const std::vector<double> three{1, 1, 1};
  CHECK_THROWS_AS(bn_matching_loss(same, g, three, ones), ShapeError);
  const std::vector<double> neg{1, -1};
  CHECK_THROWS_AS(bn_matching_loss(same, g, neg, ones), ConfigError);
  BatchStatRecord wrong = same;
  wrong.layers[1].batch_mean.push_back(0);
  CHECK_THROWS_AS(bn_matching_loss(wrong, g, ones, ones), ShapeError);
}

TEST_CASE("bn matching loss equals a scalar-loop oracle") {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int layers = 1 + static_cast<int>(uniform(rng) * 4);
    const int channels = 1 + static_cast<int>(uniform(rng) * 8);
    auto g = random_snapshot(rng, layers, channels);
    auto b = random_record(rng, layers, channels);
    std::vector<double> beta, gamma;
    for (int k = 0; k < layers; ++k) {
      beta.push_back(uniform(rng, 0, 10));
      gamma.push_back(uniform(rng, 0, 10));
    }
    const double ref = scalar_bn_loss(b, g, beta, gamma);
    CHECK(std::abs(bn_matching_loss(b, g, beta, gamma) - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("first-layer multiplier scales only layer zero") {
  auto teacher = random_teacher(3);
  auto x = init_synthetic(2, std::vector<int>{0, 1}, {3, 8, 8}, 1);
  const auto global = extract_bn_statistics(teacher);
  RecoveryConfig c1;
  c1.first_bn_multiplier = 1;
  RecoveryConfig c10;
  c10.first_bn_multiplier = 10;
  auto v1 = recovery_objective(teacher, x.images, x.labels, global, c1, false);
  auto v10 = recovery_objective(teacher, x.images, x.labels, global, c10, false);
  REQUIRE(v1.terms.mean_terms.size() == global.layers.size());
  CHECK(v10.terms.mean_terms[0] == doctest::Approx(10 * v1.terms.mean_terms[0]).epsilon(1e-14));
  CHECK(v10.terms.variance_terms[0] == doctest::Approx(10 * v1.terms.variance_terms[0]).epsilon(1e-14));
  for (std::size_t k = 1; k < global.layers.size(); ++k) {
    CHECK(v10.terms.mean_terms[k] == v1.terms.mean_terms[k]);
    CHECK(v10.terms.variance_terms[k] == v1.terms.variance_terms[k]);
  }
  auto [beta, gamma] = c10.effective_coefficients(3);
  CHECK(beta == std::vector<double>{10, 1, 1});
  CHECK(gamma == std::vector<double>{10, 1, 1});
  RecoveryConfig bad;
  bad.beta = {1, 1};
  CHECK_THROWS_AS(bad.effective_coefficients(3), ConfigError);
}

TEST_CASE("recovery objective reductions") {
  auto teacher = random_teacher(4);
  auto x = init_synthetic(2, std::vector<int>{0, 2}, {3, 8, 8}, 2);
  const auto global = extract_bn_statistics(teacher);
  RecoveryConfig c;
  c.alpha = 0;
  auto v = recovery_objective(teacher, x.images, x.labels, global, c, false);
  CHECK(v.total == v.ce);

  c.alpha = 0.3;
  c.first_bn_multiplier = 1;
  auto u = recovery_objective(teacher, x.images, x.labels, global, c, false);
  auto fwd = forward_with_batch_stats(teacher, x.images);
  const std::vector<double> ones(global.layers.size(), 1.0);
  CHECK(u.bn == doctest::Approx(bn_matching_loss(fwd.stats, global, ones, ones)).epsilon(1e-14));
  CHECK(u.total == doctest::Approx(u.ce + 0.3 * u.bn).epsilon(1e-14));

  TrainedBackbone unaligned = teacher;
  unaligned.aligned = false;
  CHECK_THROWS_AS(recovery_objective(unaligned, x.images, x.labels, global, c, false), StateError);
}

TEST_CASE("recovery image gradient matches central differences") {
  auto teacher = random_teacher(5);
  const auto global = extract_bn_statistics(teacher);
  auto x = init_synthetic(3, std::vector<int>{0, 1}, {3, 8, 8}, 9);
  RecoveryConfig c;
  c.alpha = 0.05;
  auto v = recovery_objective(teacher, x.images, x.labels, global, c, true);
  const auto params_before = model_digest(teacher, true);
  Rng rng = make_rng(17);
  const double h = 1e-3;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto i = static_cast<std::size_t>(uniform(rng) * static_cast<double>(x.images.size()));
    Tensor p = x.images, m = x.images;
    p[i] += h;
    m[i] -= h;
    const double fp = recovery_objective(teacher, p, x.labels, global, c, false).total;
    const double fm = recovery_objective(teacher, m, x.labels, global, c, false).total;
    const double fd = (fp - fm) / (2 * h);
    const double an = v.image_grad[i];
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}));
  }
  CHECK(worst <= 1e-3);
  CHECK(model_digest(teacher, true) == params_before);
}

TEST_CASE("zero-loss fixed point leaves images unchanged") {
  auto teacher = random_teacher(6);
  auto x = init_synthetic(2, std::vector<int>{0, 1}, {3, 8, 8}, 4);
  // running statistics := batch statistics, layer by layer
  auto bns = teacher.backbone.bn_layers();
  for (std::size_t k = 0; k < bns.size(); ++k) {
    auto fwd = forward_with_batch_stats(teacher, x.images);
    bns[k]->running_mean = fwd.stats.layers[k].batch_mean;
    bns[k]->running_var = fwd.stats.layers[k].batch_variance;
  }
  // zero head weights make the cross-entropy flat in the image
  teacher.head->weight.zero();
  const auto global = extract_bn_statistics(teacher);
  RecoveryConfig c;
  auto v = recovery_objective(teacher, x.images, x.labels, global, c, true);
  CHECK(v.bn == 0.0);
  Tensor img = x.images;
  Tensor grad = v.image_grad;
  Adam opt({{"x", &img, &grad}}, {0.5, 0.9, 1e-8, 0.0, false});
  opt.step(0.4);
  double change = 0;
  for (std::size_t i = 0; i < img.size(); ++i) change = std::max(change, std::abs(img[i] - x.images[i]));
  CHECK(change <= 0.4 * 1e-12);
}

TEST_CASE("class batch planning") {
  auto labels_of = [](int ipc, int classes) {
    std::vector<int> l;
    for (int c = 0; c < classes; ++c)
      for (int i = 0; i < ipc; ++i) l.push_back(c);
    return l;
  };
  auto p = plan_class_batches(labels_of(10, 10), 100);
  CHECK(p.size() == 10);
  for (const auto& b : p) CHECK(b.size() == 10);
  p = plan_class_batches(labels_of(5, 2), 2);
  CHECK(p.size() == 4);
  CHECK(p[1].size() == 3);
  p = plan_class_batches(labels_of(1, 10), 4);
  CHECK(p.size() == 3);
  CHECK(p.back().size() == 2);
  p = plan_class_batches(labels_of(1, 5), 4);
  CHECK(p.size() == 1);
  CHECK(p[0].size() == 5);
  for (int ipc : {1, 2, 3, 7})
    for (int bs : {2, 3, 100}) {
      auto plan = plan_class_batches(labels_of(ipc, 4), bs);
      std::vector<int> seen;
      for (const auto& b : plan) {
        CHECK(b.size() >= 2);
        seen.insert(seen.end(), b.begin(), b.end());
      }
      std::sort(seen.begin(), seen.end());
      CHECK(seen.size() == static_cast<std::size_t>(4 * ipc));
      CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    }
}

TEST_CASE("recover_dataset bookkeeping, immutability and export") {
  auto teacher = random_teacher(7);
  const auto digest = model_digest(teacher, true);
  RecoveryConfig c;
  c.ipc = 2;
  c.iterations = 1;
  c.learning_rate = 0.1;
  auto r = recover_dataset(teacher, c);
  CHECK(r.trajectory.size() == 1);
  CHECK(r.batches.size() == 3);
  CHECK(std::isfinite(r.trajectory[0].total));
  CHECK(model_digest(teacher, true) == digest);
  r.batch.validate(3);

  c.random_crop = true;
  c.iterations = 3;
  auto rc = recover_dataset(teacher, c);
  CHECK(rc.trajectory.size() == 3);
  rc.batch.validate(3);

  const fs::path dir = fs::temp_directory_path() / "scdd_test_recover";
  fs::remove_all(dir);
  write_recovery(dir, r, teacher);
  CHECK(fs::exists(dir / "images" / "class_2" / "img_1.png"));
  auto traj = read_trajectory_csv(dir / "trajectory.csv");
  REQUIRE(traj.size() == 1);
  CHECK(traj[0].total == r.trajectory[0].total);
  CHECK(traj[0].bn == r.trajectory[0].bn);

  TrainedBackbone unaligned = teacher;
  unaligned.aligned = false;
  CHECK_THROWS_AS(recover_dataset(unaligned, c), StateError);
}

TEST_CASE("recovery reports divergence with the iteration") {
  auto teacher = random_teacher(8);
  RecoveryConfig c;
  c.ipc = 2;
  c.iterations = 5;
  c.learning_rate = 1e300;
  try {
    recover_dataset(teacher, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("BN loss falls overall on small trained teachers") {
  ProceduralParams pp;
  pp.classes = 3;
  pp.size = 8;
  pp.train_per_class = 30;
  pp.val_per_class = 2;
  auto data = make_procedural_dataset(pp);
  int improved = 0, total = 0;
  double initial_sum = 0, final_sum = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    PretrainConfig pc;
    pc.epochs = 15;
    pc.batch_size = 16;
    pc.seed = seed;
    auto m = pretrain_supervised(data.train, small_spec(), pc);
    ProbeConfig probe;
    probe.epochs = 5;
    auto teacher = linear_probe(m, data.train, probe);
    RecoveryConfig c;
    c.ipc = 4;
    c.iterations = 200;
    c.seed = seed;
    for (const auto& b : recover_dataset(teacher, c).batches) {
      ++total;
      improved += b.final.bn < b.initial.bn;
      initial_sum += b.initial.bn;
      final_sum += b.final.bn;
    }
  }
  CHECK(final_sum < 0.75 * initial_sum);
  CHECK(2 * improved > total);
}
