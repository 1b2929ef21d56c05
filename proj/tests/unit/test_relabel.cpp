#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "scdd/core/errors.hpp"
#include "scdd/relabel/relabel.hpp"
#include "toy_models.hpp"

using namespace scdd;
using scdd::test::random_teacher;
namespace fs = std::filesystem;

namespace {

std::vector<Image16> random_images(int n, const InputShape& shape, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Image16> out;
  const auto size = static_cast<std::size_t>(shape.channels * shape.height * shape.width);
  for (int i = 0; i < n; ++i) {
    std::vector<double> px(size);
    for (auto& v : px) v = uniform(rng);
    out.push_back(quantize16(px, shape));
  }
  return out;
}

DistilledDataset small_distilled(TrainedBackbone& teacher, std::uint64_t seed = 5) {
  const InputShape shape = teacher.spec.input_shape;
  RelabelConfig cfg;
  cfg.n_crops = 3;
  cfg.seed = seed;
  return relabel_images(teacher, random_images(6, shape, seed), {0, 0, 1, 1, 2, 2}, cfg, RecoveryConfig{});
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

void flip_byte(const fs::path& file, std::streamoff at) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(at);
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(at);
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("generate_crops is deterministic and in bounds") {
  RrcParams rrc{0.08, 1.0};
  auto a = generate_crops(3, 16, 12, 50, rrc, 0.5, 11);
  CHECK(a == generate_crops(3, 16, 12, 50, rrc, 0.5, 11));
  CHECK(a != generate_crops(4, 16, 12, 50, rrc, 0.5, 11));
  CHECK(a != generate_crops(3, 16, 12, 50, rrc, 0.5, 12));
  REQUIRE(a.size() == 50);
  int flips = 0;
  for (int i = 0; i < 50; ++i) {
    const auto& c = a[static_cast<std::size_t>(i)];
    CHECK(c.image_id == 3);
    CHECK(c.crop_index == i);
    CHECK(c.region.x >= 0);
    CHECK(c.region.y >= 0);
    CHECK(c.region.w >= 1);
    CHECK(c.region.h >= 1);
    CHECK(c.region.x + c.region.w <= 12);
    CHECK(c.region.y + c.region.h <= 16);
    flips += c.flip;
  }
  CHECK(flips > 5);
  CHECK(flips < 45);
  for (const auto& c : generate_crops(0, 8, 8, 20, rrc, 0.0, 1)) CHECK_FALSE(c.flip);
}

TEST_CASE("crop_batch on a full-image crop is plain normalization") {
  const InputShape shape{2, 4, 5};
  std::vector<double> px(40);
  std::iota(px.begin(), px.end(), 0.0);
  for (auto& v : px) v /= 40.0;
  const Normalization norm{{0.25, 0.5}, {0.5, 2.0}};
  std::vector<CropRecord> crops{{0, 0, {0, 0, 5, 4}, false}, {0, 1, {0, 0, 5, 4}, true}};
  Tensor b = crop_batch(px, shape, crops, norm);
  REQUIRE(b.shape() == std::vector<int>{2, 2, 4, 5});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) {
        const double expect = (px[static_cast<std::size_t>((c * 4 + y) * 5 + x)] - norm.mean[c]) / norm.std[c];
        CHECK(b.at(0, c, y, x) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(b.at(1, c, y, 4 - x) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("soft labels are distributions") {
  auto teacher = random_teacher(1);
  auto d = small_distilled(teacher);
  REQUIRE(d.soft_labels.size() == 18);
  for (const auto& s : d.soft_labels) {
    REQUIRE(s.size() == 3);
    double sum = 0;
    for (float p : s) {
      CHECK(p >= 0.0f);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-5);
  }
  d.validate();
}

TEST_CASE("soft labels follow a closed form for a bias-only head") {
  auto teacher = random_teacher(2);
  teacher.head->weight.zero();
  teacher.head->bias[0] = 1.0;
  teacher.head->bias[1] = 0.0;
  teacher.head->bias[2] = 0.0;
  const InputShape shape = teacher.spec.input_shape;
  const auto px = dequantize16(random_images(1, shape, 3)[0]);
  const auto crops = generate_crops(0, shape.height, shape.width, 2, {0.08, 1.0}, 0.5, 0);
  for (double T : {1.0, 2.0, 0.5}) {
    const double e = std::exp(1.0 / T);
    for (const auto& s : soft_labels(teacher, px, crops, T)) {
      CHECK(s[0] == doctest::Approx(e / (e + 2)).epsilon(1e-6));
      CHECK(s[1] == doctest::Approx(1 / (e + 2)).epsilon(1e-6));
    }
  }
  teacher.head->bias[0] = 200.0;
  for (const auto& s : soft_labels(teacher, px, crops, 1.0)) {
    CHECK(s[0] == 1.0f);
    CHECK(s[1] == 0.0f);
  }
  TrainedBackbone unaligned = teacher;
  unaligned.aligned = false;
  CHECK_THROWS_AS(soft_labels(unaligned, px, crops, 1.0), StateError);
}

TEST_CASE("pack and load round trip is lossless") {
  auto teacher = random_teacher(3);
  auto d = small_distilled(teacher);
  const auto dir = fresh_dir("scdd_test_pack");
  pack_distilled(d, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "labels" / "labels.bin"));
  CHECK(fs::exists(dir / "crops.csv"));
  auto back = load_distilled(dir);
  CHECK(back.shape == d.shape);
  CHECK(back.num_classes == d.num_classes);
  CHECK(back.labels == d.labels);
  CHECK(back.crops == d.crops);
  REQUIRE(back.soft_labels.size() == d.soft_labels.size());
  for (std::size_t i = 0; i < d.soft_labels.size(); ++i)
    CHECK(std::memcmp(back.soft_labels[i].data(), d.soft_labels[i].data(), d.soft_labels[i].size() * sizeof(float)) == 0);
  REQUIRE(back.images.size() == d.images.size());
  for (std::size_t i = 0; i < d.images.size(); ++i) CHECK(back.images[i].pixels == d.images[i].pixels);
  CHECK(back.manifest.teacher_spec == d.manifest.teacher_spec);
  CHECK(back.manifest.teacher_provenance.dataset_id == "test");
  CHECK(back.manifest.recovery == d.manifest.recovery);
  CHECK(back.manifest.relabel == d.manifest.relabel);
}

TEST_CASE("replayed crops reproduce stored labels") {
  auto teacher = random_teacher(4);
  auto d = small_distilled(teacher, 9);
  const auto dir = fresh_dir("scdd_test_replay");
  pack_distilled(d, dir);
  auto back = load_distilled(dir);
  const int n = back.manifest.relabel.n_crops;
  double worst = 0;
  for (int i = 0; i < back.size(); ++i) {
    std::span<const CropRecord> crops(back.crops.data() + i * n, static_cast<std::size_t>(n));
    auto replay = soft_labels(teacher, back.pixels(i), crops, back.manifest.relabel.temperature);
    for (int k = 0; k < n; ++k)
      for (std::size_t c = 0; c < replay[static_cast<std::size_t>(k)].size(); ++c)
        worst = std::max(worst, static_cast<double>(std::abs(replay[static_cast<std::size_t>(k)][c] -
                                                             back.soft_labels[static_cast<std::size_t>(i * n + k)][c])));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("load_distilled detects tampering") {
  auto teacher = random_teacher(5);
  auto d = small_distilled(teacher);

  SUBCASE("label bytes") {
    const auto dir = fresh_dir("scdd_test_tamper_labels");
    pack_distilled(d, dir);
    flip_byte(dir / "labels" / "labels.bin", 9);
    try {
      load_distilled(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("checksum mismatch") != std::string::npos);
      CHECK(std::string(e.what()).find("labels.bin") != std::string::npos);
    }
  }
  SUBCASE("image bytes") {
    const auto dir = fresh_dir("scdd_test_tamper_image");
    pack_distilled(d, dir);
    auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    const fs::path img = dir / m["images"][0]["file"].get<std::string>();
    write_png16(img, random_images(1, d.shape, 77)[0]);
    CHECK_THROWS_AS(load_distilled(dir), FormatError);
  }
  SUBCASE("missing provenance") {
    const auto dir = fresh_dir("scdd_test_tamper_manifest");
    pack_distilled(d, dir);
    auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    m["teacher"].erase("provenance");
    std::ofstream(dir / "manifest.json") << m.dump(2);
    try {
      load_distilled(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("provenance") != std::string::npos);
    }
  }
  SUBCASE("wrong format tag") {
    const auto dir = fresh_dir("scdd_test_tamper_format");
    pack_distilled(d, dir);
    auto m = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    m["format"] = "other";
    std::ofstream(dir / "manifest.json") << m.dump(2);
    CHECK_THROWS_AS(load_distilled(dir), FormatError);
  }
  CHECK_THROWS_AS(load_distilled(fresh_dir("scdd_test_missing")), Error);
}

TEST_CASE("distilled dataset validation") {
  auto teacher = random_teacher(6);
  auto d = small_distilled(teacher);
  auto bad = d;
  bad.soft_labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = d;
  bad.soft_labels[0][0] += 0.5f;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = d;
  bad.labels[0] = 7;
  CHECK_THROWS_AS(bad.validate(), DataError);
  RelabelConfig cfg;
  cfg.n_crops = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
