#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scdd/core/image_io.hpp"
#include "scdd/kernels/resample.hpp"
#include "scdd/netcore/network.hpp"
#include "scdd/recover/recover.hpp"
#include "scdd/squeeze/augment.hpp"

namespace scdd {

inline constexpr const char* kDistilledFormat = "scdd-dd-v1";

struct CropRecord {
  int image_id = 0;
  int crop_index = 0;
  kernels::PixelBox region;
  bool flip = false;

  bool operator==(const CropRecord& o) const {
    return image_id == o.image_id && crop_index == o.crop_index && region.x == o.region.x &&
           region.y == o.region.y && region.w == o.region.w && region.h == o.region.h && flip == o.flip;
  }
};

struct RelabelConfig {
  int n_crops = 4;
  RrcParams rrc{0.08, 1.0};
  double flip_p = 0.5;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RelabelConfig&) const = default;
};

void to_json(nlohmann::json& j, const RelabelConfig& c);
void from_json(const nlohmann::json& j, RelabelConfig& c);

/// n random-resized-crop regions (clamped to the image) with flips;
/// deterministic per (seed, image_id).
std::vector<CropRecord> generate_crops(int image_id, int height, int width, int n, const RrcParams& rrc,
                                       double flip_p, std::uint64_t seed);

/// Resizes each crop of a [0, 1] pixel image to the full image size and
/// normalizes it into an (n, C, H, W) batch.
Tensor crop_batch(std::span<const double> pixels, const InputShape& shape, std::span<const CropRecord> crops,
                  const Normalization& norm);

/// Teacher softmax (inference mode) for each crop.
std::vector<std::vector<float>> soft_labels(TrainedBackbone& teacher, std::span<const double> pixels,
                                            std::span<const CropRecord> crops, double temperature = 1.0);

struct DistilledManifest {
  std::string format = kDistilledFormat;
  NetworkSpec teacher_spec;
  Provenance teacher_provenance;
  RecoveryConfig recovery;
  RelabelConfig relabel;
};

struct DistilledDataset {
  InputShape shape{};
  int num_classes = 0;
  std::vector<Image16> images;
  std::vector<int> labels;  // class each image was synthesized for
  std::vector<CropRecord> crops;  // grouped by image, crop_index ascending
  std::vector<std::vector<float>> soft_labels;  // one per crop
  DistilledManifest manifest;

  int size() const { return static_cast<int>(images.size()); }
  std::vector<double> pixels(int image_id) const { return dequantize16(images.at(static_cast<std::size_t>(image_id))); }
  /// Throws DataError when an invariant is violated.
  void validate() const;
};

/// Crops and soft-labels every image.
DistilledDataset relabel_images(TrainedBackbone& teacher, std::vector<Image16> images, std::vector<int> labels,
                                const RelabelConfig& cfg, const RecoveryConfig& recovery);

/// Reads images/class_<c>/img_<i>.png as written by write_recovery.
void read_recovered_images(const std::filesystem::path& dir, std::vector<Image16>& images, std::vector<int>& labels);

/// Writes manifest.json, images/, labels/labels.bin and crops.csv.
void pack_distilled(const DistilledDataset& data, const std::filesystem::path& dir);
/// Loads and verifies every checksum; throws FormatError naming the offending field or file.
DistilledDataset load_distilled(const std::filesystem::path& dir);

}  // namespace scdd
