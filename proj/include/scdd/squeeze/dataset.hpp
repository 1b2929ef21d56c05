#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scdd/core/tensor.hpp"
#include "scdd/netcore/network.hpp"

namespace scdd {

/// Labeled (or unlabeled) image collection. Pixels are float32 in [0, 1],
/// image-major NCHW.
struct ImageDataset {
  std::string id;
  InputShape shape{};
  int num_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<std::string> class_names;

  int size() const noexcept;
  bool labeled() const noexcept { return !labels.empty(); }
  std::size_t image_size() const noexcept {
    return static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
  }
  std::span<const float> image(int index) const;
  /// Indices of all images with the given label, in dataset order.
  std::vector<int> indices_of_class(int label) const;
  void validate() const;
};

/// Pixel-only view handed to self-supervised training. It exposes no label
/// accessor at all.
class UnlabeledImages {
 public:
  explicit UnlabeledImages(const ImageDataset& source)
      : id_(source.id), shape_(source.shape), pixels_(source.pixels), count_(source.size()) {}

  const std::string& id() const noexcept { return id_; }
  const InputShape& shape() const noexcept { return shape_; }
  int size() const noexcept { return count_; }
  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<const float> image(int index) const;

 private:
  std::string id_;
  InputShape shape_;
  std::span<const float> pixels_;
  int count_;
};

struct DatasetSplits {
  ImageDataset train;
  ImageDataset val;
};

/// Deterministic synthetic 10-class image set (stripes, checkerboard, disk,
/// ring, crosses, triangle, box outline) with color, position, scale and
/// noise jitter.
struct ProceduralParams {
  int classes = 10;
  int size = 16;
  int channels = 3;
  int train_per_class = 300;
  int val_per_class = 100;
  std::uint64_t seed = 0;
};

/// Where a dataset comes from. Text form:
///   procedural[?classes=10&size=16&channels=3&train=300&val=100&seed=0]
///   cifar10:<dir>[?downsample=2&train=500&val=100]
///   png:<dir>[?val_fraction=0.1]
struct DatasetSource {
  enum class Kind { procedural, cifar10, png_dir };
  Kind kind = Kind::procedural;
  std::string path;
  ProceduralParams procedural{};
  int downsample = 1;
  int train_per_class = 0;  // 0 = all
  int val_per_class = 0;
  double val_fraction = 0.1;

  std::string descriptor() const;
};

DatasetSource parse_dataset_source(const std::string& text);
DatasetSplits load_dataset(const DatasetSource& source);

DatasetSplits make_procedural_dataset(const ProceduralParams& params);
/// CIFAR-10 binary batches (data_batch_1..5.bin, test_batch.bin).
DatasetSplits load_cifar10_binary(const std::filesystem::path& dir, int downsample = 1,
                                  int train_per_class = 0, int val_per_class = 0);
/// Per-class subdirectories of PNG files. Uses train/ and val/ when present,
/// otherwise holds out `val_fraction` of each class (last files by name).
DatasetSplits load_png_directory(const std::filesystem::path& root, double val_fraction = 0.1);

/// Per-channel mean and standard deviation of the pixels.
Normalization compute_normalization(std::span<const float> pixels, int channels, int spatial);

/// Copies the selected images into a normalized (N, C, H, W) batch.
Tensor make_batch(const ImageDataset& data, std::span<const int> indices, const Normalization& norm);

/// First `per_class` images of each class (by a seeded shuffle).
ImageDataset random_class_subset(const ImageDataset& data, int per_class, std::uint64_t seed);

}  // namespace scdd
