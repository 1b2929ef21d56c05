#pragma once

#include <span>

#include <json.hpp>

#include "scdd/core/random.hpp"
#include "scdd/kernels/resample.hpp"
#include "scdd/netcore/network_spec.hpp"

namespace scdd {

struct RrcParams {
  double scale_min = 0.08;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;

  void validate() const;
  bool operator==(const RrcParams&) const = default;
};

/// Samples a random-resized-crop box inside an (height, width) image. The
/// area fraction lies in [scale_min, scale_max] up to pixel rounding, and
/// boxes that would exceed the image are clamped to it.
kernels::PixelBox sample_rrc(Rng& rng, int height, int width, const RrcParams& params);

/// Stochastic image augmentation, applied in [0, 1] pixel space.
struct AugmentationPolicy {
  bool crop = true;
  RrcParams rrc{0.2, 1.0};
  double flip_p = 0.5;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double grayscale_p = 0.2;

  static AugmentationPolicy contrastive();
  static AugmentationPolicy supervised();
  static AugmentationPolicy identity();
  void validate() const;
  bool operator==(const AugmentationPolicy&) const = default;
};

void to_json(nlohmann::json& j, const RrcParams& p);
void from_json(const nlohmann::json& j, RrcParams& p);
void to_json(nlohmann::json& j, const AugmentationPolicy& p);
void from_json(const nlohmann::json& j, AugmentationPolicy& p);

/// Writes one augmented view of `src` (channels, height, width) to `dst`.
void augment_image(std::span<const float> src, const InputShape& shape,
                   const AugmentationPolicy& policy, Rng& rng, std::span<float> dst);

}  // namespace scdd
