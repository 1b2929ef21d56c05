#include "scdd/squeeze/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "scdd/core/errors.hpp"

namespace scdd {

void RrcParams::validate() const {
  if (!(scale_min > 0 && scale_min <= scale_max && scale_max <= 1.0))
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  if (!(ratio_min > 0 && ratio_min <= ratio_max)) throw ConfigError("crop ratio range must satisfy 0 < min <= max");
}

kernels::PixelBox sample_rrc(Rng& rng, int height, int width, const RrcParams& p) {
  p.validate();
  const double area = static_cast<double>(height) * width;
  const double target = area * uniform(rng, p.scale_min, p.scale_max);
  const double log_ratio = uniform(rng, std::log(p.ratio_min), std::log(p.ratio_max));
  const double ratio = std::exp(log_ratio);
  int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
  int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
  w = std::clamp(w, 1, width);
  h = std::clamp(h, 1, height);
  // clamping can shrink the area below the lower bound; grow the other side
  const double min_area = p.scale_min * area;
  while (static_cast<double>(w) * h < min_area) {
    if (w < width && (h == height || w <= h)) ++w;
    else if (h < height) ++h;
    else break;
  }
  kernels::PixelBox box;
  box.w = w;
  box.h = h;
  box.x = static_cast<int>(uniform(rng) * (width - w + 1));
  box.y = static_cast<int>(uniform(rng) * (height - h + 1));
  box.x = std::min(box.x, width - w);
  box.y = std::min(box.y, height - h);
  return box;
}

AugmentationPolicy AugmentationPolicy::contrastive() { return {}; }

AugmentationPolicy AugmentationPolicy::supervised() {
  AugmentationPolicy p;
  p.rrc = {0.6, 1.0};
  p.jitter_p = 0.0;
  p.grayscale_p = 0.0;
  return p;
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.crop = false;
  p.flip_p = 0.0;
  p.jitter_p = 0.0;
  p.grayscale_p = 0.0;
  return p;
}

void AugmentationPolicy::validate() const {
  if (crop) rrc.validate();
  for (double v : {flip_p, jitter_p, grayscale_p})
    if (v < 0 || v > 1) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  for (double v : {brightness, contrast, saturation})
    if (v < 0 || v >= 1) throw ConfigError("color jitter strengths must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const RrcParams& p) {
  j = {{"scale", {p.scale_min, p.scale_max}}, {"ratio", {p.ratio_min, p.ratio_max}}};
}

void from_json(const nlohmann::json& j, RrcParams& p) {
  p = RrcParams{};
  if (j.contains("scale")) {
    p.scale_min = j.at("scale").at(0).get<double>();
    p.scale_max = j.at("scale").at(1).get<double>();
  }
  if (j.contains("ratio")) {
    p.ratio_min = j.at("ratio").at(0).get<double>();
    p.ratio_max = j.at("ratio").at(1).get<double>();
  }
}

void to_json(nlohmann::json& j, const AugmentationPolicy& p) {
  j = {{"crop", p.crop},         {"rrc", p.rrc},
       {"flip_p", p.flip_p},     {"jitter_p", p.jitter_p},
       {"brightness", p.brightness}, {"contrast", p.contrast},
       {"saturation", p.saturation}, {"grayscale_p", p.grayscale_p}};
}

void from_json(const nlohmann::json& j, AugmentationPolicy& p) {
  AugmentationPolicy d;
  p.crop = j.value("crop", d.crop);
  p.rrc = j.contains("rrc") ? j.at("rrc").get<RrcParams>() : d.rrc;
  p.flip_p = j.value("flip_p", d.flip_p);
  p.jitter_p = j.value("jitter_p", d.jitter_p);
  p.brightness = j.value("brightness", d.brightness);
  p.contrast = j.value("contrast", d.contrast);
  p.saturation = j.value("saturation", d.saturation);
  p.grayscale_p = j.value("grayscale_p", d.grayscale_p);
}

namespace {

void luminance(const double* img, std::size_t plane, int channels, double* out) {
  for (std::size_t k = 0; k < plane; ++k)
    out[k] = channels == 3 ? 0.299 * img[k] + 0.587 * img[plane + k] + 0.114 * img[2 * plane + k] : img[k];
}

void color_jitter(std::vector<double>& img, int channels, std::size_t plane, const AugmentationPolicy& p,
                  Rng& rng) {
  const double b = uniform(rng, 1 - p.brightness, 1 + p.brightness);
  const double c = uniform(rng, 1 - p.contrast, 1 + p.contrast);
  const double s = uniform(rng, 1 - p.saturation, 1 + p.saturation);
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  for (double& v : img) v = clamp01(v * b);
  std::vector<double> gray(plane);
  luminance(img.data(), plane, channels, gray.data());
  double mean = 0;
  for (double g : gray) mean += g;
  mean /= static_cast<double>(plane);
  for (double& v : img) v = clamp01(mean + c * (v - mean));
  if (channels == 3) {
    luminance(img.data(), plane, channels, gray.data());
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t k = 0; k < plane; ++k) {
        double& v = img[ch * plane + k];
        v = clamp01(gray[k] + s * (v - gray[k]));
      }
  }
}

}  // namespace

void augment_image(std::span<const float> src, const InputShape& shape, const AugmentationPolicy& policy,
                   Rng& rng, std::span<float> dst) {
  const int C = shape.channels, H = shape.height, W = shape.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  if (src.size() != C * plane || dst.size() != C * plane) throw ShapeError("augment_image buffer size mismatch");
  std::vector<double> in(src.begin(), src.end());
  std::vector<double> img(in.size());
  kernels::PixelBox box{0, 0, W, H};
  if (policy.crop) box = sample_rrc(rng, H, W, policy.rrc);
  const bool flip = uniform(rng) < policy.flip_p;
  kernels::crop_resize_bilinear(in, C, H, W, box, flip, H, W, img);
  if (uniform(rng) < policy.jitter_p) color_jitter(img, C, plane, policy, rng);
  if (C == 3 && uniform(rng) < policy.grayscale_p) {
    std::vector<double> gray(plane);
    luminance(img.data(), plane, C, gray.data());
    for (int ch = 0; ch < 3; ++ch) std::copy(gray.begin(), gray.end(), img.begin() + ch * plane);
  }
  for (std::size_t k = 0; k < img.size(); ++k) dst[k] = static_cast<float>(img[k]);
}

}  // namespace scdd
