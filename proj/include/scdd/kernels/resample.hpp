#pragma once

#include <span>

#include "scdd/core/tensor.hpp"

namespace scdd::kernels {

/// Integer pixel rectangle inside a source image.
struct PixelBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

/// Bilinear resample of `box` from a (channels, src_h, src_w) image into a
/// (channels, out_h, out_w) image, half-pixel centers, samples clamped to the
/// box. `flip` mirrors the output horizontally.
void crop_resize_bilinear(std::span<const Real> src, int channels, int src_h, int src_w,
                          const PixelBox& box, bool flip, int out_h, int out_w,
                          std::span<Real> dst);

/// Adjoint of crop_resize_bilinear: accumulates d(dst) into d(src).
void crop_resize_bilinear_backward(std::span<const Real> ddst, int channels, int src_h,
                                   int src_w, const PixelBox& box, bool flip, int out_h,
                                   int out_w, std::span<Real> dsrc);

}  // namespace scdd::kernels
