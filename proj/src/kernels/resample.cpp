#include "scdd/kernels/resample.hpp"

#include <algorithm>
#include <cmath>

#include "scdd/core/errors.hpp"

namespace scdd::kernels {

namespace {

struct Tap {
  int i0;
  int i1;
  Real w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel-center mapping of output coordinate o onto [origin, origin+extent).
Tap tap(int o, int out_extent, int origin, int extent) {
  const Real scale = static_cast<Real>(extent) / out_extent;
  Real s = (o + Real{0.5}) * scale - Real{0.5};
  s = std::clamp(s, Real{0}, static_cast<Real>(extent - 1));
  const int lo = static_cast<int>(std::floor(s));
  const int hi = std::min(lo + 1, extent - 1);
  return {origin + lo, origin + hi, s - lo};
}

void check(std::size_t src, std::size_t dst, int channels, int src_h, int src_w,
           const PixelBox& box, int out_h, int out_w) {
  if (channels < 1 || out_h < 1 || out_w < 1 || box.w < 1 || box.h < 1 || box.x < 0 ||
      box.y < 0 || box.x + box.w > src_w || box.y + box.h > src_h)
    throw ShapeError("crop box outside source image");
  if (src != static_cast<std::size_t>(channels) * src_h * src_w ||
      dst != static_cast<std::size_t>(channels) * out_h * out_w)
    throw ShapeError("crop_resize buffer sizes do not match");
}

}  // namespace

void crop_resize_bilinear(std::span<const Real> src, int channels, int src_h, int src_w,
                          const PixelBox& box, bool flip, int out_h, int out_w,
                          std::span<Real> dst) {
  check(src.size(), dst.size(), channels, src_h, src_w, box, out_h, out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    const Tap ty = tap(oy, out_h, box.y, box.h);
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap tx = tap(ox, out_w, box.x, box.w);
      const int dx = flip ? out_w - 1 - ox : ox;
      for (int c = 0; c < channels; ++c) {
        const Real* p = src.data() + static_cast<std::size_t>(c) * src_h * src_w;
        const Real top = p[ty.i0 * src_w + tx.i0] * (1 - tx.w1) + p[ty.i0 * src_w + tx.i1] * tx.w1;
        const Real bot = p[ty.i1 * src_w + tx.i0] * (1 - tx.w1) + p[ty.i1 * src_w + tx.i1] * tx.w1;
        dst[(static_cast<std::size_t>(c) * out_h + oy) * out_w + dx] = top * (1 - ty.w1) + bot * ty.w1;
      }
    }
  }
}

void crop_resize_bilinear_backward(std::span<const Real> ddst, int channels, int src_h,
                                   int src_w, const PixelBox& box, bool flip, int out_h,
                                   int out_w, std::span<Real> dsrc) {
  check(dsrc.size(), ddst.size(), channels, src_h, src_w, box, out_h, out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    const Tap ty = tap(oy, out_h, box.y, box.h);
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap tx = tap(ox, out_w, box.x, box.w);
      const int dx = flip ? out_w - 1 - ox : ox;
      for (int c = 0; c < channels; ++c) {
        Real* p = dsrc.data() + static_cast<std::size_t>(c) * src_h * src_w;
        const Real g = ddst[(static_cast<std::size_t>(c) * out_h + oy) * out_w + dx];
        p[ty.i0 * src_w + tx.i0] += g * (1 - ty.w1) * (1 - tx.w1);
        p[ty.i0 * src_w + tx.i1] += g * (1 - ty.w1) * tx.w1;
        p[ty.i1 * src_w + tx.i0] += g * ty.w1 * (1 - tx.w1);
        p[ty.i1 * src_w + tx.i1] += g * ty.w1 * tx.w1;
      }
    }
  }
}

}  // namespace scdd::kernels
