#include <doctest.h>

#include <cmath>
#include <vector>

#include "scdd/core/random.hpp"
#include "scdd/kernels/conv.hpp"
#include "scdd/kernels/moments.hpp"
#include "scdd/kernels/resample.hpp"

using namespace scdd;
using namespace scdd::kernels;

namespace {
std::vector<Real> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Real> v(n);
  for (auto& x : v) x = uniform(rng, -1, 1);
  return v;
}

Real max_abs_diff(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

TEST_CASE("parallel conv matches the direct reference") {
  const std::vector<ConvGeometry> cases = {
      {3, 3, 8, 8, 5, 3, 1, 1},
      {2, 4, 7, 9, 6, 3, 2, 1},
      {2, 4, 8, 8, 6, 1, 2, 0},
      {4, 2, 5, 5, 3, 1, 1, 0},
  };
  for (const auto& g : cases) {
    CAPTURE(g.kernel);
    CAPTURE(g.stride);
    const auto x = random_values(g.input_size(), 1);
    const auto w = random_values(g.weight_size(), 2);
    const auto dy = random_values(g.output_size(), 3);

    std::vector<Real> y(g.output_size()), y_ref(g.output_size());
    conv2d_forward(g, x, w, y);
    reference::conv2d_forward(g, x, w, y_ref);
    CHECK(max_abs_diff(y, y_ref) < 1e-12);

    std::vector<Real> dx(g.input_size()), dx_ref(g.input_size());
    conv2d_backward_input(g, dy, w, dx);
    reference::conv2d_backward_input(g, dy, w, dx_ref);
    CHECK(max_abs_diff(dx, dx_ref) < 1e-12);

    std::vector<Real> dw(g.weight_size(), 0.5), dw_ref(g.weight_size(), 0.5);
    conv2d_backward_weight(g, x, dy, dw);
    reference::conv2d_backward_weight(g, x, dy, dw_ref);
    CHECK(max_abs_diff(dw, dw_ref) < 1e-12);
  }
}

TEST_CASE("conv rejects mismatched buffers") {
  ConvGeometry g{1, 1, 4, 4, 1, 3, 1, 1};
  std::vector<Real> x(15), w(9), y(16);
  CHECK_THROWS(conv2d_forward(g, x, w, y));
}

TEST_CASE("channel moments: parallel equals reference, population variance") {
  const int N = 3, C = 4, HW = 10;
  const auto x = random_values(static_cast<std::size_t>(N) * C * HW, 9);
  std::vector<Real> m(C), v(C), mr(C), vr(C);
  channel_moments(x, N, C, HW, m, v);
  reference::channel_moments(x, N, C, HW, mr, vr);
  CHECK(max_abs_diff(m, mr) < 1e-14);
  CHECK(max_abs_diff(v, vr) < 1e-14);

  const std::vector<Real> pair{1.0, 3.0};
  std::vector<Real> pm(1), pv(1);
  channel_moments(pair, 2, 1, 1, pm, pv);
  CHECK(pm[0] == doctest::Approx(2.0));
  CHECK(pv[0] == doctest::Approx(1.0));
}

TEST_CASE("crop-resize backward is the adjoint of forward") {
  const int C = 2, H = 9, W = 7, OH = 5, OW = 6;
  const auto src = random_values(static_cast<std::size_t>(C) * H * W, 4);
  const auto g = random_values(static_cast<std::size_t>(C) * OH * OW, 5);
  for (bool flip : {false, true}) {
    const PixelBox box{1, 2, 5, 6};
    std::vector<Real> dst(g.size());
    crop_resize_bilinear(src, C, H, W, box, flip, OH, OW, dst);
    std::vector<Real> back(src.size(), 0.0);
    crop_resize_bilinear_backward(g, C, H, W, box, flip, OH, OW, back);
    Real lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < dst.size(); ++i) lhs += dst[i] * g[i];
    for (std::size_t i = 0; i < src.size(); ++i) rhs += src[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("full-image crop at native size is the identity (and a mirror when flipped)") {
  const int C = 1, H = 4, W = 5;
  const auto src = random_values(static_cast<std::size_t>(H) * W, 6);
  std::vector<Real> dst(src.size());
  crop_resize_bilinear(src, C, H, W, {0, 0, W, H}, false, H, W, dst);
  CHECK(max_abs_diff(src, dst) < 1e-15);
  crop_resize_bilinear(src, C, H, W, {0, 0, W, H}, true, H, W, dst);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) CHECK(dst[y * W + x] == src[y * W + (W - 1 - x)]);
  CHECK_THROWS(crop_resize_bilinear(src, C, H, W, {1, 0, W, H}, false, H, W, dst));
}
