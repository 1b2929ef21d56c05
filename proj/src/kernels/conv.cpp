#include "scdd/kernels/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>
#include <vector>

#include "scdd/core/errors.hpp"
#include "scdd/core/parallel.hpp"

namespace scdd::kernels {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void check_sizes(const ConvGeometry& g, std::size_t x, std::size_t w, std::size_t y) {
  g.validate();
  if (x != g.input_size() || w != g.weight_size() || y != g.output_size())
    throw ShapeError("conv2d buffer sizes do not match geometry");
}

// cols is (C*k*k) x (OH*OW), row-major.
void im2col(const ConvGeometry& g, const Real* img, Real* cols) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const int positions = oh * ow;
  for (int c = 0; c < g.in_channels; ++c) {
    const Real* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * positions;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Real* out = row + oy * ow;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(out, out + ow, Real{0});
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : Real{0};
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const Real* cols, Real* img) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const int positions = oh * ow;
  for (int c = 0; c < g.in_channels; ++c) {
    Real* plane = img + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * positions;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          const Real* in = row + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

void ConvGeometry::validate() const {
  if (batch < 1 || in_channels < 1 || in_h < 1 || in_w < 1 || out_channels < 1 || kernel < 1 ||
      stride < 1 || pad < 0 || out_h() < 1 || out_w() < 1)
    throw ShapeError("invalid conv geometry (batch " + std::to_string(batch) + ", in " +
                     std::to_string(in_channels) + "x" + std::to_string(in_h) + "x" +
                     std::to_string(in_w) + ", out " + std::to_string(out_channels) + ")");
}

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<Real> y) {
  check_sizes(g, x.size(), w.size(), y.size());
  const int K = g.in_channels * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * P;
  const ConstMatrixMap W(w.data(), g.out_channels, K);
  const bool pointwise = is_pointwise(g);

#if defined(_OPENMP)
#pragma omp parallel
#endif
  {
    std::vector<Real> cols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
#if defined(_OPENMP)
#pragma omp for schedule(static)
#endif
    for (int n = 0; n < g.batch; ++n) {
      const Real* img = x.data() + n * in_stride;
      if (!pointwise) im2col(g, img, cols.data());
      const ConstMatrixMap C(pointwise ? img : cols.data(), K, P);
      MatrixMap Y(y.data() + n * out_stride, g.out_channels, P);
      Y.noalias() = W * C;
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> dy,
                           std::span<const Real> w, std::span<Real> dx) {
  check_sizes(g, dx.size(), w.size(), dy.size());
  const int K = g.in_channels * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * P;
  const ConstMatrixMap W(w.data(), g.out_channels, K);
  const bool pointwise = is_pointwise(g);

#if defined(_OPENMP)
#pragma omp parallel
#endif
  {
    std::vector<Real> cols(static_cast<std::size_t>(K) * P);
#if defined(_OPENMP)
#pragma omp for schedule(static)
#endif
    for (int n = 0; n < g.batch; ++n) {
      const ConstMatrixMap DY(dy.data() + n * out_stride, g.out_channels, P);
      Real* out = dx.data() + n * in_stride;
      if (pointwise) {
        MatrixMap DX(out, K, P);
        DX.noalias() = W.transpose() * DY;
        continue;
      }
      MatrixMap DC(cols.data(), K, P);
      DC.noalias() = W.transpose() * DY;
      std::fill(out, out + in_stride, Real{0});
      col2im_add(g, cols.data(), out);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> dy, std::span<Real> dw) {
  check_sizes(g, x.size(), dw.size(), dy.size());
  const int K = g.in_channels * g.kernel * g.kernel;
  const int P = g.out_h() * g.out_w();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * P;
  const bool pointwise = is_pointwise(g);
  const int threads = parallel::max_threads();

  // Per-thread partial sums, combined in thread order for a fixed thread count.
  std::vector<RowMatrix> partial(static_cast<std::size_t>(threads));
#if defined(_OPENMP)
#pragma omp parallel
#endif
  {
    const int tid = parallel::thread_id();
    RowMatrix& acc = partial[static_cast<std::size_t>(tid)];
    acc = RowMatrix::Zero(g.out_channels, K);
    std::vector<Real> cols(pointwise ? 0 : static_cast<std::size_t>(K) * P);
#if defined(_OPENMP)
#pragma omp for schedule(static)
#endif
    for (int n = 0; n < g.batch; ++n) {
      const Real* img = x.data() + n * in_stride;
      if (!pointwise) im2col(g, img, cols.data());
      const ConstMatrixMap C(pointwise ? img : cols.data(), K, P);
      const ConstMatrixMap DY(dy.data() + n * out_stride, g.out_channels, P);
      acc.noalias() += DY * C.transpose();
    }
  }
  MatrixMap DW(dw.data(), g.out_channels, K);
  for (const auto& p : partial)
    if (p.size() > 0) DW += p;
}

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<Real> y) {
  check_sizes(g, x.size(), w.size(), y.size());
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          Real acc = 0;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] *
                       w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx];
              }
          y[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> dy,
                           std::span<const Real> w, std::span<Real> dx) {
  check_sizes(g, dx.size(), w.size(), dy.size());
  std::fill(dx.begin(), dx.end(), Real{0});
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Real d = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                dx[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] +=
                    d * w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx];
              }
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> dy, std::span<Real> dw) {
  check_sizes(g, x.size(), dw.size(), dy.size());
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const Real d = dy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                dw[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx] +=
                    d * x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
        }
}

}  // namespace reference

}  // namespace scdd::kernels
