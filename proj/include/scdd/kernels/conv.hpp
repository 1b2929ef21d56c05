#pragma once

#include <cstddef>
#include <span>

#include "scdd/core/tensor.hpp"

namespace scdd::kernels {

/// Shape of a square-kernel 2D convolution over an NCHW batch. Weights are
/// laid out (out_channels, in_channels, kernel, kernel); there is no bias
/// since every conv in this project feeds a BatchNorm.
struct ConvGeometry {
  int batch = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const noexcept { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const noexcept { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const noexcept {
    return static_cast<std::size_t>(batch) * in_channels * in_h * in_w;
  }
  std::size_t output_size() const noexcept {
    return static_cast<std::size_t>(batch) * out_channels * out_h() * out_w();
  }
  std::size_t weight_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  void validate() const;
};

// im2col + GEMM, OpenMP-parallel over the batch.
void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<Real> y);
/// Overwrites dx.
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> dy,
                           std::span<const Real> w, std::span<Real> dx);
/// Accumulates into dw.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> dy, std::span<Real> dw);

namespace reference {
// Direct seven-deep loops, serial. Same contracts as above.
void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<Real> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> dy,
                           std::span<const Real> w, std::span<Real> dx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> dy, std::span<Real> dw);
}  // namespace reference

}  // namespace scdd::kernels
