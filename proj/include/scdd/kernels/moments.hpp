#pragma once

#include <span>

#include "scdd/core/tensor.hpp"

namespace scdd::kernels {

/// Per-channel mean and population variance (divide by N*H*W) of an NCHW
/// buffer. Two-pass; parallel over channels.
void channel_moments(std::span<const Real> x, int batch, int channels, int spatial,
                     std::span<Real> mean, std::span<Real> variance);

namespace reference {
void channel_moments(std::span<const Real> x, int batch, int channels, int spatial,
                     std::span<Real> mean, std::span<Real> variance);
}

}  // namespace scdd::kernels
