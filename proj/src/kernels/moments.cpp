#include "scdd/kernels/moments.hpp"

#include "scdd/core/errors.hpp"
#include "scdd/core/parallel.hpp"

namespace scdd::kernels {

namespace {
void check(std::size_t x, int batch, int channels, int spatial, std::size_t m, std::size_t v) {
  if (batch < 1 || channels < 1 || spatial < 1 ||
      x != static_cast<std::size_t>(batch) * channels * spatial ||
      m != static_cast<std::size_t>(channels) || v != static_cast<std::size_t>(channels))
    throw ShapeError("channel_moments: buffer sizes do not match (N, C, HW)");
}
}  // namespace

void channel_moments(std::span<const Real> x, int batch, int channels, int spatial,
                     std::span<Real> mean, std::span<Real> variance) {
  check(x.size(), batch, channels, spatial, mean.size(), variance.size());
  const Real count = static_cast<Real>(batch) * spatial;
  SCDD_PARALLEL_FOR
  for (int c = 0; c < channels; ++c) {
    Real sum = 0;
    for (int n = 0; n < batch; ++n) {
      const Real* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
      SCDD_SIMD
      for (int i = 0; i < spatial; ++i) sum += p[i];
    }
    const Real mu = sum / count;
    Real sq = 0;
    for (int n = 0; n < batch; ++n) {
      const Real* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
      SCDD_SIMD
      for (int i = 0; i < spatial; ++i) {
        const Real d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    variance[c] = sq / count;
  }
}

namespace reference {

void channel_moments(std::span<const Real> x, int batch, int channels, int spatial,
                     std::span<Real> mean, std::span<Real> variance) {
  check(x.size(), batch, channels, spatial, mean.size(), variance.size());
  for (int c = 0; c < channels; ++c) {
    Real sum = 0;
    for (int n = 0; n < batch; ++n)
      for (int i = 0; i < spatial; ++i) sum += x[(static_cast<std::size_t>(n) * channels + c) * spatial + i];
    const Real mu = sum / (static_cast<Real>(batch) * spatial);
    Real sq = 0;
    for (int n = 0; n < batch; ++n)
      for (int i = 0; i < spatial; ++i) {
        const Real d = x[(static_cast<std::size_t>(n) * channels + c) * spatial + i] - mu;
        sq += d * d;
      }
    mean[c] = mu;
    variance[c] = sq / (static_cast<Real>(batch) * spatial);
  }
}

}  // namespace reference

}  // namespace scdd::kernels
