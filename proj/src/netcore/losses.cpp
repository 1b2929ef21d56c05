#include "scdd/netcore/losses.hpp"

#include <algorithm>
#include <cmath>

#include "scdd/core/errors.hpp"

namespace scdd {

namespace {

void check_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(0) < 1 || logits.dim(1) < 1)
    throw ShapeError("logits must be (N, C), got " + shape_string(logits.shape()));
}

// log-sum-exp of one row, max-shifted.
Real row_lse(const Real* z, int C) {
  const Real m = *std::max_element(z, z + C);
  Real s = 0;
  for (int c = 0; c < C; ++c) s += std::exp(z[c] - m);
  return m + std::log(s);
}

}  // namespace

Tensor softmax(const Tensor& logits, Real temperature) {
  check_logits(logits);
  if (!(temperature > 0)) throw DomainError("softmax temperature must be positive");
  const int N = logits.dim(0), C = logits.dim(1);
  Tensor out(logits.shape());
  for (int n = 0; n < N; ++n) {
    const Real* z = logits.data() + static_cast<std::size_t>(n) * C;
    Real* p = out.data() + static_cast<std::size_t>(n) * C;
    Real m = z[0] / temperature;
    for (int c = 1; c < C; ++c) m = std::max(m, z[c] / temperature);
    Real s = 0;
    for (int c = 0; c < C; ++c) s += (p[c] = std::exp(z[c] / temperature - m));
    for (int c = 0; c < C; ++c) p[c] /= s;
  }
  return out;
}

LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits);
  const int N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(N)) throw ShapeError("label count does not match batch");
  LossAndGrad out{0, softmax(logits)};
  for (int n = 0; n < N; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= C) throw DataError("label " + std::to_string(y) + " out of range");
    const Real* z = logits.data() + static_cast<std::size_t>(n) * C;
    out.loss += row_lse(z, C) - z[y];
    out.grad[static_cast<std::size_t>(n) * C + y] -= 1;
  }
  out.loss /= N;
  for (auto& g : out.grad.values()) g /= N;
  return out;
}

LossAndGrad soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
  check_logits(logits);
  if (!targets.same_shape(logits)) throw ShapeError("soft targets must match logits shape");
  const int N = logits.dim(0), C = logits.dim(1);
  LossAndGrad out{0, Tensor(logits.shape())};
  const Tensor p = softmax(logits);
  for (int n = 0; n < N; ++n) {
    const std::size_t off = static_cast<std::size_t>(n) * C;
    const Real lse = row_lse(logits.data() + off, C);
    Real mass = 0;
    for (int c = 0; c < C; ++c) {
      const Real t = targets[off + c];
      mass += t;
      if (t != 0) out.loss -= t * (logits[off + c] - lse);
    }
    for (int c = 0; c < C; ++c) out.grad[off + c] = (mass * p[off + c] - targets[off + c]) / N;
  }
  out.loss /= N;
  return out;
}

std::vector<Real> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits);
  const int N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(N)) throw ShapeError("label count does not match batch");
  std::vector<Real> out(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const Real* z = logits.data() + static_cast<std::size_t>(n) * C;
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= C) throw DataError("label " + std::to_string(y) + " out of range");
    out[static_cast<std::size_t>(n)] = row_lse(z, C) - z[y];
  }
  return out;
}

int argmax_row(const Tensor& logits, int row) {
  const int C = logits.dim(1);
  const Real* z = logits.data() + static_cast<std::size_t>(row) * C;
  return static_cast<int>(std::max_element(z, z + C) - z);
}

}  // namespace scdd
