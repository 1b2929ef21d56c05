#pragma once

#include <span>

#include "scdd/core/tensor.hpp"

namespace scdd {

/// Batch-mean loss and its gradient with respect to the logits.
struct LossAndGrad {
  Real loss = 0;
  Tensor grad;
};

/// Row-wise softmax of (N, C) logits / temperature.
Tensor softmax(const Tensor& logits, Real temperature = 1.0);

/// mean_i -log softmax(z_i)[y_i].
LossAndGrad cross_entropy(const Tensor& logits, std::span<const int> labels);

/// mean_i -sum_c t_ic log softmax(z_i)_c, for target rows t_i (soft labels).
LossAndGrad soft_cross_entropy(const Tensor& logits, const Tensor& targets);

/// Per-sample -log softmax(z_i)[y_i] without reduction.
std::vector<Real> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels);

int argmax_row(const Tensor& logits, int row);

}  // namespace scdd
