#pragma once

#include <vector>

#include "scdd/netcore/layers.hpp"

namespace scdd {

/// 0.5 * base * (1 + cos(pi * step / total)).
Real cosine_lr(Real base, long step, long total);

struct SgdConfig {
  Real momentum = 0.9;
  Real weight_decay = 0.0;
};

/// SGD with heavy-ball momentum and coupled L2 weight decay.
class Sgd {
 public:
  Sgd(std::vector<Parameter> params, SgdConfig cfg);
  void step(Real lr);

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> velocity_;
  SgdConfig cfg_;
};

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
  Real weight_decay = 0.0;
  /// AdamW: decay applied to the weights directly instead of the gradient.
  bool decoupled = false;
};

class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamConfig cfg);
  void step(Real lr);

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace scdd
