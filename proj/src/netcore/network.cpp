#include "scdd/netcore/network.hpp"

#include <algorithm>
#include <cmath>

#include "scdd/core/errors.hpp"

namespace scdd {

namespace {

int scaled(int base, double multiplier) {
  return std::max(1, static_cast<int>(std::lround(base * multiplier)));
}

Tensor avg_pool2(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
  Tensor y({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          y.at(n, c, h, w) = 0.25 * (x.at(n, c, 2 * h, 2 * w) + x.at(n, c, 2 * h, 2 * w + 1) +
                                     x.at(n, c, 2 * h + 1, 2 * w) + x.at(n, c, 2 * h + 1, 2 * w + 1));
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy, const std::vector<int>& input_shape) {
  Tensor dx(input_shape);
  const int N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const Real g = 0.25 * dy.at(n, c, h, w);
          dx.at(n, c, 2 * h, 2 * w) = g;
          dx.at(n, c, 2 * h, 2 * w + 1) = g;
          dx.at(n, c, 2 * h + 1, 2 * w) = g;
          dx.at(n, c, 2 * h + 1, 2 * w + 1) = g;
        }
  return dx;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("residual add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

Backbone::Backbone(const NetworkSpec& spec) {
  spec.validate();
  int bn_index = 0;
  auto unit = [&](int in, int out, int kernel, int stride) {
    ConvBn u{Conv2d(in, out, kernel, stride, kernel / 2), BatchNorm2d(out), bn_index++};
    return u;
  };
  const int in_c = spec.input_shape.channels;
  int h = spec.input_shape.height, w = spec.input_shape.width;

  if (spec.architecture == Architecture::tiny_resnet) {
    const int n = (spec.depth - 2) / 6;
    const int base = scaled(16, spec.width_multiplier);
    Block stem;
    stem.a = unit(in_c, base, 3, 1);
    blocks_.push_back(std::move(stem));
    int channels = base;
    for (int stage = 0; stage < 3; ++stage) {
      const int out = base << stage;
      for (int i = 0; i < n; ++i) {
        const int stride = (stage > 0 && i == 0) ? 2 : 1;
        Block blk;
        blk.residual = true;
        blk.a = unit(channels, out, 3, stride);
        blk.b = unit(out, out, 3, 1);
        if (stride != 1 || channels != out) blk.shortcut = unit(channels, out, 1, stride);
        blocks_.push_back(std::move(blk));
        channels = out;
        if (stride == 2) {
          h = (h + 1) / 2;
          w = (w + 1) / 2;
        }
      }
    }
    feature_dim_ = channels;
  } else {
    const int width = scaled(32, spec.width_multiplier);
    int channels = in_c;
    for (int i = 0; i < spec.depth; ++i) {
      Block blk;
      blk.a = unit(channels, width, 3, 1);
      blk.pool_after = (i + 1 < spec.depth) && h > 4 && w > 4 && h % 2 == 0 && w % 2 == 0;
      if (blk.pool_after) {
        h /= 2;
        w /= 2;
      }
      blocks_.push_back(std::move(blk));
      channels = width;
    }
    feature_dim_ = width;
  }
}

void Backbone::initialize(Rng& rng) {
  for (auto& blk : blocks_) {
    blk.a.conv.initialize(rng);
    if (blk.b) blk.b->conv.initialize(rng);
    if (blk.shortcut) blk.shortcut->conv.initialize(rng);
  }
}

Tensor Backbone::run(ConvBn& unit, const Tensor& x, Mode mode) {
  return unit.bn.forward(unit.conv.forward(x), mode);
}

Tensor Backbone::unwind(ConvBn& unit, const Tensor& dy, const StatGradients* stat_grads,
                        bool param_grads, bool input_grad) {
  const StatGradient* sg = nullptr;
  if (stat_grads) {
    if (unit.bn_index >= static_cast<int>(stat_grads->size()))
      throw ShapeError("statistic gradients do not cover every BN layer");
    const auto& entry = (*stat_grads)[static_cast<std::size_t>(unit.bn_index)];
    if (!entry.d_mean.empty() || !entry.d_variance.empty()) sg = &entry;
  }
  Tensor d = unit.bn.backward(dy, sg, param_grads);
  return unit.conv.backward(d, param_grads, input_grad);
}

Tensor Backbone::forward(const Tensor& x, Mode mode) {
  if (blocks_.empty()) throw UnsupportedModelError("backbone has no layers");
  Tensor cur = x;
  for (auto& blk : blocks_) {
    blk.input = cur;
    if (!blk.residual) {
      Tensor y = run(blk.a, cur, mode);
      relu_inplace(y);
      blk.output = y;
      cur = blk.pool_after ? avg_pool2(y) : std::move(y);
      continue;
    }
    Tensor hidden = run(blk.a, cur, mode);
    relu_inplace(hidden);
    blk.hidden = hidden;
    Tensor y = run(*blk.b, hidden, mode);
    if (blk.shortcut)
      add_inplace(y, run(*blk.shortcut, cur, mode));
    else
      add_inplace(y, cur);
    relu_inplace(y);
    blk.output = y;
    cur = std::move(y);
  }
  pooled_shape_ = cur.shape();
  const int N = cur.dim(0), C = cur.dim(1), HW = cur.dim(2) * cur.dim(3);
  Tensor features({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real* p = cur.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      Real s = 0;
      for (int i = 0; i < HW; ++i) s += p[i];
      features[static_cast<std::size_t>(n) * C + c] = s / HW;
    }
  return features;
}

Tensor Backbone::backward(const Tensor& d_features, const StatGradients* stat_grads,
                          bool param_grads, bool input_grad) {
  if (pooled_shape_.empty()) throw StateError("backward called before forward");
  const int N = pooled_shape_[0], C = pooled_shape_[1], HW = pooled_shape_[2] * pooled_shape_[3];
  if (d_features.rank() != 2 || d_features.dim(0) != N || d_features.dim(1) != C)
    throw ShapeError("feature gradient shape mismatch");
  Tensor d(pooled_shape_);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real g = d_features[static_cast<std::size_t>(n) * C + c] / HW;
      Real* p = d.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      std::fill(p, p + HW, g);
    }

  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    Block& blk = blocks_[static_cast<std::size_t>(i)];
    const bool need_dx = input_grad || i > 0;
    if (!blk.residual) {
      if (blk.pool_after) d = avg_pool2_backward(d, blk.output.shape());
      relu_backward_inplace(d, blk.output);
      d = unwind(blk.a, d, stat_grads, param_grads, need_dx);
      continue;
    }
    relu_backward_inplace(d, blk.output);
    Tensor dh = unwind(*blk.b, d, stat_grads, param_grads, true);
    relu_backward_inplace(dh, blk.hidden);
    Tensor dx = unwind(blk.a, dh, stat_grads, param_grads, need_dx);
    if (blk.shortcut) {
      Tensor ds = unwind(*blk.shortcut, d, stat_grads, param_grads, need_dx);
      if (need_dx) add_inplace(dx, ds);
    } else if (need_dx) {
      add_inplace(dx, d);
    }
    d = std::move(dx);
  }
  return input_grad ? d : Tensor();
}

std::vector<BatchNorm2d*> Backbone::bn_layers() {
  std::vector<BatchNorm2d*> out;
  for (auto& blk : blocks_) {
    out.push_back(&blk.a.bn);
    if (blk.b) out.push_back(&blk.b->bn);
    if (blk.shortcut) out.push_back(&blk.shortcut->bn);
  }
  return out;
}

std::vector<const BatchNorm2d*> Backbone::bn_layers() const {
  std::vector<const BatchNorm2d*> out;
  for (const auto& blk : blocks_) {
    out.push_back(&blk.a.bn);
    if (blk.b) out.push_back(&blk.b->bn);
    if (blk.shortcut) out.push_back(&blk.shortcut->bn);
  }
  return out;
}

void Backbone::append_parameters(std::vector<Parameter>& out) {
  auto add = [&](ConvBn& u) {
    const std::string p = "bn" + std::to_string(u.bn_index);
    out.push_back({p + ".conv.weight", &u.conv.weight, &u.conv.weight_grad});
    out.push_back({p + ".gamma", &u.bn.gamma, &u.bn.gamma_grad});
    out.push_back({p + ".beta", &u.bn.beta, &u.bn.beta_grad});
  };
  for (auto& blk : blocks_) {
    add(blk.a);
    if (blk.b) add(*blk.b);
    if (blk.shortcut) add(*blk.shortcut);
  }
}

void Backbone::digest(Sha256& h) const {
  auto feed = [&](const ConvBn& u) {
    h.update_values(u.conv.weight.span());
    h.update_values(u.bn.gamma.span());
    h.update_values(u.bn.beta.span());
    h.update_values(std::span<const Real>(u.bn.running_mean));
    h.update_values(std::span<const Real>(u.bn.running_var));
  };
  for (const auto& blk : blocks_) {
    feed(blk.a);
    if (blk.b) feed(*blk.b);
    if (blk.shortcut) feed(*blk.shortcut);
  }
}

std::string to_string(Objective o) {
  return o == Objective::supervised ? "supervised" : "contrastive";
}

Objective parse_objective(const std::string& name) {
  if (name == "supervised") return Objective::supervised;
  if (name == "contrastive") return Objective::contrastive;
  throw ConfigError("unknown pretraining objective '" + name + "'");
}

bool Provenance::complete() const {
  return objective.has_value() && epochs >= 1 && !dataset_id.empty() &&
         !normalization.mean.empty() && normalization.mean.size() == normalization.std.size();
}

void TrainedBackbone::check_input(const Tensor& x) const {
  const auto& s = spec.input_shape;
  if (x.rank() != 4 || x.dim(1) != s.channels || x.dim(2) != s.height || x.dim(3) != s.width)
    throw ShapeError("input " + shape_string(x.shape()) + " does not match network input (N, " +
                     std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
                     std::to_string(s.width) + ")");
}

Tensor TrainedBackbone::forward(const Tensor& x, Mode mode) {
  if (!head) throw StateError("model has no classifier head");
  check_input(x);
  return head->forward(backbone.forward(x, mode));
}

Tensor TrainedBackbone::backward(const Tensor& d_logits, const StatGradients* stat_grads,
                                 bool param_grads, bool input_grad) {
  if (!head) throw StateError("model has no classifier head");
  Tensor d_features = head->backward(d_logits, param_grads, true);
  return backbone.backward(d_features, stat_grads, param_grads, input_grad);
}

std::vector<Parameter> TrainedBackbone::parameters(bool include_head) {
  std::vector<Parameter> out;
  backbone.append_parameters(out);
  if (include_head && head) head->append_parameters(out, "head");
  return out;
}

void TrainedBackbone::zero_grad() {
  for (auto& p : parameters(true)) p.grad->zero();
}

TrainedBackbone build_network(const NetworkSpec& spec, std::uint64_t seed) {
  TrainedBackbone model;
  model.spec = spec;
  model.backbone = Backbone(spec);
  Rng rng = make_rng(seed, 0x6e6574);
  model.backbone.initialize(rng);
  model.head = Linear(model.backbone.feature_dim(), spec.num_classes);
  model.head->initialize(rng, 0.01);
  model.provenance.seed = seed;
  return model;
}

BNStatSnapshot extract_bn_statistics(const TrainedBackbone& model) {
  const auto layers = model.backbone.bn_layers();
  if (layers.empty()) throw UnsupportedModelError("model has no BN layers");
  BNStatSnapshot snap;
  snap.layers.reserve(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k)
    snap.layers.push_back({static_cast<int>(k), layers[k]->running_mean, layers[k]->running_var});
  return snap;
}

BatchStatRecord collect_batch_stats(const Backbone& backbone) {
  const auto layers = backbone.bn_layers();
  BatchStatRecord rec;
  rec.layers.reserve(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k)
    rec.layers.push_back({static_cast<int>(k), layers[k]->batch_mean(), layers[k]->batch_variance()});
  return rec;
}

ForwardWithStats forward_with_batch_stats(TrainedBackbone& model, const Tensor& batch) {
  model.check_input(batch);
  if (batch.dim(0) < 2) throw PreconditionError("batch statistics need at least 2 images");
  ForwardWithStats out;
  out.logits = model.forward(batch, Mode::eval);
  out.stats = collect_batch_stats(model.backbone);
  return out;
}

std::string model_digest(const TrainedBackbone& model, bool include_head) {
  Sha256 h;
  model.backbone.digest(h);
  if (include_head && model.head) {
    h.update_values(model.head->weight.span());
    h.update_values(model.head->bias.span());
  }
  return h.hex();
}

}  // namespace scdd
