#include "scdd/bnstats/informativeness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scdd/core/errors.hpp"

namespace scdd {

Real channel_variance(std::span<const Real> values) {
  if (values.empty()) throw DomainError("channel_variance of an empty vector");
  long double mean = 0;
  for (Real v : values) mean += v;
  mean /= static_cast<long double>(values.size());
  long double acc = 0;
  for (Real v : values) acc += (v - mean) * (v - mean);
  return static_cast<Real>(acc / static_cast<long double>(values.size()));
}

Real gaussian_entropy(Real variance) {
  if (!(variance > 0)) throw DomainError("gaussian_entropy needs a positive variance");
  return 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * variance);
}

Real empirical_differential_entropy(std::span<const Real> samples, int bins) {
  constexpr std::size_t kMinSamples = 1000;
  if (samples.size() < kMinSamples)
    throw PrecisionError("entropy estimate needs at least " + std::to_string(kMinSamples) + " samples, got " +
                         std::to_string(samples.size()));
  if (bins < 1) throw DomainError("entropy estimate needs at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const Real lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("entropy samples must be finite");
  if (!(hi > lo)) throw DomainError("entropy samples have zero spread");
  const Real width = (hi - lo) / bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (Real s : samples) {
    const auto b = std::min(static_cast<std::size_t>((s - lo) / width), counts.size() - 1);
    ++counts[b];
  }
  const Real n = static_cast<Real>(samples.size());
  Real h = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    const Real p = static_cast<Real>(c) / n;
    h -= p * std::log(p / width);
  }
  return h;
}

InformativenessReport informativeness(const BNStatSnapshot& snapshot, const std::string& model_id) {
  snapshot.validate();
  InformativenessReport r;
  r.model_id = model_id;
  for (const auto& layer : snapshot.layers) {
    LayerInformativeness li;
    li.layer_index = layer.layer_index;
    li.var_of_means = channel_variance(layer.mean);
    li.var_of_vars = channel_variance(layer.variance);
    Real pooled = 0;
    for (Real v : layer.variance) pooled += v;
    li.pooled_variance = pooled / static_cast<Real>(layer.variance.size());
    if (li.pooled_variance > 0) li.entropy_nats = gaussian_entropy(li.pooled_variance);
    for (Real v : layer.variance) li.channel_entropy.push_back(v > 0 ? std::optional<Real>(gaussian_entropy(v)) : std::nullopt);
    r.per_layer.push_back(std::move(li));
  }
  if (!r.per_layer.empty()) r.first_layer_var_of_means = r.per_layer.front().var_of_means;
  return r;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::a: return "a";
    case Verdict::b: return "b";
    case Verdict::tie: return "tie";
  }
  return "tie";
}

namespace {

Verdict sign_verdict(Real delta) { return delta > 0 ? Verdict::a : delta < 0 ? Verdict::b : Verdict::tie; }

}  // namespace

InformativenessComparison compare_informativeness(const BNStatSnapshot& a, const BNStatSnapshot& b,
                                                  const std::string& id_a, const std::string& id_b) {
  if (a.layers.size() != b.layers.size())
    throw ShapeError("snapshots differ in layer count: " + std::to_string(a.layers.size()) + " vs " +
                     std::to_string(b.layers.size()));
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    if (a.layers[k].mean.size() != b.layers[k].mean.size() || a.layers[k].layer_index != b.layers[k].layer_index)
      throw ShapeError("snapshots differ in shape at layer " + std::to_string(k));
  InformativenessComparison c;
  c.a = informativeness(a, id_a);
  c.b = informativeness(b, id_b);
  int wins_a = 0, wins_b = 0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const auto& la = c.a.per_layer[k];
    const auto& lb = c.b.per_layer[k];
    LayerComparison lc;
    lc.layer_index = la.layer_index;
    lc.d_var_of_means = la.var_of_means - lb.var_of_means;
    lc.d_var_of_vars = la.var_of_vars - lb.var_of_vars;
    if (la.entropy_nats && lb.entropy_nats) lc.d_entropy = *la.entropy_nats - *lb.entropy_nats;
    lc.verdict = sign_verdict(lc.d_var_of_means);
    wins_a += lc.verdict == Verdict::a;
    wins_b += lc.verdict == Verdict::b;
    c.layers.push_back(lc);
  }
  if (!c.layers.empty()) c.first_layer = c.layers.front().verdict;
  c.majority = wins_a > wins_b ? Verdict::a : wins_b > wins_a ? Verdict::b : Verdict::tie;
  return c;
}

namespace {

nlohmann::json opt(const std::optional<Real>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const InformativenessReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.per_layer) {
    nlohmann::json ch = nlohmann::json::array();
    for (const auto& e : l.channel_entropy) ch.push_back(opt(e));
    layers.push_back({{"layer_index", l.layer_index},
                      {"var_of_means", l.var_of_means},
                      {"var_of_vars", l.var_of_vars},
                      {"pooled_variance", l.pooled_variance},
                      {"entropy_nats", opt(l.entropy_nats)},
                      {"channel_entropy_nats", ch}});
  }
  return {{"model_id", r.model_id},
          {"headline", {{"first_layer_var_of_means", r.first_layer_var_of_means}}},
          {"per_layer", layers}};
}

nlohmann::json to_json(const InformativenessComparison& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.layers)
    layers.push_back({{"layer_index", l.layer_index},
                      {"delta_var_of_means", l.d_var_of_means},
                      {"delta_var_of_vars", l.d_var_of_vars},
                      {"delta_entropy_nats", opt(l.d_entropy)},
                      {"more_informative", to_string(l.verdict)}});
  return {{"a", to_json(c.a)},
          {"b", to_json(c.b)},
          {"deltas", layers},
          {"first_layer_verdict", to_string(c.first_layer)},
          {"majority_verdict", to_string(c.majority)},
          {"note", "magnitudes are raw running statistics and are not normalized across models"}};
}

}  // namespace scdd
