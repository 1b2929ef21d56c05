#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scdd/netcore/bn_stats.hpp"

namespace scdd {

/// Population variance (divide by N).
Real channel_variance(std::span<const Real> values);

/// 0.5 * ln(2 pi e variance), in nats.
Real gaussian_entropy(Real variance);

/// Histogram plug-in estimate -sum_i p_i ln(p_i / width) over `bins` equal
/// bins spanning the sample range, in nats.
Real empirical_differential_entropy(std::span<const Real> samples, int bins = 64);

struct LayerInformativeness {
  int layer_index = 0;
  Real var_of_means = 0;
  Real var_of_vars = 0;
  Real pooled_variance = 0;
  /// Entropy of a Gaussian with the pooled variance; empty when it is not positive.
  std::optional<Real> entropy_nats;
  std::vector<std::optional<Real>> channel_entropy;
};

struct InformativenessReport {
  std::string model_id;
  std::vector<LayerInformativeness> per_layer;
  Real first_layer_var_of_means = 0;
};

InformativenessReport informativeness(const BNStatSnapshot& snapshot, const std::string& model_id);

enum class Verdict { a, b, tie };
std::string to_string(Verdict v);

struct LayerComparison {
  int layer_index = 0;
  Real d_var_of_means = 0;  // a - b
  Real d_var_of_vars = 0;
  std::optional<Real> d_entropy;
  Verdict verdict = Verdict::tie;  // sign of d_var_of_means
};

struct InformativenessComparison {
  InformativenessReport a;
  InformativenessReport b;
  std::vector<LayerComparison> layers;
  Verdict first_layer = Verdict::tie;
  Verdict majority = Verdict::tie;
};

/// Per-layer differences a - b. Throws ShapeError for incompatible snapshots.
InformativenessComparison compare_informativeness(const BNStatSnapshot& a, const BNStatSnapshot& b,
                                                  const std::string& id_a = "a", const std::string& id_b = "b");

nlohmann::json to_json(const InformativenessReport& r);
nlohmann::json to_json(const InformativenessComparison& c);

}  // namespace scdd
