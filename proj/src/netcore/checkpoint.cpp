#include "scdd/netcore/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "scdd/core/checksum.hpp"
#include "scdd/core/errors.hpp"

namespace scdd {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian host");

using nlohmann::json;

json provenance_to_json(const Provenance& p) {
  json j;
  j["objective"] = p.objective ? json(to_string(*p.objective)) : json(nullptr);
  j["epochs"] = p.epochs;
  j["dataset_id"] = p.dataset_id;
  j["seed"] = p.seed;
  j["train_accuracy"] = p.train_accuracy ? json(*p.train_accuracy) : json(nullptr);
  j["probe_accuracy"] = p.probe_accuracy ? json(*p.probe_accuracy) : json(nullptr);
  j["normalization"] = {{"mean", p.normalization.mean}, {"std", p.normalization.std}};
  return j;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  if (!j.at("objective").is_null()) p.objective = parse_objective(j.at("objective").get<std::string>());
  p.epochs = j.at("epochs").get<int>();
  p.dataset_id = j.at("dataset_id").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("train_accuracy") && !j["train_accuracy"].is_null())
    p.train_accuracy = j["train_accuracy"].get<double>();
  if (j.contains("probe_accuracy") && !j["probe_accuracy"].is_null())
    p.probe_accuracy = j["probe_accuracy"].get<double>();
  p.normalization.mean = j.at("normalization").at("mean").get<std::vector<Real>>();
  p.normalization.std = j.at("normalization").at("std").get<std::vector<Real>>();
  return p;
}

json snapshot_to_json(const BNStatSnapshot& s) {
  json layers = json::array();
  for (const auto& l : s.layers)
    layers.push_back({{"layer_index", l.layer_index}, {"mean", l.mean}, {"variance", l.variance}});
  return {{"layers", layers}};
}

BNStatSnapshot snapshot_from_json(const json& j) {
  BNStatSnapshot s;
  for (const auto& l : j.at("layers"))
    s.layers.push_back({l.at("layer_index").get<int>(), l.at("mean").get<std::vector<Real>>(),
                        l.at("variance").get<std::vector<Real>>()});
  return s;
}

namespace {

struct StateBuffer {
  std::string name;
  std::span<Real> values;
};

// Everything persisted, in a fixed order.
std::vector<StateBuffer> state_buffers(TrainedBackbone& model) {
  std::vector<StateBuffer> out;
  for (auto& p : model.parameters(true)) out.push_back({p.name, p.value->span()});
  auto bns = model.backbone.bn_layers();
  for (std::size_t k = 0; k < bns.size(); ++k) {
    out.push_back({"bn" + std::to_string(k) + ".running_mean", bns[k]->running_mean});
    out.push_back({"bn" + std::to_string(k) + ".running_var", bns[k]->running_var});
  }
  return out;
}

json read_header(std::ifstream& in, const std::filesystem::path& path) {
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointFormat)
    throw FormatError(path.string() + ": missing '" + std::string(kCheckpointFormat) + "' header");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 31)) throw FormatError(path.string() + ": truncated header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated header");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": header is not valid JSON (" + e.what() + ")");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedBackbone& model) {
  TrainedBackbone copy = model;  // state_buffers needs mutable spans
  auto buffers = state_buffers(copy);
  json table = json::array();
  Sha256 digest;
  for (const auto& b : buffers) {
    table.push_back({{"name", b.name}, {"count", b.values.size()}});
    digest.update_values(std::span<const Real>(b.values));
  }
  json header;
  header["format"] = kCheckpointFormat;
  header["spec"] = model.spec;
  header["provenance"] = provenance_to_json(model.provenance);
  header["has_head"] = model.head.has_value();
  header["aligned"] = model.aligned;
  header["tensors"] = table;
  header["bn_snapshot"] = snapshot_to_json(extract_bn_statistics(model));
  header["payload_sha256"] = digest.hex();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out << kCheckpointFormat << '\n';
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto& b : buffers)
      out.write(reinterpret_cast<const char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(Real)));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainedBackbone load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const json header = read_header(in, path);
  TrainedBackbone model;
  try {
    model = build_network(header.at("spec").get<NetworkSpec>(), 0);
    model.provenance = provenance_from_json(header.at("provenance"));
    if (!header.at("has_head").get<bool>()) model.head.reset();
    model.aligned = header.at("aligned").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  auto buffers = state_buffers(model);
  const auto& table = header.at("tensors");
  if (table.size() != buffers.size()) throw FormatError(path.string() + ": tensor table does not match spec");
  Sha256 digest;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (table[i].at("name").get<std::string>() != buffers[i].name ||
        table[i].at("count").get<std::size_t>() != buffers[i].values.size())
      throw FormatError(path.string() + ": tensor '" + buffers[i].name + "' mismatch");
    in.read(reinterpret_cast<char*>(buffers[i].values.data()),
            static_cast<std::streamsize>(buffers[i].values.size() * sizeof(Real)));
    if (!in) throw FormatError(path.string() + ": truncated payload");
    digest.update_values(std::span<const Real>(buffers[i].values));
  }
  if (digest.hex() != header.at("payload_sha256").get<std::string>())
    throw FormatError(path.string() + ": payload checksum mismatch");
  return model;
}

BNStatSnapshot load_checkpoint_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const json header = read_header(in, path);
  try {
    auto snap = snapshot_from_json(header.at("bn_snapshot"));
    snap.validate();
    return snap;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bn_snapshot: " + e.what());
  }
}

}  // namespace scdd
