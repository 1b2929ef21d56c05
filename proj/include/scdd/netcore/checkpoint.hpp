#pragma once

#include <filesystem>

#include <json.hpp>

#include "scdd/netcore/network.hpp"

namespace scdd {

inline constexpr const char* kCheckpointFormat = "scdd-ckpt-v1";

/// Single-file archive: a magic line, a length-prefixed JSON header (spec,
/// provenance, tensor table, BN snapshot at save time, payload digest) and a
/// little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const TrainedBackbone& model);
TrainedBackbone load_checkpoint(const std::filesystem::path& path);
/// The BN snapshot recorded in the header, without materializing the weights.
BNStatSnapshot load_checkpoint_snapshot(const std::filesystem::path& path);

nlohmann::json provenance_to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);
nlohmann::json snapshot_to_json(const BNStatSnapshot& s);
BNStatSnapshot snapshot_from_json(const nlohmann::json& j);

}  // namespace scdd
