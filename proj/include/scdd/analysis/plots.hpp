#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scdd/analysis/cluster.hpp"
#include "scdd/netcore/bn_stats.hpp"
#include "scdd/recover/recover.hpp"

namespace scdd {

/// trajectory.png: ce and bn curves against the iteration, log-scale y.
std::filesystem::path emit_trajectory_plot(const std::vector<TrajectoryPoint>& trajectory,
                                           const std::filesystem::path& out_dir);

/// bn_layer_<k>.png for every layer: per-channel running means (top) and
/// variances (bottom), one bar colour per snapshot.
std::vector<std::filesystem::path> emit_bn_plots(
    const std::vector<std::pair<std::string, BNStatSnapshot>>& snapshots, const std::filesystem::path& out_dir);

/// cluster_scatter.png: fixed-angle view of the 3-D PCA points coloured by
/// cluster, marker shape by true class.
std::filesystem::path emit_cluster_plot(const ClusterReport& report, const std::filesystem::path& out_dir);

}  // namespace scdd
