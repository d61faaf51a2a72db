// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mm3d/scene.hpp"

namespace mm3d {

enum class Channel { coordinates = 0, colors = 1 };

struct StatConfig {
    std::size_t k = 16;
    /// Weight of each channel, indexed by Channel.
    std::array<double, 2> alphas = {0.5, 0.5};
    std::array<bool, 2> enabled = {true, true};

    void validate() const;
};

StatConfig stat_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const StatConfig& cfg);

/// For each scene row, the rows of its k nearest other points ordered by
/// ascending (distance, id).
struct NeighborIndex {
    std::size_t k = 0;
    std::vector<std::uint32_t> rows;

    std::size_t size() const noexcept { return k == 0 ? 0 : rows.size() / k; }
    std::span<const std::uint32_t> of(std::size_t row) const { return {rows.data() + row * k, k}; }
};

/// Local differences per channel plus their weighted combination, aligned
/// with scene rows.
struct StatField {
    std::array<std::vector<float>, 2> raw;
    std::vector<float> combined;

    std::size_t size() const noexcept { return combined.size(); }
};

/// Exact K nearest neighbors on positions, ties by ascending id.
/// Lists hold min(K, N-1) entries. Throws DegenerateSceneError when N < 2.
NeighborIndex knn_exact(const PointScene& scene, std::size_t k);

/// Sum over neighbors of the Euclidean distance between the channel vectors.
std::vector<float> channel_difference(const PointScene& scene, const NeighborIndex& nbrs, Channel channel);

/// Weighted sum of per-scene min-max normalized channels. A constant channel
/// contributes zero. Disabled channels are left empty in `raw`.
StatField combine(std::array<std::vector<float>, 2> raw, const StatConfig& cfg);

/// knn_exact + channel_difference for each enabled channel + combine.
StatField compute_statistics(const PointScene& scene, const StatConfig& cfg);

/// Linear blue -> red colormap over the min-max normalized value; t = 0.5 for uniform input.
std::vector<Vec3> heatmap_colors(std::span<const float> values);

void export_heatmap(const PointScene& scene, const StatField& field, const std::filesystem::path& path);

/// CSV `id,D0,D1,D`, one row per point in scene order. Disabled channels print 0.
std::string format_stats_csv(const PointScene& scene, const StatField& field);

} // namespace mm3d
