// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mm3d/error.hpp"
#include "mm3d/parallel.hpp"
#include "mm3d/spatial.hpp"

namespace mm3d {

void StatConfig::validate() const {
    if (k < 1) {
        throw ConfigError("statistics: K must be at least 1");
    }
    if (!enabled[0] && !enabled[1]) {
        throw ConfigError("statistics: at least one channel must be enabled");
    }
    bool positive = false;
    for (int q = 0; q < 2; ++q) {
        if (!(alphas[q] >= 0.0)) {
            throw ConfigError("statistics: channel weights must be non-negative");
        }
        positive = positive || (enabled[q] && alphas[q] > 0.0);
    }
    if (!positive) {
        throw ConfigError("statistics: an enabled channel needs a positive weight");
    }
}

StatConfig stat_config_from_json(const nlohmann::json& doc) {
    StatConfig cfg;
    try {
        cfg.k = doc.value("k", cfg.k);
        if (doc.contains("alphas")) {
            cfg.alphas = doc["alphas"].get<std::array<double, 2>>();
        }
        if (doc.contains("channels")) {
            cfg.enabled = {false, false};
            for (const auto& name : doc["channels"]) {
                const auto s = name.get<std::string>();
                if (s == "coordinates") {
                    cfg.enabled[0] = true;
                } else if (s == "colors") {
                    cfg.enabled[1] = true;
                } else {
                    throw ConfigError(fmt::format("statistics: unknown channel '{}'", s));
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("statistics: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const StatConfig& cfg) {
    nlohmann::json channels = nlohmann::json::array();
    if (cfg.enabled[0]) {
        channels.push_back("coordinates");
    }
    if (cfg.enabled[1]) {
        channels.push_back("colors");
    }
    return {{"k", cfg.k}, {"alphas", cfg.alphas}, {"channels", channels}};
}

NeighborIndex knn_exact(const PointScene& scene, std::size_t k) {
    const std::size_t n = scene.size();
    if (n < 2) {
        throw DegenerateSceneError(fmt::format("KNN needs at least 2 points, scene has {}", n));
    }
    if (k < 1) {
        throw ContractError("KNN needs K >= 1");
    }
    std::vector<std::uint32_t> queries(n);
    std::iota(queries.begin(), queries.end(), 0u);
    NeighborIndex index;
    index.k = std::min(k, n - 1);
    index.rows = spatial::knn_rows(scene.positions, scene.ids, queries, k);
    return index;
}

std::vector<float> channel_difference(const PointScene& scene, const NeighborIndex& nbrs, Channel channel) {
    const auto& values = channel == Channel::coordinates ? scene.positions : scene.colors;
    if (nbrs.size() != scene.size()) {
        throw ContractError("neighbor index was built for a different scene");
    }
    std::vector<float> out(scene.size());
    parallel_for(scene.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double sum = 0.0;
            for (std::uint32_t j : nbrs.of(i)) {
                sum += std::sqrt(static_cast<double>(spatial::squared_distance(values[i], values[j])));
            }
            out[i] = static_cast<float>(sum);
        }
    });
    return out;
}

StatField combine(std::array<std::vector<float>, 2> raw, const StatConfig& cfg) {
    std::size_t n = 0;
    bool sized = false;
    for (int q = 0; q < 2; ++q) {
        if (!cfg.enabled[q]) {
            continue;
        }
        if (sized && raw[q].size() != n) {
            throw ContractError("combine: channels differ in length");
        }
        n = raw[q].size();
        sized = true;
    }

    StatField field;
    field.combined.assign(n, 0.0f);
    std::vector<double> acc(n, 0.0);
    for (int q = 0; q < 2; ++q) {
        if (!cfg.enabled[q]) {
            raw[q].clear();
            continue;
        }
        const auto [lo_it, hi_it] = std::minmax_element(raw[q].begin(), raw[q].end());
        if (n == 0 || *hi_it == *lo_it) {
            continue;
        }
        const double lo = *lo_it;
        const double span = static_cast<double>(*hi_it) - lo;
        for (std::size_t i = 0; i < n; ++i) {
            acc[i] += cfg.alphas[q] * ((raw[q][i] - lo) / span);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        field.combined[i] = static_cast<float>(acc[i]);
    }
    field.raw = std::move(raw);
    return field;
}

StatField compute_statistics(const PointScene& scene, const StatConfig& cfg) {
    cfg.validate();
    const NeighborIndex nbrs = knn_exact(scene, cfg.k);
    std::array<std::vector<float>, 2> raw;
    for (int q = 0; q < 2; ++q) {
        if (cfg.enabled[q]) {
            raw[q] = channel_difference(scene, nbrs, static_cast<Channel>(q));
        }
    }
    return combine(std::move(raw), cfg);
}

std::vector<Vec3> heatmap_colors(std::span<const float> values) {
    std::vector<Vec3> colors(values.size());
    if (values.empty()) {
        return colors;
    }
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double span = static_cast<double>(*hi_it) - lo;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = span > 0.0 ? (values[i] - lo) / span : 0.5;
        colors[i] = {static_cast<float>(t), 0.0f, static_cast<float>(1.0 - t)};
    }
    return colors;
}

void export_heatmap(const PointScene& scene, const StatField& field, const std::filesystem::path& path) {
    if (field.size() != scene.size()) {
        throw ContractError("heatmap: statistics were computed on a different scene");
    }
    PointScene painted = scene;
    painted.colors = heatmap_colors(field.combined);
    save_ply(painted, path);
}

std::string format_stats_csv(const PointScene& scene, const StatField& field) {
    if (field.size() != scene.size()) {
        throw ContractError("stats csv: statistics were computed on a different scene");
    }
    std::string out = "id,D0,D1,D\n";
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const float d0 = field.raw[0].empty() ? 0.0f : field.raw[0][i];
        const float d1 = field.raw[1].empty() ? 0.0f : field.raw[1][i];
        out += fmt::format("{},{},{},{}\n", scene.ids[i], d0, d1, field.combined[i]);
    }
    return out;
}

} // namespace mm3d
