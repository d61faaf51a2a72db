// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/encoder.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mm3d/diff/ops.hpp"
#include "mm3d/error.hpp"
#include "mm3d/spatial.hpp"

namespace mm3d {

void EncoderConfig::validate() const {
    if (channels.empty()) {
        throw ConfigError("encoder needs at least one layer");
    }
    for (std::size_t l = 0; l < channels.size(); ++l) {
        if (channels[l] == 0 || (l > 0 && channels[l] <= channels[l - 1])) {
            throw ConfigError("encoder channels must be positive and increasing");
        }
    }
    if (group_k < 1) {
        throw ConfigError("encoder group_k must be at least 1");
    }
    if (downsample < 2) {
        throw ConfigError("encoder downsample factor must be at least 2");
    }
}

EncoderConfig encoder_config_from_json(const nlohmann::json& doc) {
    EncoderConfig cfg;
    try {
        cfg.channels = doc.value("channels", cfg.channels);
        cfg.group_k = doc.value("group_k", cfg.group_k);
        cfg.downsample = doc.value("downsample", cfg.downsample);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("encoder: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const EncoderConfig& cfg) {
    return {{"channels", cfg.channels}, {"group_k", cfg.group_k}, {"downsample", cfg.downsample}};
}

std::vector<ParamRef> EncoderParams::refs() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = fmt::format("encoder.{}.", l);
        out.push_back({p + "pointwise.weight", &layers[l].pointwise.weight});
        out.push_back({p + "pointwise.bias", &layers[l].pointwise.bias});
        out.push_back({p + "mix.weight", &layers[l].mix.weight});
        out.push_back({p + "mix.bias", &layers[l].mix.bias});
    }
    return out;
}

std::vector<ConstParamRef> EncoderParams::refs() const {
    std::vector<ConstParamRef> out;
    for (auto& r : const_cast<EncoderParams*>(this)->refs()) {
        out.push_back({r.name, r.tensor});
    }
    return out;
}

EncoderParams init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    EncoderParams params;
    std::size_t in = kInputChannels;
    for (std::size_t c : cfg.channels) {
        EncoderLayer layer;
        layer.pointwise = init_linear(in + 3, c, rng);
        layer.mix = init_linear(c, c, rng);
        params.layers.push_back(std::move(layer));
        in = c;
    }
    return params;
}

EncoderParams zero_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderParams params;
    std::size_t in = kInputChannels;
    for (std::size_t c : cfg.channels) {
        params.layers.push_back({zero_linear(in + 3, c), zero_linear(c, c)});
        in = c;
    }
    return params;
}

void check_encoder(const EncoderParams& params, const EncoderConfig& cfg) {
    const EncoderParams expected = zero_encoder(cfg);
    const auto want = expected.refs();
    const auto have = params.refs();
    if (want.size() != have.size()) {
        throw ShapeError(fmt::format("encoder has {} tensors, configuration needs {}", have.size(), want.size()));
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].tensor->shape() != have[i].tensor->shape()) {
            throw ShapeError(fmt::format("{}: shape {} but configuration needs {}", want[i].name,
                                         diff::shape_string(have[i].tensor->shape()),
                                         diff::shape_string(want[i].tensor->shape())));
        }
    }
}

EncoderVars bind(diff::Tape& tape, const EncoderParams& params, bool requires_grad) {
    EncoderVars vars;
    for (const auto& layer : params.layers) {
        vars.push_back({bind(tape, layer.pointwise, requires_grad), bind(tape, layer.mix, requires_grad)});
    }
    return vars;
}

std::vector<std::uint32_t> fps(std::span<const Vec3> positions, std::span<const PointId> ids, std::size_t m) {
    const std::size_t n = positions.size();
    if (ids.size() != n) {
        throw ContractError("fps: positions and ids differ in length");
    }
    if (m < 1 || m > n) {
        throw ContractError(fmt::format("fps: cannot pick {} of {} points", m, n));
    }
    std::vector<std::uint32_t> picked;
    picked.reserve(m);
    const auto start = static_cast<std::uint32_t>(std::min_element(ids.begin(), ids.end()) - ids.begin());
    picked.push_back(start);

    // Picked points are marked with -1 so they never win again.
    std::vector<float> min_d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        min_d2[i] = spatial::squared_distance(positions[i], positions[start]);
    }
    min_d2[start] = -1.0f;
    while (picked.size() < m) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d2[i] < 0.0f) {
                continue;
            }
            if (best == n || min_d2[i] > min_d2[best] || (min_d2[i] == min_d2[best] && ids[i] < ids[best])) {
                best = i;
            }
        }
        picked.push_back(static_cast<std::uint32_t>(best));
        min_d2[best] = -1.0f;
        const Vec3& p = positions[best];
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d2[i] > 0.0f) {
                min_d2[i] = std::min(min_d2[i], spatial::squared_distance(positions[i], p));
            }
        }
    }
    return picked;
}

bool encoder_accepts(const EncoderConfig& cfg, std::size_t n) {
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
        if (n < cfg.group_k) {
            return false;
        }
        n = (n + cfg.downsample - 1) / cfg.downsample;
    }
    return true;
}

HierFeatures encode(const PointScene& scene, std::span<const PointId> input, const EncoderVars& params,
                    const EncoderConfig& cfg, diff::Tape& tape) {
    cfg.validate();
    if (input.empty()) {
        throw DegenerateSceneError("encode: empty input set");
    }
    if (params.size() != cfg.layers()) {
        throw ShapeError(fmt::format("encode: {} parameter layers for {} configured", params.size(), cfg.layers()));
    }

    HierFeatures out;
    {
        HierLevel level0;
        level0.ids.assign(input.begin(), input.end());
        const auto rows = rows_for_ids(scene, input);
        diff::Tensor attrs({rows.size(), kInputChannels});
        level0.positions.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Vec3& p = scene.positions[rows[i]];
            const Vec3& c = scene.colors[rows[i]];
            level0.positions.push_back(p);
            for (int a = 0; a < 3; ++a) {
                attrs(i, a) = p[a];
                attrs(i, 3 + a) = c[a];
            }
        }
        level0.features = tape.constant(std::move(attrs));
        out.levels.push_back(std::move(level0));
    }

    const std::size_t k = cfg.group_k;
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
        const HierLevel& cur = out.levels.back();
        const std::size_t n = cur.ids.size();
        if (n < k) {
            throw DegenerateSceneError(fmt::format("encoder layer {} has {} points, fewer than group size {}", l + 1, n, k));
        }
        const std::size_t m = (n + cfg.downsample - 1) / cfg.downsample;
        // Only the sampled points' features survive the layer, so groups are built for them alone.
        const std::vector<std::uint32_t> centers = fps(cur.positions, cur.ids, m);
        const std::vector<std::uint32_t> nbrs = spatial::knn_rows(cur.positions, cur.ids, centers, k - 1);

        std::vector<std::uint32_t> group(m * k);
        diff::Tensor rel({m * k, 3});
        for (std::size_t g = 0; g < m; ++g) {
            group[g * k] = centers[g];
            for (std::size_t j = 1; j < k; ++j) {
                group[g * k + j] = nbrs[g * (k - 1) + j - 1];
            }
            const Vec3& c = cur.positions[centers[g]];
            for (std::size_t j = 0; j < k; ++j) {
                const Vec3& p = cur.positions[group[g * k + j]];
                for (int a = 0; a < 3; ++a) {
                    rel(g * k + j, a) = p[a] - c[a];
                }
            }
        }

        const auto& layer = params[l];
        diff::Var members = diff::gather(cur.features, group);
        diff::Var x = diff::concat({members, tape.constant(std::move(rel))});
        diff::Var h = diff::relu(apply(layer.pointwise, x));
        diff::Var pooled = diff::max_over_group(h, k);
        diff::Var f = diff::relu(apply(layer.mix, pooled));

        HierLevel next;
        next.ids.reserve(m);
        next.positions.reserve(m);
        for (std::uint32_t c : centers) {
            next.ids.push_back(cur.ids[c]);
            next.positions.push_back(cur.positions[c]);
        }
        next.features = f;
        out.levels.push_back(std::move(next));
    }
    return out;
}

} // namespace mm3d
