// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "mm3d/diff/tape.hpp"
#include "mm3d/params.hpp"
#include "mm3d/scene.hpp"

namespace mm3d {

/// Width of the level-0 point attributes: position (3) + color (3).
inline constexpr std::size_t kInputChannels = 6;

struct EncoderConfig {
    std::vector<std::size_t> channels = {32, 64, 128};
    /// Group size per point, the point itself included.
    std::size_t group_k = 8;
    std::size_t downsample = 4;

    std::size_t layers() const noexcept { return channels.size(); }
    void validate() const;
};

EncoderConfig encoder_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const EncoderConfig& cfg);

struct EncoderLayer {
    Linear pointwise; // (C_{l-1} + 3) -> C_l, applied per group member
    Linear mix;       // C_l -> C_l, applied after the group max
};

struct EncoderParams {
    std::vector<EncoderLayer> layers;

    std::vector<ParamRef> refs();
    std::vector<ConstParamRef> refs() const;
};

EncoderParams init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng);
EncoderParams zero_encoder(const EncoderConfig& cfg);
/// Throws ShapeError if the tensors do not match the configuration.
void check_encoder(const EncoderParams& params, const EncoderConfig& cfg);

struct EncoderLayerVars {
    LinearVars pointwise;
    LinearVars mix;
};

using EncoderVars = std::vector<EncoderLayerVars>;

EncoderVars bind(diff::Tape& tape, const EncoderParams& params, bool requires_grad);

struct HierLevel {
    std::vector<PointId> ids;
    std::vector<Vec3> positions;
    diff::Var features;
};

/// levels[0] is the input set with raw (position, color) attributes;
/// levels[1..L] are the encoded, progressively downsampled layers.
struct HierFeatures {
    std::vector<HierLevel> levels;

    std::size_t layers() const noexcept { return levels.empty() ? 0 : levels.size() - 1; }
};

/// Farthest-point sampling. Starts at the smallest id and repeatedly takes the
/// point farthest from the chosen set (ties by ascending id). Returns rows in
/// pick order.
std::vector<std::uint32_t> fps(std::span<const Vec3> positions, std::span<const PointId> ids, std::size_t m);

/// True if an input of n points keeps at least group_k points at every layer.
bool encoder_accepts(const EncoderConfig& cfg, std::size_t n);

/// Per layer: group each sampled point with its nearest neighbors, run a shared
/// MLP on (neighbor feature, neighbor - center), max-pool the group, mix, and
/// keep the FPS subset (ceil(N / downsample) points).
/// Throws DegenerateSceneError if a layer has fewer than group_k points.
HierFeatures encode(const PointScene& scene, std::span<const PointId> input, const EncoderVars& params,
                    const EncoderConfig& cfg, diff::Tape& tape);

} // namespace mm3d
