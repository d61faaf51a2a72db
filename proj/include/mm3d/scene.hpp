// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace mm3d {

using Vec3 = std::array<float, 3>;
using PointId = std::uint32_t;

/// Positions (meters), colors in [0,1] and stable ids, one row per point.
struct PointScene {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    std::vector<PointId> ids;

    std::size_t size() const noexcept { return positions.size(); }

    /// Throws ContractError when the type invariants do not hold.
    void validate() const;

    static PointScene from_positions(std::vector<Vec3> positions, Vec3 color = {0.5f, 0.5f, 0.5f});
};

/// Scene rows holding the given ids, in the order of `ids`.
/// Throws ContractError for an id that is not in the scene.
std::vector<std::size_t> rows_for_ids(const PointScene& scene, std::span<const PointId> ids);

/// Reads an ASCII PLY with float x,y,z and uchar red,green,blue vertex properties.
/// Ids are assigned 0..N-1 in file order.
PointScene load_ply(const std::filesystem::path& path);
PointScene parse_ply(const std::string& text);

/// Writes an ASCII PLY in ascending id order; colors are quantized as floor(c*255 + 0.5).
void save_ply(const PointScene& scene, const std::filesystem::path& path);
std::string format_ply(const PointScene& scene);

std::uint8_t quantize_color(float c) noexcept;

/// Centers the scene at its centroid and scales it into the unit ball.
PointScene normalize_scene(const PointScene& scene);

enum class ShapeKind { box, cylinder };

struct SynthObject {
    ShapeKind shape = ShapeKind::box;
    /// box: extents along x,y,z. cylinder: diameter, (ignored), height.
    Vec3 size = {1.0f, 1.0f, 1.0f};
    /// Center of the footprint on the floor plane.
    Vec3 position = {0.0f, 0.0f, 0.0f};
    Vec3 color = {0.8f, 0.2f, 0.2f};
};

struct SynthSpec {
    /// Side length of the square floor centered at the origin, z = 0.
    float floor_extent = 4.0f;
    Vec3 floor_color = {0.5f, 0.5f, 0.5f};
    std::vector<SynthObject> objects;
    /// Points per square meter.
    float density = 100.0f;
    std::uint64_t seed = 0;

    void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SynthSpec& spec);

/// Uniform random surface sampling of a floor plane and the exposed faces
/// of the objects standing on it. Floor points under object footprints are
/// not generated. Deterministic in `spec.seed`.
PointScene synth_scene(const SynthSpec& spec);

/// Exposed surface area of an object (box: top and four sides; cylinder: top and mantle).
double exposed_area(const SynthObject& object);

/// A floor with one to three non-overlapping boxes or cylinders of random
/// size and color, with density chosen for about `target_points` points.
SynthSpec random_synth_spec(std::uint64_t seed, std::size_t target_points);

} // namespace mm3d
