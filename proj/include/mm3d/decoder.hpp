// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "mm3d/diff/tape.hpp"
#include "mm3d/encoder.hpp"
#include "mm3d/params.hpp"

namespace mm3d {

struct DecoderConfig {
    std::size_t hidden = 32;
    /// Side scale of the 2D folding lattice.
    float grid_scale = 0.05f;

    void validate() const;
};

DecoderConfig decoder_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DecoderConfig& cfg);

/// r points of a ceil(sqrt(r)) x ceil(sqrt(r)) lattice over [-1,1]^2, row-major,
/// truncated to r and scaled by `scale`. Stored as an (r x 2) tensor.
struct FoldingGrid {
    diff::Tensor points;

    std::size_t size() const noexcept { return points.rows(); }
};

FoldingGrid make_folding_grid(std::size_t r, float scale);

/// Copies per point needed for N points to cover `target` points.
std::size_t duplication_factor(std::size_t target, std::size_t n);

/// One Ψ: three linear layers with ReLU between them, linear output.
struct Mlp3 {
    Linear l1, l2, l3;
};

struct DecoderLayer {
    Mlp3 psi1; // (C_l + 2) -> h -> h -> h
    Mlp3 psi2; // (C_l + h) -> h -> h -> 3
};

struct DecoderParams {
    std::vector<DecoderLayer> layers;

    std::vector<ParamRef> refs();
    std::vector<ConstParamRef> refs() const;
};

DecoderParams init_decoder(const DecoderConfig& cfg, const EncoderConfig& enc, std::mt19937_64& rng);
DecoderParams zero_decoder(const DecoderConfig& cfg, const EncoderConfig& enc);
void check_decoder(const DecoderParams& params, const DecoderConfig& cfg, const EncoderConfig& enc);

struct Mlp3Vars {
    LinearVars l1, l2, l3;
};

struct DecoderLayerVars {
    Mlp3Vars psi1;
    Mlp3Vars psi2;
};

using DecoderVars = std::vector<DecoderLayerVars>;

DecoderVars bind(diff::Tape& tape, const DecoderParams& params, bool requires_grad);

struct LayerPrediction {
    diff::Var points;  // (N_l * r_l) x 3
    diff::Var offsets; // same shape
};

/// Per encoded layer 1..L, in order.
struct ReconPrediction {
    std::vector<LayerPrediction> layers;
};

/// Grids are per encoded layer (hier.levels[1..L]).
ReconPrediction expand_and_fold(const HierFeatures& hier, const DecoderVars& params, std::span<const FoldingGrid> grids,
                                diff::Tape& tape);

/// Grids sized so every layer covers `target_size` points.
std::vector<FoldingGrid> grids_for(const HierFeatures& hier, std::size_t target_size, const DecoderConfig& cfg);

/// Symmetric chamfer distance with squared Euclidean terms, each direction
/// averaged. Differentiable w.r.t. both arguments; nearest-match ties go to
/// the lower row.
diff::Var chamfer(diff::Var a, diff::Var b);

/// Sum over layers of chamfer(prediction, target).
diff::Var loss_pc(const ReconPrediction& pred, diff::Var target);

/// Writes a predicted point set as a gray PLY.
void export_prediction(const std::filesystem::path& path, const diff::Tensor& points);

} // namespace mm3d
