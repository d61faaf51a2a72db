// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mm3d/trainer.hpp"

namespace mm3d {

struct AblationConfig {
    /// Strategy and progression are overridden per cell; everything else is shared.
    TrainConfig base;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    double holdout = 0.2;
    /// Train the cells with L_CSD as well; off by default so the cells differ only in masking.
    bool consistency = false;

    void validate() const;
};

/// Reads the "ablation" section of a config document; the rest is the TrainConfig.
AblationConfig ablation_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const AblationConfig& cfg);

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};

/// Seeded shuffle of scene indices; round(holdout * n) scenes (at least one,
/// leaving at least one for training) are held out. Both lists are sorted.
DataSplit split_dataset(std::size_t n, double holdout, std::uint64_t seed);

/// Held-out protocols. own: every step t = 1..T of the cell's own sequence with
/// its own target rule. common: a random mask at ratio theta_t reconstructing
/// the full scene, identical for every cell.
enum class EvalProtocol { own, common };

/// Mean L_PC over scenes and steps with the trainer's current weights.
double heldout_lpc(const Trainer& trainer, std::span<const PointScene> scenes, EvalProtocol protocol,
                   std::uint64_t seed);

struct SeedResult {
    std::uint64_t seed = 0;
    DataSplit split;
    LossReport report;
    double heldout_lpc = 0.0;
    double heldout_lpc_common = 0.0;
};

struct AblationCell {
    MaskStrategy strategy = MaskStrategy::informative_preserved;
    Progression progression = Progression::progressive;
    std::vector<SeedResult> seeds;

    std::string name() const;
    double mean_heldout(EvalProtocol protocol) const;
};

struct AblationResult {
    std::vector<AblationCell> cells;

    const AblationCell& cell(MaskStrategy strategy, Progression progression) const;
};

/// Called after each (cell, seed) run.
using AblationProgress = std::function<void(const AblationCell&, const SeedResult&)>;

/// {random, informative_abandoned, informative_preserved} x {progressive, full_scene},
/// each trained once per seed on that seed's split with an identical budget.
AblationResult run_ablation(const std::vector<PointScene>& dataset, const AblationConfig& cfg,
                            const AblationProgress& progress = {});

nlohmann::json to_json(const AblationResult& result, const AblationConfig& cfg);

} // namespace mm3d
