// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include <json.hpp>

#include "mm3d/diff/tape.hpp"
#include "mm3d/encoder.hpp"

namespace mm3d {

struct ConsistencyConfig {
    double temperature = 1.0;
    bool normalize = true;

    void validate() const;
};

ConsistencyConfig consistency_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ConsistencyConfig& cfg);

struct TeacherState {
    EncoderParams params;
    double momentum = 0.999;
};

/// Teacher starts as an exact copy of the online encoder.
TeacherState make_teacher(const EncoderParams& online, double momentum);

/// W_t <- m W_t + (1 - m) W_o, elementwise, computed in double.
void ema_update(TeacherState& teacher, const EncoderParams& online);

struct RowPair {
    std::uint32_t online;
    std::uint32_t target;

    bool operator==(const RowPair&) const = default;
};

/// pairs[l] matches rows of online.levels[l] and target.levels[l] with equal
/// ids, ordered by online row.
struct CorrespondencePairs {
    std::vector<std::vector<RowPair>> levels;
};

CorrespondencePairs match_correspondence(const HierFeatures& online, const HierFeatures& target);

struct CsdResult {
    diff::Var loss;
    /// Encoded layers (1-based) left out for having fewer than two pairs.
    std::vector<std::size_t> skipped_layers;
    std::size_t pairs_used = 0;
};

/// Info-NCE over the encoded layers (level 0 holds raw attributes and is not
/// part of the loss). Target features enter as constants on `tape`, so
/// gradients reach the online side only.
CsdResult csd_loss(const CorrespondencePairs& pairs, const HierFeatures& online, const HierFeatures& target,
                   const ConsistencyConfig& cfg, diff::Tape& tape);

/// Info-NCE for one layer given the paired feature rows directly.
diff::Var info_nce(diff::Var online_rows, diff::Var target_rows, const ConsistencyConfig& cfg);

} // namespace mm3d
