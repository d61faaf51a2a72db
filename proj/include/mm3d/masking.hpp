// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "mm3d/scene.hpp"
#include "mm3d/statistics.hpp"

namespace mm3d {

using Rng = std::mt19937_64;

enum class GapMode { fixed, random };

/// Strictly increasing masking ratios in (0,1) with a constant step `gap`.
struct MaskSchedule {
    std::vector<double> theta = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    double gap = 0.1;
    GapMode gap_mode = GapMode::fixed;

    std::size_t steps() const noexcept { return theta.size(); }
    void validate() const;

    /// theta = {gap, 2*gap, ..., steps*gap}.
    static MaskSchedule uniform(double gap, std::size_t steps, GapMode mode = GapMode::fixed);
};

MaskSchedule mask_schedule_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MaskSchedule& sched);

/// round((1 - theta) * n), rounding half up.
std::size_t retained_count(double theta, std::size_t n);

/// Ids ordered by D descending, ties by ascending id.
std::vector<PointId> rank_by_statistics(std::span<const float> d, std::span<const PointId> ids);
std::vector<PointId> rank_by_statistics(const StatField& field, const PointScene& scene);

/// Nested retained sets. Step 0 is the full scene; step t keeps the first
/// |s_t| ids of `ranking`, so s_t is a prefix of s_{t-1}.
class MaskedSequence {
public:
    MaskedSequence() = default;
    MaskedSequence(std::vector<PointId> ranking, std::vector<double> theta);

    std::size_t steps() const noexcept { return theta_.size(); }
    const std::vector<double>& theta() const noexcept { return theta_; }
    const std::vector<PointId>& ranking() const noexcept { return ranking_; }

    /// s_t for t in [0, steps()].
    std::span<const PointId> retained(std::size_t t) const;

    /// `{theta: [...], sets: [[ids]...]}` with one set per theta value.
    nlohmann::json to_json() const;

private:
    std::vector<PointId> ranking_;
    std::vector<double> theta_;
    std::vector<std::size_t> sizes_;
};

/// Informative-preserved sequence: masks the lowest-D points first.
/// Throws DegenerateSceneError when the last step would retain no point.
MaskedSequence build_sequence(const PointScene& scene, const StatField& field, const MaskSchedule& sched);
MaskedSequence build_sequence_from_ranking(std::vector<PointId> ranking, const MaskSchedule& sched);

/// Whether reconstruction targets a slightly less masked scene or the full one.
enum class Progression { progressive, full_scene };

struct TrainingPair {
    std::size_t step = 0;
    std::size_t target_step = 0;
    std::span<const PointId> input;
    std::span<const PointId> target;
};

/// t uniform over 1..T. Fixed gap: target s_{t-1}; random gap: target step
/// uniform over 0..t-1; Progression::full_scene: target s_0.
TrainingPair sample_training_pair(const MaskedSequence& seq, Rng& rng, const MaskSchedule& sched,
                                  Progression progression = Progression::progressive);

/// The deterministic pair for step t under the given gap rule (random gap uses t-1).
TrainingPair training_pair_at(const MaskedSequence& seq, std::size_t t,
                              Progression progression = Progression::progressive);

enum class MaskStrategy { random, informative_abandoned, informative_preserved };

const char* to_string(MaskStrategy s) noexcept;
MaskStrategy mask_strategy_from_string(const std::string& s);

/// Order in which a strategy keeps points (first kept longest).
std::vector<PointId> strategy_ranking(const PointScene& scene, const StatField& field, MaskStrategy strategy,
                                      Rng& rng);

/// Single-ratio mask for the baseline strategies: random keeps a uniform
/// sample, informative_abandoned keeps the lowest-D points.
std::vector<PointId> baseline_mask(const PointScene& scene, const StatField& field, MaskStrategy strategy,
                                   double theta, Rng& rng);

} // namespace mm3d
