// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d {

void MaskSchedule::validate() const {
    if (theta.empty()) {
        throw ConfigError("mask schedule needs at least one ratio");
    }
    if (!(gap > 0.0)) {
        throw ConfigError("mask schedule gap must be positive");
    }
    for (std::size_t t = 0; t < theta.size(); ++t) {
        if (!(theta[t] > 0.0 && theta[t] < 1.0)) {
            throw ConfigError(fmt::format("mask ratio {} outside (0,1)", theta[t]));
        }
        if (t > 0 && !(theta[t] > theta[t - 1])) {
            throw ConfigError("mask ratios must be strictly increasing");
        }
        if (t > 0 && gap_mode == GapMode::fixed && std::abs((theta[t] - theta[t - 1]) - gap) > 1e-9) {
            throw ConfigError(fmt::format("mask ratio step {} differs from gap {}", theta[t] - theta[t - 1], gap));
        }
    }
}

MaskSchedule MaskSchedule::uniform(double gap, std::size_t steps, GapMode mode) {
    MaskSchedule sched;
    sched.gap = gap;
    sched.gap_mode = mode;
    sched.theta.clear();
    for (std::size_t t = 1; t <= steps; ++t) {
        // Computed from the integer step so that e.g. 3 * 0.1 is not accumulated drift.
        sched.theta.push_back(std::round(static_cast<double>(t) * gap * 1e12) / 1e12);
    }
    sched.validate();
    return sched;
}

MaskSchedule mask_schedule_from_json(const nlohmann::json& doc) {
    MaskSchedule sched;
    try {
        sched.gap = doc.value("gap", sched.gap);
        if (doc.contains("theta")) {
            sched.theta = doc["theta"].get<std::vector<double>>();
        } else if (doc.contains("steps")) {
            sched.theta = MaskSchedule::uniform(sched.gap, doc["steps"].get<std::size_t>()).theta;
        }
        const std::string mode = doc.value("gap_mode", std::string("fixed"));
        if (mode == "fixed") {
            sched.gap_mode = GapMode::fixed;
        } else if (mode == "random") {
            sched.gap_mode = GapMode::random;
        } else {
            throw ConfigError(fmt::format("unknown gap_mode '{}'", mode));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("masking: {}", e.what()));
    }
    sched.validate();
    return sched;
}

nlohmann::json to_json(const MaskSchedule& sched) {
    return {{"theta", sched.theta},
            {"gap", sched.gap},
            {"gap_mode", sched.gap_mode == GapMode::fixed ? "fixed" : "random"}};
}

std::size_t retained_count(double theta, std::size_t n) {
    return static_cast<std::size_t>(std::floor((1.0 - theta) * static_cast<double>(n) + 0.5));
}

std::vector<PointId> rank_by_statistics(std::span<const float> d, std::span<const PointId> ids) {
    if (d.size() != ids.size()) {
        throw ContractError("rank_by_statistics: D and ids differ in length");
    }
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return d[a] > d[b] || (d[a] == d[b] && ids[a] < ids[b]);
    });
    std::vector<PointId> ranked(order.size());
    std::transform(order.begin(), order.end(), ranked.begin(), [&](std::size_t i) { return ids[i]; });
    return ranked;
}

std::vector<PointId> rank_by_statistics(const StatField& field, const PointScene& scene) {
    return rank_by_statistics(field.combined, scene.ids);
}

MaskedSequence::MaskedSequence(std::vector<PointId> ranking, std::vector<double> theta)
    : ranking_(std::move(ranking)),
      theta_(std::move(theta)) {
    sizes_.push_back(ranking_.size());
    for (double th : theta_) {
        sizes_.push_back(retained_count(th, ranking_.size()));
    }
}

std::span<const PointId> MaskedSequence::retained(std::size_t t) const {
    if (t >= sizes_.size()) {
        throw ContractError(fmt::format("mask step {} outside 0..{}", t, theta_.size()));
    }
    return {ranking_.data(), sizes_[t]};
}

nlohmann::json MaskedSequence::to_json() const {
    nlohmann::json sets = nlohmann::json::array();
    for (std::size_t t = 1; t < sizes_.size(); ++t) {
        const auto s = retained(t);
        sets.push_back(std::vector<PointId>(s.begin(), s.end()));
    }
    return {{"theta", theta_}, {"sets", sets}};
}

MaskedSequence build_sequence_from_ranking(std::vector<PointId> ranking, const MaskSchedule& sched) {
    sched.validate();
    const std::size_t last = retained_count(sched.theta.back(), ranking.size());
    if (last < 1) {
        throw DegenerateSceneError(
            fmt::format("masking ratio {} leaves no point of {}", sched.theta.back(), ranking.size()));
    }
    return MaskedSequence(std::move(ranking), sched.theta);
}

MaskedSequence build_sequence(const PointScene& scene, const StatField& field, const MaskSchedule& sched) {
    if (field.size() != scene.size()) {
        throw ContractError("build_sequence: statistics were computed on a different scene");
    }
    return build_sequence_from_ranking(rank_by_statistics(field, scene), sched);
}

namespace {

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

} // namespace

TrainingPair training_pair_at(const MaskedSequence& seq, std::size_t t, Progression progression) {
    if (t < 1 || t > seq.steps()) {
        throw ContractError(fmt::format("training step {} outside 1..{}", t, seq.steps()));
    }
    TrainingPair pair;
    pair.step = t;
    pair.target_step = progression == Progression::full_scene ? 0 : t - 1;
    pair.input = seq.retained(t);
    pair.target = seq.retained(pair.target_step);
    return pair;
}

TrainingPair sample_training_pair(const MaskedSequence& seq, Rng& rng, const MaskSchedule& sched,
                                  Progression progression) {
    if (seq.steps() == 0) {
        throw ContractError("empty masked sequence");
    }
    const std::size_t t = uniform_index(rng, 1, seq.steps());
    TrainingPair pair = training_pair_at(seq, t, progression);
    if (progression == Progression::progressive && sched.gap_mode == GapMode::random) {
        pair.target_step = uniform_index(rng, 0, t - 1);
        pair.target = seq.retained(pair.target_step);
    }
    return pair;
}

const char* to_string(MaskStrategy s) noexcept {
    switch (s) {
    case MaskStrategy::random:
        return "random";
    case MaskStrategy::informative_abandoned:
        return "informative_abandoned";
    case MaskStrategy::informative_preserved:
        return "informative_preserved";
    }
    return "?";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
    for (auto m : {MaskStrategy::random, MaskStrategy::informative_abandoned, MaskStrategy::informative_preserved}) {
        if (s == to_string(m)) {
            return m;
        }
    }
    throw ConfigError(fmt::format("unknown mask strategy '{}'", s));
}

std::vector<PointId> strategy_ranking(const PointScene& scene, const StatField& field, MaskStrategy strategy,
                                      Rng& rng) {
    switch (strategy) {
    case MaskStrategy::informative_preserved:
        return rank_by_statistics(field, scene);
    case MaskStrategy::informative_abandoned: {
        std::vector<std::size_t> order(scene.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const auto& d = field.combined;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return d[a] < d[b] || (d[a] == d[b] && scene.ids[a] < scene.ids[b]);
        });
        std::vector<PointId> ranked(order.size());
        std::transform(order.begin(), order.end(), ranked.begin(), [&](std::size_t i) { return scene.ids[i]; });
        return ranked;
    }
    case MaskStrategy::random: {
        std::vector<PointId> ranked(scene.ids);
        std::sort(ranked.begin(), ranked.end());
        std::shuffle(ranked.begin(), ranked.end(), rng);
        return ranked;
    }
    }
    throw ContractError("unknown mask strategy");
}

std::vector<PointId> baseline_mask(const PointScene& scene, const StatField& field, MaskStrategy strategy,
                                   double theta, Rng& rng) {
    if (!(theta >= 0.0 && theta < 1.0)) {
        throw ContractError(fmt::format("mask ratio {} outside [0,1)", theta));
    }
    if (field.size() != scene.size()) {
        throw ContractError("baseline_mask: statistics were computed on a different scene");
    }
    std::vector<PointId> ranked = strategy_ranking(scene, field, strategy, rng);
    ranked.resize(retained_count(theta, ranked.size()));
    return ranked;
}

} // namespace mm3d
