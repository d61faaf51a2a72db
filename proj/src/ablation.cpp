// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d {

namespace {

constexpr std::uint64_t kEvalSalt = 0x5851f42d4c957f2dULL;

constexpr MaskStrategy kStrategies[] = {MaskStrategy::random, MaskStrategy::informative_abandoned,
                                        MaskStrategy::informative_preserved};
constexpr Progression kProgressions[] = {Progression::progressive, Progression::full_scene};

} // namespace

void AblationConfig::validate() const {
    base.validate();
    if (seeds.empty()) {
        throw ConfigError("ablation needs at least one seed");
    }
    if (!(holdout > 0.0 && holdout < 1.0)) {
        throw ConfigError("ablation holdout must lie in (0, 1)");
    }
    if (!(base.zeta1 > 0.0)) {
        throw ConfigError("ablation compares L_PC and needs zeta1 > 0");
    }
}

AblationConfig ablation_config_from_json(const nlohmann::json& doc) {
    AblationConfig cfg;
    cfg.base = train_config_from_json(doc);
    if (doc.contains("ablation")) {
        const auto& a = doc.at("ablation");
        try {
            cfg.seeds = a.value("seeds", cfg.seeds);
            cfg.holdout = a.value("holdout", cfg.holdout);
            cfg.consistency = a.value("consistency", cfg.consistency);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(fmt::format("ablation section: {}", e.what()));
        }
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const AblationConfig& cfg) {
    nlohmann::json doc = to_json(cfg.base);
    doc["ablation"] = {{"seeds", cfg.seeds}, {"holdout", cfg.holdout}, {"consistency", cfg.consistency}};
    return doc;
}

DataSplit split_dataset(std::size_t n, double holdout, std::uint64_t seed) {
    if (n < 2) {
        throw DegenerateSceneError("a train/held-out split needs at least two scenes");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(n) + 0.5));
    const std::size_t held = std::clamp<std::size_t>(wanted, 1, n - 1);
    DataSplit split;
    split.heldout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(split.heldout.begin(), split.heldout.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

double heldout_lpc(const Trainer& trainer, std::span<const PointScene> scenes, EvalProtocol protocol,
                   std::uint64_t seed) {
    const TrainConfig& cfg = trainer.config();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const PointScene scene = prepare_scene(scenes[s], cfg);
        Rng rng(seed ^ kEvalSalt ^ (s * 0x9e3779b97f4a7c15ULL));
        try {
            if (protocol == EvalProtocol::own) {
                const StatField field = compute_statistics(scene, cfg.statistics);
                const MaskedSequence seq = strategy_sequence(scene, field, cfg, rng);
                for (std::size_t t = 1; t <= seq.steps(); ++t) {
                    const TrainingPair pair = training_pair_at(seq, t, cfg.progression);
                    total += trainer.evaluate(scene, pair.input, pair.target, nullptr).loss_pc;
                    ++count;
                }
            } else {
                for (double theta : cfg.schedule.theta) {
                    std::vector<PointId> input = scene.ids;
                    std::shuffle(input.begin(), input.end(), rng);
                    input.resize(retained_count(theta, input.size()));
                    total += trainer.evaluate(scene, input, scene.ids, nullptr).loss_pc;
                    ++count;
                }
            }
        } catch (const DegenerateSceneError& e) {
            fmt::print(stderr, "warning: held-out scene {} skipped: {}\n", s, e.what());
        }
    }
    if (count == 0) {
        throw DegenerateSceneError("no held-out scene could be evaluated");
    }
    return total / static_cast<double>(count);
}

std::string AblationCell::name() const {
    return fmt::format("{}/{}", to_string(strategy),
                       progression == Progression::progressive ? "progressive" : "non_progressive");
}

double AblationCell::mean_heldout(EvalProtocol protocol) const {
    double s = 0.0;
    for (const SeedResult& r : seeds) {
        s += protocol == EvalProtocol::own ? r.heldout_lpc : r.heldout_lpc_common;
    }
    return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
}

const AblationCell& AblationResult::cell(MaskStrategy strategy, Progression progression) const {
    for (const AblationCell& c : cells) {
        if (c.strategy == strategy && c.progression == progression) {
            return c;
        }
    }
    throw ContractError("ablation result has no such cell");
}

AblationResult run_ablation(const std::vector<PointScene>& dataset, const AblationConfig& cfg,
                            const AblationProgress& progress) {
    cfg.validate();
    std::vector<DataSplit> splits;
    for (std::uint64_t seed : cfg.seeds) {
        splits.push_back(split_dataset(dataset.size(), cfg.holdout, seed));
    }
    AblationResult result;
    for (MaskStrategy strategy : kStrategies) {
        for (Progression progression : kProgressions) {
            AblationCell cell;
            cell.strategy = strategy;
            cell.progression = progression;
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
                TrainConfig tc = cfg.base;
                tc.strategy = strategy;
                tc.progression = progression;
                tc.seed = cfg.seeds[k];
                if (!cfg.consistency) {
                    tc.zeta2 = 0.0;
                }
                std::vector<PointScene> train_set;
                std::vector<PointScene> held_set;
                for (std::size_t i : splits[k].train) {
                    train_set.push_back(dataset[i]);
                }
                for (std::size_t i : splits[k].heldout) {
                    held_set.push_back(dataset[i]);
                }
                Trainer trainer(std::move(train_set), tc);
                trainer.run();
                SeedResult r;
                r.seed = cfg.seeds[k];
                r.split = splits[k];
                r.report = trainer.report();
                r.heldout_lpc = heldout_lpc(trainer, held_set, EvalProtocol::own, r.seed);
                r.heldout_lpc_common = heldout_lpc(trainer, held_set, EvalProtocol::common, r.seed);
                cell.seeds.push_back(std::move(r));
                if (progress) {
                    progress(cell, cell.seeds.back());
                }
            }
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

nlohmann::json to_json(const AblationResult& result, const AblationConfig& cfg) {
    nlohmann::json cells = nlohmann::json::array();
    for (const AblationCell& c : result.cells) {
        nlohmann::json per_seed = nlohmann::json::array();
        for (const SeedResult& r : c.seeds) {
            nlohmann::json epochs = nlohmann::json::array();
            for (const EpochLoss& e : r.report.rows) {
                epochs.push_back({{"epoch", e.epoch}, {"loss_pc", e.loss_pc}, {"loss_csd", e.loss_csd},
                                  {"loss_total", e.loss_total}});
            }
            per_seed.push_back({{"seed", r.seed},
                                {"train_scenes", r.split.train},
                                {"heldout_scenes", r.split.heldout},
                                {"heldout_lpc", r.heldout_lpc},
                                {"heldout_lpc_common", r.heldout_lpc_common},
                                {"skipped_samples", r.report.skipped_samples},
                                {"losses", epochs}});
        }
        cells.push_back({{"name", c.name()},
                         {"strategy", to_string(c.strategy)},
                         {"progressive", c.progression == Progression::progressive},
                         {"seeds", cfg.seeds},
                         {"mean_heldout_lpc", c.mean_heldout(EvalProtocol::own)},
                         {"mean_heldout_lpc_common", c.mean_heldout(EvalProtocol::common)},
                         {"per_seed", per_seed}});
    }
    return {{"config", to_json(cfg)}, {"cells", cells}};
}

} // namespace mm3d
