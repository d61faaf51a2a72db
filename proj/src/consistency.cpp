// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/consistency.hpp"

#include <cmath>
#include <unordered_map>

#include <fmt/format.h>

#include "mm3d/diff/ops.hpp"
#include "mm3d/error.hpp"

namespace mm3d {

void ConsistencyConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("temperature must be positive");
    }
}

ConsistencyConfig consistency_config_from_json(const nlohmann::json& doc) {
    ConsistencyConfig cfg;
    try {
        cfg.temperature = doc.value("temperature", cfg.temperature);
        cfg.normalize = doc.value("normalize", cfg.normalize);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("consistency: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const ConsistencyConfig& cfg) {
    return {{"temperature", cfg.temperature}, {"normalize", cfg.normalize}};
}

TeacherState make_teacher(const EncoderParams& online, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) {
        throw ConfigError(fmt::format("EMA momentum {} outside [0, 1]", momentum));
    }
    return TeacherState{online, momentum};
}

void ema_update(TeacherState& teacher, const EncoderParams& online) {
    auto dst = teacher.params.refs();
    const auto src = online.refs();
    if (dst.size() != src.size()) {
        throw ContractError("ema_update: teacher and online encoders differ in layout");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].tensor->shape() != src[i].tensor->shape()) {
            throw ContractError(fmt::format("ema_update: {} shapes differ", dst[i].name));
        }
    }
    const double m = teacher.momentum;
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto w = dst[i].tensor->values();
        const auto o = src[i].tensor->values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] = static_cast<float>(m * w[j] + (1.0 - m) * o[j]);
        }
    }
}

CorrespondencePairs match_correspondence(const HierFeatures& online, const HierFeatures& target) {
    CorrespondencePairs out;
    const std::size_t levels = std::min(online.levels.size(), target.levels.size());
    out.levels.resize(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        std::unordered_map<PointId, std::uint32_t> where;
        const auto& tids = target.levels[l].ids;
        where.reserve(tids.size());
        for (std::size_t j = 0; j < tids.size(); ++j) {
            where.emplace(tids[j], static_cast<std::uint32_t>(j));
        }
        const auto& oids = online.levels[l].ids;
        for (std::size_t i = 0; i < oids.size(); ++i) {
            if (auto it = where.find(oids[i]); it != where.end()) {
                out.levels[l].push_back({static_cast<std::uint32_t>(i), it->second});
            }
        }
    }
    return out;
}

diff::Var info_nce(diff::Var online_rows, diff::Var target_rows, const ConsistencyConfig& cfg) {
    cfg.validate();
    if (online_rows.shape() != target_rows.shape()) {
        throw ShapeError(fmt::format("info_nce: online {} vs target {}", diff::shape_string(online_rows.shape()),
                                     diff::shape_string(target_rows.shape())));
    }
    if (cfg.normalize) {
        online_rows = diff::normalize_rows(online_rows);
        target_rows = diff::normalize_rows(target_rows);
    }
    const double inv_tau = 1.0 / cfg.temperature;
    // -log softmax of the diagonal: logsumexp over each row minus the positive logit.
    diff::Var logits = diff::scale(diff::matmul(online_rows, diff::transpose(target_rows)), inv_tau);
    diff::Var positives = diff::scale(diff::sum(diff::mul(online_rows, target_rows)), inv_tau);
    return diff::sub(diff::sum(diff::logsumexp(logits)), positives);
}

CsdResult csd_loss(const CorrespondencePairs& pairs, const HierFeatures& online, const HierFeatures& target,
                   const ConsistencyConfig& cfg, diff::Tape& tape) {
    cfg.validate();
    CsdResult result;
    const std::size_t levels = std::min({pairs.levels.size(), online.levels.size(), target.levels.size()});
    for (std::size_t l = 1; l < levels; ++l) {
        const auto& layer_pairs = pairs.levels[l];
        if (layer_pairs.size() < 2) {
            result.skipped_layers.push_back(l);
            continue;
        }
        std::vector<std::uint32_t> orows, trows;
        orows.reserve(layer_pairs.size());
        trows.reserve(layer_pairs.size());
        for (const RowPair& p : layer_pairs) {
            orows.push_back(p.online);
            trows.push_back(p.target);
        }
        diff::Var f = diff::gather(online.levels[l].features, std::move(orows));
        // Detach: the target side is copied in as a constant of this tape.
        diff::Var t = tape.constant(diff::gather(target.levels[l].features, std::move(trows)).value());
        diff::Var term = info_nce(f, t, cfg);
        result.loss = result.loss.valid() ? diff::add(result.loss, term) : term;
        result.pairs_used += layer_pairs.size();
    }
    if (!result.loss.valid()) {
        result.loss = tape.constant(diff::Tensor::scalar(0.0));
    }
    return result;
}

} // namespace mm3d
