// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/decoder.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mm3d/diff/ops.hpp"
#include "mm3d/error.hpp"
#include "mm3d/parallel.hpp"
#include "mm3d/scene.hpp"
#include "mm3d/spatial.hpp"

namespace mm3d {

void DecoderConfig::validate() const {
    if (hidden == 0) {
        throw ConfigError("decoder hidden width must be positive");
    }
    if (!(grid_scale > 0.0f) || !std::isfinite(grid_scale)) {
        throw ConfigError("decoder grid_scale must be positive");
    }
}

DecoderConfig decoder_config_from_json(const nlohmann::json& doc) {
    DecoderConfig cfg;
    try {
        cfg.hidden = doc.value("hidden", cfg.hidden);
        cfg.grid_scale = doc.value("grid_scale", cfg.grid_scale);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("decoder: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const DecoderConfig& cfg) {
    return {{"hidden", cfg.hidden}, {"grid_scale", cfg.grid_scale}};
}

FoldingGrid make_folding_grid(std::size_t r, float scale) {
    if (r < 1) {
        throw ContractError("folding grid needs at least one point");
    }
    std::size_t side = 1;
    while (side * side < r) {
        ++side;
    }
    FoldingGrid grid{diff::Tensor({r, 2})};
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t row = i / side;
        const std::size_t col = i % side;
        auto coord = [&](std::size_t j) {
            return side == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(side - 1);
        };
        grid.points(i, 0) = static_cast<float>(coord(col) * scale);
        grid.points(i, 1) = static_cast<float>(coord(row) * scale);
    }
    return grid;
}

std::size_t duplication_factor(std::size_t target, std::size_t n) {
    if (n == 0) {
        throw ContractError("duplication factor of an empty layer");
    }
    return std::max<std::size_t>(1, (target + n - 1) / n);
}

namespace {

Mlp3 init_mlp(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    Mlp3 mlp;
    mlp.l1 = init_linear(in, hidden, rng);
    mlp.l2 = init_linear(hidden, hidden, rng);
    mlp.l3 = init_linear(hidden, out, rng);
    return mlp;
}

Mlp3 zero_mlp(std::size_t in, std::size_t hidden, std::size_t out) {
    return Mlp3{zero_linear(in, hidden), zero_linear(hidden, hidden), zero_linear(hidden, out)};
}

Mlp3Vars bind_mlp(diff::Tape& tape, const Mlp3& mlp, bool requires_grad) {
    return {bind(tape, mlp.l1, requires_grad), bind(tape, mlp.l2, requires_grad), bind(tape, mlp.l3, requires_grad)};
}

diff::Var run(const Mlp3Vars& mlp, diff::Var x) {
    x = diff::relu(apply(mlp.l1, x));
    x = diff::relu(apply(mlp.l2, x));
    return apply(mlp.l3, x);
}

void add_refs(std::vector<ParamRef>& out, const std::string& prefix, Mlp3& mlp) {
    Linear* parts[] = {&mlp.l1, &mlp.l2, &mlp.l3};
    for (int i = 0; i < 3; ++i) {
        out.push_back({fmt::format("{}.{}.weight", prefix, i), &parts[i]->weight});
        out.push_back({fmt::format("{}.{}.bias", prefix, i), &parts[i]->bias});
    }
}

std::vector<Vec3> to_points(const diff::Tensor& t) {
    std::vector<Vec3> pts(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        pts[i] = {static_cast<float>(t(i, 0)), static_cast<float>(t(i, 1)), static_cast<float>(t(i, 2))};
    }
    return pts;
}

// For each query point, the row of its nearest point in `ref` (ties to lower row).
double squared_distance(const diff::Tensor& a, std::size_t i, const diff::Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

// The grid ranks candidates on float copies; the few best are re-ranked on
// the double values so the match is the true nearest of the tensor entries.
std::vector<std::uint32_t> nearest_rows(const diff::Tensor& queries, const diff::Tensor& ref) {
    constexpr std::size_t kCandidates = 8;
    const std::vector<Vec3> q = to_points(queries);
    const std::vector<Vec3> r = to_points(ref);
    std::vector<std::uint32_t> out(q.size());
    const spatial::PointGrid grid(r);
    parallel_for(q.size(), [&](std::size_t begin, std::size_t end) {
        std::vector<spatial::Neighbor> cand;
        for (std::size_t i = begin; i < end; ++i) {
            grid.knn(q[i], kCandidates, spatial::PointGrid::npos, cand);
            std::uint32_t best = cand[0].row;
            double best_d = squared_distance(queries, i, ref, best);
            for (std::size_t c = 1; c < cand.size(); ++c) {
                const double d = squared_distance(queries, i, ref, cand[c].row);
                if (d < best_d || (d == best_d && cand[c].row < best)) {
                    best = cand[c].row;
                    best_d = d;
                }
            }
            out[i] = best;
        }
    });
    return out;
}

} // namespace

std::vector<ParamRef> DecoderParams::refs() {
    std::vector<ParamRef> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        add_refs(out, fmt::format("decoder.{}.psi1", l), layers[l].psi1);
        add_refs(out, fmt::format("decoder.{}.psi2", l), layers[l].psi2);
    }
    return out;
}

std::vector<ConstParamRef> DecoderParams::refs() const {
    std::vector<ConstParamRef> out;
    for (auto& r : const_cast<DecoderParams*>(this)->refs()) {
        out.push_back({r.name, r.tensor});
    }
    return out;
}

DecoderParams init_decoder(const DecoderConfig& cfg, const EncoderConfig& enc, std::mt19937_64& rng) {
    cfg.validate();
    enc.validate();
    DecoderParams params;
    for (std::size_t c : enc.channels) {
        DecoderLayer layer;
        layer.psi1 = init_mlp(c + 2, cfg.hidden, cfg.hidden, rng);
        layer.psi2 = init_mlp(c + cfg.hidden, cfg.hidden, 3, rng);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

DecoderParams zero_decoder(const DecoderConfig& cfg, const EncoderConfig& enc) {
    cfg.validate();
    enc.validate();
    DecoderParams params;
    for (std::size_t c : enc.channels) {
        params.layers.push_back({zero_mlp(c + 2, cfg.hidden, cfg.hidden), zero_mlp(c + cfg.hidden, cfg.hidden, 3)});
    }
    return params;
}

void check_decoder(const DecoderParams& params, const DecoderConfig& cfg, const EncoderConfig& enc) {
    const DecoderParams expected = zero_decoder(cfg, enc);
    const auto want = expected.refs();
    const auto have = params.refs();
    if (want.size() != have.size()) {
        throw ShapeError(fmt::format("decoder has {} tensors, configuration needs {}", have.size(), want.size()));
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].tensor->shape() != have[i].tensor->shape()) {
            throw ShapeError(fmt::format("{}: shape {} but configuration needs {}", want[i].name,
                                         diff::shape_string(have[i].tensor->shape()),
                                         diff::shape_string(want[i].tensor->shape())));
        }
    }
}

DecoderVars bind(diff::Tape& tape, const DecoderParams& params, bool requires_grad) {
    DecoderVars vars;
    for (const auto& layer : params.layers) {
        vars.push_back({bind_mlp(tape, layer.psi1, requires_grad), bind_mlp(tape, layer.psi2, requires_grad)});
    }
    return vars;
}

ReconPrediction expand_and_fold(const HierFeatures& hier, const DecoderVars& params, std::span<const FoldingGrid> grids,
                                diff::Tape& tape) {
    const std::size_t layers = hier.layers();
    if (params.size() != layers || grids.size() != layers) {
        throw ShapeError(fmt::format("decoder: {} encoded layers, {} decoder layers, {} grids", layers, params.size(),
                                     grids.size()));
    }
    ReconPrediction pred;
    for (std::size_t l = 0; l < layers; ++l) {
        const HierLevel& level = hier.levels[l + 1];
        const std::size_t n = level.ids.size();
        const std::size_t r = grids[l].size();
        const auto& p = params[l];
        if (p.psi1.l1.weight.rows() != level.features.cols() + 2) {
            throw ShapeError(fmt::format("decoder layer {}: features have {} channels, Ψ1 expects {}", l + 1,
                                         level.features.cols(), p.psi1.l1.weight.rows() - 2));
        }

        std::vector<std::uint32_t> repeat(n * r);
        diff::Tensor lattice({n * r, 2});
        diff::Tensor base({n * r, 3});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < r; ++j) {
                const std::size_t row = i * r + j;
                repeat[row] = static_cast<std::uint32_t>(i);
                lattice(row, 0) = grids[l].points(j, 0);
                lattice(row, 1) = grids[l].points(j, 1);
                for (int a = 0; a < 3; ++a) {
                    base(row, a) = level.positions[i][a];
                }
            }
        }
        diff::Var f = diff::gather(level.features, std::move(repeat));
        diff::Var folded = run(p.psi1, diff::concat({f, tape.constant(std::move(lattice))}));
        diff::Var offsets = run(p.psi2, diff::concat({f, folded}));
        diff::Var points = diff::add(tape.constant(std::move(base)), offsets);
        pred.layers.push_back({points, offsets});
    }
    return pred;
}

std::vector<FoldingGrid> grids_for(const HierFeatures& hier, std::size_t target_size, const DecoderConfig& cfg) {
    std::vector<FoldingGrid> grids;
    for (std::size_t l = 1; l < hier.levels.size(); ++l) {
        grids.push_back(make_folding_grid(duplication_factor(target_size, hier.levels[l].ids.size()), cfg.grid_scale));
    }
    return grids;
}

diff::Var chamfer(diff::Var a, diff::Var b) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
        throw ContractError("chamfer: arguments must live on one tape");
    }
    if (a.cols() != 3 || b.cols() != 3) {
        throw ShapeError(fmt::format("chamfer: expected point sets with 3 columns, got {} and {}",
                                     diff::shape_string(a.shape()), diff::shape_string(b.shape())));
    }
    std::vector<std::uint32_t> a_to_b = nearest_rows(a.value(), b.value());
    std::vector<std::uint32_t> b_to_a = nearest_rows(b.value(), a.value());

    auto matched_sum = [](const diff::Tensor& from, const diff::Tensor& to, const std::vector<std::uint32_t>& match) {
        double s = 0.0;
        for (std::size_t i = 0; i < match.size(); ++i) {
            s += squared_distance(from, i, to, match[i]);
        }
        return s;
    };
    const double sa = matched_sum(a.value(), b.value(), a_to_b);
    const double sb = matched_sum(b.value(), a.value(), b_to_a);
    const double na = static_cast<double>(a.rows());
    const double nb = static_cast<double>(b.rows());
    const double value = sa / na + sb / nb;

    return a.tape().record(
        "chamfer", diff::Tensor::scalar(value), {a, b},
        [a_to_b = std::move(a_to_b), b_to_a = std::move(b_to_a), na, nb](const diff::BackwardContext& ctx) {
            const diff::Tensor& va = *ctx.in_values[0];
            const diff::Tensor& vb = *ctx.in_values[1];
            const double g = ctx.out_grad(0, 0);
            // d/dx ||x - y||^2 = 2 (x - y); each pair contributes to both of its points.
            auto spread = [&](const diff::Tensor& from, const diff::Tensor& to, const std::vector<std::uint32_t>& match,
                              double weight, diff::Tensor* grad_from, diff::Tensor* grad_to) {
                for (std::size_t i = 0; i < match.size(); ++i) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        const double d = 2.0 * weight * (from(i, c) - to(match[i], c));
                        if (grad_from) {
                            (*grad_from)(i, c) += d;
                        }
                        if (grad_to) {
                            (*grad_to)(match[i], c) -= d;
                        }
                    }
                }
            };
            spread(va, vb, a_to_b, g / na, ctx.in_grads[0], ctx.in_grads[1]);
            spread(vb, va, b_to_a, g / nb, ctx.in_grads[1], ctx.in_grads[0]);
        });
}

diff::Var loss_pc(const ReconPrediction& pred, diff::Var target) {
    if (pred.layers.empty()) {
        throw ContractError("loss_pc: empty prediction");
    }
    diff::Var total = chamfer(pred.layers[0].points, target);
    for (std::size_t l = 1; l < pred.layers.size(); ++l) {
        total = diff::add(total, chamfer(pred.layers[l].points, target));
    }
    return total;
}

void export_prediction(const std::filesystem::path& path, const diff::Tensor& points) {
    if (points.cols() != 3) {
        throw ShapeError("export_prediction: expected an (n x 3) tensor");
    }
    save_ply(PointScene::from_positions(to_points(points)), path);
}

} // namespace mm3d
