// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/gradsuite.hpp"

#include <random>

#include "mm3d/consistency.hpp"
#include "mm3d/decoder.hpp"
#include "mm3d/diff/gradcheck.hpp"
#include "mm3d/diff/ops.hpp"
#include "mm3d/encoder.hpp"
#include "mm3d/masking.hpp"

namespace mm3d {

namespace {

using diff::Tensor;
using diff::Var;

Tensor uniform_tensor(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t({r, c});
    for (double& x : t.values()) {
        x = static_cast<float>(u(rng));
    }
    return t;
}

// Entries with |x| in [0.2, 1].
Tensor away_from_zero(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t = uniform_tensor(rng, r, c, 0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (double& x : t.values()) {
        x = sign(rng) ? x : -x;
    }
    return t;
}

// Reduces any output to a scalar with generic gradients.
Var weigh(Var x, const Tensor& w) { return diff::sum(diff::mul(x, x.tape().constant(w))); }

PointScene random_scene(Rng& rng, std::size_t n) {
    std::uniform_real_distribution<float> pos(-1.0f, 1.0f);
    std::uniform_real_distribution<float> col(0.0f, 1.0f);
    PointScene scene;
    for (std::size_t i = 0; i < n; ++i) {
        scene.positions.push_back({pos(rng), pos(rng), pos(rng)});
        scene.colors.push_back({col(rng), col(rng), col(rng)});
        scene.ids.push_back(static_cast<PointId>(i));
    }
    return scene;
}

void randomize_biases(std::vector<ParamRef> refs, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (const ParamRef& r : refs) {
        if (r.name.ends_with(".bias")) {
            for (double& x : r.tensor->values()) {
                x = static_cast<float>(u(rng));
            }
        }
    }
}

} // namespace

const char* to_string(PipelineLoss loss) noexcept {
    return loss == PipelineLoss::reconstruction ? "encode_decode_lpc" : "encode_csd";
}

std::vector<GradcheckEntry> primitive_gradchecks(std::uint64_t seed, double eps) {
    Rng rng(seed);
    const Tensor a = away_from_zero(rng, 6, 4);
    const Tensor b = away_from_zero(rng, 6, 4);
    const Tensor c = away_from_zero(rng, 4, 3);
    const Tensor bias = away_from_zero(rng, 1, 4);
    const Tensor w64 = uniform_tensor(rng, 6, 4, -1.0, 1.0);
    const Tensor w68 = uniform_tensor(rng, 6, 8, -1.0, 1.0);
    const Tensor w63 = uniform_tensor(rng, 6, 3, -1.0, 1.0);
    const Tensor w44 = uniform_tensor(rng, 4, 4, -1.0, 1.0);
    const Tensor w46 = uniform_tensor(rng, 4, 6, -1.0, 1.0);
    const Tensor w24 = uniform_tensor(rng, 2, 4, -1.0, 1.0);
    const Tensor w34 = uniform_tensor(rng, 3, 4, -1.0, 1.0);
    const Tensor w61 = uniform_tensor(rng, 6, 1, -1.0, 1.0);
    const Tensor pa = uniform_tensor(rng, 7, 3, -1.0, 1.0);
    const Tensor pb = uniform_tensor(rng, 9, 3, -1.0, 1.0);
    const Tensor ta = uniform_tensor(rng, 5, 4, -1.0, 1.0);
    const Tensor tb = uniform_tensor(rng, 5, 4, -1.0, 1.0);

    std::vector<GradcheckEntry> out;
    auto check = [&](const char* name, const diff::ScalarFn& f, std::vector<Tensor> inputs) {
        out.push_back({name, seed, diff::gradcheck(f, inputs, eps).max_rel_error});
    };
    check("matmul", [&](auto v) { return weigh(diff::matmul(v[0], v[1]), w63); }, {a, c});
    check("add", [&](auto v) { return weigh(diff::add(v[0], v[1]), w64); }, {a, b});
    check("add_rowwise", [&](auto v) { return weigh(diff::add_rowwise(v[0], v[1]), w64); }, {a, bias});
    check("sub", [&](auto v) { return weigh(diff::sub(v[0], v[1]), w64); }, {a, b});
    check("mul", [&](auto v) { return weigh(diff::mul(v[0], v[1]), w64); }, {a, b});
    check("scale", [&](auto v) { return weigh(diff::scale(v[0], -2.5), w64); }, {a});
    check("concat", [&](auto v) { return weigh(diff::concat({v[0], v[1]}), w68); }, {a, b});
    check("relu", [&](auto v) { return weigh(diff::relu(v[0]), w64); }, {a});
    check("gather", [&](auto v) { return weigh(diff::gather(v[0], {5, 0, 2, 2}), w44); }, {a});
    check("max_over_segments", [&](auto v) { return weigh(diff::max_over_segments(v[0], {0, 1, 4, 6}), w34); }, {a});
    check("max_over_group", [&](auto v) { return weigh(diff::max_over_group(v[0], 3), w24); }, {a});
    check("sum", [&](auto v) { return diff::sum(v[0]); }, {a});
    check("logsumexp", [&](auto v) { return weigh(diff::logsumexp(v[0]), w61); }, {a});
    check("transpose", [&](auto v) { return weigh(diff::transpose(v[0]), w46); }, {a});
    check("normalize_rows", [&](auto v) { return weigh(diff::normalize_rows(v[0]), w64); }, {a});
    check("chamfer", [&](auto v) { return chamfer(v[0], v[1]); }, {pa, pb});
    check("info_nce", [&](auto v) { return info_nce(v[0], v[1], ConsistencyConfig{}); }, {ta, tb});
    return out;
}

GradcheckEntry pipeline_gradcheck(PipelineLoss loss, std::uint64_t seed, const PipelineCheckOptions& opt) {
    Rng rng(seed);
    const PointScene scene = random_scene(rng, opt.points);
    EncoderConfig ec;
    ec.channels = {4, 8};
    ec.group_k = 4;
    ec.downsample = 2;
    DecoderConfig dc;
    dc.hidden = 4;
    EncoderParams ep = init_encoder(ec, rng);
    DecoderParams dp = init_decoder(dc, ec, rng);
    randomize_biases(ep.refs(), rng);
    randomize_biases(dp.refs(), rng);
    const EncoderParams teacher = ep;

    std::vector<PointId> input(scene.ids.begin(), scene.ids.begin() + static_cast<std::ptrdiff_t>(opt.points * 3 / 4));
    std::vector<Tensor> inputs;
    for (const ParamRef& r : ep.refs()) {
        inputs.push_back(*r.tensor);
    }
    const std::size_t encoder_inputs = inputs.size();
    if (loss == PipelineLoss::reconstruction) {
        for (const ParamRef& r : dp.refs()) {
            inputs.push_back(*r.tensor);
        }
    }
    Tensor target({scene.size(), 3});
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            target(i, c) = scene.positions[i][c];
        }
    }

    const auto f = [&](std::span<const Var> v) -> Var {
        diff::Tape& tape = v[0].tape();
        EncoderVars ev;
        for (std::size_t l = 0; l < ec.layers(); ++l) {
            ev.push_back({{v[4 * l], v[4 * l + 1]}, {v[4 * l + 2], v[4 * l + 3]}});
        }
        const HierFeatures hier = encode(scene, input, ev, ec, tape);
        if (loss == PipelineLoss::reconstruction) {
            DecoderVars dv;
            std::size_t o = encoder_inputs;
            for (std::size_t l = 0; l < ec.layers(); ++l) {
                DecoderLayerVars d;
                for (Mlp3Vars* m : {&d.psi1, &d.psi2}) {
                    for (LinearVars* lin : {&m->l1, &m->l2, &m->l3}) {
                        lin->weight = v[o++];
                        lin->bias = v[o++];
                    }
                }
                dv.push_back(d);
            }
            const auto grids = grids_for(hier, scene.size(), dc);
            return loss_pc(expand_and_fold(hier, dv, grids, tape), tape.constant(target));
        }
        diff::Tape teacher_tape;
        const HierFeatures th = encode(scene, scene.ids, bind(teacher_tape, teacher, false), ec, teacher_tape);
        return csd_loss(match_correspondence(hier, th), hier, th, ConsistencyConfig{}, tape).loss;
    };
    return {to_string(loss), seed, diff::gradcheck(f, inputs, opt.eps).max_rel_error};
}

std::vector<GradcheckEntry> gradcheck_suite(const std::vector<std::uint64_t>& seeds, const PipelineCheckOptions& opt) {
    std::vector<GradcheckEntry> out;
    for (std::uint64_t seed : seeds) {
        for (GradcheckEntry& e : primitive_gradchecks(seed, opt.eps)) {
            out.push_back(std::move(e));
        }
        out.push_back(pipeline_gradcheck(PipelineLoss::reconstruction, seed, opt));
        out.push_back(pipeline_gradcheck(PipelineLoss::consistency, seed, opt));
    }
    return out;
}

} // namespace mm3d
