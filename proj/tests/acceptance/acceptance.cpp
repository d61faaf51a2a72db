// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

// Runs the acceptance criteria A1-A7 and prints one PASS/FAIL line per criterion.
// Usage: acceptance [A1 A2 ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mm3d/ablation.hpp"
#include "mm3d/diff/ops.hpp"
#include "mm3d/gradsuite.hpp"
#include "mm3d/trainer.hpp"
#include "oracles.hpp"

using namespace mm3d;
using mm3d::diff::Tape;
using mm3d::diff::Tensor;
using mm3d::diff::Var;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor as_tensor(const std::vector<Vec3>& pts) {
    Tensor t({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            t(i, c) = pts[i][c];
        }
    }
    return t;
}

std::vector<PointScene> synthetic_dataset(std::uint64_t first_seed, std::size_t count, std::size_t points) {
    std::vector<PointScene> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(synth_scene(random_synth_spec(first_seed + i, points)));
    }
    return out;
}

// A1: exact KNN and FPS, chamfer within 1e-6, against brute force.
Outcome a1() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::size_t knn_bad = 0, fps_bad = 0, chamfer_bad = 0;
    double chamfer_worst = 0.0;
    for (std::size_t f = 1; f <= 50; ++f) {
        const std::size_t n = 40 * f;
        const bool lattice = f % 3 == 0;
        PointScene scene = oracle::random_scene(rng, n, true);
        if (lattice) {
            scene.positions = oracle::lattice_points(rng, n, 12);
        }
        const std::size_t k = 16;
        const NeighborIndex idx = knn_exact(scene, k);
        const std::vector<std::uint32_t> keys(scene.ids.begin(), scene.ids.end());
        for (std::size_t q = 0; q < n; ++q) {
            const auto expected = oracle::knn(scene.positions, keys, q, k);
            const auto got = idx.of(q);
            if (!std::equal(got.begin(), got.end(), expected.begin(), expected.end())) {
                ++knn_bad;
            }
        }
        const std::size_t m = std::max<std::size_t>(1, n / 8);
        if (fps(scene.positions, scene.ids, m) != oracle::fps(scene.positions, keys, m)) {
            ++fps_bad;
        }
        const auto a = lattice ? oracle::lattice_points(rng, n, 12) : oracle::random_points(rng, n);
        const auto b = lattice ? oracle::lattice_points(rng, 3 * n / 4 + 1, 12) : oracle::random_points(rng, 3 * n / 4 + 1);
        Tape tape;
        const double got = chamfer(tape.constant(as_tensor(a)), tape.constant(as_tensor(b))).value().item();
        const double err = std::abs(got - oracle::chamfer(a, b));
        chamfer_worst = std::max(chamfer_worst, err);
        chamfer_bad += err > 1e-6;
    }
    const double secs = seconds_since(t0);
    return {knn_bad == 0 && fps_bad == 0 && chamfer_bad == 0 && secs < 60.0,
            fmt::format("50 fixtures N<=2000: knn mismatched rows {}, fps mismatched fixtures {}, chamfer worst |err| "
                        "{:.2e}; {:.1f} s (budget 60 s)",
                        knn_bad, fps_bad, chamfer_worst, secs)};
}

// A2: gradcheck of every primitive and of both end-to-end losses over 20 seeds.
Outcome a2() {
    const auto t0 = Clock::now();
    std::vector<std::uint64_t> seeds(20);
    std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
    const auto entries = gradcheck_suite(seeds);
    double prim = 0.0, lpc = 0.0, csd = 0.0;
    std::string worst_prim;
    for (const auto& e : entries) {
        if (e.name == to_string(PipelineLoss::reconstruction)) {
            lpc = std::max(lpc, e.error);
        } else if (e.name == to_string(PipelineLoss::consistency)) {
            csd = std::max(csd, e.error);
        } else if (e.error >= prim) {
            prim = e.error;
            worst_prim = e.name;
        }
    }
    const double secs = seconds_since(t0);
    return {prim < 1e-3 && lpc < 1e-3 && csd < 1e-3 && secs < 300.0,
            fmt::format("{} checks; worst primitive {:.2e} ({}), encode->decode->L_PC {:.2e}, encode->L_CSD {:.2e}; "
                        "{:.1f} s (budget 300 s)",
                        entries.size(), prim, worst_prim, lpc, csd, secs)};
}

// A3: masking invariants over 100 random scenes and schedules.
Outcome a3() {
    std::mt19937_64 rng(303);
    std::size_t violations = 0;
    std::size_t pairs_checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(100, 1500)(rng);
        PointScene scene = oracle::random_scene(rng, n, true);
        if (trial % 4 == 0) {
            scene.positions = oracle::lattice_points(rng, n, 8);
        }
        const std::size_t steps = std::uniform_int_distribution<std::size_t>(1, 9)(rng);
        const double gap = std::uniform_real_distribution<double>(0.01, 0.9 / static_cast<double>(steps))(rng);
        const GapMode mode = trial % 2 == 0 ? GapMode::fixed : GapMode::random;
        const MaskSchedule sched = MaskSchedule::uniform(gap, steps, mode);
        StatConfig sc;
        sc.k = std::uniform_int_distribution<std::size_t>(1, 24)(rng);
        const StatField field = compute_statistics(scene, sc);
        const MaskedSequence seq = build_sequence(scene, field, sched);

        auto contains = [](std::span<const PointId> outer, std::span<const PointId> inner) {
            const std::set<PointId> s(outer.begin(), outer.end());
            return std::all_of(inner.begin(), inner.end(), [&](PointId id) { return s.count(id) == 1; });
        };
        violations += seq.retained(0).size() != n;
        for (std::size_t t = 1; t <= seq.steps(); ++t) {
            const auto cur = seq.retained(t);
            const auto prev = seq.retained(t - 1);
            violations += !contains(prev, cur);
            violations += cur.size() != retained_count(sched.theta[t - 1], n);
            const std::set<PointId> kept(cur.begin(), cur.end());
            float min_kept = std::numeric_limits<float>::infinity();
            float max_masked = -std::numeric_limits<float>::infinity();
            for (std::size_t r = 0; r < n; ++r) {
                const float d = field.combined[r];
                if (kept.count(scene.ids[r]) == 1) {
                    min_kept = std::min(min_kept, d);
                } else {
                    max_masked = std::max(max_masked, d);
                }
            }
            violations += min_kept < max_masked;
            for (Progression p : {Progression::progressive, Progression::full_scene}) {
                const TrainingPair pair = training_pair_at(seq, t, p);
                violations += !contains(pair.target, pair.input) || pair.target_step >= pair.step;
                ++pairs_checked;
            }
        }
        Rng sample_rng(static_cast<std::uint64_t>(trial));
        for (int s = 0; s < 50; ++s) {
            for (Progression p : {Progression::progressive, Progression::full_scene}) {
                const TrainingPair pair = sample_training_pair(seq, sample_rng, sched, p);
                violations += !contains(pair.target, pair.input) || pair.target_step >= pair.step ||
                              pair.step < 1 || pair.step > seq.steps();
                ++pairs_checked;
            }
        }
    }
    return {violations == 0, fmt::format("100 scenes/schedules, {} training pairs: {} violations of subset chain, "
                                         "cardinality, informative preservation or input-in-target",
                                         pairs_checked, violations)};
}

double encoder_distance(const EncoderParams& a, const EncoderParams& b) {
    double s = 0.0;
    const auto ra = a.refs();
    const auto rb = b.refs();
    for (std::size_t k = 0; k < ra.size(); ++k) {
        for (std::size_t i = 0; i < ra[k].tensor->size(); ++i) {
            const double d = ra[k].tensor->data()[i] - rb[k].tensor->data()[i];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

HierFeatures single_layer(Tape& tape, const Tensor& features) {
    HierFeatures h;
    HierLevel base, layer;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        layer.ids.push_back(static_cast<PointId>(i));
        layer.positions.push_back({0, 0, 0});
    }
    base.ids = layer.ids;
    base.positions = layer.positions;
    base.features = tape.constant(Tensor({features.rows(), kInputChannels}));
    layer.features = tape.constant(features);
    h.levels = {base, layer};
    return h;
}

CorrespondencePairs identity_pairs(std::size_t m) {
    CorrespondencePairs p;
    p.levels.resize(2);
    for (std::uint32_t i = 0; i < m; ++i) {
        p.levels[0].push_back({i, i});
        p.levels[1].push_back({i, i});
    }
    return p;
}

// A4: EMA recursion, info-NCE closed forms, detached teacher.
Outcome a4() {
    std::mt19937_64 rng(404);
    const EncoderConfig cfg;
    const EncoderParams online = init_encoder(cfg, rng);
    TeacherState teacher{init_encoder(cfg, rng), 0.999};
    const double d0 = encoder_distance(teacher.params, online);
    double ema_worst = 0.0;
    for (int t = 1; t <= 200; ++t) {
        ema_update(teacher, online);
        const double expected = std::pow(0.999, t) * d0;
        ema_worst = std::max(ema_worst, std::abs(encoder_distance(teacher.params, online) - expected) / expected);
    }

    Tape tape;
    const ConsistencyConfig cc;
    const HierFeatures ortho = single_layer(tape, Tensor({2, 2}, {1, 0, 0, 1}));
    const double ortho_loss = csd_loss(identity_pairs(2), ortho, ortho, cc, tape).loss.value().item();
    double uniform_worst = 0.0;
    for (std::size_t m : {2u, 8u, 32u}) {
        Tensor rows({m, 4});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t c = 0; c < 4; ++c) {
                rows(i, c) = 0.25 * static_cast<double>(c + 1);
            }
        }
        const HierFeatures h = single_layer(tape, rows);
        const double loss = csd_loss(identity_pairs(m), h, h, cc, tape).loss.value().item();
        uniform_worst = std::max(uniform_worst, std::abs(loss - static_cast<double>(m) * std::log(double(m))));
    }

    const PointScene scene = oracle::random_scene(rng, 400);
    const std::vector<PointId> input(scene.ids.begin(), scene.ids.begin() + 300);
    Tape t2;
    const EncoderVars on_vars = bind(t2, online, true);
    const EncoderVars tg_vars = bind(t2, teacher.params, true);
    const HierFeatures on = encode(scene, input, on_vars, cfg, t2);
    const HierFeatures tg = encode(scene, scene.ids, tg_vars, cfg, t2);
    const CsdResult r = csd_loss(match_correspondence(on, tg), on, tg, cc, t2);
    t2.backward(r.loss);
    double teacher_grad = 0.0;
    for (const EncoderLayerVars& layer : tg_vars) {
        for (const Var& v : {layer.pointwise.weight, layer.pointwise.bias, layer.mix.weight, layer.mix.bias}) {
            const Tensor g = t2.grad(v);
            for (double x : g.values()) {
                teacher_grad = std::max(teacher_grad, std::abs(x));
            }
        }
    }
    const bool pass = ema_worst <= 1e-5 && std::abs(ortho_loss - 0.62652) <= 1e-4 && uniform_worst <= 1e-4 &&
                      teacher_grad == 0.0;
    return {pass, fmt::format("EMA beta^t worst rel err {:.2e} (t<=200); orthonormal L_CSD {:.6f} (0.62652); uniform "
                              "m log m worst |err| {:.2e}; max |teacher grad| {}",
                              ema_worst, ortho_loss, uniform_worst, teacher_grad)};
}

// A5: convergence, bitwise reproducibility, resume equivalence.
Outcome a5() {
    const auto t0 = Clock::now();
    const auto data = synthetic_dataset(1000, 20, 1500);
    const TrainConfig cfg;
    const std::size_t half = cfg.epochs / 2;

    Trainer a(data, cfg);
    std::string mid;
    while (!a.done()) {
        a.run_epoch();
        if (a.epoch() == half) {
            mid = serialize_checkpoint(a.checkpoint());
        }
    }
    const auto& rows = a.report().rows;
    const EpochLoss& first = rows.front();
    const EpochLoss& last = rows.back();
    const double ratio = last.loss_total / first.loss_total;
    const bool converged = ratio < 0.5;

    Trainer b(data, cfg);
    b.run();
    const bool reproducible = format_loss_csv(a.report(), false) == format_loss_csv(b.report(), false) &&
                              serialize_checkpoint(a.checkpoint()) == serialize_checkpoint(b.checkpoint());

    Trainer resumed(data, deserialize_checkpoint(mid));
    while (!resumed.done()) {
        resumed.run_epoch();
    }
    bool resume_equal = serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(a.checkpoint());
    for (std::size_t i = 0; i < resumed.report().rows.size(); ++i) {
        const EpochLoss& x = resumed.report().rows[i];
        const EpochLoss& y = rows[half + i];
        resume_equal = resume_equal && x.loss_total == y.loss_total && x.loss_pc == y.loss_pc &&
                       x.loss_csd == y.loss_csd;
    }
    const double secs = seconds_since(t0);
    return {converged && reproducible && resume_equal && secs < 900.0,
            fmt::format("final/epoch-1 total {:.3f} (need < 0.5) [L_PC {:.4f} -> {:.4f}, x{:.3f}; L_CSD {:.2f} -> "
                        "{:.2f}, x{:.3f}]; seed reproducibility {}; resume at epoch {} bitwise {}; {:.0f} s (budget "
                        "900 s, 3 runs)",
                        ratio, first.loss_pc, last.loss_pc, last.loss_pc / first.loss_pc, first.loss_csd,
                        last.loss_csd, last.loss_csd / first.loss_csd, reproducible ? "yes" : "NO", half,
                        resume_equal ? "yes" : "NO", secs)};
}

// A6: held-out L_PC ordering of the mask-strategy ablation.
Outcome a6() {
    const auto t0 = Clock::now();
    const auto data = synthetic_dataset(2000, 20, 1500);
    AblationConfig cfg;
    const AblationResult res = run_ablation(data, cfg, [&](const AblationCell& c, const SeedResult& r) {
        fmt::print("  A6 {} seed {}: held-out L_PC {:.6f}, common protocol {:.6f} ({:.0f} s)\n", c.name(), r.seed,
                   r.heldout_lpc, r.heldout_lpc_common, seconds_since(t0));
        std::fflush(stdout);
    });
    const AblationCell& ip = res.cell(MaskStrategy::informative_preserved, Progression::progressive);
    const AblationCell& ia = res.cell(MaskStrategy::informative_abandoned, Progression::progressive);
    const AblationCell& ipn = res.cell(MaskStrategy::informative_preserved, Progression::full_scene);
    std::size_t strat = 0, prog = 0, strat_common = 0, prog_common = 0;
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
        strat += ip.seeds[k].heldout_lpc < ia.seeds[k].heldout_lpc;
        prog += ip.seeds[k].heldout_lpc < ipn.seeds[k].heldout_lpc;
        strat_common += ip.seeds[k].heldout_lpc_common < ia.seeds[k].heldout_lpc_common;
        prog_common += ip.seeds[k].heldout_lpc_common < ipn.seeds[k].heldout_lpc_common;
    }
    std::string table;
    for (const AblationCell& c : res.cells) {
        table += fmt::format(" {}={:.4f}/{:.4f}", c.name(), c.mean_heldout(EvalProtocol::own),
                             c.mean_heldout(EvalProtocol::common));
    }
    const double secs = seconds_since(t0);
    const std::size_t need = (2 * cfg.seeds.size() + 2) / 3;
    return {strat >= need && prog >= need && secs < 2700.0,
            fmt::format("preserved<abandoned in {}/{} seeds, progressive<non-progressive in {}/{} seeds (need {}); "
                        "common-protocol counts {}/{} and {}/{}; mean held-out L_PC own/common:{}; {:.0f} s (budget "
                        "2700 s)",
                        strat, cfg.seeds.size(), prog, cfg.seeds.size(), need, strat_common, cfg.seeds.size(),
                        prog_common, cfg.seeds.size(), table, secs)};
}

// A7: statistics concentrate on the cube's edges rather than the plane interior.
Outcome a7() {
    SynthSpec spec;
    spec.floor_extent = 4.0f;
    spec.floor_color = {0.5f, 0.5f, 0.5f};
    spec.density = 200.0f;
    spec.seed = 7;
    SynthObject cube;
    cube.size = {1.0f, 1.0f, 1.0f};
    cube.position = {0.0f, 0.0f, 0.0f};
    cube.color = {1.0f, 0.0f, 0.0f};
    spec.objects.push_back(cube);
    const PointScene scene = synth_scene(spec);
    const StatField field = compute_statistics(scene, StatConfig{});

    // Cube spans [-0.5,0.5]^2 x [0,1]; a point is near an edge when two of its
    // coordinates lie within delta of a face plane.
    constexpr float kDelta = 0.05f;
    constexpr float kMargin = 0.5f;
    auto near = [](float v, float plane) { return std::abs(v - plane) <= kDelta; };
    double edge_sum = 0.0, plane_sum = 0.0;
    std::size_t edge_n = 0, plane_n = 0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3& p = scene.positions[i];
        if (scene.colors[i] == cube.color) {
            const int hits = (near(p[0], -0.5f) || near(p[0], 0.5f)) + (near(p[1], -0.5f) || near(p[1], 0.5f)) +
                             (near(p[2], 0.0f) || near(p[2], 1.0f));
            if (hits >= 2) {
                edge_sum += field.combined[i];
                ++edge_n;
            }
        } else {
            const float half = spec.floor_extent / 2.0f;
            const bool off_cube = std::max(std::abs(p[0]), std::abs(p[1])) >= 0.5f + kMargin;
            const bool off_border = std::max(std::abs(p[0]), std::abs(p[1])) <= half - kMargin;
            if (off_cube && off_border) {
                plane_sum += field.combined[i];
                ++plane_n;
            }
        }
    }
    const double edge = edge_n ? edge_sum / double(edge_n) : 0.0;
    const double plane = plane_n ? plane_sum / double(plane_n) : 0.0;
    const double ratio = plane > 0.0 ? edge / plane : std::numeric_limits<double>::infinity();
    return {edge_n > 0 && plane_n > 0 && edge >= 2.0 * plane,
            fmt::format("{} points; mean D on {} cube-edge points {:.4f}, on {} plane-interior points {:.4f}, ratio "
                        "{:.2f} (need >= 2)",
                        scene.size(), edge_n, edge, plane_n, plane, ratio)};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7},
    };
    std::set<std::string> wanted(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!wanted.empty() && wanted.count(name) == 0) {
            continue;
        }
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, fmt::format("exception: {}", e.what())};
        }
        fmt::print("{} {}: {}\n", name, o.pass ? "PASS" : "FAIL", o.detail);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
