// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mm3d/ablation.hpp"
#include "mm3d/error.hpp"
#include "mm3d/gradsuite.hpp"
#include "mm3d/trainer.hpp"
#include "mm3d/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mm3d;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

json read_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot read config {}", path.string()));
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError(fmt::format("cannot write {}", path.string()));
    }
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::vector<fs::path> dataset_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError(fmt::format("dataset directory {} does not exist", dir.string()));
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ply") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw DegenerateSceneError(fmt::format("no .ply files in {}", dir.string()));
    }
    return files;
}

std::vector<PointScene> load_dataset(const std::vector<fs::path>& files) {
    std::vector<PointScene> scenes;
    for (const auto& f : files) {
        try {
            scenes.push_back(load_ply(f));
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("{}: {}", f.string(), e.what()));
        }
    }
    return scenes;
}

/// Scalar overrides shared by the training commands.
struct Overrides {
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> zeta1;
    std::optional<double> zeta2;
    std::optional<double> lr;
    std::optional<std::size_t> batch_size;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Override train.epochs");
        cmd->add_option("--seed", seed, "Override train.seed");
        cmd->add_option("--zeta1", zeta1, "Override train.zeta1");
        cmd->add_option("--zeta2", zeta2, "Override train.zeta2");
        cmd->add_option("--lr", lr, "Override train.lr");
        cmd->add_option("--batch-size", batch_size, "Override train.batch_size");
    }

    /// Writes the overrides into the document's train section.
    json apply(json doc) const {
        if (!doc.is_object()) {
            throw ConfigError("configuration must be a JSON object");
        }
        json& t = doc["train"];
        if (t.is_null()) {
            t = json::object();
        }
        if (epochs) t["epochs"] = *epochs;
        if (seed) t["seed"] = *seed;
        if (zeta1) t["zeta1"] = *zeta1;
        if (zeta2) t["zeta2"] = *zeta2;
        if (lr) t["lr"] = *lr;
        if (batch_size) t["batch_size"] = *batch_size;
        return doc;
    }

    json to_json() const {
        json out = json::object();
        if (epochs) out["epochs"] = *epochs;
        if (seed) out["seed"] = *seed;
        if (zeta1) out["zeta1"] = *zeta1;
        if (zeta2) out["zeta2"] = *zeta2;
        if (lr) out["lr"] = *lr;
        if (batch_size) out["batch_size"] = *batch_size;
        return out;
    }
};

struct Manifest {
    std::string command;
    std::string config_path;
    std::vector<std::string> inputs;
    fs::path outdir;
    std::optional<std::uint64_t> seed;
    json config;
    json overrides = json::object();
    std::vector<std::string> argv;
};

/// Creates the output directory and writes manifest.json before anything else.
void begin_run(const Manifest& m) {
    fs::create_directories(m.outdir);
    json doc = {
        {"tool", "mm3d"},
        {"version", kVersion},
        {"command", m.command},
        {"config_path", m.config_path},
        {"inputs", m.inputs},
        {"output_dir", m.outdir.string()},
        {"seed", m.seed ? json(*m.seed) : json(nullptr)},
        {"overrides", m.overrides},
        {"config", m.config},
        {"argv", m.argv},
    };
    write_json(m.outdir / "manifest.json", doc);
}

json range_json(std::span<const float> v) {
    if (v.empty()) {
        return nullptr;
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double sum = 0.0;
    for (float x : v) {
        sum += x;
    }
    return {{"min", *lo}, {"max", *hi}, {"mean", sum / static_cast<double>(v.size())}};
}

int cmd_stats(const fs::path& scene_path, const fs::path& config_path, const fs::path& outdir, Manifest m) {
    const json doc = read_config(config_path);
    const StatConfig cfg = stat_config_from_json(doc.value("statistics", json::object()));
    m.config = {{"statistics", to_json(cfg)}};
    begin_run(m);

    const PointScene scene = load_ply(scene_path);
    const StatField field = compute_statistics(scene, cfg);
    export_heatmap(scene, field, outdir / "heatmap.ply");
    write_text(outdir / "stats.csv", format_stats_csv(scene, field));
    const json summary = {
        {"points", scene.size()},
        {"k", cfg.k},
        {"alphas", cfg.alphas},
        {"channels",
         {{"coordinates", cfg.enabled[0] ? range_json(field.raw[0]) : json(nullptr)},
          {"colors", cfg.enabled[1] ? range_json(field.raw[1]) : json(nullptr)}}},
        {"D", range_json(field.combined)},
    };
    write_json(outdir / "summary.json", summary);
    fmt::print("{} points, D in [{}, {}]\n", scene.size(), summary["D"]["min"].get<double>(),
               summary["D"]["max"].get<double>());
    return 0;
}

int cmd_mask(const fs::path& scene_path, const fs::path& config_path, const fs::path& outdir,
             const std::optional<std::string>& strategy, Manifest m) {
    json doc = read_config(config_path);
    if (strategy) {
        doc["train"]["strategy"] = *strategy;
    }
    const TrainConfig cfg = train_config_from_json(doc);
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    begin_run(m);

    const PointScene scene = prepare_scene(load_ply(scene_path), cfg);
    const StatField field = compute_statistics(scene, cfg.statistics);
    Rng rng(cfg.seed);
    const MaskedSequence seq = strategy_sequence(scene, field, cfg, rng);
    json out = seq.to_json();
    out["strategy"] = to_string(cfg.strategy);
    write_json(outdir / "sequence.json", out);
    fmt::print("{} steps, retained {} .. {} of {} points\n", seq.steps(), seq.retained(1).size(),
               seq.retained(seq.steps()).size(), scene.size());
    return 0;
}

int cmd_pretrain(const fs::path& data_dir, const fs::path& config_path, const fs::path& outdir, const Overrides& ov,
                 bool timing, const std::optional<fs::path>& resume, std::size_t save_every, Manifest m) {
    const TrainConfig cfg = train_config_from_json(ov.apply(read_config(config_path)));
    const auto files = dataset_files(data_dir);
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    for (const auto& f : files) {
        m.inputs.push_back(f.string());
    }
    if (resume) {
        m.inputs.push_back(resume->string());
    }
    begin_run(m);
    write_json(outdir / "config.json", to_json(cfg));

    std::vector<PointScene> scenes = load_dataset(files);
    std::optional<Trainer> trainer;
    if (resume) {
        const Checkpoint ckpt = load_checkpoint(*resume);
        if (config_hash(ckpt.config) != config_hash(cfg)) {
            throw ConfigError("the configuration does not match the checkpoint being resumed");
        }
        trainer.emplace(std::move(scenes), ckpt);
    } else {
        trainer.emplace(std::move(scenes), cfg);
    }
    fmt::print(stderr, "training on {} scenes ({} skipped), epochs {}..{}\n", trainer->usable_scenes(),
               trainer->report().skipped_scenes, trainer->epoch() + 1, cfg.epochs);
    while (!trainer->done()) {
        const EpochLoss& e = trainer->run_epoch();
        fmt::print(stderr, "epoch {}/{} loss_pc {:.6f} loss_csd {:.6f} total {:.6f} lr {} ({:.2f} s)\n", e.epoch,
                   cfg.epochs, e.loss_pc, e.loss_csd, e.loss_total, e.lr, e.seconds);
        write_text(outdir / "losses.csv", format_loss_csv(trainer->report(), timing));
        if (save_every > 0 && e.epoch % save_every == 0 && !trainer->done()) {
            save_checkpoint(trainer->checkpoint(), outdir / fmt::format("checkpoint_epoch{}.bin", e.epoch));
        }
    }
    write_text(outdir / "losses.csv", format_loss_csv(trainer->report(), timing));
    save_checkpoint(trainer->checkpoint(), outdir / "checkpoint.bin");
    if (trainer->report().skipped_samples > 0) {
        fmt::print(stderr, "warning: {} samples skipped as degenerate\n", trainer->report().skipped_samples);
    }
    return 0;
}

int cmd_reconstruct(const fs::path& scene_path, const fs::path& ckpt_path, const fs::path& outdir,
                    std::optional<std::size_t> step, Manifest m) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const TrainConfig& cfg = ckpt.config;
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    m.inputs.push_back(ckpt_path.string());
    begin_run(m);

    const PointScene scene = prepare_scene(load_ply(scene_path), cfg);
    const StatField field = compute_statistics(scene, cfg.statistics);
    Rng rng(cfg.seed);
    const MaskedSequence seq = strategy_sequence(scene, field, cfg, rng);
    const std::size_t t = step.value_or((seq.steps() + 1) / 2);
    if (t < 1 || t > seq.steps()) {
        throw ContractError(fmt::format("--step must lie in 1..{}", seq.steps()));
    }
    const TrainingPair pair = training_pair_at(seq, t, cfg.progression);

    diff::Tape tape;
    const HierFeatures hier = encode(scene, pair.input, bind(tape, ckpt.online, false), cfg.encoder, tape);
    const auto grids = grids_for(hier, pair.target.size(), cfg.decoder);
    const ReconPrediction pred = expand_and_fold(hier, bind(tape, ckpt.decoder, false), grids, tape);

    auto subset = [&](std::span<const PointId> ids) {
        PointScene out;
        for (std::size_t r : rows_for_ids(scene, ids)) {
            out.positions.push_back(scene.positions[r]);
            out.colors.push_back(scene.colors[r]);
            out.ids.push_back(scene.ids[r]);
        }
        return out;
    };
    const PointScene target = subset(pair.target);
    save_ply(subset(pair.input), outdir / "input.ply");
    save_ply(target, outdir / "target.ply");
    diff::Tensor tpos({target.size(), 3});
    for (std::size_t i = 0; i < target.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            tpos(i, c) = target.positions[i][c];
        }
    }
    const diff::Var tvar = tape.constant(tpos);
    json layers = json::array();
    double total = 0.0;
    for (std::size_t l = 0; l < pred.layers.size(); ++l) {
        const std::string name = fmt::format("pred_layer{}.ply", l + 1);
        export_prediction(outdir / name, pred.layers[l].points.value());
        const double c = chamfer(pred.layers[l].points, tvar).value().item();
        total += c;
        layers.push_back({{"layer", l + 1}, {"points", pred.layers[l].points.rows()}, {"chamfer", c}, {"file", name}});
    }
    write_json(outdir / "recon.json", {{"step", t},
                                       {"theta", seq.theta()[t - 1]},
                                       {"target_step", pair.target_step},
                                       {"input_points", pair.input.size()},
                                       {"target_points", pair.target.size()},
                                       {"loss_pc", total},
                                       {"layers", layers}});
    fmt::print("step {} (theta {}), L_PC {:.6f}\n", t, seq.theta()[t - 1], total);
    return 0;
}

int cmd_ablate(const fs::path& data_dir, const fs::path& config_path, const fs::path& outdir, const Overrides& ov,
               Manifest m) {
    const AblationConfig cfg = ablation_config_from_json(ov.apply(read_config(config_path)));
    const auto files = dataset_files(data_dir);
    m.config = to_json(cfg);
    m.seed = cfg.base.seed;
    for (const auto& f : files) {
        m.inputs.push_back(f.string());
    }
    begin_run(m);

    const std::vector<PointScene> scenes = load_dataset(files);
    const AblationResult result = run_ablation(scenes, cfg, [](const AblationCell& c, const SeedResult& r) {
        fmt::print(stderr, "{} seed {}: held-out L_PC {:.6f} (common protocol {:.6f})\n", c.name(), r.seed,
                   r.heldout_lpc, r.heldout_lpc_common);
    });
    write_json(outdir / "ablation.json", to_json(result, cfg));
    std::string table = "cell,mean_heldout_lpc,mean_heldout_lpc_common\n";
    for (const AblationCell& c : result.cells) {
        table += fmt::format("{},{},{}\n", c.name(), c.mean_heldout(EvalProtocol::own),
                             c.mean_heldout(EvalProtocol::common));
    }
    write_text(outdir / "ablation.csv", table);
    fmt::print("{}", table);
    return 0;
}

int cmd_gradcheck(const fs::path& outdir, std::size_t seeds, double eps, double threshold, Manifest m) {
    PipelineCheckOptions opt;
    opt.eps = eps;
    m.config = {{"seeds", seeds}, {"eps", eps}, {"threshold", threshold}, {"points", opt.points}};
    begin_run(m);

    std::vector<std::uint64_t> list(seeds);
    std::iota(list.begin(), list.end(), std::uint64_t{0});
    const auto entries = gradcheck_suite(list, opt);
    json rows = json::array();
    double worst = 0.0;
    std::string worst_name;
    for (const auto& e : entries) {
        rows.push_back({{"name", e.name}, {"seed", e.seed}, {"error", e.error}});
        if (e.error > worst) {
            worst = e.error;
            worst_name = fmt::format("{} (seed {})", e.name, e.seed);
        }
    }
    const bool pass = worst < threshold;
    write_json(outdir / "gradcheck.json",
               {{"entries", rows}, {"max_error", worst}, {"threshold", threshold}, {"pass", pass}});
    fmt::print("{} checks, max relative error {:.3e} at {}: {}\n", entries.size(), worst, worst_name,
               pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitNumeric;
}

int cmd_synth(const fs::path& outdir, std::size_t count, std::size_t points, std::uint64_t seed, Manifest m) {
    m.seed = seed;
    m.config = {{"scenes", count}, {"points", points}, {"seed", seed}};
    begin_run(m);
    json specs = json::array();
    for (std::size_t i = 0; i < count; ++i) {
        const SynthSpec spec = random_synth_spec(seed + i, points);
        const std::string name = fmt::format("scene_{:03}.ply", i);
        save_ply(synth_scene(spec), outdir / name);
        specs.push_back({{"file", name}, {"spec", to_json(spec)}});
    }
    write_json(outdir / "specs.json", specs);
    fmt::print("wrote {} scenes to {}\n", count, outdir.string());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked point-scene pretraining toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    app.failure_message(CLI::FailureMessage::help);

    Manifest m;
    for (int i = 0; i < argc; ++i) {
        m.argv.emplace_back(argv[i]);
    }
    fs::path scene, config, out, data, checkpoint;
    Overrides ov;
    bool no_timing = false;
    std::optional<fs::path> resume;
    std::size_t save_every = 0;
    std::optional<std::string> strategy;
    std::optional<std::size_t> step;
    std::size_t seeds = 20;
    double eps = 1e-6;
    double threshold = 1e-3;
    std::size_t synth_count = 20;
    std::size_t synth_points = 1500;
    std::uint64_t synth_seed = 0;

    auto* stats = app.add_subcommand("stats", "Local-statistics heatmap, CSV and summary for one scene");
    stats->add_option("scene", scene, "Input PLY")->required();
    stats->add_option("--config", config, "JSON config")->required();
    stats->add_option("--out", out, "Output directory")->required();

    auto* mask = app.add_subcommand("mask", "Export the masked sequence of one scene");
    mask->add_option("scene", scene, "Input PLY")->required();
    mask->add_option("--config", config, "JSON config")->required();
    mask->add_option("--out", out, "Output directory")->required();
    mask->add_option("--strategy", strategy, "random | informative_abandoned | informative_preserved");

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain on a directory of PLY scenes");
    pretrain->add_option("dataset", data, "Directory of PLY scenes")->required();
    pretrain->add_option("--config", config, "JSON config")->required();
    pretrain->add_option("--out", out, "Output directory")->required();
    ov.add_to(pretrain);
    pretrain->add_flag("--no-timing", no_timing, "Write 0 in the seconds column");
    pretrain->add_option("--resume", resume, "Checkpoint to continue from");
    pretrain->add_option("--save-every", save_every, "Also checkpoint every N epochs");

    auto* recon = app.add_subcommand("reconstruct", "Dump input, target and per-layer predictions for one scene");
    recon->add_option("scene", scene, "Input PLY")->required();
    recon->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    recon->add_option("--out", out, "Output directory")->required();
    recon->add_option("--step", step, "Masking step t (default: middle of the schedule)");

    auto* ablate = app.add_subcommand("ablate", "Mask-strategy ablation with held-out L_PC");
    ablate->add_option("dataset", data, "Directory of PLY scenes")->required();
    ablate->add_option("--config", config, "JSON config")->required();
    ablate->add_option("--out", out, "Output directory")->required();
    ov.add_to(ablate);

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and both losses");
    grad->add_option("--out", out, "Output directory")->required();
    grad->add_option("--seeds", seeds, "Number of seeds (0..n-1)");
    grad->add_option("--eps", eps, "Central-difference step");
    grad->add_option("--threshold", threshold, "Maximum relative error");

    auto* synth = app.add_subcommand("synth", "Write random synthetic scenes");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--scenes", synth_count, "Number of scenes");
    synth->add_option("--points", synth_points, "Approximate points per scene");
    synth->add_option("--seed", synth_seed, "Seed of the first scene");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    m.outdir = out;
    m.config_path = config.string();
    try {
        if (stats->parsed()) {
            m.command = "stats";
            m.inputs = {scene.string()};
            return cmd_stats(scene, config, out, m);
        }
        if (mask->parsed()) {
            m.command = "mask";
            m.inputs = {scene.string()};
            return cmd_mask(scene, config, out, strategy, m);
        }
        if (pretrain->parsed()) {
            m.command = "pretrain";
            m.overrides = ov.to_json();
            if (no_timing) {
                m.overrides["no_timing"] = true;
            }
            return cmd_pretrain(data, config, out, ov, !no_timing, resume, save_every, m);
        }
        if (recon->parsed()) {
            m.command = "reconstruct";
            m.inputs = {scene.string()};
            return cmd_reconstruct(scene, checkpoint, out, step, m);
        }
        if (ablate->parsed()) {
            m.command = "ablate";
            m.overrides = ov.to_json();
            return cmd_ablate(data, config, out, ov, m);
        }
        if (grad->parsed()) {
            m.command = "gradcheck";
            return cmd_gradcheck(out, seeds, eps, threshold, m);
        }
        m.command = "synth";
        return cmd_synth(out, synth_count, synth_points, synth_seed, m);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitUsage;
    } catch (const ContractError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitUsage;
    } catch (const NumericError& e) {
        fmt::print(stderr, "numeric failure: {}\n", e.what());
        return kExitNumeric;
    } catch (const Error& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    }
}
