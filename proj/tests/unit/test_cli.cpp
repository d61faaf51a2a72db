// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>
#include <unistd.h>

#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mm3d/scene.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Sandbox {
    fs::path root;

    Sandbox() {
        static int counter = 0;
        root = fs::temp_directory_path() / fmt::format("mm3d_cli_{}_{}", ::getpid(), counter++);
        fs::remove_all(root);
        fs::create_directories(root / "cwd");
    }
    ~Sandbox() { fs::remove_all(root); }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Runs the CLI from `cwd`; returns its exit status.
int run(const fs::path& cwd, const std::string& args) {
    const std::string cmd = fmt::format("cd '{}' && '{}' {} >out.log 2>err.log", cwd.string(), MM3D_CLI_PATH, args);
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::set<fs::path> tree(const fs::path& dir) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        out.insert(fs::relative(e.path(), dir));
    }
    return out;
}

const char* kTinyConfig = R"({
  "train": {"epochs": 2, "batch_size": 2},
  "encoder": {"channels": [8, 16], "group_k": 4, "downsample": 4},
  "decoder": {"hidden": 8},
  "statistics": {"k": 8}
})";

// Column `name` of a CSV with a header row.
std::vector<std::string> column(const std::string& csv, const std::string& name) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) {
        header.push_back(cell);
    }
    const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    REQUIRE(idx < header.size());
    std::vector<std::string> out;
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::vector<std::string> cells;
        for (std::string cell; std::getline(ls, cell, ',');) {
            cells.push_back(cell);
        }
        REQUIRE(cells.size() == header.size());
        out.push_back(cells[idx]);
    }
    return out;
}

fs::path make_dataset(const Sandbox& box) {
    const fs::path data = box.root / "data";
    REQUIRE(run(box.root / "cwd", fmt::format("synth --out '{}' --scenes 3 --points 300 --seed 5", data.string())) ==
            0);
    write_file(box.root / "tiny.json", kTinyConfig);
    return data;
}

} // namespace

TEST_CASE("missing required options exit with usage status 2") {
    Sandbox box;
    CHECK(run(box.root / "cwd", "pretrain data --out o") == 2);
    CHECK(read_file(box.root / "cwd" / "err.log").find("--config") != std::string::npos);
    CHECK(run(box.root / "cwd", "no-such-command") == 2);
}

TEST_CASE("invalid configuration exits 2") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    write_file(box.root / "bad.json", R"({"train": {"epochs": 0}})");
    CHECK(run(box.root / "cwd", fmt::format("pretrain '{}' --config '{}' --out '{}'", data.string(),
                                             (box.root / "bad.json").string(), (box.root / "o").string())) == 2);
    write_file(box.root / "broken.json", "{ not json");
    CHECK(run(box.root / "cwd", fmt::format("pretrain '{}' --config '{}' --out '{}'", data.string(),
                                             (box.root / "broken.json").string(), (box.root / "o").string())) == 2);
}

TEST_CASE("pretrain writes one row per epoch, a manifest, and reproduces bytewise") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    const auto before = tree(box.root / "data");
    const fs::path cwd = box.root / "cwd";
    const std::string base =
        fmt::format("pretrain '{}' --config '{}' --no-timing", data.string(), (box.root / "tiny.json").string());
    REQUIRE(run(cwd, base + fmt::format(" --out '{}'", (box.root / "a").string())) == 0);
    REQUIRE(run(cwd, base + fmt::format(" --out '{}'", (box.root / "b").string())) == 0);

    const std::string csv = read_file(box.root / "a" / "losses.csv");
    CHECK(column(csv, "epoch").size() == 2);
    CHECK(csv == read_file(box.root / "b" / "losses.csv"));
    CHECK(read_file(box.root / "a" / "checkpoint.bin") == read_file(box.root / "b" / "checkpoint.bin"));

    const json manifest = json::parse(read_file(box.root / "a" / "manifest.json"));
    CHECK(manifest.at("command") == "pretrain");
    CHECK(manifest.at("config").at("train").at("epochs") == 2);
    CHECK(fs::exists(box.root / "a" / "config.json"));

    // Nothing written next to the inputs or in the working directory beyond the shell logs.
    CHECK(tree(box.root / "data") == before);
    CHECK(tree(cwd) == std::set<fs::path>{"out.log", "err.log"});
}

TEST_CASE("--zeta2 0 zeroes the consistency column") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    REQUIRE(run(box.root / "cwd", fmt::format("pretrain '{}' --config '{}' --out '{}' --zeta2 0", data.string(),
                                               (box.root / "tiny.json").string(), (box.root / "o").string())) == 0);
    for (const std::string& v : column(read_file(box.root / "o" / "losses.csv"), "loss_csd")) {
        CHECK(std::stod(v) == 0.0);
    }
    const json manifest = json::parse(read_file(box.root / "o" / "manifest.json"));
    CHECK(manifest.at("overrides").at("zeta2") == 0.0);
}

TEST_CASE("resume continues a run and rejects a different configuration") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    const fs::path cwd = box.root / "cwd";
    const std::string cfg = (box.root / "tiny.json").string();
    REQUIRE(run(cwd, fmt::format("pretrain '{}' --config '{}' --out '{}' --no-timing --epochs 4", data.string(), cfg,
                                 (box.root / "full").string())) == 0);
    REQUIRE(run(cwd, fmt::format("pretrain '{}' --config '{}' --out '{}' --no-timing --epochs 4 --save-every 2",
                                 data.string(), cfg, (box.root / "part").string())) == 0);
    const fs::path mid = box.root / "part" / "checkpoint_epoch2.bin";
    REQUIRE(fs::exists(mid));
    REQUIRE(run(cwd, fmt::format("pretrain '{}' --config '{}' --out '{}' --no-timing --epochs 4 --resume '{}'",
                                 data.string(), cfg, (box.root / "resumed").string(), mid.string())) == 0);
    CHECK(read_file(box.root / "resumed" / "checkpoint.bin") == read_file(box.root / "full" / "checkpoint.bin"));
    const auto full_rows = column(read_file(box.root / "full" / "losses.csv"), "loss_total");
    const auto resumed_rows = column(read_file(box.root / "resumed" / "losses.csv"), "loss_total");
    REQUIRE(resumed_rows.size() == 2);
    CHECK(resumed_rows[0] == full_rows[2]);
    CHECK(resumed_rows[1] == full_rows[3]);

    CHECK(run(cwd, fmt::format("pretrain '{}' --config '{}' --out '{}' --epochs 4 --lr 0.5 --resume '{}'",
                               data.string(), cfg, (box.root / "other").string(), mid.string())) == 2);
}

TEST_CASE("stats on a single-color floor is zero with the colors channel alone") {
    Sandbox box;
    mm3d::SynthSpec spec;
    spec.floor_extent = 2.0f;
    spec.density = 200.0f;
    spec.seed = 3;
    mm3d::save_ply(mm3d::synth_scene(spec), box.root / "floor.ply");
    write_file(box.root / "colors.json", R"({"statistics": {"k": 8, "channels": ["colors"], "alphas": [0.0, 1.0]}})");
    const fs::path cwd = box.root / "cwd";
    const std::string args = fmt::format("stats '{}' --config '{}'", (box.root / "floor.ply").string(),
                                         (box.root / "colors.json").string());
    REQUIRE(run(cwd, args + fmt::format(" --out '{}'", (box.root / "a").string())) == 0);
    REQUIRE(run(cwd, args + fmt::format(" --out '{}'", (box.root / "b").string())) == 0);
    const json summary = json::parse(read_file(box.root / "a" / "summary.json"));
    CHECK(summary.at("D").at("min").get<double>() == 0.0);
    CHECK(summary.at("D").at("max").get<double>() < 0.05);
    CHECK(summary.at("channels").at("coordinates").is_null());
    CHECK(read_file(box.root / "a" / "stats.csv") == read_file(box.root / "b" / "stats.csv"));
    CHECK(fs::exists(box.root / "a" / "heatmap.ply"));
}

TEST_CASE("mask and reconstruct produce their artifacts") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    const fs::path cwd = box.root / "cwd";
    const fs::path scene = data / "scene_000.ply";
    const std::string cfg = (box.root / "tiny.json").string();
    REQUIRE(run(cwd, fmt::format("mask '{}' --config '{}' --out '{}'", scene.string(), cfg,
                                 (box.root / "m").string())) == 0);
    const json seq = json::parse(read_file(box.root / "m" / "sequence.json"));
    CHECK(seq.at("sets").size() == seq.at("theta").size());

    REQUIRE(run(cwd, fmt::format("pretrain '{}' --config '{}' --out '{}' --epochs 1", data.string(), cfg,
                                 (box.root / "p").string())) == 0);
    REQUIRE(run(cwd, fmt::format("reconstruct '{}' --checkpoint '{}' --out '{}'", scene.string(),
                                 (box.root / "p" / "checkpoint.bin").string(), (box.root / "r").string())) == 0);
    CHECK(fs::exists(box.root / "r" / "input.ply"));
    CHECK(fs::exists(box.root / "r" / "target.ply"));
    CHECK(fs::exists(box.root / "r" / "pred_layer1.ply"));
}

TEST_CASE("ablate reports six cells") {
    Sandbox box;
    const fs::path data = make_dataset(box);
    json cfg = json::parse(kTinyConfig);
    cfg.merge_patch({{"train", {{"epochs", 1}}}, {"ablation", {{"seeds", {0}}, {"holdout", 0.34}}}});
    write_file(box.root / "abl.json", cfg.dump());
    REQUIRE(run(box.root / "cwd", fmt::format("ablate '{}' --config '{}' --out '{}'", data.string(),
                                               (box.root / "abl.json").string(), (box.root / "o").string())) == 0);
    const json res = json::parse(read_file(box.root / "o" / "ablation.json"));
    CHECK(res.at("cells").size() == 6);
    CHECK(fs::exists(box.root / "o" / "ablation.csv"));
}

TEST_CASE("degenerate dataset exits 3") {
    Sandbox box;
    fs::create_directories(box.root / "data");
    mm3d::PointScene tiny;
    tiny.positions = {{0, 0, 0}, {1, 0, 0}};
    tiny.colors = {{0, 0, 0}, {0, 0, 0}};
    tiny.ids = {0, 1};
    mm3d::save_ply(tiny, box.root / "data" / "a.ply");
    write_file(box.root / "tiny.json", kTinyConfig);
    CHECK(run(box.root / "cwd", fmt::format("pretrain '{}' --config '{}' --out '{}'", (box.root / "data").string(),
                                             (box.root / "tiny.json").string(), (box.root / "o").string())) == 3);
    CHECK(run(box.root / "cwd", fmt::format("pretrain '{}' --config '{}' --out '{}'", (box.root / "none").string(),
                                             (box.root / "tiny.json").string(), (box.root / "o").string())) == 3);
}

TEST_CASE("gradcheck passes on two seeds") {
    Sandbox box;
    REQUIRE(run(box.root / "cwd", fmt::format("gradcheck --out '{}' --seeds 2", (box.root / "g").string())) == 0);
    const json doc = json::parse(read_file(box.root / "g" / "gradcheck.json"));
    CHECK(doc.is_object());
}
