// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <set>

#include "mm3d/error.hpp"
#include "mm3d/trainer.hpp"
#include "oracles.hpp"

using namespace mm3d;

namespace {

std::vector<PointScene> dataset(std::size_t scenes, std::size_t points, std::uint64_t seed = 0) {
    std::vector<PointScene> out;
    for (std::size_t i = 0; i < scenes; ++i) {
        out.push_back(synth_scene(random_synth_spec(seed + i, points)));
    }
    return out;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.encoder.channels = {8, 16};
    cfg.encoder.group_k = 4;
    cfg.encoder.downsample = 4;
    cfg.decoder.hidden = 8;
    cfg.statistics.k = 8;
    return cfg;
}

} // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    cfg.epochs = 100;
    CHECK(lr_at(0, cfg) == 0.001);
    CHECK(lr_at(59, cfg) == 0.001);
    CHECK(lr_at(60, cfg) == Catch::Approx(0.0001).epsilon(1e-12));
    CHECK(lr_at(79, cfg) == Catch::Approx(0.0001).epsilon(1e-12));
    CHECK(lr_at(80, cfg) == Catch::Approx(0.00001).epsilon(1e-12));
    CHECK(lr_at(99, cfg) == Catch::Approx(0.00001).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at(100, cfg), ContractError);

    for (std::size_t epochs : {1u, 3u, 7u, 10u, 50u, 300u}) {
        cfg.epochs = epochs;
        std::size_t changes = 0;
        for (std::size_t e = 1; e < epochs; ++e) {
            if (lr_at(e, cfg) != lr_at(e - 1, cfg)) {
                ++changes;
                CHECK(lr_at(e, cfg) < lr_at(e - 1, cfg));
            }
        }
        CHECK(changes <= 2);
    }
    cfg.epochs = 50;
    CHECK(lr_at(29, cfg) == 0.001);
    CHECK(lr_at(30, cfg) < 0.001);
    CHECK(lr_at(40, cfg) < lr_at(39, cfg));
}

TEST_CASE("train config validation, json and hash") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    const TrainConfig back = train_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(config_hash(cfg).size() == 16);

    TrainConfig other = cfg;
    other.seed = 1;
    CHECK(config_hash(other) != config_hash(cfg));

    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.lr = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.zeta1 = -1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.zeta1 = c.zeta2 = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.decay_at = {0.6, 1.0}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.epochs = 0; }).validate(), ConfigError);

    nlohmann::json doc = to_json(cfg);
    doc["train"]["strategy"] = "bogus";
    CHECK_THROWS_AS(train_config_from_json(doc), ConfigError);
    nlohmann::json partial = {{"train", {{"epochs", 7}, {"progressive", false}}}};
    const TrainConfig p = train_config_from_json(partial);
    CHECK(p.epochs == 7);
    CHECK(p.progression == Progression::full_scene);
    CHECK(p.lr == 0.001);
}

TEST_CASE("loss report has one row per epoch") {
    const TrainConfig cfg = [] {
        TrainConfig c = small_config();
        c.epochs = 3;
        return c;
    }();
    const auto [ckpt, report] = train(dataset(3, 600), cfg);
    REQUIRE(report.rows.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(report.rows[e].epoch == e + 1);
        CHECK(std::isfinite(report.rows[e].loss_total));
        CHECK(report.rows[e].loss_pc > 0.0);
        CHECK(report.rows[e].loss_csd > 0.0);
        CHECK(report.rows[e].loss_total ==
              Catch::Approx(report.rows[e].loss_pc + report.rows[e].loss_csd).epsilon(1e-12));
    }
    CHECK(ckpt.epoch == 3);
    const std::string csv = format_loss_csv(report, false);
    CHECK(csv.rfind("epoch,loss_pc,loss_csd,loss_total,lr,seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("training is bitwise reproducible") {
    const auto data = dataset(4, 600, 10);
    Trainer a(data, small_config());
    Trainer b(data, small_config());
    a.run();
    b.run();
    CHECK(format_loss_csv(a.report(), false) == format_loss_csv(b.report(), false));
    CHECK(serialize_checkpoint(a.checkpoint()) == serialize_checkpoint(b.checkpoint()));

    TrainConfig other = small_config();
    other.seed = 5;
    Trainer c(data, other);
    c.run();
    CHECK(format_loss_csv(a.report(), false) != format_loss_csv(c.report(), false));
}

TEST_CASE("resumed training equals an uninterrupted run") {
    const auto data = dataset(5, 600, 20);
    TrainConfig cfg = small_config();
    cfg.epochs = 5;
    Trainer full(data, cfg);
    full.run();

    Trainer first(data, cfg);
    first.run_epoch();
    first.run_epoch();
    const Checkpoint saved = deserialize_checkpoint(serialize_checkpoint(first.checkpoint()));
    Trainer resumed(data, saved);
    CHECK(resumed.epoch() == 2);
    while (!resumed.done()) {
        resumed.run_epoch();
    }
    CHECK(serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(full.checkpoint()));
    const auto& rows = full.report().rows;
    REQUIRE(resumed.report().rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(resumed.report().rows[i].epoch == rows[i + 2].epoch);
        CHECK(resumed.report().rows[i].loss_total == rows[i + 2].loss_total);
        CHECK(resumed.report().rows[i].loss_pc == rows[i + 2].loss_pc);
    }
}

TEST_CASE("checkpoint io") {
    const auto data = dataset(2, 600, 30);
    TrainConfig cfg = small_config();
    cfg.epochs = 1;
    Trainer t(data, cfg);
    t.run();
    const std::string bytes = serialize_checkpoint(t.checkpoint());
    CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);

    const auto dir = std::filesystem::temp_directory_path() / "mm3d_test_trainer";
    std::filesystem::create_directories(dir);
    save_checkpoint(t.checkpoint(), dir / "ckpt.bin");
    CHECK(serialize_checkpoint(load_checkpoint(dir / "ckpt.bin")) == bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), Error);
    std::filesystem::remove_all(dir);

    for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.find('\n'), bytes.find('\n') + 1, bytes.size() - 1}) {
        CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), CheckpointError);
    }
    std::string version = bytes;
    const auto pos = version.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    version.replace(pos, 11, "\"version\":2");
    CHECK_THROWS_AS(deserialize_checkpoint(version), CheckpointError);

    std::string extra = bytes + "xxxx";
    CHECK_THROWS_AS(deserialize_checkpoint(extra), CheckpointError);
}

TEST_CASE("zeta weights switch the losses off") {
    const auto data = dataset(3, 600, 40);
    TrainConfig cfg = small_config();
    cfg.epochs = 2;
    cfg.zeta2 = 0.0;
    const auto [c1, pc_only] = train(data, cfg);
    for (const auto& row : pc_only.rows) {
        CHECK(row.loss_csd == 0.0);
        CHECK(row.loss_pc > 0.0);
    }
    cfg.zeta1 = 0.0;
    cfg.zeta2 = 1.0;
    const auto [c2, csd_only] = train(data, cfg);
    for (const auto& row : csd_only.rows) {
        CHECK(row.loss_pc == 0.0);
        CHECK(row.loss_csd > 0.0);
    }
    // Without L_PC the decoder only sees the decoupled weight decay.
    const Trainer untouched(data, cfg);
    const auto before = untouched.decoder().refs();
    const auto after = c2.decoder.refs();
    for (std::size_t k = 0; k < before.size(); ++k) {
        for (std::size_t i = 0; i < before[k].tensor->size(); ++i) {
            const double b = before[k].tensor->data()[i];
            const double a = after[k].tensor->data()[i];
            CHECK(std::abs(a) <= std::abs(b));
            CHECK(std::abs(a - b) <= 1e-5 * std::abs(b));
        }
    }
}

TEST_CASE("teacher parameters are never optimized") {
    const auto data = dataset(2, 600, 50);
    Trainer t(data, small_config());
    std::set<const diff::Tensor*> trainable;
    for (const ParamRef& r : t.trainable()) {
        trainable.insert(r.tensor);
        CHECK(r.name.find("teacher") == std::string::npos);
    }
    for (const ConstParamRef& r : t.teacher().params.refs()) {
        CHECK(trainable.count(r.tensor) == 0);
    }
    CHECK(trainable.size() == t.online().refs().size() + t.decoder().refs().size());
}

TEST_CASE("degenerate scenes are skipped and counted") {
    auto data = dataset(2, 600, 60);
    std::mt19937_64 rng(1);
    data.push_back(oracle::random_scene(rng, 1));
    TrainConfig cfg = small_config();
    cfg.epochs = 1;
    Trainer t(data, cfg);
    CHECK(t.usable_scenes() == 2);
    t.run();
    CHECK(t.report().skipped_scenes == 1);
    CHECK(t.report().rows.size() == 1);

    std::vector<PointScene> none = {oracle::random_scene(rng, 1)};
    CHECK_THROWS_AS(Trainer(none, cfg), DegenerateSceneError);
    CHECK_THROWS_AS(Trainer({}, cfg), DegenerateSceneError);
}
