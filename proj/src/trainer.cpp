// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "mm3d/diff/ops.hpp"
#include "mm3d/error.hpp"

namespace mm3d {

namespace {

constexpr std::uint64_t kSampleStream = 0x9e3779b97f4a7c15ULL;

void require(bool ok, const char* message) {
    if (!ok) {
        throw ConfigError(message);
    }
}

template <class T>
T get(const nlohmann::json& obj, const char* key, T fallback) {
    try {
        return obj.value(key, fallback);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("train.{}: {}", key, e.what()));
    }
}

std::vector<diff::Var> leaves(const EncoderVars& enc, const DecoderVars& dec) {
    std::vector<diff::Var> out;
    for (const auto& layer : enc) {
        for (const LinearVars* lin : {&layer.pointwise, &layer.mix}) {
            out.push_back(lin->weight);
            out.push_back(lin->bias);
        }
    }
    for (const auto& layer : dec) {
        for (const Mlp3Vars* mlp : {&layer.psi1, &layer.psi2}) {
            for (const LinearVars* lin : {&mlp->l1, &mlp->l2, &mlp->l3}) {
                out.push_back(lin->weight);
                out.push_back(lin->bias);
            }
        }
    }
    return out;
}

std::string rng_to_string(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

} // namespace

void TrainConfig::validate() const {
    require(epochs >= 1, "epochs must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
    require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be non-negative");
    for (std::size_t i = 0; i < decay_at.size(); ++i) {
        require(decay_at[i] > 0.0 && decay_at[i] < 1.0, "decay_at fractions must lie in (0, 1)");
        require(i == 0 || decay_at[i] > decay_at[i - 1], "decay_at fractions must increase");
    }
    require(decay_factor > 0.0 && decay_factor <= 1.0, "decay_factor must lie in (0, 1]");
    require(zeta1 >= 0.0 && zeta2 >= 0.0 && std::isfinite(zeta1) && std::isfinite(zeta2),
            "zeta1 and zeta2 must be non-negative");
    require(zeta1 > 0.0 || zeta2 > 0.0, "at least one of zeta1, zeta2 must be positive");
    require(momentum >= 0.0 && momentum <= 1.0, "momentum must lie in [0, 1]");
    schedule.validate();
    statistics.validate();
    encoder.validate();
    decoder.validate();
    consistency.validate();
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("configuration must be a JSON object");
    }
    TrainConfig cfg;
    if (doc.contains("train")) {
        const auto& t = doc["train"];
        if (!t.is_object()) {
            throw ConfigError("train section must be an object");
        }
        cfg.epochs = get(t, "epochs", cfg.epochs);
        cfg.batch_size = get(t, "batch_size", cfg.batch_size);
        cfg.lr = get(t, "lr", cfg.lr);
        cfg.weight_decay = get(t, "weight_decay", cfg.weight_decay);
        cfg.decay_at = get(t, "decay_at", cfg.decay_at);
        cfg.decay_factor = get(t, "decay_factor", cfg.decay_factor);
        cfg.zeta1 = get(t, "zeta1", cfg.zeta1);
        cfg.zeta2 = get(t, "zeta2", cfg.zeta2);
        cfg.momentum = get(t, "momentum", cfg.momentum);
        cfg.seed = get(t, "seed", cfg.seed);
        cfg.normalize_scenes = get(t, "normalize_scenes", cfg.normalize_scenes);
        cfg.strategy = mask_strategy_from_string(get<std::string>(t, "strategy", to_string(cfg.strategy)));
        cfg.progression = get(t, "progressive", true) ? Progression::progressive : Progression::full_scene;
    }
    if (doc.contains("masking")) {
        cfg.schedule = mask_schedule_from_json(doc["masking"]);
    }
    if (doc.contains("statistics")) {
        cfg.statistics = stat_config_from_json(doc["statistics"]);
    }
    if (doc.contains("encoder")) {
        cfg.encoder = encoder_config_from_json(doc["encoder"]);
    }
    if (doc.contains("decoder")) {
        cfg.decoder = decoder_config_from_json(doc["decoder"]);
    }
    if (doc.contains("consistency")) {
        cfg.consistency = consistency_config_from_json(doc["consistency"]);
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {
        {"train",
         {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"weight_decay", cfg.weight_decay},
          {"decay_at", cfg.decay_at},
          {"decay_factor", cfg.decay_factor},
          {"zeta1", cfg.zeta1},
          {"zeta2", cfg.zeta2},
          {"momentum", cfg.momentum},
          {"seed", cfg.seed},
          {"normalize_scenes", cfg.normalize_scenes},
          {"strategy", to_string(cfg.strategy)},
          {"progressive", cfg.progression == Progression::progressive}}},
        {"masking", to_json(cfg.schedule)},
        {"statistics", to_json(cfg.statistics)},
        {"encoder", to_json(cfg.encoder)},
        {"decoder", to_json(cfg.decoder)},
        {"consistency", to_json(cfg.consistency)},
    };
}

std::string config_hash(const TrainConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_json(cfg).dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs) {
        throw ContractError(fmt::format("lr_at: epoch {} outside a {}-epoch run", epoch, cfg.epochs));
    }
    double lr = cfg.lr;
    for (double fraction : cfg.decay_at) {
        const auto boundary = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(cfg.epochs) - 1e-9));
        if (epoch >= boundary) {
            lr *= cfg.decay_factor;
        }
    }
    return lr;
}

std::string format_loss_csv(const LossReport& report, bool timing) {
    std::string out = "epoch,loss_pc,loss_csd,loss_total,lr,seconds\n";
    for (const auto& row : report.rows) {
        out += fmt::format("{},{},{},{},{},{}\n", row.epoch, row.loss_pc, row.loss_csd, row.loss_total, row.lr,
                           timing ? fmt::format("{:.3f}", row.seconds) : std::string("0"));
    }
    return out;
}

PointScene prepare_scene(const PointScene& scene, const TrainConfig& cfg) {
    return cfg.normalize_scenes ? normalize_scene(scene) : scene;
}

MaskedSequence strategy_sequence(const PointScene& scene, const StatField& field, const TrainConfig& cfg, Rng& rng) {
    return build_sequence_from_ranking(strategy_ranking(scene, field, cfg.strategy, rng), cfg.schedule);
}

Trainer::Trainer(std::vector<PointScene> dataset, TrainConfig cfg)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    prepare(std::move(dataset));
    Rng init(cfg_.seed);
    online_ = init_encoder(cfg_.encoder, init);
    decoder_ = init_decoder(cfg_.decoder, cfg_.encoder, init);
    teacher_ = make_teacher(online_, cfg_.momentum);
    adam_ = zero_moments(std::as_const(*this).trainable());
    rng_.seed(cfg_.seed ^ kSampleStream);
}

Trainer::Trainer(std::vector<PointScene> dataset, const Checkpoint& ckpt)
    : cfg_(ckpt.config) {
    cfg_.validate();
    check_encoder(ckpt.online, cfg_.encoder);
    check_encoder(ckpt.teacher, cfg_.encoder);
    check_decoder(ckpt.decoder, cfg_.decoder, cfg_.encoder);
    if (ckpt.epoch > cfg_.epochs) {
        throw CheckpointError(fmt::format("checkpoint at epoch {} of a {}-epoch run", ckpt.epoch, cfg_.epochs));
    }
    prepare(std::move(dataset));
    online_ = ckpt.online;
    teacher_ = TeacherState{ckpt.teacher, cfg_.momentum};
    decoder_ = ckpt.decoder;
    adam_ = ckpt.adam;
    if (adam_.m.size() != trainable().size() || adam_.v.size() != adam_.m.size()) {
        throw CheckpointError("checkpoint optimizer state does not match the model");
    }
    std::istringstream in(ckpt.rng_state);
    in >> rng_;
    if (!in) {
        throw CheckpointError("checkpoint RNG state is malformed");
    }
    epoch_ = ckpt.epoch;
}

void Trainer::prepare(std::vector<PointScene> dataset) {
    if (dataset.empty()) {
        throw DegenerateSceneError("training needs at least one scene");
    }
    Rng probe(cfg_.seed);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Prepared p;
        try {
            p.scene = prepare_scene(dataset[i], cfg_);
            p.field = compute_statistics(p.scene, cfg_.statistics);
            // Random rankings are redrawn per sample; building one here checks the schedule fits the scene.
            p.sequence = strategy_sequence(p.scene, p.field, cfg_, probe);
            const std::size_t largest = p.sequence.retained(1).size();
            if (!encoder_accepts(cfg_.encoder, largest)) {
                throw DegenerateSceneError(
                    fmt::format("a masked input of {} points is too small for the encoder", largest));
            }
        } catch (const DegenerateSceneError& e) {
            fmt::print(stderr, "warning: skipping scene {}: {}\n", i, e.what());
            ++report_.skipped_scenes;
            prepared_.push_back(std::move(p));
            continue;
        }
        usable_.push_back(i);
        prepared_.push_back(std::move(p));
    }
    if (usable_.empty()) {
        throw DegenerateSceneError("no usable scenes in the dataset");
    }
}

std::vector<ParamRef> Trainer::trainable() {
    auto out = online_.refs();
    for (auto& r : decoder_.refs()) {
        out.push_back(r);
    }
    return out;
}

std::vector<ConstParamRef> Trainer::trainable() const {
    auto out = online_.refs();
    for (auto& r : decoder_.refs()) {
        out.push_back(r);
    }
    return out;
}

StepLoss Trainer::evaluate(const PointScene& scene, std::span<const PointId> input, std::span<const PointId> target,
                           std::vector<diff::Tensor>* grads) const {
    const bool need_grad = grads != nullptr;
    diff::Tape tape;
    const EncoderVars enc = bind(tape, online_, need_grad);
    const DecoderVars dec = bind(tape, decoder_, need_grad);
    const HierFeatures hier = encode(scene, input, enc, cfg_.encoder, tape);

    StepLoss out;
    diff::Var total;
    if (cfg_.zeta1 > 0.0) {
        const auto rows = rows_for_ids(scene, target);
        diff::Tensor tpos({rows.size(), 3});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (int a = 0; a < 3; ++a) {
                tpos(i, a) = scene.positions[rows[i]][a];
            }
        }
        const auto grids = grids_for(hier, target.size(), cfg_.decoder);
        const ReconPrediction pred = expand_and_fold(hier, dec, grids, tape);
        diff::Var lpc = loss_pc(pred, tape.constant(std::move(tpos)));
        out.loss_pc = lpc.value().item();
        total = diff::scale(lpc, cfg_.zeta1);
    }
    if (cfg_.zeta2 > 0.0) {
        diff::Tape teacher_tape;
        const EncoderVars tvars = bind(teacher_tape, teacher_.params, false);
        const HierFeatures thier = encode(scene, target, tvars, cfg_.encoder, teacher_tape);
        const CsdResult csd = csd_loss(match_correspondence(hier, thier), hier, thier, cfg_.consistency, tape);
        out.loss_csd = csd.loss.value().item();
        out.skipped_csd_layers = csd.skipped_layers;
        diff::Var term = diff::scale(csd.loss, cfg_.zeta2);
        total = total.valid() ? diff::add(total, term) : term;
    }
    out.total = total.value().item();

    if (need_grad) {
        tape.backward(total);
        const auto vars = leaves(enc, dec);
        if (grads->empty()) {
            for (const auto& v : vars) {
                grads->emplace_back(v.shape());
            }
        }
        for (std::size_t i = 0; i < vars.size(); ++i) {
            (*grads)[i].accumulate(tape.grad(vars[i]));
        }
    }
    return out;
}

const EpochLoss& Trainer::run_epoch() {
    if (done()) {
        throw ContractError("run_epoch: training already finished");
    }
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch_, cfg_);

    std::vector<std::size_t> order = usable_;
    std::shuffle(order.begin(), order.end(), rng_);

    std::vector<diff::Tensor> grads;
    std::size_t accumulated = 0;
    double sum_pc = 0.0, sum_csd = 0.0, sum_total = 0.0;
    std::size_t samples = 0;

    auto step = [&] {
        const double inv = 1.0 / static_cast<double>(accumulated);
        for (auto& g : grads) {
            for (double& x : g.values()) {
                x *= inv;
            }
        }
        adamw_step(trainable(), grads, adam_, lr, cfg_.weight_decay);
        ema_update(teacher_, online_);
        grads.clear();
        accumulated = 0;
    };

    for (std::size_t idx : order) {
        const Prepared& p = prepared_[idx];
        MaskedSequence drawn;
        const MaskedSequence* seq = &p.sequence;
        if (cfg_.strategy == MaskStrategy::random) {
            drawn = strategy_sequence(p.scene, p.field, cfg_, rng_);
            seq = &drawn;
        }
        const TrainingPair pair = sample_training_pair(*seq, rng_, cfg_.schedule, cfg_.progression);
        StepLoss loss;
        try {
            loss = evaluate(p.scene, pair.input, pair.target, &grads);
        } catch (const DegenerateSceneError& e) {
            fmt::print(stderr, "warning: epoch {} scene {} step {}: {}\n", epoch_ + 1, idx, pair.step, e.what());
            ++report_.skipped_samples;
            continue;
        }
        sum_pc += loss.loss_pc;
        sum_csd += loss.loss_csd;
        sum_total += loss.total;
        ++samples;
        if (++accumulated == cfg_.batch_size) {
            step();
        }
    }
    if (accumulated > 0) {
        step();
    }

    EpochLoss row;
    row.epoch = epoch_ + 1;
    if (samples > 0) {
        const double n = static_cast<double>(samples);
        row.loss_pc = sum_pc / n;
        row.loss_csd = sum_csd / n;
        row.loss_total = sum_total / n;
    }
    row.lr = lr;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++epoch_;
    report_.rows.push_back(row);
    return report_.rows.back();
}

void Trainer::run() {
    while (!done()) {
        run_epoch();
    }
}

Checkpoint Trainer::checkpoint() const {
    return Checkpoint{cfg_, online_, teacher_.params, decoder_, adam_, epoch_, rng_to_string(rng_)};
}

std::pair<Checkpoint, LossReport> train(std::vector<PointScene> dataset, const TrainConfig& cfg) {
    Trainer trainer(std::move(dataset), cfg);
    trainer.run();
    return {trainer.checkpoint(), trainer.report()};
}

} // namespace mm3d
