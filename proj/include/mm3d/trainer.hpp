// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mm3d/consistency.hpp"
#include "mm3d/decoder.hpp"
#include "mm3d/encoder.hpp"
#include "mm3d/masking.hpp"
#include "mm3d/optim.hpp"
#include "mm3d/statistics.hpp"

namespace mm3d {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 4;
    double lr = 0.001;
    double weight_decay = 0.0005;
    std::vector<double> decay_at = {0.6, 0.8};
    double decay_factor = 0.1;
    double zeta1 = 1.0;
    double zeta2 = 1.0;
    double momentum = 0.999;
    std::uint64_t seed = 0;
    bool normalize_scenes = true;
    MaskStrategy strategy = MaskStrategy::informative_preserved;
    Progression progression = Progression::progressive;
    MaskSchedule schedule;
    StatConfig statistics;
    EncoderConfig encoder;
    DecoderConfig decoder;
    ConsistencyConfig consistency;

    void validate() const;
};

/// Reads the `train`, `masking`, `statistics`, `encoder`, `decoder` and
/// `consistency` sections; missing sections keep defaults.
TrainConfig train_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const TrainConfig& cfg);
/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct EpochLoss {
    std::size_t epoch = 0; // 1-based
    double loss_pc = 0.0;
    double loss_csd = 0.0;
    double loss_total = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct LossReport {
    std::vector<EpochLoss> rows;
    std::size_t skipped_samples = 0;
    std::size_t skipped_scenes = 0;
};

/// CSV `epoch,loss_pc,loss_csd,loss_total,lr,seconds`. With timing off the
/// seconds column is written as 0 so reruns compare bytewise.
std::string format_loss_csv(const LossReport& report, bool timing = true);

struct Checkpoint {
    TrainConfig config;
    EncoderParams online;
    EncoderParams teacher;
    DecoderParams decoder;
    AdamState adam;
    std::size_t epoch = 0; // completed epochs
    std::string rng_state;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on truncation, bad header, or version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Per-sample losses; undefined terms (weight zero) are reported as 0.
struct StepLoss {
    double loss_pc = 0.0;
    double loss_csd = 0.0;
    double total = 0.0;
    std::vector<std::size_t> skipped_csd_layers;
};

/// Stateful training loop. Each epoch visits every scene once in a shuffled
/// order, accumulating gradients over `batch_size` scenes per optimizer step.
class Trainer {
public:
    Trainer(std::vector<PointScene> dataset, TrainConfig cfg);
    /// Resumes from a checkpoint; the dataset must be the one it was trained on.
    Trainer(std::vector<PointScene> dataset, const Checkpoint& ckpt);

    const TrainConfig& config() const noexcept { return cfg_; }
    std::size_t epoch() const noexcept { return epoch_; }
    bool done() const noexcept { return epoch_ >= cfg_.epochs; }
    std::size_t usable_scenes() const noexcept { return usable_.size(); }

    /// Runs one epoch and appends its row to the report.
    const EpochLoss& run_epoch();
    void run();

    const LossReport& report() const noexcept { return report_; }
    Checkpoint checkpoint() const;

    const EncoderParams& online() const noexcept { return online_; }
    const TeacherState& teacher() const noexcept { return teacher_; }
    const DecoderParams& decoder() const noexcept { return decoder_; }

    /// Loss of one (input, target) pair with the current weights; if `grads`
    /// is set, gradients of the weighted total are added to it (optimizer order).
    StepLoss evaluate(const PointScene& scene, std::span<const PointId> input, std::span<const PointId> target,
                      std::vector<diff::Tensor>* grads) const;

    std::vector<ParamRef> trainable();
    std::vector<ConstParamRef> trainable() const;

private:
    struct Prepared {
        PointScene scene;
        StatField field;
        std::vector<PointId> ranking;
        MaskedSequence sequence;
    };

    void prepare(std::vector<PointScene> dataset);

    TrainConfig cfg_;
    std::vector<Prepared> prepared_;
    std::vector<std::size_t> usable_;
    EncoderParams online_;
    TeacherState teacher_;
    DecoderParams decoder_;
    AdamState adam_;
    Rng rng_;
    std::size_t epoch_ = 0;
    LossReport report_;
};

/// Trains from scratch for cfg.epochs epochs.
std::pair<Checkpoint, LossReport> train(std::vector<PointScene> dataset, const TrainConfig& cfg);

/// The scene as the trainer sees it (unit-ball normalized if configured).
PointScene prepare_scene(const PointScene& scene, const TrainConfig& cfg);

/// Masked sequence of one scene under the configured strategy. Random
/// rankings draw from `rng`.
MaskedSequence strategy_sequence(const PointScene& scene, const StatField& field, const TrainConfig& cfg, Rng& rng);

} // namespace mm3d
