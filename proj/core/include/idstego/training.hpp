#pragma once

// Alternating adversarial optimization with a two-phase attack schedule.
//
// Each step: sample messages, generate stego frames, one discriminator update
// (hinge/log loss + alpha4 * gradient penalty, real = reference renders), then
// one generator-side update on the weighted total loss. From step
// ceil(attack_start_fraction * total_steps) on (0-based), every stego frame
// passes through an independently sampled attack before extraction.

#include "idstego/attacking_layer.hpp"
#include "idstego/losses.hpp"
#include "idstego/networks.hpp"
#include "idstego/toy_data.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace idstego {

struct TrainConfig {
    ModelConfig model;
    std::string layout;  // empty: EmbeddingLayout::standard
    double lambda = 0.01;
    LossWeights weights;
    AdversarialForm adversarial = AdversarialForm::hinge;
    std::int64_t feature_match_start = 2;

    double lr = 4e-4;
    std::int64_t batch_size = 4;
    std::int64_t total_steps = 10000;
    double attack_start_fraction = 0.8;
    bool attack_enabled = true;
    std::uint64_t seed = 0;

    std::int64_t train_identities = kTrainIdentities;
    std::int64_t checkpoint_every = 1000;
    std::int64_t eval_every = 500;  // 0 disables periodic clean-accuracy evaluation
    std::int64_t eval_videos = 16;
    std::int64_t eval_frames = 8;

    EmbeddingLayout resolved_layout() const;
    /// First 0-based step that is attacked.
    std::int64_t attack_start_step() const;
    bool attacked_at(std::int64_t step) const;
    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Strict: unknown keys are errors; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepMetrics {
    std::int64_t step = 0;  // 0-based index of the step that produced these values
    double d_loss = 0, gp = 0;
    double identity = 0, attribute = 0, secret = 0, adversarial = 0, total = 0;
    double bit_accuracy = 0;  // on the (possibly attacked) training batch
    bool attacked = false;
    std::vector<std::string> attacks;            // per frame, canonical text
    std::optional<double> clean_accuracy;        // periodic held-out evaluation

    nlohmann::json to_json() const;
    bool operator==(const StepMetrics&) const = default;
};

struct TrainState {
    TrainConfig config;
    std::int64_t step = 0;  // completed steps
    ModelBundle bundle{nullptr};
    std::unique_ptr<torch::optim::Adam> g_opt;
    std::unique_ptr<torch::optim::Adam> d_opt;
    RngState data_rng;
    RngState message_rng;
    RngState attack_rng;
    RngState gp_rng;
    double ema_secret = 0.0;
    double ema_accuracy = 0.0;

    TrainState(TrainConfig config, ModelBundle bundle);
};

/// Fresh bundle with deterministic init from the config seed; E_id loaded from
/// `identity_checkpoint` (when non-empty) and frozen.
ModelBundle make_training_bundle(const TrainConfig& config, const std::filesystem::path& identity_checkpoint);

/// Throws std::runtime_error naming the offending loss when a loss is not finite.
StepMetrics train_step(TrainState& state, const FrameBatch& batch);

/// Mean bit accuracy over held-out videos: one message per video, logits
/// averaged over frames, then binarized. Leaves the bundle in eval mode.
double clean_accuracy(ModelBundle& bundle, const std::vector<EvalVideo>& videos, std::uint64_t seed);

void save_train_state(TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

struct TrainResult {
    std::filesystem::path final_checkpoint;  // model-only checkpoint
    std::filesystem::path metrics_log;       // JSON lines, one per step
    std::vector<StepMetrics> metrics;        // steps run by this call
    double final_clean_accuracy = 0.0;
};

using ProgressFn = std::function<void(const StepMetrics&)>;

/// Runs the remaining steps of `state`, appending to <out>/metrics.jsonl,
/// checkpointing train state every checkpoint_every steps and right before
/// the attack phase, and writing <out>/model_final.ckpt.
TrainResult train(TrainState& state, const std::filesystem::path& out_dir, const ProgressFn& progress = {});

/// Convenience: fresh state from `config` (+ E_id checkpoint), then train().
TrainResult train(const TrainConfig& config, const std::filesystem::path& identity_checkpoint,
                  const std::filesystem::path& out_dir, const ProgressFn& progress = {});

}  // namespace idstego
