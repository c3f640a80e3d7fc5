#pragma once

// Robustness evaluation: the distortion suite, per-method accuracy reports,
// the LSB baseline, embedding-position and lambda ablations, and a learned
// cover-vs-stego detector.

#include "idstego/networks.hpp"
#include "idstego/stego_core.hpp"
#include "idstego/toy_data.hpp"
#include "idstego/training.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace idstego {

// ---------------------------------------------------------------------------
// Distortions

enum class EvalKind {
    none,
    png,
    resize_half,
    bit_error,
    brightness,
    contrast,
    h264_abr,
    h264_crf,
    motion_blur,
    rain,
    saturate,
    shot_noise,
};

inline constexpr int kNumEvalKinds = 12;

std::string to_string(EvalKind kind);
EvalKind parse_eval_kind(const std::string& name);

/// One evaluation distortion with its single strength parameter:
///   bit_error p = 1e-3, brightness c = 0.2, contrast a = 1.5,
///   h264_abr kbps = 200, h264_crf crf = 28, motion_blur length = 7,
///   rain count = 40, saturate t = 0.3, shot_noise c = 60.
struct EvalDistortion {
    EvalKind kind = EvalKind::none;
    double value = 0.0;

    static EvalDistortion make(EvalKind kind);
    static EvalDistortion make(EvalKind kind, double value);

    /// "none", "png", "shot_noise(c=60)", ... Parameterless kinds print bare.
    std::string to_string() const;
    /// Accepts the bare name (default parameter) or "name(key=value)".
    static EvalDistortion parse(const std::string& text);
    std::string column() const { return idstego::to_string(kind); }
    bool needs_codec() const { return kind == EvalKind::h264_abr || kind == EvalKind::h264_crf; }

    bool operator==(const EvalDistortion&) const = default;
};

/// All twelve columns in table order, starting with "none".
std::vector<EvalDistortion> full_suite();
/// {png, brightness, contrast, saturate, shot_noise}: the distortions the
/// training attack layer has a differentiable counterpart for.
std::vector<EvalDistortion> differentiable_suite();
/// {png, resize_half, motion_blur, shot_noise}, plus h264_crf when a codec is usable.
std::vector<EvalDistortion> position_suite(bool with_codec);
std::vector<EvalDistortion> parse_suite(const std::vector<std::string>& names);

struct CodecOptions {
    std::filesystem::path ffmpeg;  // empty: $IDSTEGO_FFMPEG, then "ffmpeg" on PATH
    std::filesystem::path scratch_dir;  // empty: system temp directory
};

/// Resolved path of a runnable encoder, or nullopt.
std::optional<std::filesystem::path> find_codec(const CodecOptions& options);

struct DistortionResult {
    VideoArray video;
    bool skipped = false;
    std::string note;
};

/// Applies `d` to every frame. H.264 kinds shell out to the encoder and come
/// back skipped (with the input video) when no encoder is available.
DistortionResult apply_eval_distortion(const VideoArray& video, const EvalDistortion& d, RngState& rng,
                                       const CodecOptions& codec = {});

// ---------------------------------------------------------------------------
// Methods under test

class StegoMethod {
public:
    virtual ~StegoMethod() = default;
    virtual std::string name() const = 0;
    virtual std::int64_t message_bits() const = 0;
    virtual VideoArray embed(const EvalVideo& video, const BitMessage& msg) = 0;
    virtual BitMessage extract(const VideoArray& received) = 0;
};

/// Generation-based embedding with a trained bundle.
class GenerativeMethod : public StegoMethod {
public:
    explicit GenerativeMethod(ModelBundle bundle, std::string name = "generative");
    std::string name() const override { return name_; }
    std::int64_t message_bits() const override;
    VideoArray embed(const EvalVideo& video, const BitMessage& msg) override;
    BitMessage extract(const VideoArray& received) override;

private:
    ModelBundle bundle_;
    std::string name_;
};

/// Least-significant-bit baseline; positions are chosen from `seed`.
class LsbMethod : public StegoMethod {
public:
    LsbMethod(std::int64_t message_bits, std::uint64_t seed) : m_(message_bits), seed_(seed) {}
    std::string name() const override { return "lsb"; }
    std::int64_t message_bits() const override { return m_; }
    VideoArray embed(const EvalVideo& video, const BitMessage& msg) override;
    BitMessage extract(const VideoArray& received) override;

private:
    std::int64_t m_;
    std::uint64_t seed_;
};

/// Wraps another method but reports the message that was last embedded,
/// ignoring the received frames. Used to check that the harness is neutral.
class OracleMethod : public StegoMethod {
public:
    explicit OracleMethod(std::shared_ptr<StegoMethod> inner) : inner_(std::move(inner)) {}
    std::string name() const override { return "oracle"; }
    std::int64_t message_bits() const override { return inner_->message_bits(); }
    VideoArray embed(const EvalVideo& video, const BitMessage& msg) override;
    BitMessage extract(const VideoArray&) override { return last_; }

private:
    std::shared_ptr<StegoMethod> inner_;
    BitMessage last_;
};

/// Writes each bit into the least significant bit of the 8-bit value at
/// m seed-chosen positions, the same positions in every frame. The output is
/// on the 1/255 grid. Throws std::invalid_argument when m > 3*H*W.
VideoArray lsb_embed(const VideoArray& video, const BitMessage& msg, std::uint64_t seed);
/// Per-frame LSB reads averaged over frames; ties map to 1.
BitMessage lsb_extract(const VideoArray& video, std::int64_t m, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reports

struct EvalRow {
    std::string distortion;  // canonical text form
    std::string column;      // kind name
    bool skipped = false;
    std::string note;
    double mean_accuracy = 0.0;
    std::vector<double> per_video;
};

struct EvalReport {
    std::string method;
    std::int64_t bpf = 0;  // bits carried by each frame
    std::vector<EvalRow> rows;
    nlohmann::json fingerprint = nlohmann::json::object();
    std::vector<std::string> environment_notes;

    const EvalRow& row(const std::string& distortion) const;
    /// Mean over non-skipped rows whose column is in `columns` (all if empty).
    double mean_accuracy(const std::vector<std::string>& columns = {}) const;
    nlohmann::json to_json() const;
};

/// Embeds one fresh random message per video, applies each distortion to the
/// embedded video, and scores the extracted bits.
EvalReport evaluate_robustness(StegoMethod& method, const std::vector<EvalVideo>& videos,
                               const std::vector<EvalDistortion>& suite, std::uint64_t seed,
                               const CodecOptions& codec = {});

/// Method rows by distortion columns; skipped cells print "skipped".
std::string render_text_table(const std::vector<EvalReport>& reports);
std::string render_csv(const std::vector<EvalReport>& reports);
/// Grouped bar chart (one colour per report) with numeric labels.
void write_bar_chart(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

// ---------------------------------------------------------------------------
// Ablations

struct NamedLayout {
    std::string name;
    EmbeddingLayout layout;
};

/// Settings (a) 1-4/5-9, (b) 1-2/3-4, (c) 5-6/7-8 and the standard 1-3/4-6,
/// for an m-bit message split into two halves.
std::vector<NamedLayout> position_layouts(std::int64_t m = 18);

struct AblationSettings {
    TrainConfig base;                          // model, budget, seed
    std::filesystem::path identity_checkpoint;  // may be empty
    std::filesystem::path out_dir;
    std::int64_t eval_videos = 16;
    std::int64_t eval_frames = 8;
    std::uint64_t eval_seed = 0;
    CodecOptions codec;
    ProgressFn progress;
};

struct AblationTable {
    std::vector<std::string> row_names;
    std::vector<EvalReport> reports;  // one per row

    nlohmann::json to_json() const;
};

/// Trains one model per layout with identical seeds and budget, then
/// evaluates each on `suite` (default: position_suite).
AblationTable ablate_positions(const std::vector<NamedLayout>& layouts, const AblationSettings& settings,
                               std::vector<EvalDistortion> suite = {});

inline const std::vector<double> kDefaultLambdas{1.0, 0.1, 0.01, 0.005};

/// One training run per lambda, common seed; reports clean accuracy ("none").
AblationTable sweep_lambda(const std::vector<double>& lambdas, const AblationSettings& settings);

// ---------------------------------------------------------------------------
// Detector

enum class ProbeFeatures { raw, lsb_plane };

struct ProbeConfig {
    ProbeFeatures features = ProbeFeatures::raw;
    std::int64_t steps = 300;
    std::int64_t batch_size = 32;
    double lr = 1e-3;
    double train_fraction = 0.5;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    double auc = 0.5;
    std::int64_t train_count = 0;
    std::int64_t test_count = 0;
};

/// Area under the ROC curve by the rank-sum statistic; ties count one half.
double roc_auc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores);

/// Trains a small convolutional classifier on disjoint splits of the two
/// frame sets (N,3,H,W) and returns its test AUC (stego = positive).
/// Throws std::invalid_argument when one set is more than 10x the other.
ProbeResult steganalysis_probe(const torch::Tensor& covers, const torch::Tensor& stegos, const ProbeConfig& config);

}  // namespace idstego
