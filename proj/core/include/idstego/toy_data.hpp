#pragma once

// Procedural "avatar" dataset with independently controllable identity and
// attributes. Identity traits are pure functions of the identity id; attributes
// (pose, placement, background) are sampled separately.

#include "idstego/networks.hpp"
#include "idstego/stego_core.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace idstego {

inline constexpr std::int64_t kTrainIdentities = 64;
inline constexpr std::int64_t kHeldOutIdentities = 16;

struct IdentityTraits {
    double hue;            // head hue in [0,1)
    double shape_ratio;    // head height / width
    double eye_spacing;    // eye offset as a fraction of head half-width
    double mouth_width;    // fraction of head half-width
    std::uint16_t marker;  // 3x3 glyph, bit i = cell i (row-major)
};

IdentityTraits identity_traits(std::int64_t identity_id);

struct AvatarParams {
    std::int64_t identity_id = 0;
    double dx = 0.0;          // horizontal offset, fraction of half-size
    double dy = 0.0;
    double rotation = 0.0;    // radians
    double scale = 1.0;
    double background = 0.5;  // gray level

    bool operator==(const AvatarParams&) const = default;
};

/// Attributes uniform in their ranges; identity left at `identity_id`.
AvatarParams sample_attributes(RngState& rng, std::int64_t identity_id);

/// Deterministic 4x4-supersampled rasterization; returns (3,H,W) float in [0,1].
/// H and W must be positive multiples of 16.
torch::Tensor render_avatar(const AvatarParams& params, std::int64_t height, std::int64_t width);

/// Attribute trajectory of a video; frame 0 equals the sampled base pose.
std::vector<AvatarParams> video_trajectory(std::int64_t identity_id, std::uint64_t motion_seed, std::int64_t frames);

VideoArray render_video(std::int64_t identity_id, std::uint64_t motion_seed, std::int64_t frames,
                        std::int64_t height, std::int64_t width);

/// Cover frames, reference images (a different identity per sample), and ids.
struct FrameBatch {
    torch::Tensor covers;      // (B,3,H,W)
    torch::Tensor references;  // (B,3,H,W)
    std::vector<std::int64_t> cover_ids;
    std::vector<std::int64_t> reference_ids;
};

/// Identities are drawn from [id_begin, id_begin + id_count).
FrameBatch sample_frame_batch(RngState& rng, std::int64_t batch, std::int64_t size, std::int64_t id_begin = 0,
                              std::int64_t id_count = kTrainIdentities);

/// A cover video and the reference image whose identity it should take on.
struct EvalVideo {
    VideoArray cover;
    torch::Tensor reference;  // (3,H,W)
    std::int64_t cover_id;
    std::int64_t reference_id;
};

/// Held-out evaluation videos (identities outside the training range by default).
std::vector<EvalVideo> make_eval_videos(std::uint64_t seed, std::int64_t count, std::int64_t frames,
                                        std::int64_t size, std::int64_t id_begin = kTrainIdentities,
                                        std::int64_t id_count = kHeldOutIdentities);

struct PretrainConfig {
    std::int64_t num_identities = kTrainIdentities;
    std::int64_t steps = 400;
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    double logit_scale = 16.0;
    std::uint64_t seed = 0;
    std::int64_t image_size = 64;
};

struct PretrainReport {
    double final_loss = 0.0;
    double train_accuracy = 0.0;  // classification accuracy over the last steps
    double same_cosine = 0.0;     // mean cosine between renders of one identity
    double cross_cosine = 0.0;    // mean cosine between different identities
    double margin = 0.0;          // same_cosine - cross_cosine
};

/// Trains `extractor` with a cosine-softmax classification head over
/// `num_identities` identities, discards the head, and freezes the extractor.
/// The margin is measured on fresh renders of the training identities.
/// Throws std::invalid_argument for fewer than 2 identities and
/// std::runtime_error on divergence.
PretrainReport pretrain_identity_extractor(IdentityExtractor& extractor, const PretrainConfig& config,
                                           const std::function<void(std::int64_t, double)>& on_step = {});

/// Writes `count` toy videos as PNG frame folders plus a top-level manifest
/// describing identity and per-frame attributes.
void export_dataset(const std::filesystem::path& dir, std::uint64_t seed, std::int64_t count, std::int64_t frames,
                    std::int64_t size);

}  // namespace idstego
