#pragma once

// Learnable components of the generative embedding pipeline.
//
//   cover --E_phi--> feature map --N x Secret-ID(AdaIN, fused identity)--> D_phi --> stego
//   reference --E_id--> identity vector;  message segment --E_m--> message feature
//   stego --E_ext--> m logits
//
// All modules operate on batches (B,3,H,W); single frames (3,H,W) are
// accepted by the bundle-level operations and returned unbatched.

#include "idstego/stego_core.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace idstego {

inline constexpr double kAdainEpsilon = 1e-5;
inline constexpr std::int64_t kEncoderStride = 4;

struct ModelConfig {
    std::int64_t image_size = 64;
    std::int64_t id_dim = 128;
    std::int64_t feature_channels = 128;
    std::int64_t num_blocks = 9;
    std::int64_t id_width = 16;
    std::int64_t extractor_width = 64;
    std::int64_t disc_width = 64;
    std::int64_t message_bits = 9;

    void validate() const;
};

/// Which message bits drive which Secret-ID blocks.
///
/// Blocks are numbered 1..N as in the user-facing text form
/// "1-9:1-3,10-18:4-6" (bit range : block range, both inclusive, 1-based).
class EmbeddingLayout {
public:
    struct Segment {
        std::int64_t bit_begin;    // 0-based, inclusive
        std::int64_t bit_count;
        std::int64_t block_first;  // 1-based, inclusive
        std::int64_t block_last;   // 1-based, inclusive

        bool covers_block(std::int64_t block) const { return block >= block_first && block <= block_last; }
        bool operator==(const Segment&) const = default;
    };

    EmbeddingLayout() = default;
    EmbeddingLayout(std::int64_t num_blocks, std::vector<Segment> segments);

    /// Default placement: m <= 9 uses a single segment on blocks 1-6; larger
    /// payloads split into two halves on blocks 1-3 and 4-6.
    static EmbeddingLayout standard(std::int64_t m, std::int64_t num_blocks = 9);
    /// Two equal halves of m on the given 1-based block ranges.
    static EmbeddingLayout two_segments(std::int64_t m, std::int64_t first_begin, std::int64_t first_end,
                                        std::int64_t second_begin, std::int64_t second_end,
                                        std::int64_t num_blocks = 9);
    static EmbeddingLayout parse(const std::string& text, std::int64_t num_blocks = 9);

    std::string to_string() const;
    std::int64_t num_blocks() const { return num_blocks_; }
    std::int64_t message_bits() const;
    const std::vector<Segment>& segments() const { return segments_; }
    /// Index of the segment driving `block` (1-based), or -1.
    std::int64_t segment_for_block(std::int64_t block) const;

    /// Throws std::invalid_argument unless blocks are disjoint within [1,N]
    /// and bit ranges partition [0,m).
    void validate(std::int64_t m) const;

    bool operator==(const EmbeddingLayout&) const = default;

private:
    std::int64_t num_blocks_ = 0;
    std::vector<Segment> segments_;
};

/// F'_id = F_id + lambda * F_m, elementwise.
torch::Tensor fuse_identity(const torch::Tensor& f_id, const torch::Tensor& f_m, double lambda);

/// Adaptive instance normalization with explicit target statistics.
///
/// content: (B,C,H,W) or (C,H,W); sigma/mu: (B,C) or (C). Per channel:
///   out = sigma * (x - mean(x)) / (std(x) + eps) + mu
/// with the population standard deviation over spatial positions.
torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& sigma, const torch::Tensor& mu,
                    double eps = kAdainEpsilon);

// ---------------------------------------------------------------------------
// Modules

/// Small convolutional identity embedder; output is L2-normalized.
class IdentityExtractorImpl : public torch::nn::Module {
public:
    IdentityExtractorImpl(std::int64_t width, std::int64_t id_dim);
    torch::Tensor forward(const torch::Tensor& images);

private:
    torch::nn::Sequential body_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(IdentityExtractor);

/// Stride-4 frame encoder producing (C_f, H/4, W/4).
class FrameEncoderImpl : public torch::nn::Module {
public:
    explicit FrameEncoderImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& frames);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(FrameEncoder);

/// One-layer affine message encoder, F_m = W_m M + b_m.
class MessageEncoderImpl : public torch::nn::Module {
public:
    MessageEncoderImpl(std::int64_t bits, std::int64_t id_dim);
    torch::Tensor forward(const torch::Tensor& bits);

    torch::nn::Linear& linear() { return linear_; }

private:
    torch::nn::Linear linear_{nullptr};
};
TORCH_MODULE(MessageEncoder);

/// Residual block with two AdaIN sites conditioned on a (fused) identity:
///   out = f + conv2(relu(adain(conv1(relu(adain(f, s1))), s2)))
/// Target statistics come from learned affine maps of the identity vector,
/// sigma = 1 + A_sigma id, mu = A_mu id. Convolutions are bias-free 3x3 with
/// reflection padding.
class SecretIdBlockImpl : public torch::nn::Module {
public:
    SecretIdBlockImpl(std::int64_t channels, std::int64_t id_dim);
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& identity);

    torch::nn::Conv2d& conv1() { return conv1_; }
    torch::nn::Conv2d& conv2() { return conv2_; }

private:
    std::int64_t channels_;
    torch::nn::Linear style1_{nullptr}, style2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(SecretIdBlock);

/// Four upsample blocks (two 2x, two 1x; each upsample, conv, BatchNorm,
/// ReLU), then reflection pad and a 7x7 conv to RGB in [0,1].
class FrameDecoderImpl : public torch::nn::Module {
public:
    explicit FrameDecoderImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& features);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(FrameDecoder);

/// Seven 3x3 conv layers with ReLU (three of them stride 2), global average
/// pooling and an affine head to m logits.
class MessageExtractorImpl : public torch::nn::Module {
public:
    MessageExtractorImpl(std::int64_t width, std::int64_t bits);
    torch::Tensor forward(const torch::Tensor& frames);

private:
    torch::nn::Sequential body_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(MessageExtractor);

struct DiscriminatorOutput {
    std::vector<torch::Tensor> scores;                 // one score map per scale
    std::vector<std::vector<torch::Tensor>> features;  // per scale, layers 1..H
};

/// PatchGAN-style discriminator returning every hidden activation.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(std::int64_t width);
    std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& frames);

    static constexpr std::int64_t kFeatureLayers = 4;

private:
    std::vector<torch::nn::Conv2d> layers_;
    torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Two patch discriminators: full resolution and 2x average-pooled.
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    explicit MultiScaleDiscriminatorImpl(std::int64_t width);
    DiscriminatorOutput forward(const torch::Tensor& frames);
    /// Mean score of the finest scale; used by the gradient penalty.
    torch::Tensor finest_mean_score(const torch::Tensor& frames);

    static constexpr std::int64_t kScales = 2;

private:
    PatchDiscriminator full_{nullptr}, half_{nullptr};
};
TORCH_MODULE(MultiScaleDiscriminator);

// ---------------------------------------------------------------------------
// Bundle

/// Every parameter of the system plus the layout and lambda.
///
/// Parameter names are hierarchical ("secret_id_3.conv1.weight") and are the
/// keys of the checkpoint format.
class ModelBundleImpl : public torch::nn::Module {
public:
    ModelBundleImpl(ModelConfig config, EmbeddingLayout layout, double lambda);

    const ModelConfig& config() const { return config_; }
    const EmbeddingLayout& layout() const { return layout_; }
    double lambda() const { return lambda_; }
    void set_lambda(double lambda);
    std::int64_t message_bits() const { return config_.message_bits; }

    /// Keeps the identity extractor in inference mode regardless of `on`.
    void train(bool on = true) override;

    IdentityExtractor& identity_extractor() { return id_extractor_; }
    FrameEncoder& frame_encoder() { return encoder_; }
    MessageEncoder& message_encoder(std::size_t segment) { return message_encoders_.at(segment); }
    std::size_t num_message_encoders() const { return message_encoders_.size(); }
    SecretIdBlock& secret_id_block(std::size_t index) { return blocks_.at(index); }
    FrameDecoder& decoder() { return decoder_; }
    MessageExtractor& extractor() { return extractor_; }
    MultiScaleDiscriminator& discriminator() { return discriminator_; }

    /// E_phi, every E_m, Secret-ID blocks, D_phi and E_ext.
    std::vector<torch::Tensor> generator_parameters();
    std::vector<torch::Tensor> discriminator_parameters();
    /// Stops gradients into E_id and puts it in inference mode.
    void freeze_identity_extractor();

    // Batched pipeline pieces; inputs are (B,...) tensors.
    torch::Tensor identity_batch(const torch::Tensor& images);
    torch::Tensor features_batch(const torch::Tensor& frames);
    /// Per-block identity vectors (N entries) for messages (B,m).
    std::vector<torch::Tensor> block_identities(const torch::Tensor& f_id, const torch::Tensor& messages);
    torch::Tensor generate_batch(const torch::Tensor& covers, const torch::Tensor& f_id,
                                 const torch::Tensor& messages);
    /// Same as generate_batch with every block conditioned on plain F_id.
    torch::Tensor swap_without_message(const torch::Tensor& covers, const torch::Tensor& f_id);
    torch::Tensor extract_batch(const torch::Tensor& frames);

private:
    ModelConfig config_;
    EmbeddingLayout layout_;
    double lambda_;

    IdentityExtractor id_extractor_{nullptr};
    FrameEncoder encoder_{nullptr};
    std::vector<MessageEncoder> message_encoders_;
    std::vector<SecretIdBlock> blocks_;
    FrameDecoder decoder_{nullptr};
    MessageExtractor extractor_{nullptr};
    MultiScaleDiscriminator discriminator_{nullptr};
};
TORCH_MODULE(ModelBundle);

/// Builds a bundle with deterministic initialization from `seed`.
ModelBundle make_bundle(const ModelConfig& config, const EmbeddingLayout& layout, double lambda,
                        std::uint64_t seed);

// Frame-level operations. Frames may be (3,H,W) or (B,3,H,W); outputs match.

torch::Tensor extract_identity(ModelBundle& bundle, const torch::Tensor& image);
torch::Tensor extract_features(ModelBundle& bundle, const torch::Tensor& frame);
/// Message feature for one segment; `segment_bits` length must equal the segment's bit count.
torch::Tensor encode_message(ModelBundle& bundle, std::size_t segment, const BitMessage& segment_bits);
torch::Tensor generate_stego_frame(ModelBundle& bundle, const torch::Tensor& cover,
                                   const torch::Tensor& reference, const BitMessage& msg);
/// Returns m logits (or (B,m) for batched input).
torch::Tensor extract_message(ModelBundle& bundle, const torch::Tensor& frame);
DiscriminatorOutput discriminate(ModelBundle& bundle, const torch::Tensor& frame);

/// Video-level extraction: mean of per-frame logits.
torch::Tensor extract_video_logits(ModelBundle& bundle, const torch::Tensor& frames);

}  // namespace idstego
