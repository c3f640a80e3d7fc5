#include "idstego/networks.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace idstego {

namespace nn = torch::nn;
using torch::Tensor;

namespace {

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                bool bias = true)
{
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad).bias(bias));
}

struct Batched {
    Tensor tensor;
    bool was_single;
};

Batched as_batch(const Tensor& frames)
{
    if (frames.dim() == 3)
        return {frames.unsqueeze(0), true};
    return {frames, false};
}

Tensor unbatch(const Tensor& t, bool single)
{
    return single ? t.squeeze(0) : t;
}

std::int64_t parse_int(const std::string& s, const std::string& context)
{
    try {
        std::size_t pos = 0;
        auto v = std::stoll(s, &pos);
        if (pos != s.size())
            throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("EmbeddingLayout: bad integer '" + s + "' in '" + context + "'");
    }
}

std::pair<std::int64_t, std::int64_t> parse_range(const std::string& s, const std::string& context)
{
    auto dash = s.find('-');
    if (dash == std::string::npos) {
        auto v = parse_int(s, context);
        return {v, v};
    }
    return {parse_int(s.substr(0, dash), context), parse_int(s.substr(dash + 1), context)};
}

}  // namespace

void ModelConfig::validate() const
{
    if (image_size <= 0 || image_size % 16 != 0)
        throw std::invalid_argument("ModelConfig: image_size must be a positive multiple of 16");
    if (id_dim < 1 || feature_channels < 4 || feature_channels % 4 != 0)
        throw std::invalid_argument("ModelConfig: id_dim >= 1 and feature_channels a multiple of 4 required");
    if (num_blocks < 1 || id_width < 1 || extractor_width < 1 || disc_width < 1)
        throw std::invalid_argument("ModelConfig: widths and block count must be positive");
    if (message_bits < 1)
        throw std::invalid_argument("ModelConfig: message_bits must be >= 1");
}

// ---------------------------------------------------------------------------
// EmbeddingLayout

EmbeddingLayout::EmbeddingLayout(std::int64_t num_blocks, std::vector<Segment> segments)
    : num_blocks_(num_blocks), segments_(std::move(segments))
{
    if (num_blocks_ < 1)
        throw std::invalid_argument("EmbeddingLayout: num_blocks must be >= 1");
    if (segments_.empty())
        throw std::invalid_argument("EmbeddingLayout: at least one segment required");
    validate(message_bits());
}

EmbeddingLayout EmbeddingLayout::standard(std::int64_t m, std::int64_t num_blocks)
{
    if (m < 1)
        throw std::invalid_argument("EmbeddingLayout::standard: m must be >= 1");
    if (num_blocks < 6)
        throw std::invalid_argument("EmbeddingLayout::standard: needs at least 6 blocks");
    if (m <= 9)
        return EmbeddingLayout(num_blocks, {{0, m, 1, 6}});
    return two_segments(m, 1, 3, 4, 6, num_blocks);
}

EmbeddingLayout EmbeddingLayout::two_segments(std::int64_t m, std::int64_t first_begin, std::int64_t first_end,
                                              std::int64_t second_begin, std::int64_t second_end,
                                              std::int64_t num_blocks)
{
    if (m < 2)
        throw std::invalid_argument("EmbeddingLayout::two_segments: m must be >= 2");
    const std::int64_t first = (m + 1) / 2;
    return EmbeddingLayout(num_blocks,
                           {{0, first, first_begin, first_end}, {first, m - first, second_begin, second_end}});
}

EmbeddingLayout EmbeddingLayout::parse(const std::string& text, std::int64_t num_blocks)
{
    std::vector<Segment> segments;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("EmbeddingLayout: expected 'bits:blocks' in '" + item + "'");
        auto [b0, b1] = parse_range(item.substr(0, colon), text);
        auto [k0, k1] = parse_range(item.substr(colon + 1), text);
        if (b0 < 1 || b1 < b0)
            throw std::invalid_argument("EmbeddingLayout: bad bit range in '" + item + "'");
        segments.push_back({b0 - 1, b1 - b0 + 1, k0, k1});
    }
    return EmbeddingLayout(num_blocks, std::move(segments));
}

std::string EmbeddingLayout::to_string() const
{
    std::ostringstream os;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& s = segments_[i];
        if (i)
            os << ',';
        os << s.bit_begin + 1 << '-' << s.bit_begin + s.bit_count << ':' << s.block_first << '-' << s.block_last;
    }
    return os.str();
}

std::int64_t EmbeddingLayout::message_bits() const
{
    std::int64_t m = 0;
    for (const auto& s : segments_)
        m += s.bit_count;
    return m;
}

std::int64_t EmbeddingLayout::segment_for_block(std::int64_t block) const
{
    for (std::size_t i = 0; i < segments_.size(); ++i)
        if (segments_[i].covers_block(block))
            return static_cast<std::int64_t>(i);
    return -1;
}

void EmbeddingLayout::validate(std::int64_t m) const
{
    std::vector<int> block_used(static_cast<std::size_t>(num_blocks_ + 1), 0);
    std::vector<int> bit_used(static_cast<std::size_t>(std::max<std::int64_t>(m, 0)), 0);
    for (const auto& s : segments_) {
        if (s.block_first < 1 || s.block_last > num_blocks_ || s.block_first > s.block_last)
            throw std::invalid_argument("EmbeddingLayout: block range " + std::to_string(s.block_first) + "-" +
                                        std::to_string(s.block_last) + " outside [1," +
                                        std::to_string(num_blocks_) + "]");
        for (auto b = s.block_first; b <= s.block_last; ++b)
            if (block_used[static_cast<std::size_t>(b)]++)
                throw std::invalid_argument("EmbeddingLayout: block " + std::to_string(b) +
                                            " assigned to two segments");
        if (s.bit_count < 1 || s.bit_begin < 0 || s.bit_begin + s.bit_count > m)
            throw std::invalid_argument("EmbeddingLayout: bit range outside [1," + std::to_string(m) + "]");
        for (auto i = s.bit_begin; i < s.bit_begin + s.bit_count; ++i)
            if (bit_used[static_cast<std::size_t>(i)]++)
                throw std::invalid_argument("EmbeddingLayout: bit " + std::to_string(i + 1) +
                                            " assigned to two segments");
    }
    for (std::size_t i = 0; i < bit_used.size(); ++i)
        if (!bit_used[i])
            throw std::invalid_argument("EmbeddingLayout: bit " + std::to_string(i + 1) + " not assigned");
}

// ---------------------------------------------------------------------------
// Functional pieces

Tensor fuse_identity(const Tensor& f_id, const Tensor& f_m, double lambda)
{
    if (f_id.sizes() != f_m.sizes())
        throw std::invalid_argument("fuse_identity: dimension mismatch");
    return f_id + lambda * f_m;
}

Tensor adain(const Tensor& content, const Tensor& sigma, const Tensor& mu, double eps)
{
    auto [x, single] = as_batch(content);
    auto s = single ? sigma.unsqueeze(0) : sigma;
    auto m = single ? mu.unsqueeze(0) : mu;
    if (x.dim() != 4)
        throw std::invalid_argument("adain: content must be (C,H,W) or (B,C,H,W)");
    const auto channels = x.size(1);
    if (s.dim() != 2 || m.dim() != 2 || s.size(1) != channels || m.size(1) != channels ||
        s.size(0) != x.size(0) || m.size(0) != x.size(0))
        throw std::invalid_argument("adain: target statistics must have one entry per channel (" +
                                    std::to_string(channels) + ")");
    auto mean = x.mean({2, 3}, /*keepdim=*/true);
    auto centered = x - mean;
    auto std = centered.pow(2).mean({2, 3}, true).sqrt();
    auto out = s.unsqueeze(-1).unsqueeze(-1) * centered / (std + eps) + m.unsqueeze(-1).unsqueeze(-1);
    return unbatch(out, single);
}

// ---------------------------------------------------------------------------
// Modules

IdentityExtractorImpl::IdentityExtractorImpl(std::int64_t width, std::int64_t id_dim)
{
    body_ = nn::Sequential(conv(3, width, 3, 1, 1), nn::BatchNorm2d(width), nn::ReLU(),
                           conv(width, 2 * width, 4, 2, 1), nn::BatchNorm2d(2 * width), nn::ReLU(),
                           conv(2 * width, 4 * width, 4, 2, 1), nn::BatchNorm2d(4 * width), nn::ReLU(),
                           conv(4 * width, 4 * width, 4, 2, 1), nn::BatchNorm2d(4 * width), nn::ReLU(),
                           nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)), nn::Flatten());
    head_ = nn::Linear(4 * width, id_dim);
    register_module("body", body_);
    register_module("head", head_);
}

Tensor IdentityExtractorImpl::forward(const Tensor& images)
{
    auto e = head_(body_->forward(images));
    return torch::nn::functional::normalize(e, torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));
}

FrameEncoderImpl::FrameEncoderImpl(std::int64_t channels)
{
    const auto c4 = channels / 4, c2 = channels / 2;
    body_ = nn::Sequential(nn::ReflectionPad2d(3), conv(3, c4, 7, 1, 0), nn::BatchNorm2d(c4), nn::ReLU(),
                           conv(c4, c2, 3, 2, 1), nn::BatchNorm2d(c2), nn::ReLU(),
                           conv(c2, channels, 3, 2, 1), nn::BatchNorm2d(channels), nn::ReLU());
    register_module("body", body_);
}

Tensor FrameEncoderImpl::forward(const Tensor& frames)
{
    return body_->forward(frames);
}

MessageEncoderImpl::MessageEncoderImpl(std::int64_t bits, std::int64_t id_dim)
{
    linear_ = register_module("linear", nn::Linear(bits, id_dim));
}

Tensor MessageEncoderImpl::forward(const Tensor& bits)
{
    return linear_(bits);
}

SecretIdBlockImpl::SecretIdBlockImpl(std::int64_t channels, std::int64_t id_dim) : channels_(channels)
{
    style1_ = register_module("style1", nn::Linear(id_dim, 2 * channels));
    style2_ = register_module("style2", nn::Linear(id_dim, 2 * channels));
    conv1_ = register_module("conv1", conv(channels, channels, 3, 1, 0, /*bias=*/false));
    conv2_ = register_module("conv2", conv(channels, channels, 3, 1, 0, /*bias=*/false));
}

Tensor SecretIdBlockImpl::forward(const Tensor& features, const Tensor& identity)
{
    namespace F = torch::nn::functional;
    const auto pad = F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect);
    auto s1 = style1_(identity);
    auto s2 = style2_(identity);
    auto h = adain(features, 1.0 + s1.narrow(1, 0, channels_), s1.narrow(1, channels_, channels_));
    h = conv1_(F::pad(torch::relu(h), pad));
    h = adain(h, 1.0 + s2.narrow(1, 0, channels_), s2.narrow(1, channels_, channels_));
    h = conv2_(F::pad(torch::relu(h), pad));
    return features + h;
}

FrameDecoderImpl::FrameDecoderImpl(std::int64_t channels)
{
    const auto c2 = channels / 2, c4 = channels / 4;
    auto up = [](double scale) {
        return nn::Upsample(
            nn::UpsampleOptions().scale_factor(std::vector<double>{scale, scale}).mode(torch::kBilinear).align_corners(false));
    };
    body_ = nn::Sequential(up(2), conv(channels, c2, 3, 1, 1), nn::BatchNorm2d(c2), nn::ReLU(),
                           up(2), conv(c2, c4, 3, 1, 1), nn::BatchNorm2d(c4), nn::ReLU(),
                           nn::Identity(), conv(c4, c4, 3, 1, 1), nn::BatchNorm2d(c4), nn::ReLU(),
                           nn::Identity(), conv(c4, c4, 3, 1, 1), nn::BatchNorm2d(c4), nn::ReLU(),
                           nn::ReflectionPad2d(3), conv(c4, 3, 7, 1, 0));
    register_module("body", body_);
}

Tensor FrameDecoderImpl::forward(const Tensor& features)
{
    return ((torch::tanh(body_->forward(features)) + 1.0) * 0.5).clamp(0.0, 1.0);
}

MessageExtractorImpl::MessageExtractorImpl(std::int64_t width, std::int64_t bits)
{
    body_ = nn::Sequential();
    std::int64_t in = 3;
    for (int i = 0; i < 7; ++i) {
        const std::int64_t stride = (i == 1 || i == 3 || i == 5) ? 2 : 1;
        auto layer = conv(in, width, 3, stride, 1);
        nn::init::kaiming_normal_(layer->weight, 0.0, torch::kFanIn, torch::kReLU);
        nn::init::zeros_(layer->bias);
        body_->push_back(layer);
        body_->push_back(nn::ReLU());
        in = width;
    }
    body_->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
    body_->push_back(nn::Flatten());
    head_ = nn::Linear(width, bits);
    register_module("body", body_);
    register_module("head", head_);
}

Tensor MessageExtractorImpl::forward(const Tensor& frames)
{
    return head_(body_->forward(frames));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(std::int64_t width)
{
    const std::int64_t chans[] = {3, width, 2 * width, 4 * width, 4 * width};
    for (std::int64_t i = 0; i < kFeatureLayers; ++i) {
        const std::int64_t stride = i < 3 ? 2 : 1;
        layers_.push_back(register_module("layer" + std::to_string(i + 1),
                                          conv(chans[i], chans[i + 1], stride == 2 ? 4 : 3, stride, 1)));
    }
    score_ = register_module("score", conv(4 * width, 1, 3, 1, 1));
}

std::pair<Tensor, std::vector<Tensor>> PatchDiscriminatorImpl::forward(const Tensor& frames)
{
    std::vector<Tensor> features;
    auto h = frames;
    for (auto& layer : layers_) {
        h = torch::leaky_relu(layer(h), 0.2);
        features.push_back(h);
    }
    return {score_(h), std::move(features)};
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(std::int64_t width)
{
    full_ = register_module("scale1", PatchDiscriminator(width));
    half_ = register_module("scale2", PatchDiscriminator(width));
}

DiscriminatorOutput MultiScaleDiscriminatorImpl::forward(const Tensor& frames)
{
    DiscriminatorOutput out;
    auto [s1, f1] = full_(frames);
    auto down = torch::avg_pool2d(frames, 3, 2, 1, /*ceil_mode=*/false, /*count_include_pad=*/false);
    auto [s2, f2] = half_(down);
    out.scores = {s1, s2};
    out.features = {std::move(f1), std::move(f2)};
    return out;
}

Tensor MultiScaleDiscriminatorImpl::finest_mean_score(const Tensor& frames)
{
    return full_(frames).first.mean();
}

// ---------------------------------------------------------------------------
// Bundle

ModelBundleImpl::ModelBundleImpl(ModelConfig config, EmbeddingLayout layout, double lambda)
    : config_(config), layout_(std::move(layout)), lambda_(lambda)
{
    config_.validate();
    if (layout_.num_blocks() != config_.num_blocks)
        throw std::invalid_argument("ModelBundle: layout has " + std::to_string(layout_.num_blocks()) +
                                    " blocks, model has " + std::to_string(config_.num_blocks));
    layout_.validate(config_.message_bits);
    set_lambda(lambda);

    id_extractor_ = register_module("id_extractor", IdentityExtractor(config_.id_width, config_.id_dim));
    encoder_ = register_module("frame_encoder", FrameEncoder(config_.feature_channels));
    for (std::size_t i = 0; i < layout_.segments().size(); ++i)
        message_encoders_.push_back(register_module(
            "message_encoder_" + std::to_string(i),
            MessageEncoder(layout_.segments()[i].bit_count, config_.id_dim)));
    for (std::int64_t b = 0; b < config_.num_blocks; ++b)
        blocks_.push_back(register_module("secret_id_" + std::to_string(b + 1),
                                          SecretIdBlock(config_.feature_channels, config_.id_dim)));
    decoder_ = register_module("decoder", FrameDecoder(config_.feature_channels));
    extractor_ = register_module("extractor", MessageExtractor(config_.extractor_width, config_.message_bits));
    discriminator_ = register_module("discriminator", MultiScaleDiscriminator(config_.disc_width));
    id_extractor_->eval();
}

void ModelBundleImpl::set_lambda(double lambda)
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("ModelBundle: lambda must be finite and >= 0");
    lambda_ = lambda;
}

void ModelBundleImpl::train(bool on)
{
    torch::nn::Module::train(on);
    id_extractor_->eval();
}

std::vector<Tensor> ModelBundleImpl::generator_parameters()
{
    std::vector<Tensor> params;
    auto append = [&](torch::nn::Module& m) {
        for (auto& p : m.parameters())
            params.push_back(p);
    };
    append(*encoder_);
    for (auto& e : message_encoders_)
        append(*e);
    for (auto& b : blocks_)
        append(*b);
    append(*decoder_);
    append(*extractor_);
    return params;
}

std::vector<Tensor> ModelBundleImpl::discriminator_parameters()
{
    return discriminator_->parameters();
}

void ModelBundleImpl::freeze_identity_extractor()
{
    for (auto& p : id_extractor_->parameters())
        p.set_requires_grad(false);
    id_extractor_->eval();
}

Tensor ModelBundleImpl::identity_batch(const Tensor& images)
{
    return id_extractor_(images);
}

Tensor ModelBundleImpl::features_batch(const Tensor& frames)
{
    return encoder_(frames);
}

std::vector<Tensor> ModelBundleImpl::block_identities(const Tensor& f_id, const Tensor& messages)
{
    if (messages.dim() != 2 || messages.size(1) != config_.message_bits)
        throw std::invalid_argument("ModelBundle: messages must be (B," + std::to_string(config_.message_bits) + ")");
    std::vector<Tensor> fused;
    const auto& segs = layout_.segments();
    fused.reserve(segs.size());
    for (std::size_t g = 0; g < segs.size(); ++g) {
        auto bits = messages.narrow(1, segs[g].bit_begin, segs[g].bit_count);
        fused.push_back(fuse_identity(f_id, message_encoders_[g](bits), lambda_));
    }
    std::vector<Tensor> per_block;
    per_block.reserve(static_cast<std::size_t>(config_.num_blocks));
    for (std::int64_t b = 1; b <= config_.num_blocks; ++b) {
        auto g = layout_.segment_for_block(b);
        per_block.push_back(g >= 0 ? fused[static_cast<std::size_t>(g)] : f_id);
    }
    return per_block;
}

Tensor ModelBundleImpl::generate_batch(const Tensor& covers, const Tensor& f_id, const Tensor& messages)
{
    auto ids = block_identities(f_id, messages);
    auto h = encoder_(covers);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        h = blocks_[b](h, ids[b]);
    return decoder_(h);
}

Tensor ModelBundleImpl::swap_without_message(const Tensor& covers, const Tensor& f_id)
{
    auto h = encoder_(covers);
    for (auto& block : blocks_)
        h = block(h, f_id);
    return decoder_(h);
}

Tensor ModelBundleImpl::extract_batch(const Tensor& frames)
{
    return extractor_(frames);
}

ModelBundle make_bundle(const ModelConfig& config, const EmbeddingLayout& layout, double lambda, std::uint64_t seed)
{
    torch::manual_seed(seed);
    ModelBundle bundle(config, layout, lambda);
    return bundle;
}

// ---------------------------------------------------------------------------
// Frame-level operations

namespace {

Batched checked(const Tensor& frames, std::string_view what, const ModelConfig& cfg)
{
    check_frames(frames, what);
    auto b = as_batch(frames);
    if (b.tensor.size(2) != cfg.image_size || b.tensor.size(3) != cfg.image_size)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(cfg.image_size) + "x" +
                                    std::to_string(cfg.image_size) + " frames, got " +
                                    std::to_string(b.tensor.size(2)) + "x" + std::to_string(b.tensor.size(3)));
    return b;
}

}  // namespace

Tensor extract_identity(ModelBundle& bundle, const Tensor& image)
{
    auto [x, single] = checked(image, "extract_identity", bundle->config());
    return unbatch(bundle->identity_batch(x), single);
}

Tensor extract_features(ModelBundle& bundle, const Tensor& frame)
{
    auto [x, single] = checked(frame, "extract_features", bundle->config());
    return unbatch(bundle->features_batch(x), single);
}

Tensor encode_message(ModelBundle& bundle, std::size_t segment, const BitMessage& segment_bits)
{
    const auto& segs = bundle->layout().segments();
    if (segment >= segs.size())
        throw std::invalid_argument("encode_message: no segment " + std::to_string(segment));
    if (static_cast<std::int64_t>(segment_bits.size()) != segs[segment].bit_count)
        throw std::invalid_argument("encode_message: segment expects " + std::to_string(segs[segment].bit_count) +
                                    " bits, got " + std::to_string(segment_bits.size()));
    return bundle->message_encoder(segment)(segment_bits.to_tensor().unsqueeze(0)).squeeze(0);
}

Tensor generate_stego_frame(ModelBundle& bundle, const Tensor& cover, const Tensor& reference, const BitMessage& msg)
{
    if (static_cast<std::int64_t>(msg.size()) != bundle->message_bits())
        throw std::invalid_argument("generate_stego_frame: message has " + std::to_string(msg.size()) +
                                    " bits, model expects " + std::to_string(bundle->message_bits()));
    auto [covers, single] = checked(cover, "generate_stego_frame cover", bundle->config());
    auto [ref, ref_single] = checked(reference, "generate_stego_frame reference", bundle->config());
    const auto batch = covers.size(0);
    auto f_id = bundle->identity_batch(ref);
    if (f_id.size(0) == 1 && batch > 1)
        f_id = f_id.expand({batch, f_id.size(1)});
    else if (f_id.size(0) != batch)
        throw std::invalid_argument("generate_stego_frame: reference batch must be 1 or match the covers");
    auto messages = msg.to_tensor().unsqueeze(0).expand({batch, bundle->message_bits()});
    return unbatch(bundle->generate_batch(covers, f_id, messages), single);
}

Tensor extract_message(ModelBundle& bundle, const Tensor& frame)
{
    auto [x, single] = checked(frame, "extract_message", bundle->config());
    return unbatch(bundle->extract_batch(x), single);
}

DiscriminatorOutput discriminate(ModelBundle& bundle, const Tensor& frame)
{
    auto [x, single] = checked(frame, "discriminate", bundle->config());
    (void)single;
    return bundle->discriminator()(x);
}

Tensor extract_video_logits(ModelBundle& bundle, const Tensor& frames)
{
    auto [x, single] = checked(frames, "extract_video_logits", bundle->config());
    (void)single;
    return bundle->extract_batch(x).mean(0);
}

}  // namespace idstego
