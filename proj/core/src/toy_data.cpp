#include "idstego/toy_data.hpp"

#include "idstego/image_io.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace idstego {

namespace {

constexpr int kSubsamples = 4;  // per axis

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v)
{
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

void check_size(std::int64_t height, std::int64_t width)
{
    if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
        throw std::invalid_argument("render_avatar: size must be positive multiples of 16, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
}

/// Colour of the avatar at local coordinates (x right, y down, head centred at 0).
Rgb shade(const IdentityTraits& tr, double background, double x, double y)
{
    const double a = 0.55;
    const double b = std::min(a * tr.shape_ratio, 0.85);

    // Marker glyph: 3x3 cells on the forehead.
    const double cell = 0.09;
    const double mx = x / cell + 1.5, my = (y + 0.55 * b) / cell + 1.5;
    if (mx >= 0 && mx < 3 && my >= 0 && my < 3) {
        const int bit = static_cast<int>(my) * 3 + static_cast<int>(mx);
        if (tr.marker >> bit & 1)
            return hsv_to_rgb(tr.hue + 0.5, 0.7, 0.35);
    }
    // Eyes.
    const double ex = tr.eye_spacing * a, ey = -0.15 * b, er = 0.085;
    for (double sx : {-1.0, 1.0}) {
        const double ddx = x - sx * ex, ddy = y - ey;
        if (ddx * ddx + ddy * ddy <= er * er)
            return {0.08, 0.08, 0.1};
    }
    // Mouth.
    const double mw = tr.mouth_width * a, mh = 0.06, mcy = 0.45 * b;
    if ((x / mw) * (x / mw) + ((y - mcy) / mh) * ((y - mcy) / mh) <= 1.0)
        return {0.55, 0.12, 0.15};
    // Head.
    if ((x / a) * (x / a) + (y / b) * (y / b) <= 1.0)
        return hsv_to_rgb(tr.hue, 0.55, 0.8);
    return {background, background, background};
}

}  // namespace

IdentityTraits identity_traits(std::int64_t identity_id)
{
    if (identity_id < 0)
        throw std::invalid_argument("identity_traits: identity id must be >= 0");
    RngState rng(static_cast<std::uint64_t>(identity_id), "identity-traits");
    IdentityTraits t{};
    // Golden-ratio hue spacing keeps neighbouring ids apart; jitter breaks the lattice.
    t.hue = std::fmod(static_cast<double>(identity_id) * 0.6180339887498949 + rng.uniform(0.0, 0.05), 1.0);
    t.shape_ratio = rng.uniform(1.05, 1.45);
    t.eye_spacing = rng.uniform(0.25, 0.5);
    t.mouth_width = rng.uniform(0.2, 0.55);
    t.marker = static_cast<std::uint16_t>(rng.below(511) + 1);
    return t;
}

AvatarParams sample_attributes(RngState& rng, std::int64_t identity_id)
{
    AvatarParams p;
    p.identity_id = identity_id;
    p.dx = rng.uniform(-0.12, 0.12);
    p.dy = rng.uniform(-0.1, 0.1);
    p.rotation = rng.uniform(-0.5, 0.5);
    p.scale = rng.uniform(0.8, 1.1);
    p.background = rng.uniform(0.15, 0.85);
    return p;
}

torch::Tensor render_avatar(const AvatarParams& params, std::int64_t height, std::int64_t width)
{
    check_size(height, width);
    if (!(params.scale > 0.0))
        throw std::invalid_argument("render_avatar: scale must be positive");
    const auto traits = identity_traits(params.identity_id);
    const double cr = std::cos(params.rotation), sr = std::sin(params.rotation);
    auto out = torch::empty({3, height, width}, torch::kFloat32);
    auto acc = out.accessor<float, 3>();
    constexpr double kSamples = kSubsamples * kSubsamples;
    for (std::int64_t row = 0; row < height; ++row) {
        for (std::int64_t col = 0; col < width; ++col) {
            double r = 0, g = 0, b = 0;
            for (int sy = 0; sy < kSubsamples; ++sy) {
                for (int sx = 0; sx < kSubsamples; ++sx) {
                    const double u = 2.0 * (static_cast<double>(col) + (sx + 0.5) / kSubsamples) /
                                         static_cast<double>(width) - 1.0 - params.dx;
                    const double v = 2.0 * (static_cast<double>(row) + (sy + 0.5) / kSubsamples) /
                                         static_cast<double>(height) - 1.0 - params.dy;
                    const double x = (cr * u + sr * v) / params.scale;
                    const double y = (-sr * u + cr * v) / params.scale;
                    const auto c = shade(traits, params.background, x, y);
                    r += c.r;
                    g += c.g;
                    b += c.b;
                }
            }
            acc[0][row][col] = static_cast<float>(r / kSamples);
            acc[1][row][col] = static_cast<float>(g / kSamples);
            acc[2][row][col] = static_cast<float>(b / kSamples);
        }
    }
    return out;
}

std::vector<AvatarParams> video_trajectory(std::int64_t identity_id, std::uint64_t motion_seed, std::int64_t frames)
{
    if (frames < 1)
        throw std::invalid_argument("render_video: need at least one frame");
    RngState rng(motion_seed, "video-motion");
    const auto base = sample_attributes(rng, identity_id);
    struct Wave {
        double amplitude, omega, phase;
        double at(double t) const { return amplitude * (std::sin(omega * t + phase) - std::sin(phase)); }
    };
    auto wave = [&](double amplitude) {
        return Wave{amplitude, rng.uniform(0.15, 0.45), rng.uniform(0.0, 2.0 * std::numbers::pi)};
    };
    const Wave wx = wave(0.06), wy = wave(0.04), wr = wave(0.2), ws = wave(0.04);
    std::vector<AvatarParams> out;
    out.reserve(static_cast<std::size_t>(frames));
    for (std::int64_t i = 0; i < frames; ++i) {
        const double t = static_cast<double>(i);
        auto p = base;
        p.dx += wx.at(t);
        p.dy += wy.at(t);
        p.rotation += wr.at(t);
        p.scale += ws.at(t);
        out.push_back(p);
    }
    return out;
}

VideoArray render_video(std::int64_t identity_id, std::uint64_t motion_seed, std::int64_t frames, std::int64_t height,
                        std::int64_t width)
{
    check_size(height, width);
    std::vector<torch::Tensor> rendered;
    for (const auto& p : video_trajectory(identity_id, motion_seed, frames))
        rendered.push_back(render_avatar(p, height, width));
    return VideoArray{torch::stack(rendered), 25.0};
}

FrameBatch sample_frame_batch(RngState& rng, std::int64_t batch, std::int64_t size, std::int64_t id_begin,
                              std::int64_t id_count)
{
    if (id_count < 2)
        throw std::invalid_argument("sample_frame_batch: need at least two identities");
    FrameBatch out;
    std::vector<torch::Tensor> covers, refs;
    for (std::int64_t i = 0; i < batch; ++i) {
        const auto cover_id = id_begin + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(id_count)));
        auto ref_id = id_begin + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(id_count - 1)));
        if (ref_id >= cover_id)
            ++ref_id;
        covers.push_back(render_avatar(sample_attributes(rng, cover_id), size, size));
        refs.push_back(render_avatar(sample_attributes(rng, ref_id), size, size));
        out.cover_ids.push_back(cover_id);
        out.reference_ids.push_back(ref_id);
    }
    out.covers = torch::stack(covers);
    out.references = torch::stack(refs);
    return out;
}

std::vector<EvalVideo> make_eval_videos(std::uint64_t seed, std::int64_t count, std::int64_t frames, std::int64_t size,
                                        std::int64_t id_begin, std::int64_t id_count)
{
    if (id_count < 2)
        throw std::invalid_argument("make_eval_videos: need at least two identities");
    RngState rng(seed, "eval-videos");
    std::vector<EvalVideo> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        const auto cover_id = id_begin + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(id_count)));
        auto ref_id = id_begin + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(id_count - 1)));
        if (ref_id >= cover_id)
            ++ref_id;
        const auto motion_seed = rng.next_u64();
        EvalVideo v;
        v.cover = render_video(cover_id, motion_seed, frames, size, size);
        v.reference = render_avatar(sample_attributes(rng, ref_id), size, size);
        v.cover_id = cover_id;
        v.reference_id = ref_id;
        out.push_back(std::move(v));
    }
    return out;
}

PretrainReport pretrain_identity_extractor(IdentityExtractor& extractor, const PretrainConfig& config,
                                           const std::function<void(std::int64_t, double)>& on_step)
{
    if (config.num_identities < 2)
        throw std::invalid_argument("pretrain_identity_extractor: need at least 2 identities, got " +
                                    std::to_string(config.num_identities));
    if (config.steps < 1 || config.batch_size < 2)
        throw std::invalid_argument("pretrain_identity_extractor: steps >= 1 and batch_size >= 2 required");

    torch::manual_seed(config.seed);
    RngState rng(config.seed, "pretrain-identity");
    const auto K = config.num_identities;

    // Probe the embedding width with a dummy forward pass.
    extractor->eval();
    const auto id_dim = extractor->forward(torch::zeros({2, 3, config.image_size, config.image_size})).size(1);
    auto class_weights = torch::randn({K, id_dim}).requires_grad_(true);

    for (auto& p : extractor->parameters())
        p.set_requires_grad(true);
    auto params = extractor->parameters();
    params.push_back(class_weights);
    torch::optim::Adam opt(params, torch::optim::AdamOptions(config.lr));

    extractor->train();
    PretrainReport report;
    double acc_sum = 0.0;
    std::int64_t acc_count = 0;
    for (std::int64_t step = 0; step < config.steps; ++step) {
        std::vector<torch::Tensor> images;
        std::vector<std::int64_t> labels;
        for (std::int64_t i = 0; i < config.batch_size; ++i) {
            const auto id = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(K)));
            images.push_back(render_avatar(sample_attributes(rng, id), config.image_size, config.image_size));
            labels.push_back(id);
        }
        auto x = torch::stack(images);
        auto y = torch::tensor(labels, torch::kInt64);
        auto emb = extractor->forward(x);
        auto w = torch::nn::functional::normalize(class_weights, torch::nn::functional::NormalizeFuncOptions().dim(1));
        auto logits = config.logit_scale * torch::matmul(emb, w.t());
        auto loss = torch::nn::functional::cross_entropy(logits, y);
        const double loss_value = loss.item<double>();
        if (!std::isfinite(loss_value))
            throw std::runtime_error("pretrain_identity_extractor: loss diverged at step " + std::to_string(step));
        opt.zero_grad();
        loss.backward();
        opt.step();
        report.final_loss = loss_value;
        if (step >= config.steps - std::max<std::int64_t>(config.steps / 10, 1)) {
            acc_sum += logits.argmax(1).eq(y).to(torch::kFloat64).mean().item<double>();
            ++acc_count;
        }
        if (on_step)
            on_step(step, loss_value);
    }
    report.train_accuracy = acc_count ? acc_sum / static_cast<double>(acc_count) : 0.0;

    for (auto& p : extractor->parameters())
        p.set_requires_grad(false);
    extractor->eval();

    // Verification margin on fresh renders.
    RngState eval_rng(config.seed, "pretrain-margin");
    const std::int64_t ids = std::min<std::int64_t>(K, 32);
    constexpr std::int64_t kRenders = 4;
    std::vector<torch::Tensor> images;
    for (std::int64_t id = 0; id < ids; ++id)
        for (std::int64_t r = 0; r < kRenders; ++r)
            images.push_back(render_avatar(sample_attributes(eval_rng, id), config.image_size, config.image_size));
    torch::Tensor emb;
    {
        torch::NoGradGuard no_grad;
        emb = extractor->forward(torch::stack(images));
    }
    auto sims = torch::matmul(emb, emb.t()).to(torch::kFloat64);
    double same = 0, cross = 0;
    std::int64_t n_same = 0, n_cross = 0;
    auto s = sims.accessor<double, 2>();
    for (std::int64_t i = 0; i < ids * kRenders; ++i) {
        for (std::int64_t j = i + 1; j < ids * kRenders; ++j) {
            if (i / kRenders == j / kRenders) {
                same += s[i][j];
                ++n_same;
            } else {
                cross += s[i][j];
                ++n_cross;
            }
        }
    }
    report.same_cosine = same / static_cast<double>(n_same);
    report.cross_cosine = cross / static_cast<double>(n_cross);
    report.margin = report.same_cosine - report.cross_cosine;
    return report;
}

void export_dataset(const std::filesystem::path& dir, std::uint64_t seed, std::int64_t count, std::int64_t frames,
                    std::int64_t size)
{
    std::filesystem::create_directories(dir);
    RngState rng(seed, "export-dataset");
    auto videos = nlohmann::json::array();
    for (std::int64_t i = 0; i < count; ++i) {
        const auto id = static_cast<std::int64_t>(rng.below(kTrainIdentities + kHeldOutIdentities));
        const auto motion_seed = rng.next_u64();
        const auto trajectory = video_trajectory(id, motion_seed, frames);
        std::vector<torch::Tensor> rendered;
        auto attrs = nlohmann::json::array();
        for (const auto& p : trajectory) {
            rendered.push_back(render_avatar(p, size, size));
            attrs.push_back({{"dx", p.dx}, {"dy", p.dy}, {"rotation", p.rotation}, {"scale", p.scale},
                             {"background", p.background}});
        }
        char name[32];
        std::snprintf(name, sizeof name, "video_%04lld", static_cast<long long>(i));
        nlohmann::json extra = {{"identity_id", id}, {"motion_seed", motion_seed}, {"attributes", attrs}};
        write_frame_folder(dir / name, VideoArray{torch::stack(rendered), 25.0}, 8, extra);
        videos.push_back({{"folder", name}, {"identity_id", id}, {"motion_seed", motion_seed}});
    }
    nlohmann::json manifest = {{"seed", seed}, {"size", size}, {"frames_per_video", frames}, {"videos", videos}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace idstego
