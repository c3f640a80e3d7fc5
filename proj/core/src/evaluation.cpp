#include "idstego/evaluation.hpp"

#include "idstego/attacking_layer.hpp"
#include "idstego/checkpoint.hpp"
#include "idstego/image_io.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace idstego {

namespace fs = std::filesystem;
using nlohmann::json;
using torch::Tensor;

// ---------------------------------------------------------------------------
// Distortion descriptions

namespace {

struct KindInfo {
    EvalKind kind;
    const char* name;
    const char* param;  // nullptr: no parameter
    double default_value;
};

constexpr std::array<KindInfo, kNumEvalKinds> kKinds{{
    {EvalKind::none, "none", nullptr, 0.0},
    {EvalKind::png, "png", nullptr, 0.0},
    {EvalKind::resize_half, "resize_half", nullptr, 0.0},
    {EvalKind::bit_error, "bit_error", "p", 1e-3},
    {EvalKind::brightness, "brightness", "c", 0.2},
    {EvalKind::contrast, "contrast", "a", 1.5},
    {EvalKind::h264_abr, "h264_abr", "kbps", 200.0},
    {EvalKind::h264_crf, "h264_crf", "crf", 28.0},
    {EvalKind::motion_blur, "motion_blur", "length", 7.0},
    {EvalKind::rain, "rain", "count", 40.0},
    {EvalKind::saturate, "saturate", "t", 0.3},
    {EvalKind::shot_noise, "shot_noise", "c", 60.0},
}};

const KindInfo& info(EvalKind kind)
{
    return kKinds.at(static_cast<std::size_t>(kind));
}

std::string format_number(double v)
{
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    return std::string(buf, end);
}

}  // namespace

std::string to_string(EvalKind kind)
{
    return info(kind).name;
}

EvalKind parse_eval_kind(const std::string& name)
{
    for (const auto& k : kKinds)
        if (name == k.name)
            return k.kind;
    throw std::invalid_argument("unknown distortion '" + name + "'");
}

EvalDistortion EvalDistortion::make(EvalKind kind)
{
    return {kind, info(kind).default_value};
}

EvalDistortion EvalDistortion::make(EvalKind kind, double value)
{
    if (!info(kind).param)
        throw std::invalid_argument("distortion '" + idstego::to_string(kind) + "' takes no parameter");
    if (!std::isfinite(value) || value < 0)
        throw std::invalid_argument("distortion '" + idstego::to_string(kind) + "': parameter must be finite and >= 0");
    return {kind, value};
}

std::string EvalDistortion::to_string() const
{
    const auto& k = info(kind);
    if (!k.param)
        return k.name;
    return std::string(k.name) + "(" + k.param + "=" + format_number(value) + ")";
}

EvalDistortion EvalDistortion::parse(const std::string& text)
{
    const auto open = text.find('(');
    if (open == std::string::npos)
        return make(parse_eval_kind(text));
    if (text.back() != ')')
        throw std::invalid_argument("malformed distortion '" + text + "'");
    const auto kind = parse_eval_kind(text.substr(0, open));
    const auto body = text.substr(open + 1, text.size() - open - 2);
    const auto eq = body.find('=');
    const auto* param = info(kind).param;
    if (!param || eq == std::string::npos || body.substr(0, eq) != param)
        throw std::invalid_argument("malformed distortion '" + text + "'");
    const auto value_text = body.substr(eq + 1);
    char* end = nullptr;
    const double value = std::strtod(value_text.c_str(), &end);
    if (value_text.empty() || *end != '\0')
        throw std::invalid_argument("malformed number in distortion '" + text + "'");
    return make(kind, value);
}

std::vector<EvalDistortion> full_suite()
{
    std::vector<EvalDistortion> out;
    for (const auto& k : kKinds)
        out.push_back(EvalDistortion::make(k.kind));
    return out;
}

std::vector<EvalDistortion> differentiable_suite()
{
    return {EvalDistortion::make(EvalKind::png), EvalDistortion::make(EvalKind::brightness),
            EvalDistortion::make(EvalKind::contrast), EvalDistortion::make(EvalKind::saturate),
            EvalDistortion::make(EvalKind::shot_noise)};
}

std::vector<EvalDistortion> position_suite(bool with_codec)
{
    std::vector<EvalDistortion> out{EvalDistortion::make(EvalKind::png), EvalDistortion::make(EvalKind::resize_half),
                                    EvalDistortion::make(EvalKind::motion_blur),
                                    EvalDistortion::make(EvalKind::shot_noise)};
    if (with_codec)
        out.insert(out.begin() + 1, EvalDistortion::make(EvalKind::h264_crf));
    return out;
}

std::vector<EvalDistortion> parse_suite(const std::vector<std::string>& names)
{
    std::vector<EvalDistortion> out;
    for (const auto& n : names)
        out.push_back(EvalDistortion::parse(n));
    return out;
}

// ---------------------------------------------------------------------------
// Distortion implementations

std::optional<fs::path> find_codec(const CodecOptions& options)
{
    auto runnable = [](const fs::path& p) { return fs::is_regular_file(p) && ::access(p.c_str(), X_OK) == 0; };
    if (!options.ffmpeg.empty())
        return runnable(options.ffmpeg) ? std::optional<fs::path>(options.ffmpeg) : std::nullopt;
    if (const char* env = std::getenv("IDSTEGO_FFMPEG"); env && *env)
        return runnable(env) ? std::optional<fs::path>(env) : std::nullopt;
    const char* path = std::getenv("PATH");
    if (!path)
        return std::nullopt;
    std::stringstream dirs(path);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
        if (dir.empty())
            continue;
        const auto candidate = fs::path(dir) / "ffmpeg";
        if (runnable(candidate))
            return candidate;
    }
    return std::nullopt;
}

namespace {

Tensor to_bytes(const Tensor& frames)
{
    return torch::round(frames.clamp(0.0, 1.0) * 255.0).to(torch::kUInt8).contiguous();
}

Tensor from_bytes(const Tensor& bytes, torch::Dtype dtype)
{
    return bytes.to(dtype) / 255.0;
}

Tensor bit_error(const Tensor& frames, double p, RngState& rng)
{
    auto bytes = to_bytes(frames);
    auto* data = bytes.data_ptr<std::uint8_t>();
    const auto total_bits = static_cast<std::uint64_t>(bytes.numel()) * 8;
    if (p <= 0.0)
        return from_bytes(bytes, frames.scalar_type());
    if (p >= 1.0) {
        for (std::int64_t i = 0; i < bytes.numel(); ++i)
            data[i] = static_cast<std::uint8_t>(~data[i]);
        return from_bytes(bytes, frames.scalar_type());
    }
    // Gaps between flipped bits are geometric.
    const double log_q = std::log1p(-p);
    std::uint64_t pos = 0;
    while (true) {
        const double u = 1.0 - rng.uniform();  // (0, 1]
        const double gap = std::floor(std::log(u) / log_q);
        if (gap >= static_cast<double>(total_bits - pos))
            break;
        pos += static_cast<std::uint64_t>(gap);
        data[pos / 8] ^= static_cast<std::uint8_t>(1u << (pos % 8));
        if (++pos >= total_bits)
            break;
    }
    return from_bytes(bytes, frames.scalar_type());
}

Tensor shot_noise(const Tensor& frames, double c, RngState& rng)
{
    if (!(c > 0))
        throw std::invalid_argument("shot_noise: photon count must be positive");
    auto x = frames.clamp(0.0, 1.0).to(torch::kFloat64).contiguous();
    auto out = torch::empty_like(x);
    const auto* src = x.data_ptr<double>();
    auto* dst = out.data_ptr<double>();
    for (std::int64_t i = 0; i < x.numel(); ++i)
        dst[i] = static_cast<double>(rng.poisson(src[i] * c)) / c;
    return out.clamp(0.0, 1.0).to(frames.scalar_type());
}

Tensor resize_half(const Tensor& frames)
{
    namespace F = torch::nn::functional;
    const auto h = frames.size(2), w = frames.size(3);
    auto down = F::interpolate(frames, F::InterpolateFuncOptions()
                                           .size(std::vector<std::int64_t>{h / 2, w / 2})
                                           .mode(torch::kBilinear)
                                           .align_corners(false));
    return F::interpolate(down, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{h, w})
                                    .mode(torch::kBilinear)
                                    .align_corners(false))
        .clamp(0.0, 1.0);
}

/// Normalized line kernel of odd size, drawn by bilinear splatting.
Tensor line_kernel(std::int64_t length, double angle)
{
    const auto size = length % 2 ? length : length + 1;
    auto k = torch::zeros({size, size}, torch::kFloat64);
    auto acc = k.accessor<double, 2>();
    const double centre = static_cast<double>(size - 1) / 2.0;
    const int samples = static_cast<int>(4 * length);
    for (int s = 0; s < samples; ++s) {
        const double t = (static_cast<double>(s) / (samples - 1) - 0.5) * static_cast<double>(length - 1);
        const double x = centre + t * std::cos(angle), y = centre + t * std::sin(angle);
        const auto x0 = static_cast<std::int64_t>(std::floor(x)), y0 = static_cast<std::int64_t>(std::floor(y));
        const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const auto xi = x0 + dx, yi = y0 + dy;
                if (xi < 0 || yi < 0 || xi >= size || yi >= size)
                    continue;
                acc[yi][xi] += (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
            }
    }
    return k / k.sum();
}

Tensor motion_blur(const Tensor& frames, std::int64_t length, RngState& rng)
{
    namespace F = torch::nn::functional;
    if (length < 1)
        throw std::invalid_argument("motion_blur: length must be >= 1");
    if (length == 1)
        return frames;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    auto kernel = line_kernel(length, angle).to(frames.scalar_type());
    const auto size = kernel.size(0);
    auto weight = kernel.view({1, 1, size, size}).repeat({3, 1, 1, 1});
    const auto pad = size / 2;
    auto padded = F::pad(frames, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
    return F::conv2d(padded, weight, F::Conv2dFuncOptions().groups(3)).clamp(0.0, 1.0);
}

Tensor rain(const Tensor& frames, std::int64_t count, RngState& rng)
{
    constexpr double kAlpha = 0.4, kLevel = 1.0, kMaxTilt = 0.25;
    const auto v = frames.size(0), h = frames.size(2), w = frames.size(3);
    auto mask = torch::zeros({v, 1, h, w}, torch::kFloat64);
    auto acc = mask.accessor<double, 4>();
    for (std::int64_t f = 0; f < v; ++f) {
        for (std::int64_t s = 0; s < count; ++s) {
            const double x0 = rng.uniform(0.0, static_cast<double>(w));
            const double y0 = rng.uniform(0.0, static_cast<double>(h));
            const double len = rng.uniform(10.0, 20.0);
            const double tilt = rng.uniform(-kMaxTilt, kMaxTilt);
            const int steps = static_cast<int>(std::ceil(len * 2));
            for (int i = 0; i <= steps; ++i) {
                const double t = len * i / steps;
                const auto x = static_cast<std::int64_t>(std::floor(x0 + t * std::sin(tilt)));
                const auto y = static_cast<std::int64_t>(std::floor(y0 + t * std::cos(tilt)));
                if (x >= 0 && y >= 0 && x < w && y < h)
                    acc[f][0][y][x] = 1.0;
            }
        }
    }
    auto m = (mask * kAlpha).to(frames.scalar_type());
    return (frames * (1 - m) + m * kLevel).clamp(0.0, 1.0);
}

std::string shell_quote(const std::string& s)
{
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

DistortionResult h264(const VideoArray& video, const EvalDistortion& d, const CodecOptions& options)
{
    const auto codec = find_codec(options);
    if (!codec)
        return {video, true, "skipped: no H.264 encoder found (set --codec-path)"};

    static std::atomic<int> counter{0};
    const auto root = options.scratch_dir.empty() ? fs::temp_directory_path() : options.scratch_dir;
    const auto dir = root / ("idstego-h264-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(dir / "in");
    fs::create_directories(dir / "out");
    write_frame_folder(dir / "in", video, 8);

    const std::string rate = d.kind == EvalKind::h264_abr ? "-b:v " + format_number(d.value) + "k"
                                                          : "-crf " + format_number(d.value);
    const auto exe = shell_quote(codec->string());
    const auto encode = exe + " -y -loglevel error -framerate " + format_number(video.frame_rate) + " -i " +
                        shell_quote((dir / "in" / "frame_%04d.png").string()) +
                        " -c:v libx264 -preset medium " + rate + " -pix_fmt yuv420p " +
                        shell_quote((dir / "video.mp4").string());
    const auto decode = exe + " -y -loglevel error -i " + shell_quote((dir / "video.mp4").string()) + " " +
                        shell_quote((dir / "out" / "frame_%04d.png").string());
    if (std::system(encode.c_str()) != 0 || std::system(decode.c_str()) != 0) {
        fs::remove_all(dir);
        throw std::runtime_error("H.264 round trip through '" + codec->string() + "' failed");
    }
    std::vector<Tensor> frames;
    for (std::int64_t i = 1; i <= video.num_frames(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04lld.png", static_cast<long long>(i));
        const auto p = dir / "out" / name;
        if (!fs::exists(p)) {
            fs::remove_all(dir);
            throw std::runtime_error("H.264 decode produced fewer frames than the input");
        }
        frames.push_back(read_png(p).to(video.frames.scalar_type()));
    }
    fs::remove_all(dir);
    return {VideoArray{torch::stack(frames), video.frame_rate}, false, ""};
}

}  // namespace

DistortionResult apply_eval_distortion(const VideoArray& video, const EvalDistortion& d, RngState& rng,
                                       const CodecOptions& codec)
{
    video.validate();
    torch::NoGradGuard no_grad;
    const auto& x = video.frames;
    auto wrap = [&](Tensor frames) { return DistortionResult{VideoArray{std::move(frames), video.frame_rate}, false, ""}; };
    switch (d.kind) {
    case EvalKind::none: return wrap(x.clone());
    case EvalKind::png: return wrap(from_bytes(to_bytes(x), x.scalar_type()));
    case EvalKind::resize_half: return wrap(resize_half(x));
    case EvalKind::bit_error: return wrap(bit_error(x, d.value, rng));
    case EvalKind::brightness: return wrap(brightness_contrast(x, 1.0, d.value));
    case EvalKind::contrast: return wrap(brightness_contrast(x, d.value, 0.0));
    case EvalKind::h264_abr:
    case EvalKind::h264_crf: return h264(video, d, codec);
    case EvalKind::motion_blur: return wrap(motion_blur(x, static_cast<std::int64_t>(std::lround(d.value)), rng));
    case EvalKind::rain: return wrap(rain(x, static_cast<std::int64_t>(std::lround(d.value)), rng));
    case EvalKind::saturate: return wrap(saturate(x, d.value));
    case EvalKind::shot_noise: return wrap(shot_noise(x, d.value, rng));
    }
    throw std::invalid_argument("apply_eval_distortion: unknown kind");
}

// ---------------------------------------------------------------------------
// Methods

GenerativeMethod::GenerativeMethod(ModelBundle bundle, std::string name)
    : bundle_(std::move(bundle)), name_(std::move(name))
{
    bundle_->eval();
}

std::int64_t GenerativeMethod::message_bits() const
{
    return bundle_->message_bits();
}

VideoArray GenerativeMethod::embed(const EvalVideo& video, const BitMessage& msg)
{
    torch::NoGradGuard no_grad;
    bundle_->eval();
    return {generate_stego_frame(bundle_, video.cover.frames, video.reference, msg), video.cover.frame_rate};
}

BitMessage GenerativeMethod::extract(const VideoArray& received)
{
    torch::NoGradGuard no_grad;
    bundle_->eval();
    return binarize(extract_video_logits(bundle_, received.frames));
}

VideoArray LsbMethod::embed(const EvalVideo& video, const BitMessage& msg)
{
    return lsb_embed(video.cover, msg, seed_);
}

BitMessage LsbMethod::extract(const VideoArray& received)
{
    return lsb_extract(received, m_, seed_);
}

VideoArray OracleMethod::embed(const EvalVideo& video, const BitMessage& msg)
{
    last_ = msg;
    return inner_->embed(video, msg);
}

namespace {

/// First m entries of a seeded permutation of [0, n).
std::vector<std::int64_t> lsb_positions(std::int64_t n, std::int64_t m, std::uint64_t seed)
{
    if (m < 1)
        throw std::invalid_argument("lsb: message must have at least one bit");
    if (m > n)
        throw std::invalid_argument("lsb: message of " + std::to_string(m) + " bits exceeds capacity " +
                                    std::to_string(n));
    RngState rng(seed, "lsb-positions");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(m));
    return idx;
}

}  // namespace

VideoArray lsb_embed(const VideoArray& video, const BitMessage& msg, std::uint64_t seed)
{
    video.validate();
    const auto per_frame = video.frames[0].numel();
    const auto m = static_cast<std::int64_t>(msg.size());
    const auto pos = lsb_positions(per_frame, m, seed);
    auto bytes = to_bytes(video.frames);
    auto* data = bytes.data_ptr<std::uint8_t>();
    for (std::int64_t f = 0; f < video.num_frames(); ++f)
        for (std::int64_t i = 0; i < m; ++i) {
            auto& b = data[f * per_frame + pos[static_cast<std::size_t>(i)]];
            b = static_cast<std::uint8_t>((b & 0xFE) | msg[static_cast<std::size_t>(i)]);
        }
    return {from_bytes(bytes, video.frames.scalar_type()), video.frame_rate};
}

BitMessage lsb_extract(const VideoArray& video, std::int64_t m, std::uint64_t seed)
{
    video.validate();
    const auto per_frame = video.frames[0].numel();
    const auto pos = lsb_positions(per_frame, m, seed);
    auto bytes = to_bytes(video.frames);
    const auto* data = bytes.data_ptr<std::uint8_t>();
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        std::int64_t ones = 0;
        for (std::int64_t f = 0; f < video.num_frames(); ++f)
            ones += data[f * per_frame + pos[static_cast<std::size_t>(i)]] & 1;
        bits[static_cast<std::size_t>(i)] = 2 * ones >= video.num_frames() ? 1 : 0;
    }
    return BitMessage(std::move(bits));
}

// ---------------------------------------------------------------------------
// Reports

const EvalRow& EvalReport::row(const std::string& distortion) const
{
    for (const auto& r : rows)
        if (r.distortion == distortion || r.column == distortion)
            return r;
    throw std::out_of_range("report has no row '" + distortion + "'");
}

double EvalReport::mean_accuracy(const std::vector<std::string>& columns) const
{
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.skipped)
            continue;
        if (!columns.empty() && std::find(columns.begin(), columns.end(), r.column) == columns.end() &&
            std::find(columns.begin(), columns.end(), r.distortion) == columns.end())
            continue;
        sum += r.mean_accuracy;
        ++n;
    }
    if (n == 0)
        throw std::invalid_argument("mean_accuracy: no evaluated rows match");
    return sum / n;
}

json EvalReport::to_json() const
{
    json rows_json = json::array();
    for (const auto& r : rows) {
        json j = {{"distortion", r.distortion}, {"column", r.column}, {"skipped", r.skipped}};
        if (r.skipped) {
            j["note"] = r.note;
        } else {
            j["mean_accuracy"] = r.mean_accuracy;
            j["per_video"] = r.per_video;
        }
        rows_json.push_back(std::move(j));
    }
    return {{"method", method},
            {"bpf", bpf},
            {"rows", rows_json},
            {"fingerprint", fingerprint},
            {"environment_notes", environment_notes}};
}

EvalReport evaluate_robustness(StegoMethod& method, const std::vector<EvalVideo>& videos,
                               const std::vector<EvalDistortion>& suite, std::uint64_t seed,
                               const CodecOptions& codec)
{
    if (videos.empty())
        throw std::invalid_argument("evaluate_robustness: no videos");
    if (suite.empty())
        throw std::invalid_argument("evaluate_robustness: empty distortion suite");
    const auto m = method.message_bits();

    EvalReport report;
    report.method = method.name();
    report.bpf = m;
    const bool have_codec = find_codec(codec).has_value();
    json suite_json = json::array();
    for (const auto& d : suite) {
        EvalRow row;
        row.distortion = d.to_string();
        row.column = d.column();
        if (d.needs_codec() && !have_codec) {
            row.skipped = true;
            row.note = "skipped: no H.264 encoder found (set --codec-path)";
        }
        report.rows.push_back(std::move(row));
        suite_json.push_back(d.to_string());
    }

    RngState message_rng(seed, "eval-messages");
    const RngState distortion_root(seed, "eval-distortions");
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto msg = random_message(message_rng, m);
        const auto stego = method.embed(videos[i], msg);
        for (std::size_t k = 0; k < suite.size(); ++k) {
            auto& row = report.rows[k];
            if (row.skipped)
                continue;
            auto rng = distortion_root.fork(row.distortion + "#" + std::to_string(i));
            auto result = apply_eval_distortion(stego, suite[k], rng, codec);
            if (result.skipped) {
                row.skipped = true;
                row.note = result.note;
                row.per_video.clear();
                continue;
            }
            row.per_video.push_back(bit_accuracy(msg, method.extract(result.video)));
        }
    }
    for (auto& row : report.rows) {
        if (row.skipped)
            continue;
        row.mean_accuracy = std::accumulate(row.per_video.begin(), row.per_video.end(), 0.0) /
                            static_cast<double>(row.per_video.size());
    }
    if (!have_codec && std::any_of(suite.begin(), suite.end(), [](const auto& d) { return d.needs_codec(); }))
        report.environment_notes.push_back("H.264 encoder unavailable; h264 columns skipped");

    const auto& first = videos.front().cover;
    report.fingerprint = {{"method", report.method},
                          {"message_bits", m},
                          {"seed", seed},
                          {"videos", videos.size()},
                          {"frames", first.num_frames()},
                          {"height", first.height()},
                          {"width", first.width()},
                          {"suite", suite_json}};
    return report;
}

namespace {

std::vector<std::string> table_columns(const std::vector<EvalReport>& reports)
{
    std::vector<std::string> cols;
    for (const auto& rep : reports)
        for (const auto& r : rep.rows)
            if (std::find(cols.begin(), cols.end(), r.distortion) == cols.end())
                cols.push_back(r.distortion);
    return cols;
}

std::string cell(const EvalReport& rep, const std::string& col)
{
    for (const auto& r : rep.rows)
        if (r.distortion == col) {
            if (r.skipped)
                return "skipped";
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.4f", r.mean_accuracy);
            return buf;
        }
    return "";
}

}  // namespace

std::string render_text_table(const std::vector<EvalReport>& reports)
{
    const auto cols = table_columns(reports);
    std::size_t first = std::string("method").size();
    for (const auto& rep : reports)
        first = std::max(first, rep.method.size());
    first = std::max(first, std::string("method").size());
    std::vector<std::size_t> widths;
    for (const auto& c : cols)
        widths.push_back(std::max<std::size_t>(c.size(), 7));

    std::ostringstream os;
    auto pad = [&](const std::string& s, std::size_t w) { os << s << std::string(w - std::min(w, s.size()), ' '); };
    pad("method", first);
    os << "  ";
    pad("BPF", 3);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        os << "  ";
        pad(cols[i], widths[i]);
    }
    os << '\n';
    for (const auto& rep : reports) {
        pad(rep.method, first);
        os << "  ";
        pad(std::to_string(rep.bpf), 3);
        for (std::size_t i = 0; i < cols.size(); ++i) {
            os << "  ";
            pad(cell(rep, cols[i]), widths[i]);
        }
        os << '\n';
    }
    return os.str();
}

std::string render_csv(const std::vector<EvalReport>& reports)
{
    const auto cols = table_columns(reports);
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"") == std::string::npos)
            return s;
        std::string out = "\"";
        for (char c : s)
            out += c == '"' ? std::string("\"\"") : std::string(1, c);
        return out + "\"";
    };
    std::ostringstream os;
    os << "method,bpf";
    for (const auto& c : cols)
        os << ',' << quote(c);
    os << '\n';
    for (const auto& rep : reports) {
        os << quote(rep.method) << ',' << rep.bpf;
        for (const auto& c : cols)
            os << ',' << cell(rep, c);
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Bar chart

namespace {

// 3x5 glyphs, one string of 15 cells per character, row-major.
const std::map<char, const char*>& glyphs()
{
    static const std::map<char, const char*> g{
        {'0', "XXXX.XX.XX.XXXX"}, {'1', ".X.XX..X..X.XXX"}, {'2', "XXX..XXXXX..XXX"},
        {'3', "XXX..XXXX..XXXX"}, {'4', "X.XX.XXXX..X..X"}, {'5', "XXXX..XXX..XXXX"},
        {'6', "XXXX..XXXX.XXXX"}, {'7', "XXX..X..X..X..X"}, {'8', "XXXX.XXXXX.XXXX"},
        {'9', "XXXX.XXXX..XXXX"}, {'.', ".............X."}, {'-', "......XXX......"},
        {'_', "............XXX"}, {'=', "...XXX...XXX..."}, {'(', ".X.X..X..X...X."},
        {')', ".X...X..X..X.X."}, {'A', ".X.X.XXXXX.XX.X"}, {'B', "XX.X.XXX.X.XXX."},
        {'C', ".XXX..X..X...XX"}, {'D', "XX.X.XX.XX.XXX."}, {'E', "XXXX..XX.X..XXX"},
        {'F', "XXXX..XX.X..X.."}, {'G', ".XXX..X.XX.X.XX"}, {'H', "X.XX.XXXXX.XX.X"},
        {'I', "XXX.X..X..X.XXX"}, {'J', "..X..X..XX.X.X."}, {'K', "X.XX.XXX.X.XX.X"},
        {'L', "X..X..X..X..XXX"}, {'M', "X.XXXXXXXX.XX.X"}, {'N', "XX.X.XX.XX.XX.X"},
        {'O', ".X.X.XX.XX.X.X."}, {'P', "XX.X.XXX.X..X.."}, {'Q', ".X.X.XX.XXX..XX"},
        {'R', "XX.X.XXX.X.XX.X"}, {'S', ".XXX...X...XXX."}, {'T', "XXX.X..X..X..X."},
        {'U', "X.XX.XX.XX.XXXX"}, {'V', "X.XX.XX.XX.X.X."}, {'W', "X.XX.XXXXXXXX.X"},
        {'X', "X.XX.X.X.X.XX.X"}, {'Y', "X.XX.X.X..X..X."}, {'Z', "XXX..X.X.X..XXX"},
    };
    return g;
}

class Canvas {
public:
    Canvas(std::int64_t w, std::int64_t h) : w_(w), h_(h), rgb_(static_cast<std::size_t>(w * h * 3), 255) {}

    void fill(std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1, std::array<std::uint8_t, 3> c)
    {
        for (auto y = std::max<std::int64_t>(0, y0); y < std::min(h_, y1); ++y)
            for (auto x = std::max<std::int64_t>(0, x0); x < std::min(w_, x1); ++x)
                for (int k = 0; k < 3; ++k)
                    rgb_[static_cast<std::size_t>((y * w_ + x) * 3 + k)] = c[static_cast<std::size_t>(k)];
    }

    /// Top-left anchored text, 4 px advance per character.
    void text(std::int64_t x, std::int64_t y, const std::string& s, std::array<std::uint8_t, 3> c)
    {
        for (char ch : s) {
            const auto it = glyphs().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
            if (it != glyphs().end())
                for (int i = 0; i < 15; ++i)
                    if (it->second[i] == 'X')
                        fill(x + i % 3, y + i / 3, x + i % 3 + 1, y + i / 3 + 1, c);
            x += 4;
        }
    }

    static std::int64_t text_width(const std::string& s) { return static_cast<std::int64_t>(s.size()) * 4; }

    void save(const fs::path& path, int scale) const
    {
        std::vector<std::uint8_t> big(static_cast<std::size_t>(w_ * h_ * 3 * scale * scale));
        for (std::int64_t y = 0; y < h_ * scale; ++y)
            for (std::int64_t x = 0; x < w_ * scale; ++x)
                for (int k = 0; k < 3; ++k)
                    big[static_cast<std::size_t>((y * w_ * scale + x) * 3 + k)] =
                        rgb_[static_cast<std::size_t>(((y / scale) * w_ + x / scale) * 3 + k)];
        write_png_rgb8(path, w_ * scale, h_ * scale, big);
    }

private:
    std::int64_t w_, h_;
    std::vector<std::uint8_t> rgb_;
};

}  // namespace

void write_bar_chart(const fs::path& path, const std::vector<EvalReport>& reports)
{
    if (reports.empty())
        throw std::invalid_argument("write_bar_chart: no reports");
    static const std::array<std::array<std::uint8_t, 3>, 6> palette{
        {{46, 106, 178}, {220, 120, 40}, {70, 150, 70}, {180, 50, 60}, {120, 90, 170}, {90, 90, 90}}};
    const std::array<std::uint8_t, 3> ink{30, 30, 30}, grid{215, 215, 215};

    std::vector<std::string> cols;
    for (const auto& rep : reports)
        for (const auto& r : rep.rows)
            if (std::find(cols.begin(), cols.end(), r.column) == cols.end())
                cols.push_back(r.column);

    constexpr std::int64_t kBar = 18, kGap = 2, kPlotH = 160, kLeft = 28, kTop = 14;
    std::int64_t group = static_cast<std::int64_t>(reports.size()) * (kBar + kGap) + 8;
    for (const auto& c : cols)
        group = std::max(group, Canvas::text_width(c) + 6);
    std::int64_t legend_w = 0;
    for (const auto& rep : reports)
        legend_w += Canvas::text_width(rep.method) + 16;
    const std::int64_t width = std::max(kLeft + group * static_cast<std::int64_t>(cols.size()) + 8, legend_w + kLeft);
    const std::int64_t height = kTop + 12 + kPlotH + 24;
    const std::int64_t base = kTop + 12 + kPlotH;

    Canvas canvas(width, height);
    std::int64_t lx = kLeft;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        canvas.fill(lx, 4, lx + 6, 10, palette[i % palette.size()]);
        canvas.text(lx + 8, 4, reports[i].method, ink);
        lx += Canvas::text_width(reports[i].method) + 16;
    }
    for (int tick = 0; tick <= 4; ++tick) {
        const auto y = base - kPlotH * tick / 4;
        canvas.fill(kLeft, y, width - 4, y + 1, grid);
        char label[8];
        std::snprintf(label, sizeof label, "%.2f", tick / 4.0);
        canvas.text(2, y - 2, label, ink);
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto gx = kLeft + group * static_cast<std::int64_t>(c) + 4;
        for (std::size_t r = 0; r < reports.size(); ++r) {
            const auto x = gx + static_cast<std::int64_t>(r) * (kBar + kGap);
            const EvalRow* row = nullptr;
            for (const auto& candidate : reports[r].rows)
                if (candidate.column == cols[c])
                    row = &candidate;
            if (!row)
                continue;
            if (row->skipped) {
                canvas.text(x, base - 8, "N.A", ink);
                continue;
            }
            const auto bar_h = static_cast<std::int64_t>(std::lround(std::clamp(row->mean_accuracy, 0.0, 1.0) * kPlotH));
            canvas.fill(x, base - bar_h, x + kBar, base, palette[r % palette.size()]);
            char label[8];
            std::snprintf(label, sizeof label, "%.2f", row->mean_accuracy);
            canvas.text(x + 1, base - bar_h - 7, label, ink);
        }
        canvas.text(gx, base + 6, cols[c], ink);
    }
    canvas.fill(kLeft, base, width - 4, base + 1, ink);
    canvas.save(path, 2);
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<NamedLayout> position_layouts(std::int64_t m)
{
    return {{"a", EmbeddingLayout::two_segments(m, 1, 4, 5, 9)},
            {"b", EmbeddingLayout::two_segments(m, 1, 2, 3, 4)},
            {"c", EmbeddingLayout::two_segments(m, 5, 6, 7, 8)},
            {"standard", EmbeddingLayout::two_segments(m, 1, 3, 4, 6)}};
}

json AblationTable::to_json() const
{
    json rows = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i)
        rows.push_back({{"name", row_names[i]}, {"report", reports[i].to_json()}});
    return {{"rows", rows}};
}

namespace {

EvalReport train_and_evaluate(const TrainConfig& config, const std::string& name, const AblationSettings& s,
                              const std::vector<EvalDistortion>& suite)
{
    const auto run_dir = s.out_dir / name;
    fs::create_directories(run_dir);
    write_text_file(run_dir / "train_config.json", train_config_to_json(config).dump(2) + "\n");
    const auto result = train(config, s.identity_checkpoint, run_dir, s.progress);
    GenerativeMethod method(load_bundle(result.final_checkpoint), name);
    const auto videos = make_eval_videos(s.eval_seed, s.eval_videos, s.eval_frames, config.model.image_size);
    auto report = evaluate_robustness(method, videos, suite, s.eval_seed, s.codec);
    report.fingerprint["train_config"] = train_config_to_json(config);
    return report;
}

}  // namespace

AblationTable ablate_positions(const std::vector<NamedLayout>& layouts, const AblationSettings& settings,
                               std::vector<EvalDistortion> suite)
{
    if (suite.empty())
        suite = position_suite(find_codec(settings.codec).has_value());
    AblationTable table;
    for (const auto& entry : layouts) {
        auto cfg = settings.base;
        cfg.model.message_bits = entry.layout.message_bits();
        cfg.layout = entry.layout.to_string();
        entry.layout.validate(cfg.model.message_bits);
        table.row_names.push_back(entry.name);
        table.reports.push_back(train_and_evaluate(cfg, "layout_" + entry.name, settings, suite));
        table.reports.back().method = entry.name;
    }
    return table;
}

AblationTable sweep_lambda(const std::vector<double>& lambdas, const AblationSettings& settings)
{
    AblationTable table;
    for (double lambda : lambdas) {
        auto cfg = settings.base;
        cfg.lambda = lambda;
        const auto name = "lambda_" + format_number(lambda);
        table.row_names.push_back(name);
        table.reports.push_back(train_and_evaluate(cfg, name, settings, {EvalDistortion::make(EvalKind::none)}));
        table.reports.back().method = name;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Detector

double roc_auc(const std::vector<double>& positive, const std::vector<double>& negative)
{
    if (positive.empty() || negative.empty())
        throw std::invalid_argument("roc_auc: both classes need at least one score");
    std::vector<std::pair<double, int>> all;
    for (double s : positive)
        all.emplace_back(s, 1);
    for (double s : negative)
        all.emplace_back(s, 0);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first)
            ++j;
        const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (auto k = i; k < j; ++k)
            if (all[k].second == 1)
                rank_sum += mean_rank;
        i = j;
    }
    const auto np = static_cast<double>(positive.size()), nn = static_cast<double>(negative.size());
    return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

namespace {

Tensor probe_features(const Tensor& frames, ProbeFeatures kind)
{
    if (kind == ProbeFeatures::lsb_plane)
        return torch::fmod(torch::round(frames.clamp(0.0, 1.0) * 255.0), 2.0).to(torch::kFloat32);
    return frames.to(torch::kFloat32) - 0.5;
}

torch::nn::Sequential make_probe_net()
{
    namespace nn = torch::nn;
    return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, 8, 3).padding(1)), nn::ReLU(),
                          nn::Conv2d(nn::Conv2dOptions(8, 16, 3).stride(2).padding(1)), nn::ReLU(),
                          nn::Conv2d(nn::Conv2dOptions(16, 32, 3).stride(2).padding(1)), nn::ReLU(),
                          nn::AdaptiveAvgPool2d(1), nn::Flatten(), nn::Linear(32, 1));
}

std::vector<std::int64_t> shuffled(std::int64_t n, RngState& rng)
{
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(idx[static_cast<std::size_t>(i)],
                  idx[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    return idx;
}

Tensor take(const Tensor& t, const std::vector<std::int64_t>& idx, std::size_t begin, std::size_t end)
{
    std::vector<std::int64_t> part(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                   idx.begin() + static_cast<std::ptrdiff_t>(end));
    return t.index_select(0, torch::tensor(part, torch::kInt64));
}

std::vector<double> scores(torch::nn::Sequential& net, const Tensor& x)
{
    torch::NoGradGuard no_grad;
    std::vector<double> out;
    constexpr std::int64_t kChunk = 256;
    for (std::int64_t i = 0; i < x.size(0); i += kChunk) {
        auto s = net->forward(x.narrow(0, i, std::min(kChunk, x.size(0) - i))).view(-1).to(torch::kFloat64);
        out.insert(out.end(), s.data_ptr<double>(), s.data_ptr<double>() + s.numel());
    }
    return out;
}

}  // namespace

ProbeResult steganalysis_probe(const Tensor& covers, const Tensor& stegos, const ProbeConfig& config)
{
    check_frames(covers, "steganalysis_probe covers");
    check_frames(stegos, "steganalysis_probe stegos");
    if (covers.dim() != 4 || stegos.dim() != 4 || covers.sizes().slice(1) != stegos.sizes().slice(1))
        throw std::invalid_argument("steganalysis_probe: frame sets must be (N,3,H,W) with matching H, W");
    const auto nc = covers.size(0), ns = stegos.size(0);
    if (nc < 2 || ns < 2)
        throw std::invalid_argument("steganalysis_probe: each class needs at least two frames");
    if (nc > 10 * ns || ns > 10 * nc)
        throw std::invalid_argument("steganalysis_probe: class imbalance exceeds 10:1");
    if (!(config.train_fraction > 0 && config.train_fraction < 1) || config.steps < 0 || config.batch_size < 2)
        throw std::invalid_argument("steganalysis_probe: invalid configuration");
    torch::AutoGradMode grad_on(true);

    RngState rng(config.seed, "probe-split");
    const auto ic = shuffled(nc, rng), is = shuffled(ns, rng);
    auto split = [&](std::int64_t n) {
        const auto k = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(n * config.train_fraction)), 1, n - 1);
        return static_cast<std::size_t>(k);
    };
    const auto kc = split(nc), ks = split(ns);
    const auto fc = probe_features(covers, config.features), fs_ = probe_features(stegos, config.features);
    const auto train_c = take(fc, ic, 0, kc), test_c = take(fc, ic, kc, ic.size());
    const auto train_s = take(fs_, is, 0, ks), test_s = take(fs_, is, ks, is.size());

    torch::manual_seed(config.seed);
    auto net = make_probe_net();
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.lr));
    RngState batch_rng(config.seed, "probe-batches");
    const auto half = config.batch_size / 2;
    net->train();
    for (std::int64_t step = 0; step < config.steps; ++step) {
        std::vector<std::int64_t> bc, bs;
        for (std::int64_t i = 0; i < half; ++i) {
            bc.push_back(static_cast<std::int64_t>(batch_rng.below(kc)));
            bs.push_back(static_cast<std::int64_t>(batch_rng.below(ks)));
        }
        auto x = torch::cat({train_c.index_select(0, torch::tensor(bc)), train_s.index_select(0, torch::tensor(bs))});
        auto y = torch::cat({torch::zeros({half}), torch::ones({half})});
        auto loss = torch::binary_cross_entropy_with_logits(net->forward(x).view(-1), y);
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    net->eval();
    ProbeResult result;
    result.auc = roc_auc(scores(net, test_s), scores(net, test_c));
    result.train_count = static_cast<std::int64_t>(kc + ks);
    result.test_count = static_cast<std::int64_t>(ic.size() - kc + is.size() - ks);
    return result;
}

}  // namespace idstego
