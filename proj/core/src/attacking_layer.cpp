#include "idstego/attacking_layer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace idstego {

using torch::Tensor;

namespace {

constexpr int kLumaTable[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr int kChromaTable[64] = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// Full-range JPEG RGB -> YCbCr (without the +128 chroma offset).
constexpr double kRgbToYcc[9] = {0.299,     0.587,     0.114,      //
                                 -0.168736, -0.331264, 0.5,        //
                                 0.5,       -0.418688, -0.081312};

Tensor rgb_to_ycc_matrix(torch::Dtype dtype)
{
    return torch::tensor(std::vector<double>(kRgbToYcc, kRgbToYcc + 9), torch::kFloat64).view({3, 3}).to(dtype);
}

Tensor dct_matrix(torch::Dtype dtype)
{
    auto d = torch::empty({8, 8}, torch::kFloat64);
    auto acc = d.accessor<double, 2>();
    for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x)
            acc[u][x] = (u == 0 ? std::sqrt(1.0 / 8.0) : 0.5) * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    return d.to(dtype);
}

struct Batched {
    Tensor tensor;
    bool single;
};

Batched as_batch(const Tensor& frames)
{
    if (frames.dim() == 3)
        return {frames.unsqueeze(0), true};
    if (frames.dim() != 4 || frames.size(1) != 3)
        throw std::invalid_argument("attacking layer: expected (3,H,W) or (B,3,H,W)");
    return {frames, false};
}

Tensor restore(const Tensor& t, bool single)
{
    return single ? t.squeeze(0) : t;
}

Tensor clamp01(const Tensor& t)
{
    return t.clamp(0.0, 1.0);
}

/// (B,3,H,W) -> (B,3,H/8,W/8,8,8)
Tensor to_blocks(const Tensor& x)
{
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    return x.reshape({b, c, h / 8, 8, w / 8, 8}).permute({0, 1, 2, 4, 3, 5});
}

Tensor from_blocks(const Tensor& blocks)
{
    const auto b = blocks.size(0), c = blocks.size(1), hb = blocks.size(2), wb = blocks.size(3);
    return blocks.permute({0, 1, 2, 4, 3, 5}).reshape({b, c, hb * 8, wb * 8});
}

/// Table per channel broadcastable against (B,3,hb,wb,8,8).
Tensor channel_tables(double quality, torch::Dtype dtype)
{
    auto t = jpeg_quant_tables(quality, dtype);
    return torch::stack({t[0], t[1], t[1]}).view({1, 3, 1, 1, 8, 8});
}

Tensor forward_coefficients(const Tensor& frames, torch::Dtype dtype)
{
    const auto ycc = rgb_to_ycc_matrix(dtype);
    auto shifted = torch::einsum("ij,bjhw->bihw", {ycc, frames * 255.0});
    shifted = shifted - torch::tensor({128.0, 0.0, 0.0}, dtype).view({1, 3, 1, 1});
    const auto d = dct_matrix(dtype);
    return torch::matmul(torch::matmul(d, to_blocks(shifted)), d.t());
}

void check_jpeg_dims(const Tensor& x)
{
    if (x.size(2) % 8 != 0 || x.size(3) % 8 != 0)
        throw std::invalid_argument("diff_jpeg: H and W must be multiples of 8, got " + std::to_string(x.size(2)) +
                                    "x" + std::to_string(x.size(3)));
}

void check_quality(double q)
{
    if (!(q >= 1.0 && q <= 100.0))
        throw std::invalid_argument("JPEG quality must be in [1,100]");
}

class ApproxQuantizeFn : public torch::autograd::Function<ApproxQuantizeFn> {
public:
    static Tensor forward(torch::autograd::AutogradContext* ctx, const Tensor& x)
    {
        ctx->save_for_backward({x});
        return torch::where(x.abs() < 0.5, x.pow(3), x);
    }

    static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                   torch::autograd::variable_list grad_out)
    {
        auto x = ctx->get_saved_variables()[0];
        auto local = torch::where(x.abs() <= 0.5, 3.0 * x.pow(2), torch::ones_like(x));
        return {grad_out[0] * local};
    }
};

std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(AttackKind kind)
{
    switch (kind) {
    case AttackKind::identity: return "identity";
    case AttackKind::jpeg: return "jpeg";
    case AttackKind::brightness_contrast: return "brightness_contrast";
    case AttackKind::saturation: return "saturation";
    case AttackKind::gaussian_noise: return "gaussian_noise";
    }
    throw std::invalid_argument("unknown attack kind");
}

AttackKind parse_attack_kind(const std::string& name)
{
    for (int k = 0; k < kNumAttackKinds; ++k)
        if (to_string(static_cast<AttackKind>(k)) == name)
            return static_cast<AttackKind>(k);
    throw std::invalid_argument("unknown attack kind '" + name + "'");
}

DistortionSpec DistortionSpec::jpeg(double q)
{
    DistortionSpec s;
    s.kind = AttackKind::jpeg;
    s.quality = q;
    return s;
}

DistortionSpec DistortionSpec::color(double a, double c)
{
    DistortionSpec s;
    s.kind = AttackKind::brightness_contrast;
    s.contrast = a;
    s.brightness = c;
    return s;
}

DistortionSpec DistortionSpec::saturation(double t)
{
    DistortionSpec s;
    s.kind = AttackKind::saturation;
    s.t = t;
    return s;
}

DistortionSpec DistortionSpec::noise(double delta)
{
    DistortionSpec s;
    s.kind = AttackKind::gaussian_noise;
    s.delta = delta;
    return s;
}

std::string DistortionSpec::to_string() const
{
    switch (kind) {
    case AttackKind::identity: return "identity";
    case AttackKind::jpeg: return "jpeg(q=" + format_double(quality) + ")";
    case AttackKind::brightness_contrast:
        return "brightness_contrast(a=" + format_double(contrast) + ",c=" + format_double(brightness) + ")";
    case AttackKind::saturation: return "saturation(t=" + format_double(t) + ")";
    case AttackKind::gaussian_noise: return "gaussian_noise(delta=" + format_double(delta) + ")";
    }
    throw std::invalid_argument("unknown attack kind");
}

DistortionSpec DistortionSpec::parse(const std::string& text)
{
    const auto open = text.find('(');
    DistortionSpec spec;
    spec.kind = parse_attack_kind(text.substr(0, open));
    std::map<std::string, double> params;
    if (open != std::string::npos) {
        if (text.back() != ')')
            throw std::invalid_argument("DistortionSpec: missing ')' in '" + text + "'");
        std::stringstream ss(text.substr(open + 1, text.size() - open - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("DistortionSpec: expected key=value in '" + text + "'");
            try {
                params[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
            } catch (const std::exception&) {
                throw std::invalid_argument("DistortionSpec: bad number in '" + text + "'");
            }
        }
    }
    auto take = [&](const char* key, double& out) {
        auto it = params.find(key);
        if (it == params.end())
            throw std::invalid_argument(std::string("DistortionSpec: missing parameter '") + key + "' in '" + text + "'");
        out = it->second;
        params.erase(it);
    };
    switch (spec.kind) {
    case AttackKind::identity: break;
    case AttackKind::jpeg: take("q", spec.quality); break;
    case AttackKind::brightness_contrast:
        take("a", spec.contrast);
        take("c", spec.brightness);
        break;
    case AttackKind::saturation: take("t", spec.t); break;
    case AttackKind::gaussian_noise: take("delta", spec.delta); break;
    }
    if (!params.empty())
        throw std::invalid_argument("DistortionSpec: unknown parameter '" + params.begin()->first + "' in '" + text + "'");
    spec.validate();
    return spec;
}

void DistortionSpec::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok)
            throw std::invalid_argument(std::string("DistortionSpec: ") + what);
    };
    switch (kind) {
    case AttackKind::identity: break;
    case AttackKind::jpeg:
        require(quality >= AttackRanges::kQualityMin && quality <= AttackRanges::kQualityMax, "quality outside [50,100]");
        break;
    case AttackKind::brightness_contrast:
        require(contrast >= AttackRanges::kContrastMin && contrast <= AttackRanges::kContrastMax, "a outside [0.5,1.5]");
        require(brightness >= AttackRanges::kBrightnessMin && brightness <= AttackRanges::kBrightnessMax,
                "c outside [-0.3,0.3]");
        break;
    case AttackKind::saturation: require(t >= 0.0 && t <= 1.0, "t outside [0,1]"); break;
    case AttackKind::gaussian_noise:
        require(delta >= 0.0 && delta <= AttackRanges::kDeltaMax, "delta outside [0,0.2]");
        break;
    }
}

// ---------------------------------------------------------------------------

Tensor approx_quantize(const Tensor& x)
{
    if (torch::isnan(x).any().item<bool>())
        throw std::invalid_argument("approx_quantize: NaN input");
    return ApproxQuantizeFn::apply(x);
}

Tensor jpeg_quant_tables(double quality, torch::Dtype dtype)
{
    check_quality(quality);
    const double scale = quality < 50.0 ? 5000.0 / quality : 200.0 - 2.0 * quality;
    auto t = torch::empty({2, 8, 8}, torch::kFloat64);
    auto acc = t.accessor<double, 3>();
    for (int i = 0; i < 64; ++i) {
        const int* tables[2] = {kLumaTable, kChromaTable};
        for (int k = 0; k < 2; ++k) {
            double v = std::floor((tables[k][i] * scale + 50.0) / 100.0);
            acc[k][i / 8][i % 8] = std::clamp(v, 1.0, 255.0);
        }
    }
    return t.to(dtype);
}

Tensor jpeg_scaled_coefficients(const Tensor& frames, double quality)
{
    auto [x, single] = as_batch(frames);
    (void)single;
    check_jpeg_dims(x);
    const auto dtype = x.scalar_type();
    return forward_coefficients(x, dtype) / channel_tables(quality, dtype);
}

Tensor diff_jpeg(const Tensor& frames, double quality)
{
    auto [x, single] = as_batch(frames);
    check_jpeg_dims(x);
    check_quality(quality);
    const auto dtype = x.scalar_type();
    const auto tables = channel_tables(quality, dtype);
    auto scaled = forward_coefficients(x, dtype) / tables;
    auto rounded = torch::round(scaled).detach();
    auto quantized = rounded + approx_quantize(scaled - rounded);
    const auto d = dct_matrix(dtype);
    auto blocks = torch::matmul(torch::matmul(d.t(), quantized * tables), d);
    auto ycc = from_blocks(blocks) + torch::tensor({128.0, 0.0, 0.0}, dtype).view({1, 3, 1, 1});
    const auto inverse = torch::inverse(rgb_to_ycc_matrix(torch::kFloat64)).to(dtype);
    auto rgb = torch::einsum("ij,bjhw->bihw", {inverse, ycc}) / 255.0;
    return restore(clamp01(rgb), single);
}

Tensor brightness_contrast(const Tensor& frames, double a, double c)
{
    return clamp01(a * frames + c);
}

Tensor saturate(const Tensor& frames, double t)
{
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("saturate: t must be in [0,1]");
    auto [x, single] = as_batch(frames);
    auto gray = (0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2)).unsqueeze(1);
    return restore(clamp01(t * x + (1.0 - t) * gray), single);
}

Tensor gaussian_noise(const Tensor& frames, double delta, RngState& rng)
{
    if (!(delta >= 0.0) || !std::isfinite(delta))
        throw std::invalid_argument("gaussian_noise: delta must be >= 0");
    if (delta == 0.0)
        return clamp01(frames);
    auto noise = rng.normal_tensor(frames.sizes(), frames.scalar_type()) * delta;
    return clamp01(frames + noise);
}

DistortionSpec sample_attack(RngState& rng)
{
    const auto kind = static_cast<AttackKind>(rng.below(kNumAttackKinds));
    switch (kind) {
    case AttackKind::identity: return DistortionSpec::identity();
    case AttackKind::jpeg: return DistortionSpec::jpeg(rng.uniform(AttackRanges::kQualityMin, AttackRanges::kQualityMax));
    case AttackKind::brightness_contrast: {
        const double a = rng.uniform(AttackRanges::kContrastMin, AttackRanges::kContrastMax);
        const double c = rng.uniform(AttackRanges::kBrightnessMin, AttackRanges::kBrightnessMax);
        return DistortionSpec::color(a, c);
    }
    case AttackKind::saturation: return DistortionSpec::saturation(rng.uniform());
    case AttackKind::gaussian_noise: return DistortionSpec::noise(rng.uniform(0.0, AttackRanges::kDeltaMax));
    }
    throw std::logic_error("sample_attack: unreachable");
}

Tensor apply_attack(const Tensor& frames, const DistortionSpec& spec, RngState& rng)
{
    spec.validate();
    switch (spec.kind) {
    case AttackKind::identity: return frames;
    case AttackKind::jpeg: return diff_jpeg(frames, spec.quality);
    case AttackKind::brightness_contrast: return brightness_contrast(frames, spec.contrast, spec.brightness);
    case AttackKind::saturation: return saturate(frames, spec.t);
    case AttackKind::gaussian_noise: return gaussian_noise(frames, spec.delta, rng);
    }
    throw std::invalid_argument("apply_attack: unknown distortion kind");
}

}  // namespace idstego
