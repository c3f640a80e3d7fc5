#include "idstego/attacking_layer.hpp"

#include "grad_check.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>

using namespace idstego;
using idstego::test_support::check_gradient;
using idstego::test_support::Fn;

namespace {

// Plain-loop JPEG with true rounding, written without tensors.
namespace naive {

constexpr std::array<int, 64> luma{16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                   14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                   18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                   49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr std::array<int, 64> chroma{17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                     24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                     99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                     99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

int scaled_entry(int base, int quality)
{
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    return std::clamp((base * s + 50) / 100, 1, 255);
}

double c(int u) { return u == 0 ? 1.0 / std::sqrt(2.0) : 1.0; }

using Plane = std::vector<double>;

void block_dct(const Plane& in, Plane& out, int w, int bx, int by)
{
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
            double s = 0;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    s += in[(by + y) * w + bx + x] * std::cos((2 * x + 1) * u * std::numbers::pi / 16) *
                         std::cos((2 * y + 1) * v * std::numbers::pi / 16);
            out[(by + v) * w + bx + u] = 0.25 * c(u) * c(v) * s;
        }
}

void block_idct(const Plane& in, Plane& out, int w, int bx, int by)
{
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int v = 0; v < 8; ++v)
                for (int u = 0; u < 8; ++u)
                    s += c(u) * c(v) * in[(by + v) * w + bx + u] * std::cos((2 * x + 1) * u * std::numbers::pi / 16) *
                         std::cos((2 * y + 1) * v * std::numbers::pi / 16);
            out[(by + y) * w + bx + x] = 0.25 * s;
        }
}

/// (3,H,W) double tensor in [0,1] -> JPEG round trip with true rounding.
torch::Tensor jpeg(const torch::Tensor& frame, int quality)
{
    const int h = static_cast<int>(frame.size(1)), w = static_cast<int>(frame.size(2));
    auto f = frame.to(torch::kFloat64).contiguous();
    auto a = f.accessor<double, 3>();
    std::array<Plane, 3> ycc{Plane(h * w), Plane(h * w), Plane(h * w)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r = 255 * a[0][y][x], g = 255 * a[1][y][x], b = 255 * a[2][y][x];
            ycc[0][y * w + x] = 0.299 * r + 0.587 * g + 0.114 * b - 128;
            ycc[1][y * w + x] = -0.168736 * r - 0.331264 * g + 0.5 * b;
            ycc[2][y * w + x] = 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    for (int ch = 0; ch < 3; ++ch) {
        const auto& table = ch == 0 ? luma : chroma;
        Plane coef(h * w), back(h * w);
        for (int by = 0; by < h; by += 8)
            for (int bx = 0; bx < w; bx += 8) {
                block_dct(ycc[ch], coef, w, bx, by);
                for (int v = 0; v < 8; ++v)
                    for (int u = 0; u < 8; ++u) {
                        const double q = scaled_entry(table[v * 8 + u], quality);
                        auto& k = coef[(by + v) * w + bx + u];
                        k = std::nearbyint(k / q) * q;
                    }
                block_idct(coef, back, w, bx, by);
            }
        ycc[ch] = back;
    }
    auto out = torch::empty({3, h, w}, torch::kFloat64);
    auto o = out.accessor<double, 3>();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double yy = ycc[0][y * w + x] + 128, cb = ycc[1][y * w + x], cr = ycc[2][y * w + x];
            const double rgb[3] = {yy + 1.402 * cr, yy - 0.344136 * cb - 0.714136 * cr, yy + 1.772 * cb};
            for (int ch = 0; ch < 3; ++ch)
                o[ch][y][x] = std::clamp(rgb[ch] / 255.0, 0.0, 1.0);
        }
    return out;
}

}  // namespace naive

/// Smooth random frame: a few low-frequency cosines per channel around mid-gray.
torch::Tensor smooth_frame(RngState& rng, std::int64_t size)
{
    auto frame = torch::empty({3, size, size}, torch::kFloat64);
    auto a = frame.accessor<double, 3>();
    for (int ch = 0; ch < 3; ++ch) {
        const double base = rng.uniform(0.3, 0.7);
        double amp[3], fx[3], fy[3], ph[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = rng.uniform(0.0, 0.08);
            fx[k] = rng.uniform(0.0, 2.0);
            fy[k] = rng.uniform(0.0, 2.0);
            ph[k] = rng.uniform(0.0, 2 * std::numbers::pi);
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double v = base;
                for (int k = 0; k < 3; ++k)
                    v += amp[k] * std::cos(2 * std::numbers::pi * (fx[k] * x + fy[k] * y) / size + ph[k]);
                a[ch][y][x] = v;
            }
    }
    return frame;
}

}  // namespace

// ---------------------------------------------------------------------------
// approx_quantize

TEST(ApproxQuantize, BranchValues)
{
    const auto x = torch::tensor({0.3, 0.7, -0.4, 0.0, -0.7}, torch::kFloat64);
    const auto q = approx_quantize(x);
    EXPECT_NEAR(q[0].item<double>(), 0.027, 1e-15);
    EXPECT_EQ(q[1].item<double>(), 0.7);
    EXPECT_NEAR(q[2].item<double>(), -0.064, 1e-15);
    EXPECT_EQ(q[3].item<double>(), 0.0);
    EXPECT_EQ(q[4].item<double>(), -0.7);
}

TEST(ApproxQuantize, DiscontinuityAtHalf)
{
    const double below = std::nextafter(0.5, 0.0);
    const auto q = approx_quantize(torch::tensor({below, 0.5, -below, -0.5}, torch::kFloat64));
    EXPECT_NEAR(q[0].item<double>(), 0.125, 1e-15);
    EXPECT_EQ(q[1].item<double>(), 0.5);
    EXPECT_NEAR(q[2].item<double>(), -0.125, 1e-15);
    EXPECT_EQ(q[3].item<double>(), -0.5);
}

TEST(ApproxQuantize, OddFunction)
{
    RngState rng(1, "odd");
    const auto x = rng.uniform_tensor({1000}, -2.0, 2.0, torch::kFloat64);
    EXPECT_TRUE(torch::equal(approx_quantize(-x), -approx_quantize(x)));
}

TEST(ApproxQuantize, GradientMatchesFiniteDifferences)
{
    RngState rng(2, "q-grad");
    const auto x0 = rng.uniform_tensor({400}, -2.0, 2.0, torch::kFloat64);
    const double h = 1e-6;
    auto away = [](const torch::Tensor& p, const torch::Tensor& m) {
        return ((p.abs() < 0.5) == (m.abs() < 0.5)).all().item<bool>();
    };
    const auto r = check_gradient([](const torch::Tensor& t) { return approx_quantize(t); }, x0, 100, h, 1e-4, rng, away);
    EXPECT_GE(r.checked, 100);
    EXPECT_EQ(r.failed, 0);
}

TEST(ApproxQuantize, NanThrows)
{
    EXPECT_THROW(approx_quantize(torch::tensor({std::nan("")})), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// diff_jpeg

TEST(DiffJpeg, ShapeDtypeAndErrors)
{
    const auto f = torch::rand({3, 16, 24});
    EXPECT_EQ(diff_jpeg(f, 75).sizes(), f.sizes());
    EXPECT_EQ(diff_jpeg(f.to(torch::kFloat64), 75).scalar_type(), torch::kFloat64);
    EXPECT_THROW(diff_jpeg(torch::rand({3, 12, 16}), 75), std::invalid_argument);
    EXPECT_THROW(diff_jpeg(torch::rand({3, 16, 16}), 0), std::invalid_argument);
}

TEST(DiffJpeg, QuantTablesFollowIjgScaling)
{
    const auto t50 = jpeg_quant_tables(50, torch::kFloat64);
    EXPECT_EQ(t50[0][0][0].item<double>(), 16.0);
    EXPECT_EQ(t50[1][7][7].item<double>(), 99.0);
    const auto t100 = jpeg_quant_tables(100, torch::kFloat64);
    EXPECT_TRUE(torch::equal(t100, torch::ones_like(t100)));
    const auto t75 = jpeg_quant_tables(75, torch::kFloat64);
    EXPECT_EQ(t75[0][0][0].item<double>(), 8.0);
}

TEST(DiffJpeg, MatchesTrueRoundingReferenceAtQuality50)
{
    RngState rng(3, "jpeg-ref");
    double worst = 0;
    for (int i = 0; i < 20; ++i) {
        const auto frame = smooth_frame(rng, 32);
        const auto ours = diff_jpeg(frame, 50);
        const auto ref = naive::jpeg(frame, 50);
        worst = std::max(worst, (ours - ref).abs().max().item<double>());
    }
    EXPECT_LE(worst, 0.05);
}

TEST(DiffJpeg, QualityHundredFixedPointOnQuantizedBasis)
{
    // Build a frame whose Y/Cb/Cr block DCT coefficients are integers (table
    // entries are all 1 at Q=100) through the reference inverse pipeline.
    RngState rng(4, "q100");
    const int size = 16;
    std::array<naive::Plane, 3> coef{naive::Plane(size * size, 0.0), naive::Plane(size * size, 0.0),
                                     naive::Plane(size * size, 0.0)};
    for (int ch = 0; ch < 3; ++ch)
        for (int by = 0; by < size; by += 8)
            for (int bx = 0; bx < size; bx += 8)
                for (int k = 0; k < 6; ++k) {
                    const int u = static_cast<int>(rng.below(3)), v = static_cast<int>(rng.below(3));
                    coef[ch][(by + v) * size + bx + u] = static_cast<double>(static_cast<int>(rng.below(9)) - 4);
                }
    std::array<naive::Plane, 3> ycc{naive::Plane(size * size), naive::Plane(size * size), naive::Plane(size * size)};
    for (int ch = 0; ch < 3; ++ch)
        for (int by = 0; by < size; by += 8)
            for (int bx = 0; bx < size; bx += 8)
                naive::block_idct(coef[ch], ycc[ch], size, bx, by);
    // Exact inverse of the forward colour matrix so the coefficients stay integral.
    const auto m = torch::tensor({0.299, 0.587, 0.114, -0.168736, -0.331264, 0.5, 0.5, -0.418688, -0.081312},
                                 torch::kFloat64)
                       .view({3, 3});
    const auto inv = torch::inverse(m);
    auto frame = torch::empty({3, size, size}, torch::kFloat64);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto v = torch::tensor({ycc[0][y * size + x] + 128, ycc[1][y * size + x], ycc[2][y * size + x]},
                                         torch::kFloat64);
            const auto rgb = torch::matmul(inv, v) / 255.0;
            for (int ch = 0; ch < 3; ++ch)
                frame[ch][y][x] = rgb[ch];
        }
    ASSERT_GT(frame.min().item<double>(), 0.0);
    ASSERT_LT(frame.max().item<double>(), 1.0);
    EXPECT_LE((diff_jpeg(frame, 100) - frame).abs().max().item<double>(), 1e-3);
}

TEST(DiffJpeg, GradientMatchesFiniteDifferences)
{
    RngState rng(5, "jpeg-grad");
    const auto frame = smooth_frame(rng, 8);
    const double q = 60;
    const double h = 1e-3;
    // Skip coordinates whose perturbation moves any coefficient across a rounding boundary.
    auto smooth_at = [q](const torch::Tensor& p, const torch::Tensor& m) {
        return torch::equal(torch::round(jpeg_scaled_coefficients(p, q)), torch::round(jpeg_scaled_coefficients(m, q)));
    };
    const auto r = check_gradient([q](const torch::Tensor& t) { return diff_jpeg(t, q); }, frame, 100, h, 1e-2, rng,
                                  smooth_at);
    EXPECT_GE(r.checked, 100);
    EXPECT_EQ(r.failed, 0);
}

// ---------------------------------------------------------------------------
// Colour ops

TEST(BrightnessContrast, Arithmetic)
{
    const auto f = torch::tensor({0.3, 0.9, 0.1}, torch::kFloat64).view({3, 1, 1});
    EXPECT_TRUE(torch::equal(brightness_contrast(f, 1.0, 0.0), f));
    const auto out = brightness_contrast(f, 2.0, 0.0);
    EXPECT_NEAR(out[0][0][0].item<double>(), 0.6, 1e-15);
    EXPECT_EQ(out[1][0][0].item<double>(), 1.0);
}

TEST(Saturate, Endpoints)
{
    RngState rng(6, "sat");
    const auto f = rng.uniform_tensor({3, 16, 16}, 0, 1, torch::kFloat64);
    EXPECT_TRUE(torch::allclose(saturate(f, 1.0), f, 0, 1e-15));
    const auto g = saturate(f, 0.0);
    EXPECT_TRUE(torch::equal(g[0], g[1]));
    EXPECT_TRUE(torch::equal(g[1], g[2]));
    const auto gray = f[0].unsqueeze(0).expand({3, 16, 16}).contiguous();
    for (double t : {0.0, 0.3, 0.8})
        EXPECT_TRUE(torch::allclose(saturate(gray, t), gray, 0, 1e-12));
    EXPECT_THROW(saturate(f, 1.5), std::invalid_argument);
    EXPECT_THROW(saturate(f, -0.1), std::invalid_argument);
}

TEST(GaussianNoise, ZeroDeltaAndDeterminism)
{
    RngState rng(7, "noise");
    const auto f = rng.uniform_tensor({3, 16, 16});
    RngState a(1, "n");
    EXPECT_TRUE(torch::equal(gaussian_noise(f, 0.0, a), f));
    RngState c(1, "n"), d(1, "n");
    EXPECT_TRUE(torch::equal(gaussian_noise(f, 0.1, c), gaussian_noise(f, 0.1, d)));
    EXPECT_THROW(gaussian_noise(f, -0.1, c), std::invalid_argument);
}

TEST(GaussianNoise, SampleStandardDeviation)
{
    const auto f = torch::full({3, 64, 64}, 0.5, torch::kFloat64);
    RngState rng(8, "noise-std");
    const auto diff = gaussian_noise(f, 0.1, rng) - f;
    const double sd = diff.std().item<double>();
    EXPECT_GE(sd, 0.095);
    EXPECT_LE(sd, 0.105);
}

TEST(ColourOps, GradientsMatchFiniteDifferences)
{
    RngState rng(9, "colour-grad");
    const auto x0 = rng.uniform_tensor({3, 16, 16}, 0.2, 0.8, torch::kFloat64);
    const double h = 1e-6;
    // Away from clamp boundaries on both sides of the perturbation.
    auto unclamped = [](const Fn& f) {
        return [f](const torch::Tensor& p, const torch::Tensor& m) {
            const auto fp = f(p), fm = f(m);
            return ((fp > 0) & (fp < 1) & (fm > 0) & (fm < 1)).all().item<bool>();
        };
    };
    const std::vector<Fn> ops{
        [](const torch::Tensor& t) { return brightness_contrast(t, 1.3, -0.1); },
        [](const torch::Tensor& t) { return saturate(t, 0.4); },
        [](const torch::Tensor& t) {
            RngState r(3, "fixed-noise");
            return gaussian_noise(t, 0.05, r);
        },
    };
    for (const auto& op : ops) {
        const auto r = check_gradient(op, x0, 100, h, 1e-4, rng, unclamped(op));
        EXPECT_GE(r.checked, 100);
        EXPECT_EQ(r.failed, 0);
    }
}

// ---------------------------------------------------------------------------
// Sampling and dispatch

TEST(SampleAttack, KindFrequenciesAndRanges)
{
    RngState rng(10, "attacks");
    std::array<int, kNumAttackKinds> counts{};
    constexpr int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_attack(rng);
        ++counts[static_cast<int>(s.kind)];
        EXPECT_NO_THROW(s.validate());
        if (s.kind == AttackKind::jpeg) {
            EXPECT_GE(s.quality, 50.0);
            EXPECT_LE(s.quality, 100.0);
        }
    }
    for (int c : counts) {
        EXPECT_GE(c / static_cast<double>(n), 0.18);
        EXPECT_LE(c / static_cast<double>(n), 0.22);
    }
}

TEST(SampleAttack, DeterministicSequence)
{
    RngState a(11, "seq"), b(11, "seq");
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(sample_attack(a), sample_attack(b));
}

TEST(DistortionSpec, TextRoundTripAndValidation)
{
    for (const auto& s : {DistortionSpec::identity(), DistortionSpec::jpeg(75), DistortionSpec::color(1.2, -0.1),
                          DistortionSpec::saturation(0.25), DistortionSpec::noise(0.05)})
        EXPECT_EQ(DistortionSpec::parse(s.to_string()), s);
    EXPECT_EQ(DistortionSpec::jpeg(75).to_string(), "jpeg(q=75)");
    EXPECT_THROW(DistortionSpec::parse("jpeg(q=40)"), std::invalid_argument);
    EXPECT_THROW(DistortionSpec::parse("blur(r=2)"), std::invalid_argument);
    EXPECT_THROW(DistortionSpec::parse("jpeg(q=75,x=1)"), std::invalid_argument);
    EXPECT_THROW(DistortionSpec::noise(0.3).validate(), std::invalid_argument);
}

TEST(ApplyAttack, DispatchAndNeutralIdentity)
{
    RngState rng(12, "dispatch");
    const auto f = rng.uniform_tensor({3, 16, 16});
    EXPECT_TRUE(torch::equal(apply_attack(f, DistortionSpec::identity(), rng), f));
    EXPECT_TRUE(torch::equal(apply_attack(f, DistortionSpec::jpeg(75), rng), diff_jpeg(f, 75)));
    EXPECT_TRUE(torch::equal(apply_attack(f, DistortionSpec::saturation(0.3), rng), saturate(f, 0.3)));
}

TEST(ApplyAttack, OutputsInRangeWithGradients)
{
    RngState rng(13, "ranges");
    for (int i = 0; i < 40; ++i) {
        const auto spec = sample_attack(rng);
        auto f = rng.uniform_tensor({3, 16, 16}).requires_grad_(true);
        const auto out = apply_attack(f, spec, rng);
        EXPECT_GE(out.min().item<double>(), 0.0);
        EXPECT_LE(out.max().item<double>(), 1.0);
        EXPECT_FALSE(torch::isnan(out).any().item<bool>());
        out.sum().backward();
        ASSERT_TRUE(f.grad().defined()) << spec.to_string();
        EXPECT_FALSE(torch::isnan(f.grad()).any().item<bool>());
        EXPECT_GT(f.grad().abs().sum().item<double>(), 0.0) << spec.to_string();
    }
}
