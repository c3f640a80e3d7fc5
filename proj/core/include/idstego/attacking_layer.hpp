#pragma once

// Differentiable distortions applied between generation and extraction during
// training. Every op accepts (3,H,W) or (B,3,H,W) in [0,1], preserves dtype,
// and clamps its output to [0,1] (gradient passes unchanged inside the range).

#include "idstego/stego_core.hpp"

#include <torch/torch.h>

#include <string>

namespace idstego {

enum class AttackKind { identity, jpeg, brightness_contrast, saturation, gaussian_noise };

inline constexpr int kNumAttackKinds = 5;

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

/// One sampled distortion. Only the parameters of `kind` are meaningful.
struct DistortionSpec {
    AttackKind kind = AttackKind::identity;
    double quality = 100.0;   // jpeg, [50, 100]
    double contrast = 1.0;    // brightness_contrast "a", [0.5, 1.5]
    double brightness = 0.0;  // brightness_contrast "c", [-0.3, 0.3]
    double t = 1.0;           // saturation, [0, 1]
    double delta = 0.0;       // gaussian_noise std, [0, 0.2]

    static DistortionSpec identity() { return {}; }
    static DistortionSpec jpeg(double q);
    static DistortionSpec color(double a, double c);
    static DistortionSpec saturation(double t);
    static DistortionSpec noise(double delta);

    /// Canonical text form, e.g. "jpeg(q=75)", "brightness_contrast(a=1.2,c=-0.1)".
    std::string to_string() const;
    static DistortionSpec parse(const std::string& text);
    /// Throws std::invalid_argument when parameters leave their sampling ranges.
    void validate() const;

    bool operator==(const DistortionSpec&) const = default;
};

/// Sampling ranges.
struct AttackRanges {
    static constexpr double kQualityMin = 50.0, kQualityMax = 100.0;
    static constexpr double kContrastMin = 0.5, kContrastMax = 1.5;
    static constexpr double kBrightnessMin = -0.3, kBrightnessMax = 0.3;
    static constexpr double kDeltaMax = 0.2;
};

/// q(x) = x^3 for |x| < 0.5, x otherwise. The backward pass uses the cubic
/// branch's derivative at |x| = 0.5.
torch::Tensor approx_quantize(const torch::Tensor& x);

/// Standard JPEG tables scaled to `quality` (IJG scaling, entries in [1,255]).
/// Returns (2, 8, 8): luminance then chrominance.
torch::Tensor jpeg_quant_tables(double quality, torch::Dtype dtype = torch::kFloat32);

/// DCT coefficients of each 8x8 block divided by the quantization table,
/// i.e. the values that JPEG would round. Shape (B, 3, H/8, W/8, 8, 8).
torch::Tensor jpeg_scaled_coefficients(const torch::Tensor& frames, double quality);

/// Differentiable JPEG: YCbCr, 8x8 DCT, quantization with rounding replaced by
/// round(x) + q(x - round(x)) (gradient only through q), inverse transform.
/// No chroma subsampling. H and W must be multiples of 8.
torch::Tensor diff_jpeg(const torch::Tensor& frames, double quality);

/// p(x) = a * x + c, clamped.
torch::Tensor brightness_contrast(const torch::Tensor& frames, double a, double c);

/// t * frame + (1 - t) * gray, gray = 0.299 R + 0.587 G + 0.114 B.
torch::Tensor saturate(const torch::Tensor& frames, double t);

/// frame + N(0, delta^2) noise from `rng`, clamped. Noise is a constant for autograd.
torch::Tensor gaussian_noise(const torch::Tensor& frames, double delta, RngState& rng);

/// Kind uniform over the five kinds, parameters uniform within their ranges.
DistortionSpec sample_attack(RngState& rng);

torch::Tensor apply_attack(const torch::Tensor& frames, const DistortionSpec& spec, RngState& rng);

}  // namespace idstego
