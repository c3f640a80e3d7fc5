#pragma once

// Shared value types: secret messages, frames/videos, seeded randomness.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace idstego {

/// Fixed-length binary payload. Every element is exactly 0 or 1.
class BitMessage {
public:
    BitMessage() = default;
    explicit BitMessage(std::vector<std::uint8_t> bits);

    /// Parses a string of '0'/'1' characters.
    static BitMessage from_string(std::string_view text);
    /// Thresholds a {0,1}-valued tensor (any shape with m elements).
    static BitMessage from_tensor(const torch::Tensor& bits);

    std::size_t size() const { return bits_.size(); }
    bool empty() const { return bits_.empty(); }
    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    BitMessage slice(std::size_t begin, std::size_t count) const;
    BitMessage complement() const;
    std::string to_string() const;
    /// Shape (m,), values 0/1.
    torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;

    bool operator==(const BitMessage&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// Deterministic random stream keyed by (seed, label).
///
/// xoshiro256** seeded through splitmix64 from the seed and an FNV-1a hash of
/// the label. Distributions are implemented here, not through <random>, so a
/// stream produces the same draws on every platform.
class RngState {
public:
    using State = std::array<std::uint64_t, 4>;

    RngState(std::uint64_t seed, std::string_view label);

    std::uint64_t seed() const { return seed_; }
    const std::string& label() const { return label_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p);
    /// Standard normal (Box-Muller, one value per call).
    double normal();
    /// Poisson(mean) by inversion for small means, Knuth product for the rest.
    std::int64_t poisson(double mean);

    /// Independent sub-stream; does not advance this stream.
    RngState fork(std::string_view sublabel) const;

    torch::Tensor uniform_tensor(at::IntArrayRef shape, double lo = 0.0, double hi = 1.0,
                                 torch::Dtype dtype = torch::kFloat32);
    torch::Tensor normal_tensor(at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat32);

    const State& state() const { return state_; }
    void set_state(const State& s) { state_ = s; }

private:
    std::uint64_t seed_;
    std::string label_;
    State state_{};
};

/// m i.i.d. uniform bits. Throws std::invalid_argument for m <= 0.
BitMessage random_message(RngState& rng, std::int64_t m);

/// Fraction of positions where the two messages agree.
double bit_accuracy(const BitMessage& sent, const BitMessage& received);

/// bit = 1 iff logit >= 0 (sigmoid >= 0.5; a logit of exactly 0 maps to 1).
BitMessage binarize(std::span<const double> logits);
BitMessage binarize(const torch::Tensor& logits);

/// Random {0,1} matrix of shape (batch, m) as float.
torch::Tensor random_message_batch(RngState& rng, std::int64_t batch, std::int64_t m);

/// Validates a frame (3,H,W) or a frame batch (B,3,H,W): H and W positive and
/// divisible by 16, values finite. Throws std::invalid_argument.
void check_frames(const torch::Tensor& frames, std::string_view what = "frame");

/// Ordered frames sharing one (H, W).
struct VideoArray {
    torch::Tensor frames;  // (v, 3, H, W), float, nominal range [0,1]
    double frame_rate = 25.0;

    std::int64_t num_frames() const { return frames.size(0); }
    std::int64_t height() const { return frames.size(2); }
    std::int64_t width() const { return frames.size(3); }
    void validate() const;
};

/// 64-bit FNV-1a; used for stream labels and config fingerprints.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace idstego
