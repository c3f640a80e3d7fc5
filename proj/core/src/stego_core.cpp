#include "idstego/stego_core.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace idstego {

namespace {

std::uint64_t splitmix64(std::uint64_t& x)
{
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis)
{
    std::uint64_t h = basis;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// BitMessage

BitMessage::BitMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits))
{
    if (bits_.empty())
        throw std::invalid_argument("BitMessage: length must be >= 1");
    for (auto b : bits_)
        if (b > 1)
            throw std::invalid_argument("BitMessage: bits must be 0 or 1");
}

BitMessage BitMessage::from_string(std::string_view text)
{
    std::vector<std::uint8_t> bits;
    bits.reserve(text.size());
    for (char c : text) {
        if (c != '0' && c != '1')
            throw std::invalid_argument("BitMessage: expected only '0'/'1' characters, got '" +
                                        std::string(text) + "'");
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return BitMessage(std::move(bits));
}

BitMessage BitMessage::from_tensor(const torch::Tensor& bits)
{
    auto flat = bits.detach().to(torch::kCPU, torch::kFloat64).contiguous().view({-1});
    std::vector<std::uint8_t> out(static_cast<std::size_t>(flat.numel()));
    auto acc = flat.accessor<double, 1>();
    for (std::int64_t i = 0; i < flat.numel(); ++i)
        out[static_cast<std::size_t>(i)] = acc[i] >= 0.5 ? 1 : 0;
    return BitMessage(std::move(out));
}

BitMessage BitMessage::slice(std::size_t begin, std::size_t count) const
{
    if (begin + count > bits_.size())
        throw std::invalid_argument("BitMessage::slice out of range");
    return BitMessage(std::vector<std::uint8_t>(bits_.begin() + static_cast<std::ptrdiff_t>(begin),
                                                bits_.begin() + static_cast<std::ptrdiff_t>(begin + count)));
}

BitMessage BitMessage::complement() const
{
    auto out = bits_;
    for (auto& b : out)
        b ^= 1;
    return BitMessage(std::move(out));
}

std::string BitMessage::to_string() const
{
    std::string s;
    s.reserve(bits_.size());
    for (auto b : bits_)
        s.push_back(static_cast<char>('0' + b));
    return s;
}

torch::Tensor BitMessage::to_tensor(torch::Dtype dtype) const
{
    auto t = torch::empty({static_cast<std::int64_t>(bits_.size())}, torch::kFloat64);
    auto acc = t.accessor<double, 1>();
    for (std::size_t i = 0; i < bits_.size(); ++i)
        acc[static_cast<std::int64_t>(i)] = bits_[i];
    return t.to(dtype);
}

// ---------------------------------------------------------------------------
// RngState

RngState::RngState(std::uint64_t seed, std::string_view label) : seed_(seed), label_(label)
{
    std::uint64_t x = seed ^ std::rotl(fnv1a(label), 17);
    for (auto& s : state_)
        s = splitmix64(x);
}

std::uint64_t RngState::next_u64()
{
    auto& s = state_;
    const std::uint64_t result = std::rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = std::rotl(s[3], 45);
    return result;
}

double RngState::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::uniform(double lo, double hi)
{
    return lo + (hi - lo) * uniform();
}

std::uint64_t RngState::below(std::uint64_t n)
{
    if (n == 0)
        throw std::invalid_argument("RngState::below: n must be positive");
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

bool RngState::bernoulli(double p)
{
    return uniform() < p;
}

double RngState::normal()
{
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t RngState::poisson(double mean)
{
    if (mean < 0.0 || !std::isfinite(mean))
        throw std::invalid_argument("RngState::poisson: mean must be finite and >= 0");
    if (mean == 0.0)
        return 0;
    // Inversion by sequential search; exp(-mean) stays representable for the
    // photon counts used here (mean <= ~700).
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    std::int64_t k = 0;
    while (u > cdf && k < 100000) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
        if (p == 0.0 && static_cast<double>(k) > mean)
            break;
    }
    return k;
}

RngState RngState::fork(std::string_view sublabel) const
{
    std::string label = label_;
    label += '/';
    label += sublabel;
    RngState child(seed_, label);
    // Mix in the parent's position so forks taken at different times differ.
    for (std::size_t i = 0; i < 4; ++i)
        child.state_[i] ^= std::rotl(state_[i], static_cast<int>(8 * i + 3));
    if (child.state_[0] == 0 && child.state_[1] == 0 && child.state_[2] == 0 && child.state_[3] == 0)
        child.state_[0] = 1;
    return child;
}

torch::Tensor RngState::uniform_tensor(at::IntArrayRef shape, double lo, double hi, torch::Dtype dtype)
{
    auto t = torch::empty(shape, torch::kFloat64);
    auto* p = t.data_ptr<double>();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        p[i] = uniform(lo, hi);
    return t.to(dtype);
}

torch::Tensor RngState::normal_tensor(at::IntArrayRef shape, torch::Dtype dtype)
{
    auto t = torch::empty(shape, torch::kFloat64);
    auto* p = t.data_ptr<double>();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        p[i] = normal();
    return t.to(dtype);
}

// ---------------------------------------------------------------------------
// Message operations

BitMessage random_message(RngState& rng, std::int64_t m)
{
    if (m <= 0)
        throw std::invalid_argument("random_message: m must be >= 1, got " + std::to_string(m));
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(m));
    for (auto& b : bits)
        b = static_cast<std::uint8_t>(rng.next_u64() >> 63);
    return BitMessage(std::move(bits));
}

torch::Tensor random_message_batch(RngState& rng, std::int64_t batch, std::int64_t m)
{
    auto t = torch::empty({batch, m}, torch::kFloat32);
    for (std::int64_t b = 0; b < batch; ++b) {
        auto msg = random_message(rng, m);
        t[b] = msg.to_tensor();
    }
    return t;
}

double bit_accuracy(const BitMessage& sent, const BitMessage& received)
{
    if (sent.size() != received.size() || sent.empty())
        throw std::invalid_argument("bit_accuracy: length mismatch (" + std::to_string(sent.size()) + " vs " +
                                    std::to_string(received.size()) + ")");
    std::size_t same = 0;
    for (std::size_t i = 0; i < sent.size(); ++i)
        same += sent[i] == received[i];
    return static_cast<double>(same) / static_cast<double>(sent.size());
}

BitMessage binarize(std::span<const double> logits)
{
    std::vector<std::uint8_t> bits;
    bits.reserve(logits.size());
    for (double z : logits) {
        if (std::isnan(z))
            throw std::invalid_argument("binarize: NaN logit");
        bits.push_back(z >= 0.0 ? 1 : 0);
    }
    return BitMessage(std::move(bits));
}

BitMessage binarize(const torch::Tensor& logits)
{
    auto flat = logits.detach().to(torch::kCPU, torch::kFloat64).contiguous().view({-1});
    return binarize(std::span<const double>(flat.data_ptr<double>(), static_cast<std::size_t>(flat.numel())));
}

void check_frames(const torch::Tensor& frames, std::string_view what)
{
    const auto dims = frames.dim();
    if (dims != 3 && dims != 4)
        throw std::invalid_argument(std::string(what) + ": expected (3,H,W) or (B,3,H,W), got " +
                                    std::to_string(dims) + " dims");
    const auto c = frames.size(dims - 3);
    const auto h = frames.size(dims - 2);
    const auto w = frames.size(dims - 1);
    if (c != 3)
        throw std::invalid_argument(std::string(what) + ": expected 3 channels, got " + std::to_string(c));
    if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0)
        throw std::invalid_argument(std::string(what) + ": H and W must be positive multiples of 16, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    if (!torch::isfinite(frames).all().item<bool>())
        throw std::invalid_argument(std::string(what) + ": non-finite values");
}

void VideoArray::validate() const
{
    if (!frames.defined() || frames.dim() != 4 || frames.size(0) < 1)
        throw std::invalid_argument("VideoArray: expected (v,3,H,W) with v >= 1");
    check_frames(frames, "video");
}

}  // namespace idstego
