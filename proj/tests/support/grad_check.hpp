#pragma once

#include "idstego/stego_core.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>

namespace idstego::test_support {

using Fn = std::function<torch::Tensor(const torch::Tensor&)>;
using SmoothFn = std::function<bool(const torch::Tensor&, const torch::Tensor&)>;

struct GradCheck {
    int checked = 0;
    int failed = 0;
    double worst = 0.0;  // largest |analytic - fd| / max(|fd|, floor)
};

/// Compares d(sum(w * f(x)))/dx against central differences at `coords`
/// random coordinates of x0 (double precision). `smooth_at(x+h, x-h)` may
/// veto coordinates whose perturbation crosses a kink.
inline GradCheck check_gradient(const Fn& f, const torch::Tensor& x0, int coords, double h, double rel, RngState& rng,
                                const SmoothFn& smooth_at = {}, double floor = 0.1)
{
    const auto weights = rng.uniform_tensor(f(x0).sizes(), 0.5, 1.5, torch::kFloat64);
    auto x = x0.clone().requires_grad_(true);
    (f(x) * weights).sum().backward();
    const auto grad = x.grad().reshape(-1);

    torch::NoGradGuard ng;
    GradCheck result;
    const auto n = x0.numel();
    for (int attempt = 0; attempt < 20 * coords && result.checked < coords; ++attempt) {
        const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
        auto plus = x0.clone(), minus = x0.clone();
        plus.view(-1)[i] += h;
        minus.view(-1)[i] -= h;
        if (smooth_at && !smooth_at(plus, minus))
            continue;
        const double fd =
            ((f(plus) * weights).sum().item<double>() - (f(minus) * weights).sum().item<double>()) / (2 * h);
        const double err = std::abs(grad[i].item<double>() - fd) / std::max(std::abs(fd), floor);
        result.worst = std::max(result.worst, err);
        ++result.checked;
        if (err > rel)
            ++result.failed;
    }
    return result;
}

}  // namespace idstego::test_support
