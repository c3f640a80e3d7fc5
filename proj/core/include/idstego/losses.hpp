#pragma once

// Training objectives. All functions return scalar tensors that carry the
// autograd graph of their inputs.

#include "idstego/networks.hpp"
#include "idstego/stego_core.hpp"

#include <torch/torch.h>

#include <functional>
#include <utility>

namespace idstego {

struct LossWeights {
    double identity = 10.0;   // alpha1
    double attribute = 10.0;  // alpha2
    double secret = 15.0;     // alpha3
    double gp = 1e-5;         // alpha4
};

enum class AdversarialForm { hinge, log };

/// 1 - cos(f_ref, f_stego), averaged over the batch for (B,d) inputs.
/// Throws std::invalid_argument if any vector has zero norm.
torch::Tensor identity_loss(const torch::Tensor& f_ref, const torch::Tensor& f_stego);

/// Weak feature matching: sum over layers j = h..H (1-based) of the mean
/// absolute difference, averaged over discriminator scales.
torch::Tensor attribute_loss(const DiscriminatorOutput& stego, const DiscriminatorOutput& cover,
                             std::int64_t start_layer = 2);

struct AdversarialLosses {
    torch::Tensor d_loss;
    torch::Tensor g_loss;
};

/// Hinge: d = E[relu(1 - s_real)] + E[relu(1 + s_fake)], g = -E[s_fake].
/// Log:   d = E[softplus(-s_real)] + E[softplus(s_fake)], g = E[softplus(-s_fake)].
/// Each expectation is over spatial positions and batch, then averaged over scales.
AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& scores_real,
                                     const std::vector<torch::Tensor>& scores_fake,
                                     AdversarialForm form = AdversarialForm::hinge);

/// Maps a frame batch to a scalar score (typically the finest-scale mean).
using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// (||grad_x score(x_hat)||_2 - 1)^2 with x_hat = u*real + (1-u)*fake, one
/// u ~ U[0,1] per sample, averaged over the batch. The result is
/// differentiable w.r.t. the score function's parameters.
torch::Tensor gradient_penalty(const ScoreFn& score, const torch::Tensor& real, const torch::Tensor& fake,
                               RngState& rng);

/// Mean binary cross-entropy in logit form: max(z,0) - z*y + log1p(exp(-|z|)).
torch::Tensor secret_loss(const torch::Tensor& logits, const torch::Tensor& targets);
torch::Tensor secret_loss(const torch::Tensor& logits, const BitMessage& target);

template <typename T>
struct LossComponents {
    T identity{};
    T attribute{};
    T secret{};
    T adversarial{};  // generator term
    T gp{};
};

/// alpha1*id + alpha2*att + alpha3*sec + adv + alpha4*gp. Throws
/// std::invalid_argument on a non-finite component.
double total_loss(const LossComponents<double>& c, const LossWeights& w = {});
torch::Tensor total_loss(const LossComponents<torch::Tensor>& c, const LossWeights& w = {});

}  // namespace idstego
