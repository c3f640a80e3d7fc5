#include "idstego/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace idstego {

using torch::Tensor;

Tensor identity_loss(const Tensor& f_ref, const Tensor& f_stego)
{
    if (f_ref.sizes() != f_stego.sizes())
        throw std::invalid_argument("identity_loss: shape mismatch");
    auto a = f_ref.dim() == 1 ? f_ref.unsqueeze(0) : f_ref;
    auto b = f_stego.dim() == 1 ? f_stego.unsqueeze(0) : f_stego;
    auto na = a.norm(2, 1);
    auto nb = b.norm(2, 1);
    if ((na == 0).any().item<bool>() || (nb == 0).any().item<bool>())
        throw std::invalid_argument("identity_loss: zero-norm identity vector");
    auto cosine = (a * b).sum(1) / (na * nb);
    return (1.0 - cosine).mean();
}

Tensor attribute_loss(const DiscriminatorOutput& stego, const DiscriminatorOutput& cover, std::int64_t start_layer)
{
    if (stego.features.size() != cover.features.size() || stego.features.empty())
        throw std::invalid_argument("attribute_loss: scale count mismatch");
    Tensor total;
    for (std::size_t s = 0; s < stego.features.size(); ++s) {
        const auto& fs = stego.features[s];
        const auto& fc = cover.features[s];
        const auto layers = static_cast<std::int64_t>(fs.size());
        if (fc.size() != fs.size())
            throw std::invalid_argument("attribute_loss: layer count mismatch");
        if (start_layer < 1 || start_layer > layers)
            throw std::invalid_argument("attribute_loss: start layer " + std::to_string(start_layer) +
                                        " outside [1," + std::to_string(layers) + "]");
        for (std::int64_t j = start_layer; j <= layers; ++j) {
            const auto& a = fs[static_cast<std::size_t>(j - 1)];
            const auto& b = fc[static_cast<std::size_t>(j - 1)];
            if (a.sizes() != b.sizes())
                throw std::invalid_argument("attribute_loss: feature shape mismatch at layer " + std::to_string(j));
            auto term = (a - b).abs().mean();
            total = total.defined() ? total + term : term;
        }
    }
    return total / static_cast<double>(stego.features.size());
}

AdversarialLosses adversarial_losses(const std::vector<Tensor>& scores_real, const std::vector<Tensor>& scores_fake,
                                     AdversarialForm form)
{
    if (scores_real.size() != scores_fake.size() || scores_real.empty())
        throw std::invalid_argument("adversarial_losses: scale count mismatch");
    Tensor d, g;
    for (std::size_t s = 0; s < scores_real.size(); ++s) {
        Tensor ds, gs;
        if (form == AdversarialForm::hinge) {
            ds = torch::relu(1.0 - scores_real[s]).mean() + torch::relu(1.0 + scores_fake[s]).mean();
            gs = -scores_fake[s].mean();
        } else {
            ds = torch::softplus(-scores_real[s]).mean() + torch::softplus(scores_fake[s]).mean();
            gs = torch::softplus(-scores_fake[s]).mean();
        }
        d = d.defined() ? d + ds : ds;
        g = g.defined() ? g + gs : gs;
    }
    const double n = static_cast<double>(scores_real.size());
    return {d / n, g / n};
}

Tensor gradient_penalty(const ScoreFn& score, const Tensor& real, const Tensor& fake, RngState& rng)
{
    if (real.sizes() != fake.sizes())
        throw std::invalid_argument("gradient_penalty: real/fake shape mismatch");
    const auto batch = real.size(0);
    std::vector<std::int64_t> u_shape(static_cast<std::size_t>(real.dim()), 1);
    u_shape[0] = batch;
    auto u = rng.uniform_tensor(u_shape, 0.0, 1.0, real.scalar_type());
    torch::AutoGradMode grad_on(true);
    auto x_hat = (u * real.detach() + (1.0 - u) * fake.detach()).requires_grad_(true);
    auto out = score(x_hat);
    auto grad = torch::autograd::grad({out}, {x_hat}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                      /*create_graph=*/true)[0];
    auto norms = grad.reshape({batch, -1}).norm(2, 1);
    return (norms - 1.0).pow(2).mean();
}

Tensor secret_loss(const Tensor& logits, const Tensor& targets)
{
    if (logits.sizes() != targets.sizes())
        throw std::invalid_argument("secret_loss: logits/target length mismatch");
    auto y = targets.to(logits.scalar_type());
    return (torch::clamp_min(logits, 0.0) - logits * y + torch::log1p(torch::exp(-logits.abs()))).mean();
}

Tensor secret_loss(const Tensor& logits, const BitMessage& target)
{
    if (logits.numel() != static_cast<std::int64_t>(target.size()))
        throw std::invalid_argument("secret_loss: logits/target length mismatch");
    return secret_loss(logits, target.to_tensor(logits.scalar_type()).view(logits.sizes()));
}

double total_loss(const LossComponents<double>& c, const LossWeights& w)
{
    const std::pair<const char*, double> parts[] = {{"identity", c.identity},
                                                    {"attribute", c.attribute},
                                                    {"secret", c.secret},
                                                    {"adversarial", c.adversarial},
                                                    {"gradient_penalty", c.gp}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string("total_loss: non-finite ") + name + " component");
    return w.identity * c.identity + w.attribute * c.attribute + w.secret * c.secret + c.adversarial + w.gp * c.gp;
}

Tensor total_loss(const LossComponents<Tensor>& c, const LossWeights& w)
{
    const std::pair<const char*, const Tensor*> parts[] = {{"identity", &c.identity},
                                                           {"attribute", &c.attribute},
                                                           {"secret", &c.secret},
                                                           {"adversarial", &c.adversarial},
                                                           {"gradient_penalty", &c.gp}};
    Tensor out;
    const double weights[] = {w.identity, w.attribute, w.secret, 1.0, w.gp};
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& [name, t] = parts[i];
        if (!t->defined())
            continue;
        if (!torch::isfinite(*t).all().item<bool>())
            throw std::invalid_argument(std::string("total_loss: non-finite ") + name + " component");
        auto term = weights[i] * *t;
        out = out.defined() ? out + term : term;
    }
    if (!out.defined())
        throw std::invalid_argument("total_loss: no components");
    return out;
}

}  // namespace idstego
