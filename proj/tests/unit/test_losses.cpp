#include "idstego/losses.hpp"

#include "grad_check.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace idstego;
using idstego::test_support::check_gradient;

namespace {

DiscriminatorOutput make_output(std::vector<std::vector<torch::Tensor>> features)
{
    DiscriminatorOutput out;
    for (auto& scale : features)
        out.scores.push_back(scale.back().mean({1}, true));
    out.features = std::move(features);
    return out;
}

torch::Tensor d64(std::initializer_list<double> v)
{
    return torch::tensor(std::vector<double>(v), torch::kFloat64);
}

}  // namespace

// ---------------------------------------------------------------------------
// Identity loss

TEST(IdentityLoss, CosineEndpoints)
{
    const auto f = d64({1.0, 2.0, -0.5});
    EXPECT_NEAR(identity_loss(f, f).item<double>(), 0.0, 1e-15);
    EXPECT_NEAR(identity_loss(d64({1, 0}), d64({0, 3})).item<double>(), 1.0, 1e-15);
    EXPECT_NEAR(identity_loss(f, -f).item<double>(), 2.0, 1e-15);
    EXPECT_THROW(identity_loss(f, torch::zeros({3}, torch::kFloat64)), std::invalid_argument);
    EXPECT_THROW(identity_loss(f, d64({1, 2})), std::invalid_argument);
}

TEST(IdentityLoss, ScaleInvariantAndBounded)
{
    RngState rng(1, "id-loss");
    for (int i = 0; i < 20; ++i) {
        const auto a = rng.normal_tensor({4, 16}, torch::kFloat64), b = rng.normal_tensor({4, 16}, torch::kFloat64);
        const double l = identity_loss(a, b).item<double>();
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 2.0);
        EXPECT_NEAR(identity_loss(3.5 * a, 0.01 * b).item<double>(), l, 1e-12);
    }
}

TEST(IdentityLoss, GradientMatchesFiniteDifferences)
{
    RngState rng(2, "id-grad");
    const auto ref = rng.normal_tensor({4, 16}, torch::kFloat64);
    const auto x0 = rng.normal_tensor({4, 16}, torch::kFloat64);
    const auto r = check_gradient([&](const torch::Tensor& x) { return identity_loss(ref, x); }, x0, 64, 1e-6, 1e-4,
                                  rng, {}, 1e-3);
    EXPECT_EQ(r.checked, 64);
    EXPECT_EQ(r.failed, 0);
    const auto r2 = check_gradient([&](const torch::Tensor& x) { return identity_loss(x, ref); }, x0, 64, 1e-6, 1e-4,
                                   rng, {}, 1e-3);
    EXPECT_EQ(r2.failed, 0);
}

// ---------------------------------------------------------------------------
// Attribute loss

TEST(AttributeLoss, ClosedForms)
{
    RngState rng(3, "att");
    const auto l1 = rng.normal_tensor({1, 4, 4, 4}, torch::kFloat64);
    const auto l2 = rng.normal_tensor({1, 8, 2, 2}, torch::kFloat64);
    const auto same = make_output({{l1, l2}, {l1, l2}});
    EXPECT_EQ(attribute_loss(same, same, 1).item<double>(), 0.0);

    // One contributing layer, constant offset 0.5.
    const auto shifted = make_output({{l1, l2 + 0.5}, {l1, l2 + 0.5}});
    EXPECT_NEAR(attribute_loss(shifted, same, 2).item<double>(), 0.5, 1e-12);

    // h = H: only the last layer counts.
    const auto first_only = make_output({{l1 + 7.0, l2}, {l1 + 7.0, l2}});
    EXPECT_EQ(attribute_loss(first_only, same, 2).item<double>(), 0.0);
    EXPECT_NEAR(attribute_loss(first_only, same, 1).item<double>(), 7.0, 1e-12);
}

TEST(AttributeLoss, SymmetricNonnegativeAndChecked)
{
    RngState rng(4, "att2");
    const auto a = make_output({{rng.normal_tensor({1, 4, 4, 4}, torch::kFloat64)}});
    const auto b = make_output({{rng.normal_tensor({1, 4, 4, 4}, torch::kFloat64)}});
    const double ab = attribute_loss(a, b, 1).item<double>();
    EXPECT_GT(ab, 0.0);
    EXPECT_DOUBLE_EQ(ab, attribute_loss(b, a, 1).item<double>());
    const auto c = make_output({{rng.normal_tensor({1, 4, 2, 2}, torch::kFloat64)}});
    EXPECT_THROW(attribute_loss(a, c, 1), std::invalid_argument);
    EXPECT_THROW(attribute_loss(a, b, 2), std::invalid_argument);
}

TEST(AttributeLoss, GradientMatchesFiniteDifferences)
{
    RngState rng(5, "att-grad");
    const auto cover = rng.normal_tensor({1, 4, 4, 4}, torch::kFloat64);
    const auto fixed = make_output({{cover * 0, cover}});
    const auto x0 = rng.normal_tensor({1, 4, 4, 4}, torch::kFloat64);
    // Kinks of |x - cover| are at equality; skip perturbations that reach them.
    auto smooth = [&](const torch::Tensor& p, const torch::Tensor& m) {
        return torch::equal(torch::sign(p - cover), torch::sign(m - cover));
    };
    const auto r = check_gradient(
        [&](const torch::Tensor& x) { return attribute_loss(make_output({{x * 0, x}}), fixed, 2); }, x0, 64, 1e-6,
        1e-4, rng, smooth, 1e-3);
    EXPECT_EQ(r.checked, 64);
    EXPECT_EQ(r.failed, 0);
}

// ---------------------------------------------------------------------------
// Adversarial losses

TEST(AdversarialLosses, HingeClosedForms)
{
    const std::vector<torch::Tensor> plus2{torch::full({1, 1, 3, 3}, 2.0), torch::full({1, 1, 2, 2}, 2.0)};
    const std::vector<torch::Tensor> minus2{torch::full({1, 1, 3, 3}, -2.0), torch::full({1, 1, 2, 2}, -2.0)};
    EXPECT_EQ(adversarial_losses(plus2, minus2).d_loss.item<double>(), 0.0);
    const std::vector<torch::Tensor> zero{torch::zeros({1, 1, 3, 3}), torch::zeros({1, 1, 2, 2})};
    const auto z = adversarial_losses(zero, zero);
    EXPECT_DOUBLE_EQ(z.d_loss.item<double>(), 2.0);
    EXPECT_DOUBLE_EQ(z.g_loss.item<double>(), 0.0);
    const std::vector<torch::Tensor> plus3{torch::full({1, 1, 3, 3}, 3.0), torch::full({1, 1, 2, 2}, 3.0)};
    EXPECT_DOUBLE_EQ(adversarial_losses(zero, plus3).g_loss.item<double>(), -3.0);
}

TEST(AdversarialLosses, LogForm)
{
    const std::vector<torch::Tensor> zero{torch::zeros({1, 1, 2, 2}, torch::kFloat64)};
    const auto l = adversarial_losses(zero, zero, AdversarialForm::log);
    EXPECT_NEAR(l.d_loss.item<double>(), 2 * std::log(2.0), 1e-15);
    EXPECT_NEAR(l.g_loss.item<double>(), std::log(2.0), 1e-15);
}

TEST(AdversarialLosses, GradientsMatchFiniteDifferences)
{
    RngState rng(6, "adv-grad");
    const auto real = rng.normal_tensor({2, 1, 4, 4}, torch::kFloat64);
    const auto x0 = rng.normal_tensor({2, 1, 4, 4}, torch::kFloat64);
    auto away = [](const torch::Tensor& p, const torch::Tensor& m) {
        return torch::equal(p > -1.0, m > -1.0);
    };
    for (auto form : {AdversarialForm::hinge, AdversarialForm::log}) {
        const auto rd = check_gradient(
            [&](const torch::Tensor& x) { return adversarial_losses({real}, {x}, form).d_loss; }, x0, 32, 1e-6, 1e-4,
            rng, away, 1e-3);
        EXPECT_EQ(rd.failed, 0);
        const auto rg = check_gradient(
            [&](const torch::Tensor& x) { return adversarial_losses({real}, {x}, form).g_loss; }, x0, 32, 1e-6, 1e-4,
            rng, {}, 1e-3);
        EXPECT_EQ(rg.failed, 0);
    }
}

// ---------------------------------------------------------------------------
// Gradient penalty

TEST(GradientPenalty, MeanDiscriminatorAnalytic)
{
    RngState rng(7, "gp");
    const auto real = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    const auto fake = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    const double n = 3 * 8 * 8;
    // score = mean over every element of the batch: each sample's gradient is
    // 1/(B n) per coordinate, so its norm is 1/(B sqrt(n)).
    const double expected = std::pow(1.0 / (2.0 * std::sqrt(n)) - 1.0, 2);
    const auto gp = gradient_penalty([](const torch::Tensor& x) { return x.mean(); }, real, fake, rng);
    EXPECT_NEAR(gp.item<double>(), expected, 1e-12);
}

TEST(GradientPenalty, NonnegativeAndDeterministicWhenRealEqualsFake)
{
    RngState rng(8, "gp2");
    const auto w = rng.normal_tensor({3, 8, 8}, torch::kFloat64);
    auto score = [&](const torch::Tensor& x) { return (torch::tanh(x) * w).sum({1, 2, 3}).mean(); };
    const auto x = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    RngState a(1, "u"), b(2, "u");
    const double pa = gradient_penalty(score, x, x, a).item<double>();
    const double pb = gradient_penalty(score, x, x, b).item<double>();
    EXPECT_GE(pa, 0.0);
    EXPECT_DOUBLE_EQ(pa, pb);
}

TEST(GradientPenalty, DifferentiableInDiscriminatorParameters)
{
    RngState rng(9, "gp3");
    auto w = rng.normal_tensor({3, 8, 8}, torch::kFloat64).requires_grad_(true);
    auto score = [&](const torch::Tensor& x) { return (torch::tanh(x) * w).sum({1, 2, 3}).mean(); };
    const auto real = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    const auto fake = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    gradient_penalty(score, real, fake, rng).backward();
    ASSERT_TRUE(w.grad().defined());
    EXPECT_GT(w.grad().abs().sum().item<double>(), 0.0);
    EXPECT_THROW(gradient_penalty(score, real, fake.narrow(0, 0, 1), rng), std::invalid_argument);
}

TEST(GradientPenalty, EvaluatesUnderNoGradGuard)
{
    RngState rng(11, "gp4");
    const auto w = rng.normal_tensor({3, 8, 8}, torch::kFloat64);
    auto score = [&](const torch::Tensor& x) { return (torch::tanh(x) * w).sum({1, 2, 3}).mean(); };
    const auto real = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    const auto fake = rng.uniform_tensor({2, 3, 8, 8}, 0, 1, torch::kFloat64);
    RngState a(3, "u"), b(3, "u");
    const double with_grad = gradient_penalty(score, real, fake, a).item<double>();
    torch::NoGradGuard ng;
    EXPECT_DOUBLE_EQ(gradient_penalty(score, real, fake, b).item<double>(), with_grad);
}

// ---------------------------------------------------------------------------
// Secret loss

TEST(SecretLoss, ClosedForms)
{
    EXPECT_NEAR(secret_loss(torch::zeros({9}, torch::kFloat64), BitMessage::from_string("101010101")).item<double>(),
                std::log(2.0), 1e-6);
    EXPECT_LT(secret_loss(d64({20.0}), BitMessage::from_string("1")).item<double>(), 1e-8);
    EXPECT_NEAR(secret_loss(d64({1.0}), BitMessage::from_string("1")).item<double>(), 0.31326, 1e-5);
    EXPECT_NEAR(secret_loss(d64({-1000.0}), BitMessage::from_string("1")).item<double>(), 1000.0, 1e-9);
    EXPECT_THROW(secret_loss(torch::zeros({3}), BitMessage::from_string("10")), std::invalid_argument);
}

TEST(SecretLoss, GradientMatchesFiniteDifferences)
{
    RngState rng(10, "bce-grad");
    const auto z0 = rng.normal_tensor({8, 18}, torch::kFloat64) * 3;
    const auto y = random_message_batch(rng, 8, 18).to(torch::kFloat64);
    const auto r = check_gradient([&](const torch::Tensor& z) { return secret_loss(z, y); }, z0, 100, 1e-6, 1e-4, rng,
                                  {}, 1e-4);
    EXPECT_EQ(r.checked, 100);
    EXPECT_EQ(r.failed, 0);
}

// ---------------------------------------------------------------------------
// Total loss

TEST(TotalLoss, WeightedSum)
{
    EXPECT_NEAR(total_loss(LossComponents<double>{1, 1, 1, 1, 1}), 36.00001, 1e-12);
    EXPECT_EQ(total_loss(LossComponents<double>{0, 0, 0, 0, 0}), 0.0);
    EXPECT_EQ(total_loss(LossComponents<double>{0, 0, 2, 0, 0}), 30.0);
    EXPECT_THROW(total_loss(LossComponents<double>{0, std::nan(""), 0, 0, 0}), std::invalid_argument);
    const LossWeights w{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(total_loss(LossComponents<double>{1, 1, 1, 1, 1}, w), 11.0);
}

TEST(TotalLoss, TensorFormMatchesScalarForm)
{
    LossComponents<torch::Tensor> t{d64({0.3}).sum(), d64({1.2}).sum(), d64({0.69}).sum(), d64({-0.4}).sum(),
                                    d64({2.0}).sum()};
    EXPECT_NEAR(total_loss(t).item<double>(), total_loss(LossComponents<double>{0.3, 1.2, 0.69, -0.4, 2.0}), 1e-12);
    t.attribute = d64({std::nan("")}).sum();
    EXPECT_THROW(total_loss(t), std::invalid_argument);
}

TEST(TotalLoss, LinearInEachComponent)
{
    const LossWeights w;
    const double coeff[] = {w.identity, w.attribute, w.secret, 1.0, w.gp};
    for (int k = 0; k < 5; ++k) {
        LossComponents<double> a{}, b{};
        double* pa[] = {&a.identity, &a.attribute, &a.secret, &a.adversarial, &a.gp};
        double* pb[] = {&b.identity, &b.attribute, &b.secret, &b.adversarial, &b.gp};
        *pa[k] = 1.5;
        *pb[k] = 4.0;
        EXPECT_NEAR(total_loss(b) - total_loss(a), coeff[k] * 2.5, 1e-12);
    }
}

TEST(LossWeights, Defaults)
{
    const LossWeights w;
    EXPECT_EQ(w.identity, 10.0);
    EXPECT_EQ(w.attribute, 10.0);
    EXPECT_EQ(w.secret, 15.0);
    EXPECT_EQ(w.gp, 1e-5);
}
