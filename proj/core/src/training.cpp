#include "idstego/training.hpp"

#include "idstego/checkpoint.hpp"
#include "idstego/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace idstego {

namespace fs = std::filesystem;
using nlohmann::json;
using torch::Tensor;

// ---------------------------------------------------------------------------
// Config

EmbeddingLayout TrainConfig::resolved_layout() const
{
    if (layout.empty())
        return EmbeddingLayout::standard(model.message_bits, model.num_blocks);
    return EmbeddingLayout::parse(layout, model.num_blocks);
}

std::int64_t TrainConfig::attack_start_step() const
{
    return static_cast<std::int64_t>(std::ceil(attack_start_fraction * static_cast<double>(total_steps)));
}

bool TrainConfig::attacked_at(std::int64_t step) const
{
    return attack_enabled && step >= attack_start_step();
}

void TrainConfig::validate() const
{
    model.validate();
    resolved_layout().validate(model.message_bits);
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("train config: lambda must be finite and >= 0");
    if (!(lr > 0.0))
        throw std::invalid_argument("train config: lr must be positive");
    if (batch_size < 1 || total_steps < 1)
        throw std::invalid_argument("train config: batch_size and total_steps must be >= 1");
    if (!(attack_start_fraction >= 0.0 && attack_start_fraction <= 1.0))
        throw std::invalid_argument("train config: attack_start_fraction must be in [0,1]");
    if (train_identities < 2)
        throw std::invalid_argument("train config: train_identities must be >= 2");
    if (checkpoint_every < 1 || eval_every < 0 || eval_videos < 1 || eval_frames < 1)
        throw std::invalid_argument("train config: checkpoint_every/eval_videos/eval_frames must be >= 1");
    if (weights.identity < 0 || weights.attribute < 0 || weights.secret < 0 || weights.gp < 0)
        throw std::invalid_argument("train config: loss weights must be >= 0");
}

json train_config_to_json(const TrainConfig& c)
{
    return {{"model", model_config_to_json(c.model)},
            {"layout", c.layout.empty() ? c.resolved_layout().to_string() : c.layout},
            {"lambda", c.lambda},
            {"weights", {{"identity", c.weights.identity}, {"attribute", c.weights.attribute},
                         {"secret", c.weights.secret}, {"gp", c.weights.gp}}},
            {"adversarial", c.adversarial == AdversarialForm::hinge ? "hinge" : "log"},
            {"feature_match_start", c.feature_match_start},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"total_steps", c.total_steps},
            {"attack_start_fraction", c.attack_start_fraction},
            {"attack_enabled", c.attack_enabled},
            {"seed", c.seed},
            {"train_identities", c.train_identities},
            {"checkpoint_every", c.checkpoint_every},
            {"eval_every", c.eval_every},
            {"eval_videos", c.eval_videos},
            {"eval_frames", c.eval_frames}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw std::invalid_argument(where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

template <typename T>
void read_if(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j)
{
    reject_unknown(j,
                   {"model", "layout", "lambda", "weights", "adversarial", "feature_match_start", "lr", "batch_size",
                    "total_steps", "attack_start_fraction", "attack_enabled", "seed", "train_identities",
                    "checkpoint_every", "eval_every", "eval_videos", "eval_frames"},
                   "train config");
    TrainConfig c;
    try {
        if (j.contains("model"))
            c.model = model_config_from_json(j.at("model"));
        read_if(j, "layout", c.layout);
        read_if(j, "lambda", c.lambda);
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            reject_unknown(w, {"identity", "attribute", "secret", "gp"}, "train config weights");
            read_if(w, "identity", c.weights.identity);
            read_if(w, "attribute", c.weights.attribute);
            read_if(w, "secret", c.weights.secret);
            read_if(w, "gp", c.weights.gp);
        }
        if (j.contains("adversarial")) {
            const auto form = j.at("adversarial").get<std::string>();
            if (form == "hinge")
                c.adversarial = AdversarialForm::hinge;
            else if (form == "log")
                c.adversarial = AdversarialForm::log;
            else
                throw std::invalid_argument("train config: adversarial must be 'hinge' or 'log'");
        }
        read_if(j, "feature_match_start", c.feature_match_start);
        read_if(j, "lr", c.lr);
        read_if(j, "batch_size", c.batch_size);
        read_if(j, "total_steps", c.total_steps);
        read_if(j, "attack_start_fraction", c.attack_start_fraction);
        read_if(j, "attack_enabled", c.attack_enabled);
        read_if(j, "seed", c.seed);
        read_if(j, "train_identities", c.train_identities);
        read_if(j, "checkpoint_every", c.checkpoint_every);
        read_if(j, "eval_every", c.eval_every);
        read_if(j, "eval_videos", c.eval_videos);
        read_if(j, "eval_frames", c.eval_frames);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

json StepMetrics::to_json() const
{
    json j = {{"step", step},
              {"d_loss", d_loss},
              {"gp", gp},
              {"identity", identity},
              {"attribute", attribute},
              {"secret", secret},
              {"adversarial", adversarial},
              {"total", total},
              {"bit_accuracy", bit_accuracy},
              {"attacked", attacked},
              {"attacks", attacks}};
    if (clean_accuracy)
        j["clean_accuracy"] = *clean_accuracy;
    return j;
}

// ---------------------------------------------------------------------------
// State

TrainState::TrainState(TrainConfig cfg, ModelBundle b)
    : config(std::move(cfg)),
      bundle(std::move(b)),
      data_rng(config.seed, "train-data"),
      message_rng(config.seed, "train-messages"),
      attack_rng(config.seed, "train-attacks"),
      gp_rng(config.seed, "train-gp")
{
    config.validate();
    bundle->freeze_identity_extractor();
    const auto adam = torch::optim::AdamOptions(config.lr).betas({0.9, 0.999}).weight_decay(0.0);
    g_opt = std::make_unique<torch::optim::Adam>(bundle->generator_parameters(), adam);
    d_opt = std::make_unique<torch::optim::Adam>(bundle->discriminator_parameters(), adam);
}

ModelBundle make_training_bundle(const TrainConfig& config, const fs::path& identity_checkpoint)
{
    config.validate();
    auto bundle = make_bundle(config.model, config.resolved_layout(), config.lambda, config.seed);
    if (!identity_checkpoint.empty()) {
        if (!fs::exists(identity_checkpoint))
            throw std::runtime_error("identity-extractor checkpoint '" + identity_checkpoint.string() +
                                     "' not found; run the pretrain command first");
        load_identity_extractor(bundle, identity_checkpoint);
    }
    bundle->freeze_identity_extractor();
    return bundle;
}

namespace {

double value_of(const Tensor& t)
{
    return t.detach().to(torch::kFloat64).item<double>();
}

void require_finite(double v, const char* name, std::int64_t step)
{
    if (!std::isfinite(v))
        throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + name + " loss is " +
                                 std::to_string(v));
}

double batch_bit_accuracy(const Tensor& logits, const Tensor& messages)
{
    auto predicted = (logits.detach() >= 0).to(torch::kFloat32);
    return predicted.eq(messages).to(torch::kFloat64).mean().item<double>();
}

}  // namespace

StepMetrics train_step(TrainState& state, const FrameBatch& batch)
{
    auto& bundle = state.bundle;
    const auto& cfg = state.config;
    check_frames(batch.covers, "train_step covers");
    check_frames(batch.references, "train_step references");
    if (batch.covers.dim() != 4 || batch.covers.sizes() != batch.references.sizes())
        throw std::invalid_argument("train_step: covers and references must be matching (B,3,H,W) batches");

    StepMetrics metrics;
    metrics.step = state.step;
    metrics.attacked = cfg.attacked_at(state.step);
    bundle->train();

    const auto B = batch.covers.size(0);
    auto messages = random_message_batch(state.message_rng, B, cfg.model.message_bits);
    Tensor f_id;
    {
        torch::NoGradGuard no_grad;
        f_id = bundle->identity_batch(batch.references);
    }
    auto stego = bundle->generate_batch(batch.covers, f_id, messages);

    // Discriminator update.
    auto& disc = bundle->discriminator();
    auto real_out = disc(batch.references);
    auto fake_out = disc(stego.detach());
    auto d_adv = adversarial_losses(real_out.scores, fake_out.scores, cfg.adversarial).d_loss;
    auto gp = gradient_penalty([&](const Tensor& x) { return disc->finest_mean_score(x); }, batch.references,
                               stego.detach(), state.gp_rng);
    auto d_total = d_adv + cfg.weights.gp * gp;
    metrics.d_loss = value_of(d_adv);
    metrics.gp = value_of(gp);
    require_finite(metrics.d_loss, "discriminator", state.step);
    require_finite(metrics.gp, "gradient penalty", state.step);
    state.d_opt->zero_grad();
    d_total.backward();
    state.d_opt->step();

    // Generator-side update.
    auto stego_out = disc(stego);
    DiscriminatorOutput cover_out;
    {
        torch::NoGradGuard no_grad;
        cover_out = disc(batch.covers);
    }
    auto att = attribute_loss(stego_out, cover_out, cfg.feature_match_start);
    auto g_adv = adversarial_losses(real_out.scores, stego_out.scores, cfg.adversarial).g_loss;
    auto id = identity_loss(f_id, bundle->identity_batch(stego));

    Tensor received = stego;
    if (metrics.attacked) {
        std::vector<Tensor> frames;
        frames.reserve(static_cast<std::size_t>(B));
        for (std::int64_t i = 0; i < B; ++i) {
            const auto spec = sample_attack(state.attack_rng);
            metrics.attacks.push_back(spec.to_string());
            frames.push_back(apply_attack(stego.narrow(0, i, 1), spec, state.attack_rng));
        }
        received = torch::cat(frames);
    }
    auto logits = bundle->extract_batch(received);
    auto sec = secret_loss(logits, messages);

    LossComponents<Tensor> parts{id, att, sec, g_adv, gp.detach()};
    Tensor total;
    try {
        total = total_loss(parts, cfg.weights);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("training diverged at step " + std::to_string(state.step) + ": " + e.what());
    }
    state.g_opt->zero_grad();
    total.backward();
    state.g_opt->step();

    metrics.identity = value_of(id);
    metrics.attribute = value_of(att);
    metrics.secret = value_of(sec);
    metrics.adversarial = value_of(g_adv);
    metrics.total = value_of(total);
    metrics.bit_accuracy = batch_bit_accuracy(logits, messages);

    constexpr double kEma = 0.98;
    state.ema_secret = state.step == 0 ? metrics.secret : kEma * state.ema_secret + (1 - kEma) * metrics.secret;
    state.ema_accuracy =
        state.step == 0 ? metrics.bit_accuracy : kEma * state.ema_accuracy + (1 - kEma) * metrics.bit_accuracy;
    ++state.step;
    return metrics;
}

double clean_accuracy(ModelBundle& bundle, const std::vector<EvalVideo>& videos, std::uint64_t seed)
{
    if (videos.empty())
        throw std::invalid_argument("clean_accuracy: no videos");
    torch::NoGradGuard no_grad;
    bundle->eval();
    RngState rng(seed, "clean-accuracy-messages");
    double sum = 0.0;
    for (const auto& v : videos) {
        const auto msg = random_message(rng, bundle->message_bits());
        auto stego = generate_stego_frame(bundle, v.cover.frames, v.reference, msg);
        sum += bit_accuracy(msg, binarize(extract_video_logits(bundle, stego)));
    }
    return sum / static_cast<double>(videos.size());
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void save_adam(torch::optim::Adam& opt, const std::string& prefix, CheckpointFile& file)
{
    auto& states = opt.state();
    std::int64_t index = 0;
    for (auto& group : opt.param_groups()) {
        for (auto& p : group.params()) {
            auto it = states.find(p.unsafeGetTensorImpl());
            const auto base = prefix + std::to_string(index++);
            if (it == states.end())
                continue;
            auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
            file.tensors.emplace_back(base + ".step", torch::tensor({s.step()}, torch::kInt64));
            file.tensors.emplace_back(base + ".exp_avg", s.exp_avg());
            file.tensors.emplace_back(base + ".exp_avg_sq", s.exp_avg_sq());
        }
    }
}

void load_adam(torch::optim::Adam& opt, const std::string& prefix, const CheckpointFile& file)
{
    auto& states = opt.state();
    states.clear();
    std::int64_t index = 0;
    for (auto& group : opt.param_groups()) {
        for (auto& p : group.params()) {
            const auto base = prefix + std::to_string(index++);
            if (!file.contains(base + ".step"))
                continue;
            auto s = std::make_unique<torch::optim::AdamParamState>();
            s->step(file.at(base + ".step").item<std::int64_t>());
            s->exp_avg(file.at(base + ".exp_avg").clone());
            s->exp_avg_sq(file.at(base + ".exp_avg_sq").clone());
            if (s->exp_avg().sizes() != p.sizes())
                throw std::runtime_error("train-state checkpoint: optimizer state shape mismatch at " + base);
            states[p.unsafeGetTensorImpl()] = std::move(s);
        }
    }
}

Tensor rng_tensor(const RngState& rng)
{
    auto t = torch::empty({4}, torch::kInt64);
    for (int i = 0; i < 4; ++i)
        t[i] = static_cast<std::int64_t>(rng.state()[static_cast<std::size_t>(i)]);
    return t;
}

void restore_rng(RngState& rng, const Tensor& t)
{
    RngState::State s{};
    for (int i = 0; i < 4; ++i)
        s[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(t[i].item<std::int64_t>());
    rng.set_state(s);
}

}  // namespace

void save_train_state(TrainState& state, const fs::path& path)
{
    CheckpointFile file;
    file.header = {{"kind", "train_state"},
                   {"step", state.step},
                   {"config", train_config_to_json(state.config)},
                   {"model", model_config_to_json(state.bundle->config())},
                   {"layout", state.bundle->layout().to_string()},
                   {"lambda", state.bundle->lambda()}};
    for (auto& [name, t] : named_state(*state.bundle))
        file.tensors.emplace_back("bundle." + name, t);
    save_adam(*state.g_opt, "g_opt.", file);
    save_adam(*state.d_opt, "d_opt.", file);
    file.tensors.emplace_back("rng.data", rng_tensor(state.data_rng));
    file.tensors.emplace_back("rng.message", rng_tensor(state.message_rng));
    file.tensors.emplace_back("rng.attack", rng_tensor(state.attack_rng));
    file.tensors.emplace_back("rng.gp", rng_tensor(state.gp_rng));
    file.tensors.emplace_back("ema", torch::tensor({state.ema_secret, state.ema_accuracy}, torch::kFloat64));
    write_checkpoint(path, file);
}

TrainState load_train_state(const fs::path& path)
{
    auto file = read_checkpoint(path);
    if (file.header.value("kind", std::string{}) != "train_state")
        throw std::runtime_error("'" + path.string() + "' is not a train-state checkpoint");
    TrainConfig config;
    try {
        config = train_config_from_json(file.header.at("config"));
    } catch (const std::exception& e) {
        throw std::runtime_error("train-state checkpoint '" + path.string() + "': " + e.what());
    }
    ModelBundle bundle(config.model, config.resolved_layout(), file.header.at("lambda").get<double>());
    load_named_state(*bundle, file, "bundle.");
    TrainState state(config, bundle);
    state.step = file.header.at("step").get<std::int64_t>();
    load_adam(*state.g_opt, "g_opt.", file);
    load_adam(*state.d_opt, "d_opt.", file);
    restore_rng(state.data_rng, file.at("rng.data"));
    restore_rng(state.message_rng, file.at("rng.message"));
    restore_rng(state.attack_rng, file.at("rng.attack"));
    restore_rng(state.gp_rng, file.at("rng.gp"));
    auto ema = file.at("ema");
    state.ema_secret = ema[0].item<double>();
    state.ema_accuracy = ema[1].item<double>();
    return state;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

std::string step_name(const char* stem, std::int64_t step)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%06lld.ckpt", stem, static_cast<long long>(step));
    return buf;
}

/// Keeps the first `lines` lines of an existing log (resume after a crash).
void truncate_log(const fs::path& log, std::int64_t lines)
{
    if (!fs::exists(log))
        return;
    std::istringstream is(read_text_file(log));
    std::string kept, line;
    for (std::int64_t i = 0; i < lines && std::getline(is, line); ++i)
        kept += line + "\n";
    write_text_file(log, kept);
}

}  // namespace

TrainResult train(TrainState& state, const fs::path& out_dir, const ProgressFn& progress)
{
    const auto& cfg = state.config;
    fs::create_directories(out_dir / "checkpoints");
    TrainResult result;
    result.metrics_log = out_dir / "metrics.jsonl";
    truncate_log(result.metrics_log, state.step);
    std::ofstream log(result.metrics_log, std::ios::app);
    if (!log)
        throw std::runtime_error("cannot open metrics log '" + result.metrics_log.string() + "'");

    const auto eval_videos =
        make_eval_videos(cfg.seed, cfg.eval_videos, cfg.eval_frames, cfg.model.image_size);
    const auto size = cfg.model.image_size;
    while (state.step < cfg.total_steps) {
        auto batch = sample_frame_batch(state.data_rng, cfg.batch_size, size, 0, cfg.train_identities);
        auto metrics = train_step(state, batch);
        const bool last = state.step == cfg.total_steps;
        if (last || (cfg.eval_every > 0 && state.step % cfg.eval_every == 0)) {
            metrics.clean_accuracy = clean_accuracy(state.bundle, eval_videos, cfg.seed);
            if (last)
                result.final_clean_accuracy = *metrics.clean_accuracy;
        }
        log << metrics.to_json().dump() << '\n';
        log.flush();
        if (!log)
            throw std::runtime_error("write failed for metrics log '" + result.metrics_log.string() + "'");
        const bool phase_switch = cfg.attack_enabled && state.step == cfg.attack_start_step();
        if (state.step % cfg.checkpoint_every == 0 || phase_switch || last)
            save_train_state(state, out_dir / "checkpoints" / step_name("train_state", state.step));
        if (progress)
            progress(metrics);
        result.metrics.push_back(std::move(metrics));
    }
    result.final_checkpoint = out_dir / "model_final.ckpt";
    state.bundle->eval();
    save_bundle(state.bundle, result.final_checkpoint,
                {{"step", state.step}, {"train_config", train_config_to_json(cfg)}});
    if (result.metrics.empty() || !result.metrics.back().clean_accuracy)
        result.final_clean_accuracy = clean_accuracy(state.bundle, eval_videos, cfg.seed);
    return result;
}

TrainResult train(const TrainConfig& config, const fs::path& identity_checkpoint, const fs::path& out_dir,
                  const ProgressFn& progress)
{
    TrainState state(config, make_training_bundle(config, identity_checkpoint));
    return train(state, out_dir, progress);
}

}  // namespace idstego
