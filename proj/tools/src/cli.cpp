#include "idstego/cli.hpp"

#include "idstego/checkpoint.hpp"
#include "idstego/evaluation.hpp"
#include "idstego/image_io.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace idstego::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig <-> JSON

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw std::invalid_argument(where + " must be a JSON object");
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

json run_config_to_json(const RunConfig& c)
{
    return {{"command", c.command},
            {"seed", c.seed},
            {"out", c.out},
            {"codec_path", c.codec_path},
            {"plot", c.plot},
            {"identity_checkpoint", c.identity_checkpoint},
            {"checkpoint", c.checkpoint},
            {"train", train_config_to_json(c.train)},
            {"pretrain",
             {{"num_identities", c.pretrain.num_identities},
              {"steps", c.pretrain.steps},
              {"batch_size", c.pretrain.batch_size},
              {"lr", c.pretrain.lr},
              {"logit_scale", c.pretrain.logit_scale}}},
            {"eval",
             {{"suite", c.eval.suite},
              {"videos", c.eval.videos},
              {"frames", c.eval.frames},
              {"baseline_lsb", c.eval.baseline_lsb}}},
            {"ablation",
             {{"layouts", c.ablation.layouts},
              {"message_bits", c.ablation.message_bits},
              {"lambdas", c.ablation.lambdas}}},
            {"probe",
             {{"method", c.probe.method},
              {"features", c.probe.features},
              {"frames", c.probe.frames},
              {"steps", c.probe.steps},
              {"lsb_bits", c.probe.lsb_bits}}},
            {"data", {{"videos", c.data.videos}, {"frames", c.data.frames}}}};
}

RunConfig run_config_from_json(const json& j)
{
    reject_unknown(j,
                   {"command", "seed", "out", "codec_path", "plot", "identity_checkpoint", "checkpoint", "train",
                    "pretrain", "eval", "ablation", "probe", "data"},
                   "config");
    RunConfig c;
    try {
        read_if(j, "command", c.command);
        read_if(j, "seed", c.seed);
        read_if(j, "out", c.out);
        read_if(j, "codec_path", c.codec_path);
        read_if(j, "plot", c.plot);
        read_if(j, "identity_checkpoint", c.identity_checkpoint);
        read_if(j, "checkpoint", c.checkpoint);
        if (j.contains("train"))
            c.train = train_config_from_json(j.at("train"));
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            reject_unknown(p, {"num_identities", "steps", "batch_size", "lr", "logit_scale"}, "config.pretrain");
            read_if(p, "num_identities", c.pretrain.num_identities);
            read_if(p, "steps", c.pretrain.steps);
            read_if(p, "batch_size", c.pretrain.batch_size);
            read_if(p, "lr", c.pretrain.lr);
            read_if(p, "logit_scale", c.pretrain.logit_scale);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            reject_unknown(e, {"suite", "videos", "frames", "baseline_lsb"}, "config.eval");
            read_if(e, "suite", c.eval.suite);
            read_if(e, "videos", c.eval.videos);
            read_if(e, "frames", c.eval.frames);
            read_if(e, "baseline_lsb", c.eval.baseline_lsb);
        }
        if (j.contains("ablation")) {
            const auto& a = j.at("ablation");
            reject_unknown(a, {"layouts", "message_bits", "lambdas"}, "config.ablation");
            read_if(a, "layouts", c.ablation.layouts);
            read_if(a, "message_bits", c.ablation.message_bits);
            read_if(a, "lambdas", c.ablation.lambdas);
        }
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            reject_unknown(p, {"method", "features", "frames", "steps", "lsb_bits"}, "config.probe");
            read_if(p, "method", c.probe.method);
            read_if(p, "features", c.probe.features);
            read_if(p, "frames", c.probe.frames);
            read_if(p, "steps", c.probe.steps);
            read_if(p, "lsb_bits", c.probe.lsb_bits);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            reject_unknown(d, {"videos", "frames"}, "config.data");
            read_if(d, "videos", c.data.videos);
            read_if(d, "frames", c.data.frames);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    for (const auto& name : c.eval.suite)
        EvalDistortion::parse(name);
    if (c.eval.videos < 1 || c.eval.frames < 1 || c.data.videos < 1 || c.data.frames < 1)
        throw std::invalid_argument("config: video and frame counts must be >= 1");
    return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Flags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string codec_path;
    bool plot = false;

    std::string identity_checkpoint;
    std::string checkpoint;
    std::optional<std::int64_t> steps;
    std::optional<std::int64_t> identities;
    std::string resume;
    std::string cover;
    std::string reference;
    std::string message;
    std::optional<std::uint64_t> message_seed;
    std::string video;
    bool json_output = false;
    std::vector<std::string> suite;
    std::optional<std::int64_t> videos;
    std::optional<std::int64_t> frames;
    std::string baseline;
    std::vector<std::string> layouts;
    std::vector<double> lambdas;
    std::string method;
    std::string features;
};

std::string fixed(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string exact(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

RunConfig resolve(const std::string& command, const Flags& f)
{
    RunConfig c;
    if (!f.config_path.empty()) {
        json j;
        try {
            j = json::parse(read_text_file(f.config_path));
        } catch (const json::exception& e) {
            throw std::invalid_argument("config '" + f.config_path + "' is not valid JSON: " + e.what());
        }
        c = run_config_from_json(j);
    }
    c.command = command;
    if (f.seed)
        c.seed = *f.seed;
    if (!f.out.empty())
        c.out = f.out;
    if (!f.codec_path.empty())
        c.codec_path = f.codec_path;
    c.plot = c.plot || f.plot;
    if (!f.identity_checkpoint.empty())
        c.identity_checkpoint = f.identity_checkpoint;
    if (!f.checkpoint.empty())
        c.checkpoint = f.checkpoint;
    if (f.steps) {
        c.train.total_steps = *f.steps;
        c.pretrain.steps = *f.steps;
    }
    if (f.identities)
        c.pretrain.num_identities = *f.identities;
    if (!f.suite.empty())
        c.eval.suite = f.suite;
    if (f.videos) {
        c.eval.videos = *f.videos;
        c.data.videos = *f.videos;
    }
    if (f.frames) {
        c.eval.frames = *f.frames;
        c.data.frames = *f.frames;
        c.probe.frames = *f.frames;
    }
    if (f.baseline == "lsb")
        c.eval.baseline_lsb = true;
    else if (!f.baseline.empty())
        throw std::invalid_argument("unknown baseline '" + f.baseline + "' (supported: lsb)");
    if (!f.layouts.empty())
        c.ablation.layouts = f.layouts;
    if (!f.lambdas.empty())
        c.ablation.lambdas = f.lambdas;
    if (!f.method.empty())
        c.probe.method = f.method;
    if (!f.features.empty())
        c.probe.features = f.features;
    c.train.seed = c.seed;
    c.train.validate();
    return c;
}

void write_snapshot(const RunConfig& c)
{
    fs::create_directories(c.out);
    write_text_file(fs::path(c.out) / "resolved_config.json", run_config_to_json(c).dump(2) + "\n");
}

CodecOptions codec_options(const RunConfig& c)
{
    CodecOptions o;
    o.ffmpeg = c.codec_path;
    return o;
}

fs::path require_identity_checkpoint(const RunConfig& c)
{
    if (c.identity_checkpoint.empty())
        throw std::runtime_error(
            "no identity-extractor checkpoint given; run 'idstego pretrain --out DIR' and pass "
            "--identity-checkpoint DIR/identity_extractor.ckpt");
    if (!fs::exists(c.identity_checkpoint))
        throw std::runtime_error("identity-extractor checkpoint '" + c.identity_checkpoint +
                                 "' not found; run 'idstego pretrain' first");
    return c.identity_checkpoint;
}

fs::path require_checkpoint(const RunConfig& c)
{
    if (c.checkpoint.empty())
        throw std::invalid_argument("this command needs --checkpoint PATH");
    return c.checkpoint;
}

ProgressFn train_progress(std::ostream& out, std::int64_t total)
{
    const auto every = std::max<std::int64_t>(1, total / 20);
    return [&out, every, total](const StepMetrics& m) {
        const auto done = m.step + 1;
        if (done % every != 0 && done != total)
            return;
        out << "step " << done << "/" << total << "  secret " << fixed(m.secret) << "  bit_acc "
            << fixed(m.bit_accuracy) << "  identity " << fixed(m.identity) << "  attribute " << fixed(m.attribute)
            << (m.attacked ? "  [attacked]" : "");
        if (m.clean_accuracy)
            out << "  clean_acc " << fixed(*m.clean_accuracy);
        out << std::endl;
    };
}

void write_reports(const fs::path& dir, const std::string& stem, const std::vector<EvalReport>& reports,
                   bool plot, std::ostream& out)
{
    json j = json::array();
    for (const auto& r : reports)
        j.push_back(r.to_json());
    const auto table = render_text_table(reports);
    write_text_file(dir / (stem + ".json"), json{{"reports", j}}.dump(2) + "\n");
    write_text_file(dir / (stem + ".csv"), render_csv(reports));
    write_text_file(dir / (stem + ".txt"), table);
    out << table;
    for (const auto& r : reports)
        for (const auto& note : r.environment_notes)
            out << "note: " << note << "\n";
    if (plot) {
        write_bar_chart(dir / (stem + ".png"), reports);
        out << "wrote " << (dir / (stem + ".png")).string() << "\n";
    }
}

int cmd_pretrain(const RunConfig& c, std::ostream& out)
{
    write_snapshot(c);
    const auto& model = c.train.model;
    torch::manual_seed(c.seed);
    IdentityExtractor extractor(model.id_width, model.id_dim);
    PretrainConfig pc;
    pc.num_identities = c.pretrain.num_identities;
    pc.steps = c.pretrain.steps;
    pc.batch_size = c.pretrain.batch_size;
    pc.lr = c.pretrain.lr;
    pc.logit_scale = c.pretrain.logit_scale;
    pc.seed = c.seed;
    pc.image_size = model.image_size;
    const auto every = std::max<std::int64_t>(1, pc.steps / 10);
    const auto report = pretrain_identity_extractor(extractor, pc, [&](std::int64_t step, double loss) {
        if ((step + 1) % every == 0)
            out << "pretrain step " << step + 1 << "/" << pc.steps << "  loss " << fixed(loss) << std::endl;
    });
    const json summary = {{"final_loss", report.final_loss},
                          {"train_accuracy", report.train_accuracy},
                          {"same_cosine", report.same_cosine},
                          {"cross_cosine", report.cross_cosine},
                          {"margin", report.margin},
                          {"num_identities", pc.num_identities},
                          {"steps", pc.steps}};
    const auto ckpt = fs::path(c.out) / "identity_extractor.ckpt";
    save_identity_extractor(extractor, model, ckpt, {{"pretrain", summary}});
    write_text_file(fs::path(c.out) / "pretrain_report.json", summary.dump(2) + "\n");
    out << "identity margin " << fixed(report.margin) << " (same " << fixed(report.same_cosine) << ", cross "
        << fixed(report.cross_cosine) << ")\nwrote " << ckpt.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& c, const Flags& f, std::ostream& out)
{
    std::optional<TrainState> state;
    if (!f.resume.empty()) {
        state.emplace(load_train_state(f.resume));
        if (f.steps)
            state->config.total_steps = *f.steps;
        out << "resuming from step " << state->step << "\n";
    } else {
        const auto id_ckpt = require_identity_checkpoint(c);
        state.emplace(c.train, make_training_bundle(c.train, id_ckpt));
    }
    auto snapshot = c;
    snapshot.train = state->config;
    write_snapshot(snapshot);
    const auto result = train(*state, c.out, train_progress(out, state->config.total_steps));
    const json summary = {{"final_checkpoint", result.final_checkpoint.string()},
                          {"metrics_log", result.metrics_log.string()},
                          {"steps", state->step},
                          {"final_clean_accuracy", result.final_clean_accuracy}};
    write_text_file(fs::path(c.out) / "summary.json", summary.dump(2) + "\n");
    out << "final clean accuracy " << exact(result.final_clean_accuracy) << "\nwrote "
        << result.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_embed(const RunConfig& c, const Flags& f, std::ostream& out)
{
    if (f.cover.empty() || f.reference.empty())
        throw std::invalid_argument("embed needs --cover DIR and --reference PNG");
    auto bundle = load_bundle(require_checkpoint(c));
    const auto m = bundle->message_bits();
    BitMessage msg;
    if (!f.message.empty()) {
        msg = BitMessage::from_string(f.message);
        if (static_cast<std::int64_t>(msg.size()) != m)
            throw std::invalid_argument("message has " + std::to_string(msg.size()) + " bits; the checkpoint expects " +
                                        std::to_string(m));
    } else {
        RngState rng(f.message_seed.value_or(c.seed), "cli-message");
        msg = random_message(rng, m);
    }
    const auto cover = read_frame_folder(f.cover);
    const auto reference = read_png(f.reference);
    torch::NoGradGuard no_grad;
    VideoArray stego{generate_stego_frame(bundle, cover.video.frames, reference, msg), cover.video.frame_rate};
    write_frame_folder(c.out, stego, 16,
                       {{"source", f.cover}, {"reference", f.reference}, {"checkpoint", c.checkpoint},
                        {"message_bits", m}});
    write_snapshot(c);
    out << "message " << msg.to_string() << "\nwrote " << stego.num_frames() << " frames to " << c.out << "\n";
    return 0;
}

int cmd_extract(const RunConfig& c, const Flags& f, std::ostream& out)
{
    if (f.video.empty())
        throw std::invalid_argument("extract needs --video DIR");
    auto bundle = load_bundle(require_checkpoint(c));
    const auto folder = read_frame_folder(f.video);
    torch::NoGradGuard no_grad;
    const auto logits = extract_video_logits(bundle, folder.video.frames).to(torch::kFloat64);
    const auto bits = binarize(logits);
    const auto p = torch::sigmoid(logits);
    std::vector<double> p_one(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
    std::vector<double> confidence;
    for (double v : p_one)
        confidence.push_back(std::max(v, 1.0 - v));
    if (f.json_output) {
        out << json{{"bits", bits.to_string()}, {"p_one", p_one}, {"confidence", confidence}}.dump() << "\n";
        return 0;
    }
    out << "bits " << bits.to_string() << "\n"
        << "bit  p(1)    confidence\n";
    for (std::size_t i = 0; i < p_one.size(); ++i)
        out << (i < 10 ? " " : "") << i << "   " << fixed(p_one[i]) << "  " << fixed(confidence[i]) << "\n";
    return 0;
}

std::vector<EvalDistortion> configured_suite(const RunConfig& c)
{
    return c.eval.suite.empty() ? full_suite() : parse_suite(c.eval.suite);
}

int cmd_evaluate(const RunConfig& c, std::ostream& out)
{
    const auto suite = configured_suite(c);
    auto bundle = load_bundle(require_checkpoint(c));
    write_snapshot(c);
    const auto videos = make_eval_videos(c.seed, c.eval.videos, c.eval.frames, bundle->config().image_size);
    std::vector<EvalReport> reports;
    GenerativeMethod method(bundle);
    reports.push_back(evaluate_robustness(method, videos, suite, c.seed, codec_options(c)));
    if (c.eval.baseline_lsb) {
        LsbMethod lsb(bundle->message_bits(), c.seed);
        reports.push_back(evaluate_robustness(lsb, videos, suite, c.seed, codec_options(c)));
    }
    write_reports(c.out, "report", reports, c.plot, out);
    return 0;
}

AblationSettings ablation_settings(const RunConfig& c, std::ostream& out)
{
    AblationSettings s;
    s.base = c.train;
    s.identity_checkpoint = require_identity_checkpoint(c);
    s.out_dir = c.out;
    s.eval_videos = c.eval.videos;
    s.eval_frames = c.eval.frames;
    s.eval_seed = c.seed;
    s.codec = codec_options(c);
    s.progress = train_progress(out, c.train.total_steps);
    return s;
}

int cmd_ablate_positions(const RunConfig& c, std::ostream& out)
{
    const auto all = position_layouts(c.ablation.message_bits);
    std::vector<NamedLayout> chosen;
    for (const auto& name : c.ablation.layouts) {
        if (name.find(':') != std::string::npos) {
            chosen.push_back({name, EmbeddingLayout::parse(name, c.train.model.num_blocks)});
            continue;
        }
        auto it = std::find_if(all.begin(), all.end(), [&](const NamedLayout& l) { return l.name == name; });
        if (it == all.end())
            throw std::invalid_argument("unknown layout '" + name + "' (use a, b, c, standard or BITS:BLOCKS,...)");
        chosen.push_back(*it);
    }
    write_snapshot(c);
    auto settings = ablation_settings(c, out);
    const auto table = ablate_positions(chosen, settings, c.eval.suite.empty() ? std::vector<EvalDistortion>{}
                                                                              : parse_suite(c.eval.suite));
    write_text_file(fs::path(c.out) / "ablation_table.json", table.to_json().dump(2) + "\n");
    write_reports(c.out, "ablation", table.reports, c.plot, out);
    return 0;
}

int cmd_sweep_lambda(const RunConfig& c, std::ostream& out)
{
    write_snapshot(c);
    auto settings = ablation_settings(c, out);
    const auto table = sweep_lambda(c.ablation.lambdas, settings);
    write_text_file(fs::path(c.out) / "sweep_table.json", table.to_json().dump(2) + "\n");
    write_reports(c.out, "sweep", table.reports, c.plot, out);
    return 0;
}

int cmd_probe_security(const RunConfig& c, std::ostream& out)
{
    const auto size = c.train.model.image_size;
    const auto n = c.probe.frames;
    if (n < 4)
        throw std::invalid_argument("probe needs at least 4 frames per class");
    ProbeConfig pc;
    pc.steps = c.probe.steps;
    pc.seed = c.seed;
    if (c.probe.features == "raw")
        pc.features = ProbeFeatures::raw;
    else if (c.probe.features == "lsb_plane")
        pc.features = ProbeFeatures::lsb_plane;
    else
        throw std::invalid_argument("unknown probe features '" + c.probe.features + "' (raw, lsb_plane)");

    RngState rng(c.seed, "probe-frames");
    const auto cover_batch = sample_frame_batch(rng, n, size, kTrainIdentities, kHeldOutIdentities);
    const auto source_batch = sample_frame_batch(rng, n, size, kTrainIdentities, kHeldOutIdentities);
    torch::Tensor stegos;
    {
        torch::NoGradGuard no_grad;
        RngState msg_rng(c.seed, "probe-messages");
        if (c.probe.method == "generative") {
            auto bundle = load_bundle(require_checkpoint(c));
            std::vector<torch::Tensor> frames;
            for (std::int64_t i = 0; i < n; ++i)
                frames.push_back(generate_stego_frame(bundle, source_batch.covers[i], source_batch.references[i],
                                                      random_message(msg_rng, bundle->message_bits())));
            stegos = torch::stack(frames);
        } else if (c.probe.method == "lsb") {
            const auto bits = c.probe.lsb_bits > 0 ? c.probe.lsb_bits : 3 * size * size;
            std::vector<torch::Tensor> frames;
            for (std::int64_t i = 0; i < n; ++i) {
                VideoArray one{source_batch.covers[i].unsqueeze(0), 25.0};
                frames.push_back(lsb_embed(one, random_message(msg_rng, bits), c.seed + static_cast<std::uint64_t>(i))
                                     .frames[0]);
            }
            stegos = torch::stack(frames);
        } else {
            throw std::invalid_argument("unknown probe method '" + c.probe.method + "' (generative, lsb)");
        }
    }
    write_snapshot(c);
    const auto result = steganalysis_probe(cover_batch.covers, stegos, pc);
    const json j = {{"detector", "proxy convolutional classifier"},
                    {"method", c.probe.method},
                    {"features", c.probe.features},
                    {"auc", result.auc},
                    {"train_count", result.train_count},
                    {"test_count", result.test_count}};
    write_text_file(fs::path(c.out) / "probe.json", j.dump(2) + "\n");
    out << "proxy detector AUC " << fixed(result.auc) << " (" << c.probe.method << ", " << c.probe.features
        << " features, " << result.test_count << " test frames; 0.5 = undetectable)\n";
    return 0;
}

int cmd_export_data(const RunConfig& c, std::ostream& out)
{
    export_dataset(c.out, c.seed, c.data.videos, c.data.frames, c.train.model.image_size);
    write_snapshot(c);
    out << "wrote " << c.data.videos << " videos to " << c.out << "\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Identity-conditioned generative video steganography on procedural toy data"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config_path, "JSON run configuration (unknown keys are errors)");
    app.add_option("--seed", f.seed, "Seed for every random stream");
    app.add_option("--out", f.out, "Output directory");
    app.add_option("--codec-path", f.codec_path, "ffmpeg executable for the H.264 distortions");
    app.add_flag("--plot", f.plot, "Write bar-chart PNGs");

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain and freeze the identity extractor");
    pretrain->add_option("--steps", f.steps, "Optimizer steps");
    pretrain->add_option("--identities", f.identities, "Number of training identities");

    auto* train_cmd = app.add_subcommand("train", "Train the embedding and extraction networks");
    train_cmd->add_option("--identity-checkpoint", f.identity_checkpoint, "Pretrained identity extractor");
    train_cmd->add_option("--steps", f.steps, "Total training steps");
    train_cmd->add_option("--resume", f.resume, "Continue from a train-state checkpoint");

    auto* embed = app.add_subcommand("embed", "Embed a message into a cover video");
    embed->add_option("--checkpoint", f.checkpoint, "Trained model checkpoint")->required();
    embed->add_option("--cover", f.cover, "Cover video frame folder")->required();
    embed->add_option("--reference", f.reference, "Reference identity image (PNG)")->required();
    auto* msg_opt = embed->add_option("--message", f.message, "Message bits, e.g. 010011101");
    embed->add_option("--message-seed", f.message_seed, "Draw a random message from this seed")->excludes(msg_opt);

    auto* extract = app.add_subcommand("extract", "Recover the message from a stego video");
    extract->add_option("--checkpoint", f.checkpoint, "Trained model checkpoint")->required();
    extract->add_option("--video", f.video, "Stego video frame folder")->required();
    extract->add_flag("--json", f.json_output, "Print JSON");

    auto* evaluate = app.add_subcommand("evaluate", "Bit accuracy under the distortion suite");
    evaluate->add_option("--checkpoint", f.checkpoint, "Trained model checkpoint");
    evaluate->add_option("--suite", f.suite, "Comma-separated distortions")->delimiter(',');
    evaluate->add_option("--videos", f.videos, "Number of held-out videos");
    evaluate->add_option("--frames", f.frames, "Frames per video");
    evaluate->add_option("--baseline", f.baseline, "Add a baseline row (lsb)");

    auto* ablate = app.add_subcommand("ablate-positions", "Train and compare embedding layouts");
    ablate->add_option("--identity-checkpoint", f.identity_checkpoint, "Pretrained identity extractor");
    ablate->add_option("--steps", f.steps, "Training steps per layout");
    ablate->add_option("--layouts", f.layouts, "Comma-separated: a, b, c, standard")->delimiter(',');
    ablate->add_option("--suite", f.suite, "Comma-separated distortions")->delimiter(',');

    auto* sweep = app.add_subcommand("sweep-lambda", "Train one model per lambda");
    sweep->add_option("--identity-checkpoint", f.identity_checkpoint, "Pretrained identity extractor");
    sweep->add_option("--steps", f.steps, "Training steps per value");
    sweep->add_option("--lambdas", f.lambdas, "Comma-separated lambda values")->delimiter(',');

    auto* probe = app.add_subcommand("probe-security", "Train a cover-vs-stego detector and report its AUC");
    probe->add_option("--checkpoint", f.checkpoint, "Trained model checkpoint (generative method)");
    probe->add_option("--method", f.method, "generative or lsb");
    probe->add_option("--features", f.features, "raw or lsb_plane");
    probe->add_option("--frames", f.frames, "Frames per class");

    auto* export_data = app.add_subcommand("export-data", "Write toy videos as PNG frame folders");
    export_data->add_option("--videos", f.videos, "Number of videos");
    export_data->add_option("--frames", f.frames, "Frames per video");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    const auto* sub = app.get_subcommands().front();
    try {
        const auto config = resolve(sub->get_name(), f);
        if (sub == pretrain)
            return cmd_pretrain(config, out);
        if (sub == train_cmd)
            return cmd_train(config, f, out);
        if (sub == embed)
            return cmd_embed(config, f, out);
        if (sub == extract)
            return cmd_extract(config, f, out);
        if (sub == evaluate)
            return cmd_evaluate(config, out);
        if (sub == ablate)
            return cmd_ablate_positions(config, out);
        if (sub == sweep)
            return cmd_sweep_lambda(config, out);
        if (sub == probe)
            return cmd_probe_security(config, out);
        if (sub == export_data)
            return cmd_export_data(config, out);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("idstego");
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace idstego::cli
