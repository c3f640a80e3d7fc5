#pragma once

// The idstego command-line interface as a library, so tests can drive it
// in-process.

#include "idstego/toy_data.hpp"
#include "idstego/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace idstego::cli {

struct PretrainSection {
    std::int64_t num_identities = kTrainIdentities;
    std::int64_t steps = 400;
    std::int64_t batch_size = 16;
    double lr = 1e-3;
    double logit_scale = 16.0;
};

struct EvalSection {
    std::vector<std::string> suite;  // empty: every column
    std::int64_t videos = 16;
    std::int64_t frames = 8;
    bool baseline_lsb = false;
};

struct AblationSection {
    std::vector<std::string> layouts{"a", "b", "c", "standard"};
    std::int64_t message_bits = 18;
    std::vector<double> lambdas{1.0, 0.1, 0.01, 0.005};
};

struct ProbeSection {
    std::string method = "generative";  // or "lsb"
    std::string features = "raw";       // or "lsb_plane"
    std::int64_t frames = 400;          // per class
    std::int64_t steps = 300;
    std::int64_t lsb_bits = 0;          // 0: full payload (3*H*W)
};

struct DataSection {
    std::int64_t videos = 8;
    std::int64_t frames = 8;
};

/// Everything a command reads. Loaded from strict JSON (unknown keys are
/// errors), then overridden by command-line flags. The top-level seed is the
/// only seed; it is copied into the training section.
struct RunConfig {
    std::string command;
    std::uint64_t seed = 0;
    std::string out = "runs/default";
    std::string codec_path;
    bool plot = false;
    std::string identity_checkpoint;
    std::string checkpoint;
    TrainConfig train;
    PretrainSection pretrain;
    EvalSection eval;
    AblationSection ablation;
    ProbeSection probe;
    DataSection data;
};

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Runs one invocation. Returns the process exit code; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace idstego::cli
