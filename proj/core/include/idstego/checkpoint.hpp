#pragma once

// Versioned binary checkpoint files.
//
// Layout (little-endian):
//   magic "IDSTGCKP" | u32 version | u64 header length | header JSON (UTF-8)
//   u64 tensor count | per tensor: u32 name length, name, u8 dtype, u32 rank,
//   i64 dims[rank], u64 byte count, raw contiguous data
//
// The header carries the kind ("model", "identity_extractor", "train_state"),
// the model geometry, the embedding layout and lambda. Tensors are written
// byte-for-byte, so a save/load round trip is bit-exact.

#include "idstego/networks.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace idstego {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, torch::Tensor>> tensors;

    const torch::Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Unknown or missing keys are errors.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameters followed by named buffers, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(torch::nn::Module& module);

/// Copies tensors named `prefix + name` into `module`; every entry of the
/// module must be present with the same shape and dtype.
void load_named_state(torch::nn::Module& module, const CheckpointFile& file, const std::string& prefix = "");

void save_bundle(ModelBundle& bundle, const std::filesystem::path& path,
                 const nlohmann::json& extra = nlohmann::json::object());
ModelBundle load_bundle(const std::filesystem::path& path);

void save_identity_extractor(IdentityExtractor& extractor, const ModelConfig& config,
                             const std::filesystem::path& path,
                             const nlohmann::json& extra = nlohmann::json::object());
/// Loads a pretrained identity extractor into `bundle` and freezes it. The
/// checkpoint's image size, id_dim and id_width must match the bundle.
void load_identity_extractor(ModelBundle& bundle, const std::filesystem::path& path);

}  // namespace idstego
