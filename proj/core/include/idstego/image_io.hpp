#pragma once

// PNG frames and frame-folder videos with JSON manifests.

#include "idstego/stego_core.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace idstego {

/// Writes a (3,H,W) [0,1] frame as an RGB PNG with 8 or 16 bits per channel.
void write_png(const std::filesystem::path& path, const torch::Tensor& frame, int bit_depth = 8);

/// Reads an 8- or 16-bit RGB(A)/gray PNG into a (3,H,W) float tensor in [0,1].
torch::Tensor read_png(const std::filesystem::path& path);

/// Rows of RGB8 pixels to PNG (used for plots).
void write_png_rgb8(const std::filesystem::path& path, std::int64_t width, std::int64_t height,
                    const std::vector<std::uint8_t>& rgb);

/// Writes frame_0000.png ... and manifest.json {frame_rate, width, height,
/// bit_depth, frames[], plus `extra` keys}. Creates `dir`.
void write_frame_folder(const std::filesystem::path& dir, const VideoArray& video, int bit_depth = 16,
                        const nlohmann::json& extra = nlohmann::json::object());

struct FrameFolder {
    VideoArray video;
    nlohmann::json manifest;
};

/// Reads a folder written by write_frame_folder. A folder without a manifest
/// is read as its *.png files in name order at 25 fps.
FrameFolder read_frame_folder(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace idstego
