#include "idstego/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace idstego {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f)
        throw std::runtime_error("cannot open '" + path.string() + "'");
    return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg)
{
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what)
        *what = msg;
    png_longjmp(png, 1);
}

void write_rows(const fs::path& path, std::int64_t width, std::int64_t height, int bit_depth,
                const std::vector<std::uint8_t>& data)
{
    auto f = open_file(path, "wb");
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, nullptr);
    if (!png)
        throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    const std::size_t stride = static_cast<std::size_t>(width) * 3 * (bit_depth / 8);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (std::int64_t y = 0; y < height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * stride);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("writing '" + path.string() + "': " + error);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const fs::path& path, const torch::Tensor& frame, int bit_depth)
{
    if (frame.dim() != 3 || frame.size(0) != 3)
        throw std::invalid_argument("write_png: expected (3,H,W)");
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("write_png: bit depth must be 8 or 16");
    const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
    auto hwc = (frame.detach().to(torch::kFloat64).clamp(0.0, 1.0) * maxv).round().permute({1, 2, 0}).contiguous();
    const auto h = hwc.size(0), w = hwc.size(1);
    const auto* p = hwc.data_ptr<double>();
    std::vector<std::uint8_t> data;
    data.reserve(static_cast<std::size_t>(h * w * 3 * (bit_depth / 8)));
    for (std::int64_t i = 0; i < h * w * 3; ++i) {
        const auto v = static_cast<std::uint32_t>(p[i]);
        if (bit_depth == 16)
            data.push_back(static_cast<std::uint8_t>(v >> 8));  // PNG stores big-endian samples
        data.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    write_rows(path, w, h, bit_depth, data);
}

void write_png_rgb8(const fs::path& path, std::int64_t width, std::int64_t height, const std::vector<std::uint8_t>& rgb)
{
    if (static_cast<std::int64_t>(rgb.size()) != width * height * 3)
        throw std::invalid_argument("write_png_rgb8: buffer size mismatch");
    write_rows(path, width, height, 8, rgb);
}

torch::Tensor read_png(const fs::path& path)
{
    auto f = open_file(path, "rb");
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, nullptr);
    if (!png)
        throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("reading '" + path.string() + "': " + error);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (depth < 8) {
        png_set_expand(png);
        depth = 8;
    }
    if (color & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int bytes = depth == 16 ? 2 : 1;
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * 3 * bytes) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("reading '" + path.string() + "': unsupported pixel layout");
    }
    data.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y)
        rows[y] = data.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    auto out = torch::empty({static_cast<std::int64_t>(height), static_cast<std::int64_t>(width), 3}, torch::kFloat32);
    auto* p = out.data_ptr<float>();
    const std::size_t n = static_cast<std::size_t>(width) * height * 3;
    for (std::size_t i = 0; i < n; ++i) {
        if (bytes == 2)
            p[i] = static_cast<float>((data[2 * i] << 8 | data[2 * i + 1]) / 65535.0);
        else
            p[i] = static_cast<float>(data[i] / 255.0);
    }
    return out.permute({2, 0, 1}).contiguous();
}

void write_frame_folder(const fs::path& dir, const VideoArray& video, int bit_depth, const nlohmann::json& extra)
{
    video.validate();
    fs::create_directories(dir);
    nlohmann::json manifest = extra;
    manifest["frame_rate"] = video.frame_rate;
    manifest["width"] = video.width();
    manifest["height"] = video.height();
    manifest["bit_depth"] = bit_depth;
    auto names = nlohmann::json::array();
    for (std::int64_t i = 0; i < video.num_frames(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04lld.png", static_cast<long long>(i));
        write_png(dir / name, video.frames[i], bit_depth);
        names.push_back(name);
    }
    manifest["frames"] = names;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

FrameFolder read_frame_folder(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw std::runtime_error("video folder '" + dir.string() + "' does not exist");
    FrameFolder out;
    std::vector<fs::path> files;
    const auto manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        try {
            out.manifest = nlohmann::json::parse(read_text_file(manifest_path));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("'" + manifest_path.string() + "': " + e.what());
        }
        for (const auto& name : out.manifest.at("frames"))
            files.push_back(dir / name.get<std::string>());
        out.video.frame_rate = out.manifest.value("frame_rate", 25.0);
    } else {
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".png")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        out.manifest = nlohmann::json::object();
    }
    if (files.empty())
        throw std::runtime_error("video folder '" + dir.string() + "' contains no frames");
    std::vector<torch::Tensor> frames;
    for (const auto& f : files)
        frames.push_back(read_png(f));
    out.video.frames = torch::stack(frames);
    out.video.validate();
    return out;
}

void write_text_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    os << text;
    if (!os)
        throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_text_file(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace idstego
