#include "idstego/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace idstego {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'D', 'S', 'T', 'G', 'C', 'K', 'P'};

enum class DtypeCode : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

DtypeCode code_for(torch::Dtype d)
{
    switch (d) {
    case torch::kFloat32: return DtypeCode::f32;
    case torch::kFloat64: return DtypeCode::f64;
    case torch::kInt64: return DtypeCode::i64;
    default: throw std::invalid_argument("checkpoint: unsupported tensor dtype");
    }
}

torch::Dtype dtype_for(DtypeCode c)
{
    switch (c) {
    case DtypeCode::f32: return torch::kFloat32;
    case DtypeCode::f64: return torch::kFloat64;
    case DtypeCode::i64: return torch::kInt64;
    }
    throw std::runtime_error("checkpoint: unknown dtype code");
}

template <typename T>
void put(std::ofstream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
public:
    explicit Reader(const fs::path& path) : path_(path), is_(path, std::ios::binary)
    {
        if (!is_)
            throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }

    template <typename T>
    T get()
    {
        T v;
        bytes(&v, sizeof v);
        return v;
    }

    void bytes(void* dst, std::size_t n)
    {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw std::runtime_error("checkpoint '" + path_.string() + "' is truncated");
    }

    std::string string(std::size_t n)
    {
        if (n > (std::size_t{1} << 30))
            throw std::runtime_error("checkpoint '" + path_.string() + "' is corrupt (oversized field)");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    fs::path path_;
    std::ifstream is_;
};

}  // namespace

const torch::Tensor& CheckpointFile::at(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name)
            return t;
    throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

bool CheckpointFile::contains(const std::string& name) const
{
    for (const auto& entry : tensors)
        if (entry.first == name)
            return true;
    return false;
}

void write_checkpoint(const fs::path& path, const CheckpointFile& file)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
        os.write(kMagic, sizeof kMagic);
        put(os, kCheckpointVersion);
        const auto header = file.header.dump();
        put(os, static_cast<std::uint64_t>(header.size()));
        os.write(header.data(), static_cast<std::streamsize>(header.size()));
        put(os, static_cast<std::uint64_t>(file.tensors.size()));
        for (const auto& [name, tensor] : file.tensors) {
            auto t = tensor.detach().to(torch::kCPU).contiguous();
            put(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            put(os, static_cast<std::uint8_t>(code_for(t.scalar_type())));
            put(os, static_cast<std::uint32_t>(t.dim()));
            for (auto d : t.sizes())
                put(os, static_cast<std::int64_t>(d));
            const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
            put(os, nbytes);
            os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
        }
        if (!os)
            throw std::runtime_error("write failed for checkpoint '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

CheckpointFile read_checkpoint(const fs::path& path)
{
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("'" + path.string() + "' is not a checkpoint file");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint '" + path.string() + "' has unsupported version " +
                                 std::to_string(version));
    CheckpointFile file;
    try {
        file.header = json::parse(r.string(r.get<std::uint64_t>()));
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint '" + path.string() + "' has a corrupt header: " + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name = r.string(r.get<std::uint32_t>());
        const auto dtype = dtype_for(static_cast<DtypeCode>(r.get<std::uint8_t>()));
        const auto rank = r.get<std::uint32_t>();
        if (rank > 16)
            throw std::runtime_error("checkpoint '" + path.string() + "' is corrupt (rank)");
        std::vector<std::int64_t> dims(rank);
        for (auto& d : dims)
            d = r.get<std::int64_t>();
        auto t = torch::empty(dims, dtype);
        const auto nbytes = r.get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size())
            throw std::runtime_error("checkpoint '" + path.string() + "' is corrupt (size of '" + name + "')");
        r.bytes(t.data_ptr(), nbytes);
        file.tensors.emplace_back(std::move(name), std::move(t));
    }
    return file;
}

json model_config_to_json(const ModelConfig& c)
{
    return {{"image_size", c.image_size},         {"id_dim", c.id_dim},
            {"feature_channels", c.feature_channels}, {"num_blocks", c.num_blocks},
            {"id_width", c.id_width},             {"extractor_width", c.extractor_width},
            {"disc_width", c.disc_width},         {"message_bits", c.message_bits}};
}

ModelConfig model_config_from_json(const json& j)
{
    ModelConfig c;
    const std::pair<const char*, std::int64_t*> fields[] = {
        {"image_size", &c.image_size}, {"id_dim", &c.id_dim},
        {"feature_channels", &c.feature_channels}, {"num_blocks", &c.num_blocks},
        {"id_width", &c.id_width}, {"extractor_width", &c.extractor_width},
        {"disc_width", &c.disc_width}, {"message_bits", &c.message_bits}};
    if (!j.is_object())
        throw std::invalid_argument("model config must be an object");
    std::set<std::string> known;
    for (const auto& [key, field] : fields) {
        known.insert(key);
        if (j.contains(key))
            *field = j.at(key).get<std::int64_t>();
    }
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("model config: unknown key '" + key + "'");
    c.validate();
    return c;
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(torch::nn::Module& module)
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : module.named_parameters(true))
        out.emplace_back(item.key(), item.value());
    for (const auto& item : module.named_buffers(true))
        out.emplace_back(item.key(), item.value());
    return out;
}

void load_named_state(torch::nn::Module& module, const CheckpointFile& file, const std::string& prefix)
{
    torch::NoGradGuard no_grad;
    for (auto& [name, target] : named_state(module)) {
        const auto key = prefix + name;
        if (!file.contains(key))
            throw std::runtime_error("checkpoint is missing '" + key + "'");
        const auto& src = file.at(key);
        if (src.sizes() != target.sizes() || src.scalar_type() != target.scalar_type())
            throw std::runtime_error("checkpoint tensor '" + key + "' has mismatched shape or dtype");
        target.copy_(src);
    }
}

void save_bundle(ModelBundle& bundle, const fs::path& path, const json& extra)
{
    CheckpointFile file;
    file.header = extra;
    file.header["kind"] = "model";
    file.header["model"] = model_config_to_json(bundle->config());
    file.header["layout"] = bundle->layout().to_string();
    file.header["lambda"] = bundle->lambda();
    file.tensors = named_state(*bundle);
    write_checkpoint(path, file);
}

namespace {

ModelBundle bundle_from_header(const json& header, const fs::path& path)
{
    try {
        const auto config = model_config_from_json(header.at("model"));
        auto layout = EmbeddingLayout::parse(header.at("layout").get<std::string>(), config.num_blocks);
        return ModelBundle(config, layout, header.at("lambda").get<double>());
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint '" + path.string() + "': bad header: " + e.what());
    }
}

}  // namespace

ModelBundle load_bundle(const fs::path& path)
{
    auto file = read_checkpoint(path);
    const auto kind = file.header.value("kind", std::string{});
    if (kind != "model" && kind != "train_state")
        throw std::runtime_error("checkpoint '" + path.string() + "' holds '" + kind + "', expected a model");
    auto bundle = bundle_from_header(file.header, path);
    load_named_state(*bundle, file, kind == "train_state" ? "bundle." : "");
    bundle->freeze_identity_extractor();
    bundle->eval();
    return bundle;
}

void save_identity_extractor(IdentityExtractor& extractor, const ModelConfig& config, const fs::path& path,
                             const json& extra)
{
    CheckpointFile file;
    file.header = extra;
    file.header["kind"] = "identity_extractor";
    file.header["image_size"] = config.image_size;
    file.header["id_dim"] = config.id_dim;
    file.header["id_width"] = config.id_width;
    file.tensors = named_state(*extractor);
    write_checkpoint(path, file);
}

void load_identity_extractor(ModelBundle& bundle, const fs::path& path)
{
    auto file = read_checkpoint(path);
    if (file.header.value("kind", std::string{}) != "identity_extractor")
        throw std::runtime_error("'" + path.string() + "' is not an identity-extractor checkpoint");
    const auto& cfg = bundle->config();
    if (file.header.value("id_dim", std::int64_t{-1}) != cfg.id_dim ||
        file.header.value("id_width", std::int64_t{-1}) != cfg.id_width ||
        file.header.value("image_size", std::int64_t{-1}) != cfg.image_size)
        throw std::runtime_error("identity-extractor checkpoint '" + path.string() +
                                 "' does not match the model geometry (image_size/id_dim/id_width)");
    load_named_state(*bundle->identity_extractor(), file);
    bundle->freeze_identity_extractor();
}

}  // namespace idstego
