#include "idstego/checkpoint.hpp"
#include "idstego/image_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace idstego;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("idstego_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig small_config()
{
    ModelConfig c;
    c.image_size = 32;
    c.id_dim = 16;
    c.feature_channels = 16;
    c.id_width = 8;
    c.extractor_width = 8;
    c.disc_width = 8;
    c.message_bits = 18;
    return c;
}

}  // namespace

TEST(Checkpoint, RawRoundTripIsBitExact)
{
    const auto dir = scratch("raw");
    CheckpointFile f;
    f.header = {{"kind", "test"}, {"value", 3}};
    f.tensors.emplace_back("a", torch::randn({3, 4}));
    f.tensors.emplace_back("b", torch::randn({2}, torch::kFloat64));
    f.tensors.emplace_back("c", torch::arange(5, torch::kInt64));
    f.tensors.emplace_back("scalar", torch::tensor(1.5));
    write_checkpoint(dir / "x.ckpt", f);
    const auto g = read_checkpoint(dir / "x.ckpt");
    EXPECT_EQ(g.header, f.header);
    ASSERT_EQ(g.tensors.size(), f.tensors.size());
    for (std::size_t i = 0; i < f.tensors.size(); ++i) {
        EXPECT_EQ(g.tensors[i].first, f.tensors[i].first);
        EXPECT_TRUE(torch::equal(g.tensors[i].second, f.tensors[i].second));
        EXPECT_EQ(g.tensors[i].second.scalar_type(), f.tensors[i].second.scalar_type());
    }
    EXPECT_TRUE(g.contains("b"));
    EXPECT_THROW(g.at("missing"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Checkpoint, RejectsForeignTruncatedAndMissingFiles)
{
    const auto dir = scratch("bad");
    write_text_file(dir / "not.ckpt", "hello world, definitely not a checkpoint");
    EXPECT_THROW(read_checkpoint(dir / "not.ckpt"), std::runtime_error);
    EXPECT_THROW(read_checkpoint(dir / "absent.ckpt"), std::runtime_error);

    CheckpointFile f;
    f.tensors.emplace_back("a", torch::randn({64}));
    write_checkpoint(dir / "ok.ckpt", f);
    const auto size = fs::file_size(dir / "ok.ckpt");
    fs::resize_file(dir / "ok.ckpt", size - 10);
    EXPECT_THROW(read_checkpoint(dir / "ok.ckpt"), std::runtime_error);

    // Version field sits right after the 8-byte magic.
    write_checkpoint(dir / "v.ckpt", f);
    {
        std::fstream fsx(dir / "v.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        fsx.seekp(8);
        const std::uint32_t v = kCheckpointVersion + 1;
        fsx.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    EXPECT_THROW(read_checkpoint(dir / "v.ckpt"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Checkpoint, BundleRoundTripIsBitExact)
{
    const auto dir = scratch("bundle");
    const auto cfg = small_config();
    auto a = make_bundle(cfg, EmbeddingLayout::parse("1-9:1-4,10-18:5-9"), 0.1, 4);
    save_bundle(a, dir / "m.ckpt", {{"note", "x"}});
    auto b = load_bundle(dir / "m.ckpt");
    EXPECT_EQ(b->layout(), a->layout());
    EXPECT_EQ(b->lambda(), 0.1);
    EXPECT_EQ(model_config_to_json(b->config()), model_config_to_json(cfg));
    const auto sa = named_state(*a), sb = named_state(*b);
    ASSERT_EQ(sa.size(), sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        EXPECT_EQ(sa[i].first, sb[i].first);
        EXPECT_TRUE(torch::equal(sa[i].second, sb[i].second)) << sa[i].first;
    }
    a->eval();
    b->eval();
    torch::NoGradGuard g;
    RngState rng(1, "ckpt");
    const auto frame = rng.uniform_tensor({3, 32, 32});
    EXPECT_TRUE(torch::equal(extract_message(a, frame), extract_message(b, frame)));

    // A model checkpoint is not an identity-extractor checkpoint.
    EXPECT_THROW(load_identity_extractor(b, dir / "m.ckpt"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Checkpoint, IdentityExtractorRoundTripFreezes)
{
    const auto dir = scratch("idx");
    const auto cfg = small_config();
    auto src = make_bundle(cfg, EmbeddingLayout::standard(18), 0.01, 1);
    save_identity_extractor(src->identity_extractor(), cfg, dir / "id.ckpt");
    auto dst = make_bundle(cfg, EmbeddingLayout::standard(18), 0.01, 2);
    load_identity_extractor(dst, dir / "id.ckpt");
    const auto ps = src->identity_extractor()->parameters(), pd = dst->identity_extractor()->parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT_TRUE(torch::equal(ps[i], pd[i]));
        EXPECT_FALSE(pd[i].requires_grad());
    }
    auto other = cfg;
    other.id_dim = 32;
    auto mismatched = make_bundle(other, EmbeddingLayout::standard(18), 0.01, 2);
    EXPECT_THROW(load_identity_extractor(mismatched, dir / "id.ckpt"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(ModelConfigJson, StrictKeys)
{
    auto j = model_config_to_json(small_config());
    EXPECT_EQ(model_config_to_json(model_config_from_json(j)), j);
    j["extra"] = 1;
    EXPECT_THROW(model_config_from_json(j), std::invalid_argument);
}

TEST(ImageIo, PngRoundTrips)
{
    const auto dir = scratch("png");
    RngState rng(2, "png");
    const auto q8 = torch::round(rng.uniform_tensor({3, 16, 32}) * 255) / 255;
    write_png(dir / "a.png", q8, 8);
    EXPECT_TRUE(torch::allclose(read_png(dir / "a.png"), q8, 0, 1e-6));

    const auto q16 = torch::round(rng.uniform_tensor({3, 16, 16}, 0, 1, torch::kFloat64) * 65535) / 65535;
    write_png(dir / "b.png", q16, 16);
    EXPECT_LT((read_png(dir / "b.png").to(torch::kFloat64) - q16).abs().max().item<double>(), 1e-7);
    EXPECT_THROW(write_png(dir / "c.png", q8, 12), std::invalid_argument);
    EXPECT_THROW(read_png(dir / "missing.png"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(ImageIo, FrameFolderRoundTrip)
{
    const auto dir = scratch("folder");
    RngState rng(3, "folder");
    VideoArray v{torch::round(rng.uniform_tensor({3, 3, 16, 16}) * 65535) / 65535, 30.0};
    write_frame_folder(dir / "clip", v, 16, {{"note", "hi"}});
    const auto back = read_frame_folder(dir / "clip");
    EXPECT_EQ(back.video.num_frames(), 3);
    EXPECT_EQ(back.video.frame_rate, 30.0);
    EXPECT_EQ(back.manifest.at("note"), "hi");
    EXPECT_LT((back.video.frames - v.frames).abs().max().item<double>(), 1e-6);
    EXPECT_THROW(read_frame_folder(dir / "nothing"), std::runtime_error);
    fs::remove_all(dir);
}
