#include "idstego/attacking_layer.hpp"
#include "idstego/evaluation.hpp"
#include "idstego/networks.hpp"
#include "idstego/toy_data.hpp"
#include "idstego/training.hpp"

#include <benchmark/benchmark.h>

using namespace idstego;

namespace {

ModelConfig bench_config(std::int64_t size)
{
    ModelConfig c;
    c.image_size = size;
    c.id_dim = 64;
    c.feature_channels = 32;
    c.extractor_width = 32;
    c.disc_width = 32;
    return c;
}

void BM_DiffJpeg(benchmark::State& state)
{
    torch::set_num_threads(1);
    RngState rng(1, "bench-jpeg");
    const auto frames = rng.uniform_tensor({4, 3, state.range(0), state.range(0)});
    for (auto _ : state)
        benchmark::DoNotOptimize(diff_jpeg(frames, 50.0));
    state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_DiffJpeg)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DiffJpegBackward(benchmark::State& state)
{
    torch::set_num_threads(1);
    RngState rng(2, "bench-jpeg-grad");
    const auto frames = rng.uniform_tensor({4, 3, 64, 64}).requires_grad_();
    for (auto _ : state) {
        diff_jpeg(frames, 50.0).sum().backward();
        frames.mutable_grad().reset();
    }
}
BENCHMARK(BM_DiffJpegBackward)->Unit(benchmark::kMillisecond);

void BM_RenderAvatar(benchmark::State& state)
{
    RngState rng(3, "bench-render");
    const auto p = sample_attributes(rng, 5);
    for (auto _ : state)
        benchmark::DoNotOptimize(render_avatar(p, state.range(0), state.range(0)));
}
BENCHMARK(BM_RenderAvatar)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_GenerateStegoFrame(benchmark::State& state)
{
    torch::set_num_threads(1);
    torch::manual_seed(0);
    auto bundle = make_bundle(bench_config(64), EmbeddingLayout::standard(9), 1.0, 0);
    bundle->eval();
    torch::NoGradGuard no_grad;
    RngState rng(4, "bench-generate");
    const auto cover = rng.uniform_tensor({3, 64, 64}), reference = rng.uniform_tensor({3, 64, 64});
    const auto msg = random_message(rng, 9);
    for (auto _ : state)
        benchmark::DoNotOptimize(generate_stego_frame(bundle, cover, reference, msg));
}
BENCHMARK(BM_GenerateStegoFrame)->Unit(benchmark::kMillisecond);

void BM_ExtractMessage(benchmark::State& state)
{
    torch::set_num_threads(1);
    auto bundle = make_bundle(bench_config(64), EmbeddingLayout::standard(9), 1.0, 0);
    bundle->eval();
    torch::NoGradGuard no_grad;
    RngState rng(5, "bench-extract");
    const auto frame = rng.uniform_tensor({3, 64, 64});
    for (auto _ : state)
        benchmark::DoNotOptimize(extract_message(bundle, frame));
}
BENCHMARK(BM_ExtractMessage)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state)
{
    torch::set_num_threads(1);
    TrainConfig cfg;
    cfg.model = bench_config(64);
    cfg.batch_size = state.range(0);
    cfg.total_steps = 1000000;
    cfg.attack_start_fraction = 0.0;
    TrainState train_state(cfg, make_training_bundle(cfg, {}));
    for (auto _ : state) {
        state.PauseTiming();
        const auto batch = sample_frame_batch(train_state.data_rng, cfg.batch_size, 64);
        state.ResumeTiming();
        benchmark::DoNotOptimize(train_step(train_state, batch));
    }
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_LsbEmbed(benchmark::State& state)
{
    RngState rng(6, "bench-lsb");
    const VideoArray video{rng.uniform_tensor({8, 3, 64, 64}), 25.0};
    const auto msg = random_message(rng, 1024);
    for (auto _ : state)
        benchmark::DoNotOptimize(lsb_embed(video, msg, 7));
}
BENCHMARK(BM_LsbEmbed)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
