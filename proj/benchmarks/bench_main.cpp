// Microbenchmarks for the hot paths: the denoiser forward pass, one reverse
// diffusion step, and the Frechet distance solve.

#include <benchmark/benchmark.h>

#include "dumotion/metrics.hpp"
#include "dumotion/model.hpp"
#include "dumotion/rng.hpp"
#include "dumotion/schedule.hpp"

using namespace dumotion;

namespace {

DUTransConfig bench_cfg(Index d, Index layers) {
    DUTransConfig mc;
    mc.d = d;
    mc.layers = layers;
    mc.decoder_layers = 1;
    mc.n_heads = 4;
    mc.biflow_layers = {(layers + 1) / 2};
    mc.d_f = 12;
    mc.d_b = 24;
    mc.d_c = 16;
    mc.d_s = 16;
    mc.max_frames = 128;
    mc.d_z = 16;
    return mc;
}

void bm_forward(benchmark::State& state) {
    const Index d = state.range(0);
    const Index n = state.range(1);
    const DUTransConfig mc = bench_cfg(d, 2);
    const Model<float> m = build_model<float>(mc, 7);
    Rng rng(11);
    const MatF face = rng.normal_matrix<float>(n, mc.d_f);
    const MatF body = rng.normal_matrix<float>(n, mc.d_b);
    const MatF content = rng.normal_matrix<float>(n, mc.d_c);
    const MatF rhythm = rng.normal_matrix<float>(n, 1);
    const MatF semantics = rng.normal_matrix<float>(n, mc.d_s);
    for (auto _ : state) {
        auto out = model_predict(m, face, body, content, rhythm, semantics, 10);
        benchmark::DoNotOptimize(out.hol0.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void bm_posterior_step(benchmark::State& state) {
    const NoiseSchedule sched = cosine_schedule(200);
    Rng rng(3);
    const MatF x_t = rng.normal_matrix<float>(60, 36);
    const MatF x0 = rng.normal_matrix<float>(60, 36);
    const MatF noise = rng.normal_matrix<float>(60, 36);
    for (auto _ : state) {
        MatF x = posterior_step(x0, x_t, 100, sched, noise);
        benchmark::DoNotOptimize(x.data());
    }
}

void bm_frechet(benchmark::State& state) {
    const Index k = state.range(0);
    Rng rng(17);
    const MatD a = rng.normal_matrix<double>(4 * k, k);
    const MatD b = rng.normal_matrix<double>(4 * k, k).array() + 0.3;
    const GaussianStats ga = fit_gaussian(a);
    const GaussianStats gb = fit_gaussian(b);
    for (auto _ : state) {
        double d = frechet_distance(ga, gb);
        benchmark::DoNotOptimize(d);
    }
}

}  // namespace

BENCHMARK(bm_forward)->Args({32, 40})->Args({64, 60})->Unit(benchmark::kMillisecond);
BENCHMARK(bm_posterior_step);
BENCHMARK(bm_frechet)->Arg(8)->Arg(32);

BENCHMARK_MAIN();
