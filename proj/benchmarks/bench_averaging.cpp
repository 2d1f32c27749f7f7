// Throughput of the streaming mean across checkpoint counts and sizes.

#include <benchmark/benchmark.h>

#include <memory>

#include "xavg/averaging.hpp"
#include "xavg/rng.hpp"

using namespace xavg;

namespace {

std::vector<CheckpointRef> make_refs(std::size_t k, std::size_t elems) {
    SplitMix64 rng(7);
    std::vector<CheckpointRef> refs;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<float> values(elems);
        for (float& v : values) v = static_cast<float>(rng.next_uniform(-1.0, 1.0));
        auto cp = std::make_shared<Checkpoint>();
        cp->add("w", TensorData::from_f32({elems}, values));
        refs.push_back(CheckpointRef::from_memory(cp));
    }
    return refs;
}

}  // namespace

static void BM_StreamingMean(benchmark::State& state) {
    auto refs = make_refs(static_cast<std::size_t>(state.range(0)),
                          static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) {
        Checkpoint mean = streaming_mean(refs);
        benchmark::DoNotOptimize(mean);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_StreamingMean)->Args({2, 1 << 12})->Args({8, 1 << 12})->Args({8, 1 << 16})->Args({32, 1 << 16});

BENCHMARK_MAIN();
