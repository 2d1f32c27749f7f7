// Checkpoint file write/open/read throughput.

#include <benchmark/benchmark.h>

#include <filesystem>

#include "xavg/rng.hpp"
#include "xavg/tensor_store.hpp"

using namespace xavg;

namespace {

Checkpoint sized_checkpoint(std::size_t elems) {
    SplitMix64 rng(3);
    std::vector<float> values(elems);
    for (float& v : values) v = static_cast<float>(rng.next_uniform(-1.0, 1.0));
    Checkpoint cp;
    cp.add("w", TensorData::from_f32({elems}, values));
    return cp;
}

std::filesystem::path bench_path() {
    return std::filesystem::temp_directory_path() / "xavg-bench.safetensors";
}

}  // namespace

static void BM_WriteCheckpoint(benchmark::State& state) {
    Checkpoint cp = sized_checkpoint(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        write_checkpoint(cp, bench_path());
    }
    state.SetBytesProcessed(state.iterations() * state.range(0) * 4);
}
BENCHMARK(BM_WriteCheckpoint)->Arg(1 << 12)->Arg(1 << 18);

static void BM_OpenAndReadTensor(benchmark::State& state) {
    write_checkpoint(sized_checkpoint(static_cast<std::size_t>(state.range(0))), bench_path());
    for (auto _ : state) {
        CheckpointRef ref = open_checkpoint(bench_path());
        TensorData t = read_tensor(ref, "w");
        benchmark::DoNotOptimize(t);
    }
    state.SetBytesProcessed(state.iterations() * state.range(0) * 4);
}
BENCHMARK(BM_OpenAndReadTensor)->Arg(1 << 12)->Arg(1 << 18);

BENCHMARK_MAIN();
