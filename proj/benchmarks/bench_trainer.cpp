// Steps-per-second of the deterministic trainer.

#include <benchmark/benchmark.h>

#include <filesystem>

#include "xavg/synth_task.hpp"
#include "xavg/trainer.hpp"

using namespace xavg;

namespace {

TrainData bench_data() {
    TaskSpec task;
    task.n_classes = 3;
    task.feature_dim = 8;
    task.seed = 5;
    task.sizes = {{Role::TRAIN, 128}};
    task.languages.push_back({"src", identity_rotation(8), std::vector<double>(8, 0.0), 0.0});
    task.languages.push_back({"trg", plane_rotation(8, 0, 1, 0.6), std::vector<double>(8, 0.1), 0.05});
    return by_language(generate_task(task).at(Role::TRAIN));
}

}  // namespace

static void BM_TrainRun(benchmark::State& state) {
    TrainData data = bench_data();
    ModelSpec spec{ModelFamily::MLP, 8, 3, static_cast<std::size_t>(state.range(0))};
    TrainConfig config;
    config.total_steps = 64;
    config.snapshots = 4;
    config.peak_lr = 0.02;
    config.seed = 9;
    const auto dir = std::filesystem::temp_directory_path() / "xavg-bench-run";

    for (auto _ : state) {
        SnapshotSet run = train_run(config, spec, data, make_schedule(64, 4), dir);
        benchmark::DoNotOptimize(run);
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainRun)->Arg(8)->Arg(32);

BENCHMARK_MAIN();
