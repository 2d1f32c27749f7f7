#ifndef XAVG_TRAINER_HPP
#define XAVG_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xavg/averaging.hpp"
#include "xavg/model.hpp"
#include "xavg/snapshot_policy.hpp"

namespace xavg {

/// Optimizer, schedule, batching, and curriculum knobs for one run.
struct TrainConfig {
    std::uint64_t total_steps = 0;
    std::uint64_t snapshots = 0;  // k
    double peak_lr = 0.0;
    double warmup_fraction = 0.1;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t per_language_quota = 4;
    std::uint64_t seed = 0;
    bool gradient_surgery = false;
    std::optional<std::string> freeze_classifier_from;
    bool scheduler = true;  // false: constant peak_lr everywhere

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& config);

/// Linear warmup to peak over W = round(warmup_fraction * T) steps, then
/// linear decay to exactly zero at step T. Steps are 1-based.
double lr_at(std::uint64_t step, const TrainConfig& config);

/// Unweighted mean of per-language losses.
double balanced_loss(const std::map<std::string, double>& per_language_losses);

/// Flat per-language gradients over the trainable parameters.
struct GradientSet {
    std::map<std::string, std::vector<double>> per_language;
};

/// Projects each non-holdout gradient g off the holdout gradient h
/// whenever g.h < 0: g <- g - (g.h/|h|^2) h. A zero-norm holdout skips
/// projection with a warning.
std::map<std::string, std::vector<double>> gs_project_each(const GradientSet& grads,
                                                           const std::string& holdout);

/// Mean of the projected non-holdout gradients; the holdout's own
/// gradient is excluded from the returned mean.
std::vector<double> gs_project(const GradientSet& grads, const std::string& holdout);

/// AdamW moments; step counter advances once per adamw_step call.
struct OptimizerState {
    std::uint64_t t = 0;
    NamedVectors m;
    NamedVectors v;

    static OptimizerState for_tensors(const NamedVectors& tensors);
};

/// Decoupled-weight-decay Adam update over the tensors present in grads.
/// Weight decay applies to *.weight tensors only, never to biases.
void adamw_step(ModelParams& params, const NamedVectors& grads, OptimizerState& state, double lr,
                const TrainConfig& config);

/// Language code -> training pool.
using TrainData = std::map<std::string, std::vector<Example>>;

/// Runs T deterministic steps of balanced-batch training, writing a
/// checkpoint at every scheduled step under run_dir (plus a run.json
/// manifest). Batches take per_language_quota examples from each
/// language; pools reshuffle once a pass cannot fill another batch. The
/// same config yields bitwise-identical snapshot files. init_from, when
/// given, replaces random initialization (its geometry must match spec).
SnapshotSet train_run(const TrainConfig& config, const ModelSpec& spec, const TrainData& data,
                      const SnapshotSchedule& schedule, const std::filesystem::path& run_dir,
                      const std::optional<Checkpoint>& init_from = std::nullopt);

struct CurriculumResult {
    SnapshotSet initial_run;  // trained unconstrained; supplies the frozen classifier
    RunSet ensemble;          // R runs with classifiers frozen to the initial run's final ones
};

/// Trains run 0 normally, then R more runs with distinct seeds whose
/// classifier tensors stay fixed to run 0's final classifier.
CurriculumResult aligned_ensemble_curriculum(const TrainConfig& base_config, std::size_t ensemble_runs,
                                             const ModelSpec& spec, const TrainData& data,
                                             const SnapshotSchedule& schedule,
                                             const std::filesystem::path& base_dir);

/// Reconstructs a SnapshotSet from a run directory's manifest.
SnapshotSet load_run(const std::filesystem::path& run_dir);

}  // namespace xavg

#endif  // XAVG_TRAINER_HPP
