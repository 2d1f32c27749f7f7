#ifndef XAVG_HARNESS_HPP
#define XAVG_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xavg/metrics.hpp"
#include "xavg/synth_task.hpp"
#include "xavg/trainer.hpp"

namespace xavg {

enum class ExperimentMode { ZERO_SHOT, FEW_SHOT };

ExperimentMode experiment_mode_from_name(const std::string& name);
std::string experiment_mode_name(ExperimentMode m);

/// One soup configuration: runs vary the peak learning rate and the
/// scheduler switch. Divergent combinations are excluded simply by not
/// listing them.
struct SoupCell {
    double peak_lr = 0.0;
    bool scheduler = true;
};

struct ExperimentPlan {
    ExperimentMode mode = ExperimentMode::ZERO_SHOT;
    std::vector<std::uint64_t> seeds;
    std::vector<std::uint64_t> shot_counts;                      // few-shot only
    std::vector<std::uint64_t> shot_seeds = {42, 43, 44, 45, 46};
    std::vector<std::string> strategies;           // last | src-dev | trg-dev | ca | gs-last
    std::vector<std::string> averaging_variants;   // ra-last | ra-ca | soup-last | soup-ca
    std::uint64_t ensemble_runs = 0;               // R
    std::vector<SoupCell> soup_grid;
    bool include_naive_ra = false;  // adds "<variant>-naive" rows built without the freezing curriculum
    Grouping grouping = Grouping::PER_SHOT_SET;
    TrainConfig train;
    ModelSpec model;
    TaskSpec task;

    void validate() const;
};

ExperimentPlan plan_from_json(const std::string& text);
std::string plan_to_json(const ExperimentPlan& plan);

struct ResultRow {
    std::string strategy;
    std::uint64_t shots = 0;  // 0 in zero-shot mode
    double mean = 0.0;
    double std_dev = 0.0;
};

/// Rows keyed and sorted by (strategy, shots).
struct ResultTable {
    std::vector<ResultRow> rows;
};

using LangScores = std::map<std::string, double>;
using SeedScores = std::map<std::uint64_t, LangScores>;
using GroupScores = std::map<std::uint64_t, SeedScores>;  // shot-set -> seed -> language -> score

struct ExperimentResult {
    ExperimentPlan plan;
    ResultTable table;
    /// strategy -> shots -> per-run scores backing the table.
    std::map<std::string, std::map<std::uint64_t, GroupScores>> raw;
};

/// Runs the full sweep described by the plan: trains per seed (and shot
/// set in few-shot mode, where every run starts from one shared
/// source-trained checkpoint), evaluates every snapshot to build eval
/// records, materializes each strategy's checkpoint, scores target test,
/// and aggregates. Working files go under workdir. Nothing is emitted on
/// failure.
ExperimentResult run_experiment(const ExperimentPlan& plan, const std::filesystem::path& workdir);

enum class ReportFormat { CSV, JSON };

ReportFormat report_format_from_name(const std::string& name);

/// Byte-stable rendering: rows sorted by (strategy, shots), floats with
/// four decimal places.
std::string render_report(const ResultTable& table, ReportFormat format);

/// JSON rendering that also echoes the fully resolved plan.
std::string render_experiment_report(const ExperimentResult& result, ReportFormat format);

void emit_report(const ResultTable& table, const std::filesystem::path& destination, ReportFormat format);

/// Per-language CSV (strategy,shots,language,mean,std) over all runs.
std::string render_per_language_csv(const ExperimentResult& result);

/// Round-trip of an ExperimentResult for the `report` command.
std::string experiment_result_to_json(const ExperimentResult& result);
ExperimentResult experiment_result_from_json(const std::string& text);

}  // namespace xavg

#endif  // XAVG_HARNESS_HPP
