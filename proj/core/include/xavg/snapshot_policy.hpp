#ifndef XAVG_SNAPSHOT_POLICY_HPP
#define XAVG_SNAPSHOT_POLICY_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xavg/averaging.hpp"

namespace xavg {

/// Steps at which a run saves snapshots: floor((j+1)*T/k) for j = 0..k-1,
/// with the final entry at T.
struct SnapshotSchedule {
    std::uint64_t total_steps = 0;
    std::vector<std::uint64_t> steps;

    bool is_snapshot_step(std::uint64_t step) const;
};

SnapshotSchedule make_schedule(std::uint64_t total_steps, std::uint64_t count);

enum class SelectionStrategy { LAST, SRC_DEV, TRG_DEV, CA };

SelectionStrategy selection_strategy_from_name(const std::string& name);  // "last", "src-dev", ...
std::string selection_strategy_name(SelectionStrategy s);

enum class Split { SOURCE_DEV, TARGET_DEV, TARGET_TEST };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

/// Per-checkpoint, per-language metric values; the input to selection.
struct EvalRecord {
    std::uint64_t step = 0;
    Split split = Split::SOURCE_DEV;
    std::map<std::string, double> scores;  // language code -> value in [0, 1]
};

std::string eval_records_to_jsonl(std::span<const EvalRecord> records);
std::vector<EvalRecord> eval_records_from_jsonl(std::istream& in);

struct SelectedSnapshot {
    std::uint64_t step = 0;
    CheckpointRef ref;
};

/// LAST and SRC_DEV yield one snapshot; TRG_DEV yields one per target
/// language; CA yields an averaged checkpoint.
using SelectionResult =
    std::variant<SelectedSnapshot, std::map<std::string, SelectedSnapshot>, Checkpoint>;

/// Applies a selection strategy over the snapshots of one run.
/// SRC_DEV scores a step by the unweighted mean over its source_dev
/// languages; TRG_DEV takes each language's own argmax over target_dev
/// scores. Ties break toward the larger step. Only scheduled snapshot
/// steps are considered; SRC_DEV/TRG_DEV require records covering every
/// snapshot step.
SelectionResult select(SelectionStrategy strategy, const SnapshotSet& run,
                       std::span<const EvalRecord> records);

}  // namespace xavg

#endif  // XAVG_SNAPSHOT_POLICY_HPP
