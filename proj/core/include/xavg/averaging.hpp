#ifndef XAVG_AVERAGING_HPP
#define XAVG_AVERAGING_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xavg/tensor_store.hpp"

namespace xavg {

/// Ordered snapshots of one training run. Steps are strictly increasing
/// and the final snapshot sits at total_steps.
struct SnapshotSet {
    std::string run_id;
    std::uint64_t total_steps = 0;
    std::vector<std::pair<std::uint64_t, CheckpointRef>> snapshots;

    void validate() const;  // throws ValidationError
    std::size_t count() const { return snapshots.size(); }
    const CheckpointRef& last() const;
    const CheckpointRef& at_step(std::uint64_t step) const;  // throws ValidationError
};

/// CA averages within a run; RA_* across runs; SOUP_* are the same
/// arithmetic as RA_* but record that the input runs varied
/// hyperparameters rather than only seeds.
enum class AveragingVariant { CA, RA_LAST, RA_CA, SOUP_LAST, SOUP_CA };

AveragingVariant averaging_variant_from_name(const std::string& name);  // "ca", "ra-last", ...
std::string averaging_variant_name(AveragingVariant v);

struct RunSet {
    std::vector<SnapshotSet> runs;
};

/// Succeeds iff all refs expose identical (name, dtype, shape) tables.
/// Throws IncompatibleError naming the offending tensor otherwise.
void check_compatible(std::span<const CheckpointRef> refs);

/// Uniform mean of K compatible checkpoints. Floating tensors are
/// accumulated in 64-bit precision, divided by K once, and cast back to
/// the stored dtype. Non-floating tensors are copied from the FIRST
/// checkpoint. Memory stays bounded by one accumulator plus one input
/// tensor; inputs are read lazily per tensor.
Checkpoint streaming_mean(std::span<const CheckpointRef> refs);

/// Mean over all k snapshots of a run.
Checkpoint average_run_ca(const SnapshotSet& run);

/// RA_LAST / SOUP_LAST: mean of the R final snapshots.
/// RA_CA / SOUP_CA: mean of the R per-run CA results.
Checkpoint average_runs(const RunSet& runs, AveragingVariant variant);

}  // namespace xavg

#endif  // XAVG_AVERAGING_HPP
