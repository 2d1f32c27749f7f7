#include "xavg/averaging.hpp"

#include <cmath>
#include <cstring>
#include <memory>

namespace xavg {

void SnapshotSet::validate() const {
    if (snapshots.empty()) throw ValidationError("run '" + run_id + "' has no snapshots");
    if (total_steps == 0) throw ValidationError("run '" + run_id + "' has zero total steps");
    std::uint64_t prev = 0;
    for (const auto& [step, ref] : snapshots) {
        if (step <= prev) {
            throw ValidationError("run '" + run_id + "' snapshot steps must be strictly increasing");
        }
        prev = step;
    }
    if (prev != total_steps) {
        throw ValidationError("run '" + run_id + "' must end with a snapshot at step " +
                              std::to_string(total_steps));
    }
    std::vector<CheckpointRef> refs;
    refs.reserve(snapshots.size());
    for (const auto& [step, ref] : snapshots) refs.push_back(ref);
    check_compatible(refs);
}

const CheckpointRef& SnapshotSet::last() const {
    if (snapshots.empty()) throw ValidationError("run '" + run_id + "' has no snapshots");
    return snapshots.back().second;
}

const CheckpointRef& SnapshotSet::at_step(std::uint64_t step) const {
    for (const auto& [s, ref] : snapshots) {
        if (s == step) return ref;
    }
    throw ValidationError("run '" + run_id + "' has no snapshot at step " + std::to_string(step));
}

AveragingVariant averaging_variant_from_name(const std::string& name) {
    if (name == "ca") return AveragingVariant::CA;
    if (name == "ra-last") return AveragingVariant::RA_LAST;
    if (name == "ra-ca") return AveragingVariant::RA_CA;
    if (name == "soup-last") return AveragingVariant::SOUP_LAST;
    if (name == "soup-ca") return AveragingVariant::SOUP_CA;
    throw ValidationError("unknown averaging variant '" + name + "'");
}

std::string averaging_variant_name(AveragingVariant v) {
    switch (v) {
        case AveragingVariant::CA: return "ca";
        case AveragingVariant::RA_LAST: return "ra-last";
        case AveragingVariant::RA_CA: return "ra-ca";
        case AveragingVariant::SOUP_LAST: return "soup-last";
        case AveragingVariant::SOUP_CA: return "soup-ca";
    }
    return "?";
}

void check_compatible(std::span<const CheckpointRef> refs) {
    if (refs.empty()) throw ValidationError("no checkpoints to compare");
    const auto& base = refs.front().specs();
    for (std::size_t i = 1; i < refs.size(); ++i) {
        const auto& other = refs[i].specs();
        // Both spec lists are lexicographic, so one linear walk finds the
        // first divergence and can name it.
        std::size_t a = 0, b = 0;
        while (a < base.size() && b < other.size()) {
            if (base[a].name != other[b].name) {
                const std::string& missing = base[a].name < other[b].name ? base[a].name : other[b].name;
                throw IncompatibleError(IncompatibleError::Kind::NameSet, missing,
                                        "tensor '" + missing + "' is not present in every checkpoint");
            }
            if (base[a].dtype != other[b].dtype) {
                throw IncompatibleError(IncompatibleError::Kind::Dtype, base[a].name,
                                        "tensor '" + base[a].name + "' has mismatched dtypes");
            }
            if (base[a].shape != other[b].shape) {
                throw IncompatibleError(IncompatibleError::Kind::Shape, base[a].name,
                                        "tensor '" + base[a].name + "' has mismatched shapes");
            }
            ++a;
            ++b;
        }
        if (a < base.size() || b < other.size()) {
            const std::string& missing = a < base.size() ? base[a].name : other[b].name;
            throw IncompatibleError(IncompatibleError::Kind::NameSet, missing,
                                    "tensor '" + missing + "' is not present in every checkpoint");
        }
    }
}

namespace {

TensorData mean_tensor(std::span<const CheckpointRef> refs, const TensorSpec& spec) {
    const std::size_t n = static_cast<std::size_t>(spec.numel());
    const double k = static_cast<double>(refs.size());

    std::vector<double> acc(n, 0.0);
    for (const CheckpointRef& ref : refs) {
        TensorData t = ref.read(spec.name);
        if (spec.dtype == Dtype::F32) {
            auto vals = t.as_f32();
            for (std::size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(vals[i]);
        } else {
            auto vals = t.as_f64();
            for (std::size_t i = 0; i < n; ++i) acc[i] += vals[i];
        }
    }
    for (double& v : acc) v /= k;

    if (spec.dtype == Dtype::F32) {
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i]);
        return TensorData::from_f32(spec.shape, out);
    }
    return TensorData::from_f64(spec.shape, acc);
}

}  // namespace

Checkpoint streaming_mean(std::span<const CheckpointRef> refs) {
    check_compatible(refs);

    Checkpoint out;
    for (const TensorSpec& spec : refs.front().specs()) {
        if (dtype_is_floating(spec.dtype)) {
            out.add(spec.name, mean_tensor(refs, spec));
        } else {
            out.add(spec.name, refs.front().read(spec.name));
        }
    }
    for (const auto& [key, value] : refs.front().metadata()) out.set_metadata(key, value);
    return out;
}

Checkpoint average_run_ca(const SnapshotSet& run) {
    run.validate();
    std::vector<CheckpointRef> refs;
    refs.reserve(run.snapshots.size());
    for (const auto& [step, ref] : run.snapshots) refs.push_back(ref);
    return streaming_mean(refs);
}

Checkpoint average_runs(const RunSet& runs, AveragingVariant variant) {
    if (runs.runs.empty()) throw ValidationError("run set is empty");
    if (variant == AveragingVariant::CA) {
        throw ValidationError("variant 'ca' averages within a run; use average_run_ca");
    }

    std::vector<CheckpointRef> refs;
    refs.reserve(runs.runs.size());
    if (variant == AveragingVariant::RA_LAST || variant == AveragingVariant::SOUP_LAST) {
        for (const SnapshotSet& run : runs.runs) {
            run.validate();
            refs.push_back(run.last());
        }
    } else {
        for (const SnapshotSet& run : runs.runs) {
            auto ca = std::make_shared<Checkpoint>(average_run_ca(run));
            refs.push_back(CheckpointRef::from_memory(std::move(ca), "<ca:" + run.run_id + ">"));
        }
    }
    return streaming_mean(refs);
}

}  // namespace xavg
