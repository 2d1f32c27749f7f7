#include "xavg/snapshot_policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

#include <json.hpp>

namespace xavg {

using ordered_json = nlohmann::ordered_json;

bool SnapshotSchedule::is_snapshot_step(std::uint64_t step) const {
    return std::binary_search(steps.begin(), steps.end(), step);
}

SnapshotSchedule make_schedule(std::uint64_t total_steps, std::uint64_t count) {
    if (count == 0) throw ValidationError("snapshot count must be positive");
    if (count > total_steps) {
        throw ValidationError("snapshot count " + std::to_string(count) +
                              " exceeds total steps " + std::to_string(total_steps));
    }
    SnapshotSchedule schedule;
    schedule.total_steps = total_steps;
    schedule.steps.reserve(count);
    for (std::uint64_t j = 0; j < count; ++j) {
        schedule.steps.push_back((j + 1) * total_steps / count);
    }
    schedule.steps.back() = total_steps;
    for (std::size_t i = 1; i < schedule.steps.size(); ++i) {
        // Unreachable for count <= total_steps; duplicates are rejected
        // rather than repaired.
        if (schedule.steps[i] <= schedule.steps[i - 1]) {
            throw ValidationError("schedule steps collide for T=" + std::to_string(total_steps) +
                                  ", k=" + std::to_string(count));
        }
    }
    return schedule;
}

SelectionStrategy selection_strategy_from_name(const std::string& name) {
    if (name == "last") return SelectionStrategy::LAST;
    if (name == "src-dev") return SelectionStrategy::SRC_DEV;
    if (name == "trg-dev") return SelectionStrategy::TRG_DEV;
    if (name == "ca") return SelectionStrategy::CA;
    throw ValidationError("unknown selection strategy '" + name + "'");
}

std::string selection_strategy_name(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::LAST: return "last";
        case SelectionStrategy::SRC_DEV: return "src-dev";
        case SelectionStrategy::TRG_DEV: return "trg-dev";
        case SelectionStrategy::CA: return "ca";
    }
    return "?";
}

std::string split_name(Split s) {
    switch (s) {
        case Split::SOURCE_DEV: return "source_dev";
        case Split::TARGET_DEV: return "target_dev";
        case Split::TARGET_TEST: return "target_test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "source_dev") return Split::SOURCE_DEV;
    if (name == "target_dev") return Split::TARGET_DEV;
    if (name == "target_test") return Split::TARGET_TEST;
    throw ValidationError("unknown split '" + name + "'");
}

std::string eval_records_to_jsonl(std::span<const EvalRecord> records) {
    std::string out;
    for (const EvalRecord& r : records) {
        ordered_json line = ordered_json::object();
        line["step"] = r.step;
        line["split"] = split_name(r.split);
        ordered_json scores = ordered_json::object();
        for (const auto& [lang, value] : r.scores) scores[lang] = value;
        line["scores"] = std::move(scores);
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::vector<EvalRecord> eval_records_from_jsonl(std::istream& in) {
    std::vector<EvalRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const ordered_json::parse_error& e) {
            throw ValidationError("eval record line " + std::to_string(line_no) +
                                  " is not valid JSON: " + e.what());
        }
        EvalRecord r;
        if (!j.is_object() || !j.contains("step") || !j.contains("split") || !j.contains("scores")) {
            throw ValidationError("eval record line " + std::to_string(line_no) +
                                  " is missing step/split/scores");
        }
        r.step = j["step"].get<std::uint64_t>();
        r.split = split_from_name(j["split"].get<std::string>());
        for (const auto& [lang, value] : j["scores"].items()) {
            if (lang.empty()) throw ValidationError("eval record has an empty language code");
            double v = value.get<double>();
            if (!std::isfinite(v)) throw ValidationError("eval record score for '" + lang + "' is not finite");
            r.scores[lang] = v;
        }
        records.push_back(std::move(r));
    }
    return records;
}

namespace {

/// step -> scores for one split, restricted to scheduled snapshot steps.
std::map<std::uint64_t, const std::map<std::string, double>*> records_by_step(
    std::span<const EvalRecord> records, Split split, const SnapshotSet& run) {
    std::map<std::uint64_t, const std::map<std::string, double>*> by_step;
    for (const EvalRecord& r : records) {
        if (r.split != split) continue;
        bool scheduled = false;
        for (const auto& [step, ref] : run.snapshots) {
            if (step == r.step) {
                scheduled = true;
                break;
            }
        }
        if (scheduled) by_step[r.step] = &r.scores;
    }
    for (const auto& [step, ref] : run.snapshots) {
        if (by_step.find(step) == by_step.end()) {
            throw ValidationError("no " + split_name(split) + " record for snapshot step " +
                                  std::to_string(step));
        }
    }
    return by_step;
}

double mean_score(const std::map<std::string, double>& scores) {
    if (scores.empty()) throw ValidationError("eval record has no language scores");
    double sum = 0.0;
    for (const auto& [lang, v] : scores) sum += v;
    return sum / static_cast<double>(scores.size());
}

}  // namespace

SelectionResult select(SelectionStrategy strategy, const SnapshotSet& run,
                       std::span<const EvalRecord> records) {
    run.validate();
    switch (strategy) {
        case SelectionStrategy::LAST: {
            return SelectedSnapshot{run.snapshots.back().first, run.last()};
        }
        case SelectionStrategy::CA: {
            return average_run_ca(run);
        }
        case SelectionStrategy::SRC_DEV: {
            auto by_step = records_by_step(records, Split::SOURCE_DEV, run);
            std::uint64_t best_step = 0;
            double best = 0.0;
            bool first = true;
            for (const auto& [step, scores] : by_step) {
                double v = mean_score(*scores);
                if (first || v > best || (v == best && step > best_step)) {
                    best = v;
                    best_step = step;
                    first = false;
                }
            }
            return SelectedSnapshot{best_step, run.at_step(best_step)};
        }
        case SelectionStrategy::TRG_DEV: {
            auto by_step = records_by_step(records, Split::TARGET_DEV, run);
            // Every language must be scored at every snapshot step.
            const std::map<std::string, double>& languages = *by_step.begin()->second;
            for (const auto& [step, scores] : by_step) {
                if (scores->size() != languages.size()) {
                    throw ValidationError("target_dev records disagree on the language set at step " +
                                          std::to_string(step));
                }
            }
            std::map<std::string, SelectedSnapshot> chosen;
            for (const auto& [lang, unused] : languages) {
                std::uint64_t best_step = 0;
                double best = 0.0;
                bool first = true;
                for (const auto& [step, scores] : by_step) {
                    auto it = scores->find(lang);
                    if (it == scores->end()) {
                        throw ValidationError("language '" + lang + "' has no target_dev score at step " +
                                              std::to_string(step));
                    }
                    double v = it->second;
                    if (first || v > best || (v == best && step > best_step)) {
                        best = v;
                        best_step = step;
                        first = false;
                    }
                }
                chosen.emplace(lang, SelectedSnapshot{best_step, run.at_step(best_step)});
            }
            return chosen;
        }
    }
    throw ValidationError("unknown selection strategy");
}

}  // namespace xavg
