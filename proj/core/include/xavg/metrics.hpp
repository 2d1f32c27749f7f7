#ifndef XAVG_METRICS_HPP
#define XAVG_METRICS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xavg {

/// Sequence of class labels, with an optional designated "outside" class
/// for tagging-style evaluation.
struct LabelSeq {
    std::vector<int> labels;
    std::optional<int> outside;
};

/// Answer span as normalized tokens (already lowercased, punctuation
/// stripped). Empty means no-answer.
struct SpanAnswer {
    std::vector<std::string> tokens;
};

/// Fraction of positions where pred and gold match exactly.
double accuracy(const LabelSeq& pred, const LabelSeq& gold);

/// Micro token-level F1. With ignore_outside set, positions labeled with
/// the outside class count as negatives (tagging mode); without it the
/// micro F1 over all classes equals accuracy. Both sequences all-outside
/// scores 1.0 (no positives anywhere).
double token_f1(const LabelSeq& pred, const LabelSeq& gold, bool ignore_outside);

/// Bag-of-tokens overlap F1. Both empty -> 1.0; exactly one empty -> 0.0.
double span_f1(const SpanAnswer& pred, const SpanAnswer& gold);

/// Per-language scores plus their mean and cross-seed standard deviation.
struct MetricReport {
    std::map<std::string, std::vector<double>> per_language;  // language -> per-seed scores
    double mean = 0.0;
    double std_dev = 0.0;
};

/// Aggregates per-seed, per-language scores: each seed is reduced to its
/// language mean; the report's mean averages those, and std_dev is their
/// sample (n-1) standard deviation, 0 for a single seed. Every seed must
/// cover the same language set.
MetricReport aggregate(const std::map<std::uint64_t, std::map<std::string, double>>& per_seed);

/// How few-shot sweeps combine seeds nested inside shot sets:
/// PER_SHOT_SET aggregates seeds within each shot set and then averages
/// the per-set means and deviations; POOLED treats every (shot set, seed)
/// run as one observation.
enum class Grouping { PER_SHOT_SET, POOLED };

Grouping grouping_from_name(const std::string& name);
std::string grouping_name(Grouping g);

MetricReport aggregate_grouped(
    const std::map<std::uint64_t, std::map<std::uint64_t, std::map<std::string, double>>>&
        per_group_per_seed,
    Grouping grouping);

std::string metric_report_to_json(const MetricReport& report);

/// One CSV block per report: "strategy,shots,language,mean,std" rows with
/// per-language mean and sample deviation across seeds.
std::string metric_report_csv_header();
std::string metric_report_to_csv_rows(const MetricReport& report, const std::string& strategy,
                                      std::uint64_t shots);

}  // namespace xavg

#endif  // XAVG_METRICS_HPP
