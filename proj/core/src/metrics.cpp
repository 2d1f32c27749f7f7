#include "xavg/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "xavg/errors.hpp"

namespace xavg {

using ordered_json = nlohmann::ordered_json;

namespace {

double sample_std(const std::vector<double>& values, double mean) {
    if (values.size() < 2) return 0.0;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double mean_of(const std::vector<double>& values) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

std::string format4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

double accuracy(const LabelSeq& pred, const LabelSeq& gold) {
    if (pred.labels.size() != gold.labels.size()) {
        throw ValidationError("accuracy: sequences have different lengths");
    }
    if (gold.labels.empty()) throw ValidationError("accuracy: empty sequences");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.labels.size(); ++i) {
        if (pred.labels[i] == gold.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(gold.labels.size());
}

double token_f1(const LabelSeq& pred, const LabelSeq& gold, bool ignore_outside) {
    if (pred.labels.size() != gold.labels.size()) {
        throw ValidationError("token_f1: sequences have different lengths");
    }
    if (gold.labels.empty()) throw ValidationError("token_f1: empty sequences");

    std::optional<int> outside;
    if (ignore_outside) {
        outside = gold.outside ? gold.outside : pred.outside;
        if (!outside) throw ValidationError("token_f1: ignore_outside set but no outside class designated");
    }

    std::size_t tp = 0, pred_pos = 0, gold_pos = 0;
    for (std::size_t i = 0; i < gold.labels.size(); ++i) {
        bool p_pos = !outside || pred.labels[i] != *outside;
        bool g_pos = !outside || gold.labels[i] != *outside;
        if (p_pos) ++pred_pos;
        if (g_pos) ++gold_pos;
        if (p_pos && g_pos && pred.labels[i] == gold.labels[i]) ++tp;
    }

    if (pred_pos == 0 && gold_pos == 0) return 1.0;  // no positives anywhere
    // 2*TP/(PP+GP) is the micro F1 2PR/(P+R) in a single exact division,
    // so the no-ignore case reproduces accuracy bit for bit.
    return 2.0 * static_cast<double>(tp) / static_cast<double>(pred_pos + gold_pos);
}

double span_f1(const SpanAnswer& pred, const SpanAnswer& gold) {
    if (pred.tokens.empty() && gold.tokens.empty()) return 1.0;
    if (pred.tokens.empty() || gold.tokens.empty()) return 0.0;

    std::map<std::string, std::size_t> counts;
    for (const std::string& t : gold.tokens) ++counts[t];
    std::size_t overlap = 0;
    for (const std::string& t : pred.tokens) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return 2.0 * static_cast<double>(overlap) /
           static_cast<double>(pred.tokens.size() + gold.tokens.size());
}

MetricReport aggregate(const std::map<std::uint64_t, std::map<std::string, double>>& per_seed) {
    if (per_seed.empty()) throw ValidationError("aggregate: no seeds");

    const auto& languages = per_seed.begin()->second;
    if (languages.empty()) throw ValidationError("aggregate: no languages");

    MetricReport report;
    std::vector<double> seed_means;
    seed_means.reserve(per_seed.size());
    for (const auto& [seed, scores] : per_seed) {
        if (scores.size() != languages.size()) {
            throw ValidationError("aggregate: seed " + std::to_string(seed) +
                                  " covers a different language set");
        }
        double sum = 0.0;
        for (const auto& [lang, value] : scores) {
            if (languages.find(lang) == languages.end()) {
                throw ValidationError("aggregate: seed " + std::to_string(seed) +
                                      " has unexpected language '" + lang + "'");
            }
            report.per_language[lang].push_back(value);
            sum += value;
        }
        seed_means.push_back(sum / static_cast<double>(scores.size()));
    }
    report.mean = mean_of(seed_means);
    report.std_dev = sample_std(seed_means, report.mean);
    return report;
}

Grouping grouping_from_name(const std::string& name) {
    if (name == "per_shot_set") return Grouping::PER_SHOT_SET;
    if (name == "pooled") return Grouping::POOLED;
    throw ValidationError("unknown grouping '" + name + "'");
}

std::string grouping_name(Grouping g) {
    return g == Grouping::PER_SHOT_SET ? "per_shot_set" : "pooled";
}

MetricReport aggregate_grouped(
    const std::map<std::uint64_t, std::map<std::uint64_t, std::map<std::string, double>>>&
        per_group_per_seed,
    Grouping grouping) {
    if (per_group_per_seed.empty()) throw ValidationError("aggregate_grouped: no groups");

    if (grouping == Grouping::POOLED) {
        std::map<std::uint64_t, std::map<std::string, double>> flat;
        std::uint64_t next = 0;
        for (const auto& [group, seeds] : per_group_per_seed) {
            for (const auto& [seed, scores] : seeds) flat[next++] = scores;
        }
        return aggregate(flat);
    }

    MetricReport report;
    std::vector<double> group_means, group_stds;
    for (const auto& [group, seeds] : per_group_per_seed) {
        MetricReport inner = aggregate(seeds);
        group_means.push_back(inner.mean);
        group_stds.push_back(inner.std_dev);
        for (const auto& [lang, scores] : inner.per_language) {
            auto& dest = report.per_language[lang];
            dest.insert(dest.end(), scores.begin(), scores.end());
        }
    }
    report.mean = mean_of(group_means);
    report.std_dev = mean_of(group_stds);
    return report;
}

std::string metric_report_to_json(const MetricReport& report) {
    ordered_json j = ordered_json::object();
    j["mean"] = report.mean;
    j["std"] = report.std_dev;
    ordered_json langs = ordered_json::object();
    for (const auto& [lang, scores] : report.per_language) langs[lang] = scores;
    j["per_language"] = std::move(langs);
    return j.dump();
}

std::string metric_report_csv_header() { return "strategy,shots,language,mean,std\n"; }

std::string metric_report_to_csv_rows(const MetricReport& report, const std::string& strategy,
                                      std::uint64_t shots) {
    std::string out;
    for (const auto& [lang, scores] : report.per_language) {
        double m = mean_of(scores);
        out += strategy + "," + std::to_string(shots) + "," + lang + "," + format4(m) + "," +
               format4(sample_std(scores, m)) + "\n";
    }
    return out;
}

}  // namespace xavg
