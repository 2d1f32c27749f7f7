// Task metrics and cross-seed aggregation.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xavg/metrics.hpp"
#include "xavg/errors.hpp"
#include "xavg/rng.hpp"

using namespace xavg;

namespace {
constexpr int B = 1, I = 2, O = 0;
}

TEST_CASE("accuracy") {
    CHECK(accuracy({{1, 0, 1}, {}}, {{1, 1, 1}, {}}) == doctest::Approx(2.0 / 3.0));
    CHECK(accuracy({{2, 2}, {}}, {{2, 2}, {}}) == 1.0);
    CHECK(accuracy({{0, 0}, {}}, {{1, 1}, {}}) == 0.0);
    CHECK_THROWS_AS(accuracy({{1}, {}}, {{1, 2}, {}}), ValidationError);
}

TEST_CASE("token F1 in tagging mode counts positives only") {
    LabelSeq pred{{B, O, I}, O};
    LabelSeq gold{{B, I, I}, O};
    // TP=2 (positions 0 and 2), predicted positives 2, gold positives 3.
    CHECK(token_f1(pred, gold, true) == doctest::Approx(0.8));
}

TEST_CASE("token F1 without an ignore class equals accuracy") {
    SplitMix64 rng(8);
    for (int round = 0; round < 200; ++round) {
        std::size_t n = 1 + rng.next_below(20);
        LabelSeq pred, gold;
        for (std::size_t i = 0; i < n; ++i) {
            pred.labels.push_back(static_cast<int>(rng.next_below(4)));
            gold.labels.push_back(static_cast<int>(rng.next_below(4)));
        }
        CHECK(token_f1(pred, gold, false) == accuracy(pred, gold));
    }
}

TEST_CASE("all-outside sequences score 1.0") {
    LabelSeq pred{{O, O, O}, O};
    LabelSeq gold{{O, O, O}, O};
    CHECK(token_f1(pred, gold, true) == 1.0);
}

TEST_CASE("one-sided positives score 0.0") {
    CHECK(token_f1({{O, O}, O}, {{B, I}, O}, true) == 0.0);
    CHECK(token_f1({{B, I}, O}, {{O, O}, O}, true) == 0.0);
}

TEST_CASE("ignore mode needs a designated outside class") {
    CHECK_THROWS_AS(token_f1({{1, 2}, {}}, {{1, 2}, {}}, true), ValidationError);
}

TEST_CASE("span F1 over token bags") {
    CHECK(span_f1({{"a", "b", "c"}}, {{"b", "c", "d"}}) == doctest::Approx(2.0 / 3.0));
    CHECK(span_f1({{"x", "y"}}, {{"x", "y"}}) == 1.0);
    CHECK(span_f1({{}}, {{"x"}}) == 0.0);
    CHECK(span_f1({{"x"}}, {{}}) == 0.0);
    CHECK(span_f1({{}}, {{}}) == 1.0);

    // Multiset semantics: repeated tokens only match as often as they occur.
    CHECK(span_f1({{"a", "a"}}, {{"a"}}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("span F1 is symmetric") {
    SplitMix64 rng(21);
    const std::vector<std::string> vocab{"a", "b", "c", "d"};
    for (int round = 0; round < 100; ++round) {
        SpanAnswer p, g;
        for (std::size_t i = rng.next_below(5); i > 0; --i) p.tokens.push_back(vocab[rng.next_below(4)]);
        for (std::size_t i = rng.next_below(5); i > 0; --i) g.tokens.push_back(vocab[rng.next_below(4)]);
        CHECK(span_f1(p, g) == span_f1(g, p));
    }
}

TEST_CASE("aggregate reduces seeds to language means") {
    SUBCASE("stated sample deviation") {
        std::map<std::uint64_t, std::map<std::string, double>> per_seed{
            {1, {{"aa", 1.0}}}, {2, {{"aa", 2.0}}}, {3, {{"aa", 3.0}}}};
        MetricReport r = aggregate(per_seed);
        CHECK(r.mean == doctest::Approx(2.0));
        CHECK(r.std_dev == doctest::Approx(1.0));
    }
    SUBCASE("single seed has zero deviation") {
        MetricReport r = aggregate({{1, {{"aa", 0.7}}}});
        CHECK(r.mean == doctest::Approx(0.7));
        CHECK(r.std_dev == 0.0);
    }
    SUBCASE("language mean within one seed") {
        MetricReport r = aggregate({{1, {{"a", 0.4}, {"b", 0.6}}}});
        CHECK(r.mean == doctest::Approx(0.5));
    }
    SUBCASE("inconsistent language sets are rejected") {
        std::map<std::uint64_t, std::map<std::string, double>> per_seed{
            {1, {{"aa", 1.0}}}, {2, {{"bb", 2.0}}}};
        CHECK_THROWS_AS(aggregate(per_seed), ValidationError);
    }
    SUBCASE("seed relabeling changes nothing") {
        std::map<std::uint64_t, std::map<std::string, double>> a{
            {1, {{"aa", 0.2}}}, {2, {{"aa", 0.4}}}, {3, {{"aa", 0.9}}}};
        std::map<std::uint64_t, std::map<std::string, double>> b{
            {10, {{"aa", 0.9}}}, {20, {{"aa", 0.2}}}, {30, {{"aa", 0.4}}}};
        CHECK(aggregate(a).mean == aggregate(b).mean);
        CHECK(aggregate(a).std_dev == aggregate(b).std_dev);
    }
}

TEST_CASE("grouped aggregation") {
    std::map<std::uint64_t, std::map<std::uint64_t, std::map<std::string, double>>> groups{
        {42, {{1, {{"aa", 0.2}}}, {2, {{"aa", 0.4}}}}},
        {43, {{1, {{"aa", 0.6}}}, {2, {{"aa", 0.8}}}}},
    };
    SUBCASE("per shot set: mean of within-set means and deviations") {
        MetricReport r = aggregate_grouped(groups, Grouping::PER_SHOT_SET);
        CHECK(r.mean == doctest::Approx(0.5));
        double sd = std::sqrt(0.02);  // both sets have deviation sqrt(0.02)
        CHECK(r.std_dev == doctest::Approx(sd));
    }
    SUBCASE("pooled: every run is one observation") {
        MetricReport r = aggregate_grouped(groups, Grouping::POOLED);
        CHECK(r.mean == doctest::Approx(0.5));
        double sd = std::sqrt((0.09 + 0.01 + 0.01 + 0.09) / 3.0);
        CHECK(r.std_dev == doctest::Approx(sd));
    }
}

TEST_CASE("report rendering") {
    MetricReport r;
    r.per_language = {{"aa", {0.5, 0.7}}, {"bb", {0.25, 0.25}}};
    r.mean = 0.425;
    r.std_dev = 0.1;
    CHECK(metric_report_to_json(r) ==
          R"({"mean":0.425,"std":0.1,"per_language":{"aa":[0.5,0.7],"bb":[0.25,0.25]}})");
    CHECK(metric_report_csv_header() == "strategy,shots,language,mean,std\n");
    CHECK(metric_report_to_csv_rows(r, "ca", 10) ==
          "ca,10,aa,0.6000,0.1414\nca,10,bb,0.2500,0.0000\n");
}
