// Snapshot schedules and model-selection strategies.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <sstream>

#include "xavg/rng.hpp"
#include "xavg/snapshot_policy.hpp"

using namespace xavg;

namespace {

CheckpointRef ref_of(double w) {
    Checkpoint cp;
    cp.add("w", TensorData::from_f64({1}, std::vector<double>{w}));
    return CheckpointRef::from_memory(std::make_shared<const Checkpoint>(std::move(cp)));
}

SnapshotSet run_at_steps(const std::vector<std::uint64_t>& steps) {
    SnapshotSet run;
    run.run_id = "r";
    run.total_steps = steps.back();
    for (std::uint64_t s : steps) run.snapshots.emplace_back(s, ref_of(static_cast<double>(s)));
    return run;
}

EvalRecord rec(std::uint64_t step, Split split, std::map<std::string, double> scores) {
    return EvalRecord{step, split, std::move(scores)};
}

double value_at(const SelectedSnapshot& sel) { return sel.ref.read("w").as_f64()[0]; }

}  // namespace

TEST_CASE("schedules") {
    SUBCASE("exact division") {
        auto s = make_schedule(100, 4);
        CHECK(s.steps == std::vector<std::uint64_t>{25, 50, 75, 100});
    }
    SUBCASE("floor spacing with forced final step") {
        auto s = make_schedule(10, 3);
        CHECK(s.steps == std::vector<std::uint64_t>{3, 6, 10});
    }
    SUBCASE("every step") {
        auto s = make_schedule(5, 5);
        CHECK(s.steps == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    }
    SUBCASE("invalid counts") {
        CHECK_THROWS_AS(make_schedule(10, 0), ValidationError);
        CHECK_THROWS_AS(make_schedule(10, 11), ValidationError);
    }
    SUBCASE("schedules stay strictly increasing for many (T, k)") {
        for (std::uint64_t total = 1; total <= 60; ++total) {
            for (std::uint64_t k = 1; k <= total; ++k) {
                auto s = make_schedule(total, k);
                REQUIRE(s.steps.size() == k);
                REQUIRE(s.steps.back() == total);
                for (std::size_t i = 1; i < s.steps.size(); ++i) REQUIRE(s.steps[i] > s.steps[i - 1]);
            }
        }
    }
}

TEST_CASE("last takes the final snapshot") {
    auto run = run_at_steps({3, 6, 10});
    auto result = select(SelectionStrategy::LAST, run, {});
    CHECK(std::get<SelectedSnapshot>(result).step == 10);
}

TEST_CASE("src-dev breaks ties toward the later step") {
    auto run = run_at_steps({10, 20, 30});
    std::vector<EvalRecord> records{
        rec(10, Split::SOURCE_DEV, {{"en", 0.60}}),
        rec(20, Split::SOURCE_DEV, {{"en", 0.70}}),
        rec(30, Split::SOURCE_DEV, {{"en", 0.70}}),
    };
    auto result = select(SelectionStrategy::SRC_DEV, run, records);
    CHECK(std::get<SelectedSnapshot>(result).step == 30);
}

TEST_CASE("src-dev averages multiple source languages") {
    auto run = run_at_steps({1, 2});
    std::vector<EvalRecord> records{
        rec(1, Split::SOURCE_DEV, {{"en", 0.9}, {"de", 0.1}}),  // mean 0.5
        rec(2, Split::SOURCE_DEV, {{"en", 0.6}, {"de", 0.6}}),  // mean 0.6
    };
    auto result = select(SelectionStrategy::SRC_DEV, run, records);
    CHECK(std::get<SelectedSnapshot>(result).step == 2);
}

TEST_CASE("src-dev requires records at every snapshot step") {
    auto run = run_at_steps({1, 2});
    std::vector<EvalRecord> records{rec(1, Split::SOURCE_DEV, {{"en", 0.9}})};
    CHECK_THROWS_AS(select(SelectionStrategy::SRC_DEV, run, records), ValidationError);
}

TEST_CASE("records from other splits or unscheduled steps are ignored") {
    auto run = run_at_steps({1, 2});
    std::vector<EvalRecord> records{
        rec(1, Split::SOURCE_DEV, {{"en", 0.2}}),
        rec(2, Split::SOURCE_DEV, {{"en", 0.1}}),
        rec(2, Split::TARGET_DEV, {{"xx", 0.99}}),  // wrong split
        rec(7, Split::SOURCE_DEV, {{"en", 0.99}}),  // not a snapshot step
    };
    auto result = select(SelectionStrategy::SRC_DEV, run, records);
    CHECK(std::get<SelectedSnapshot>(result).step == 1);
}

TEST_CASE("trg-dev picks per-language argmaxes independently") {
    auto run = run_at_steps({10, 20});
    std::vector<EvalRecord> records{
        rec(10, Split::TARGET_DEV, {{"aa", 0.9}, {"bb", 0.1}}),
        rec(20, Split::TARGET_DEV, {{"aa", 0.2}, {"bb", 0.8}}),
    };
    auto result = select(SelectionStrategy::TRG_DEV, run, records);
    const auto& chosen = std::get<std::map<std::string, SelectedSnapshot>>(result);
    CHECK(chosen.at("aa").step == 10);
    CHECK(chosen.at("bb").step == 20);

    // Permuting one language's scores leaves the other selection fixed.
    std::vector<EvalRecord> permuted{
        rec(10, Split::TARGET_DEV, {{"aa", 0.9}, {"bb", 0.8}}),
        rec(20, Split::TARGET_DEV, {{"aa", 0.2}, {"bb", 0.1}}),
    };
    auto result2 = select(SelectionStrategy::TRG_DEV, run, permuted);
    CHECK(std::get<std::map<std::string, SelectedSnapshot>>(result2).at("aa").step == 10);
}

TEST_CASE("ca returns the within-run average") {
    auto run = run_at_steps({1, 2});  // snapshot payloads 1.0 and 2.0
    auto result = select(SelectionStrategy::CA, run, {});
    CHECK(std::get<Checkpoint>(result).tensor("w").as_f64()[0] == 1.5);
}

TEST_CASE("adding a constant to every score never changes selections") {
    auto run = run_at_steps({1, 2, 3});
    SplitMix64 rng(17);
    for (int round = 0; round < 50; ++round) {
        std::vector<EvalRecord> records, shifted;
        double delta = rng.next_uniform(-0.2, 0.2);
        for (std::uint64_t step : {1, 2, 3}) {
            double a = rng.next_uniform(0.2, 0.8);
            double b = rng.next_uniform(0.2, 0.8);
            records.push_back(rec(step, Split::SOURCE_DEV, {{"en", a}}));
            records.push_back(rec(step, Split::TARGET_DEV, {{"aa", a}, {"bb", b}}));
            shifted.push_back(rec(step, Split::SOURCE_DEV, {{"en", a + delta}}));
            shifted.push_back(rec(step, Split::TARGET_DEV, {{"aa", a + delta}, {"bb", b + delta}}));
        }
        auto base = select(SelectionStrategy::SRC_DEV, run, records);
        auto moved = select(SelectionStrategy::SRC_DEV, run, shifted);
        CHECK(std::get<SelectedSnapshot>(base).step == std::get<SelectedSnapshot>(moved).step);

        auto base_t = select(SelectionStrategy::TRG_DEV, run, records);
        auto moved_t = select(SelectionStrategy::TRG_DEV, run, shifted);
        for (const auto& [lang, sel] : std::get<std::map<std::string, SelectedSnapshot>>(base_t)) {
            CHECK(sel.step ==
                  std::get<std::map<std::string, SelectedSnapshot>>(moved_t).at(lang).step);
        }
    }
}

TEST_CASE("strictly increasing scores make src-dev agree with last") {
    auto run = run_at_steps({1, 2, 3});
    std::vector<EvalRecord> records{
        rec(1, Split::SOURCE_DEV, {{"en", 0.3}}),
        rec(2, Split::SOURCE_DEV, {{"en", 0.5}}),
        rec(3, Split::SOURCE_DEV, {{"en", 0.7}}),
    };
    auto src = select(SelectionStrategy::SRC_DEV, run, records);
    auto last = select(SelectionStrategy::LAST, run, {});
    CHECK(std::get<SelectedSnapshot>(src).step == std::get<SelectedSnapshot>(last).step);
    CHECK(value_at(std::get<SelectedSnapshot>(src)) == value_at(std::get<SelectedSnapshot>(last)));
}

TEST_CASE("eval records round-trip through JSONL") {
    std::vector<EvalRecord> records{
        rec(3, Split::SOURCE_DEV, {{"en", 0.625}}),
        rec(6, Split::TARGET_DEV, {{"aa", 0.5}, {"bb", 0.25}}),
    };
    std::string text = eval_records_to_jsonl(records);
    CHECK(text ==
          "{\"step\":3,\"split\":\"source_dev\",\"scores\":{\"en\":0.625}}\n"
          "{\"step\":6,\"split\":\"target_dev\",\"scores\":{\"aa\":0.5,\"bb\":0.25}}\n");

    std::istringstream in(text);
    auto parsed = eval_records_from_jsonl(in);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].step == 3);
    CHECK(parsed[0].split == Split::SOURCE_DEV);
    CHECK(parsed[1].scores.at("bb") == 0.25);

    std::istringstream bad("{\"step\":1}\n");
    CHECK_THROWS_AS(eval_records_from_jsonl(bad), ValidationError);
}
