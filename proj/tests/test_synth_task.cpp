// Synthetic task generation and shot sampling.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_util.hpp"
#include "xavg/synth_task.hpp"

using namespace xavg;

namespace {

TaskSpec four_language_task(std::uint64_t seed) {
    TaskSpec task;
    task.n_classes = 3;
    task.feature_dim = 4;
    task.class_separation = 6.0;
    task.seed = seed;
    task.sizes = {{Role::TRAIN, 30}, {Role::SOURCE_DEV, 24}, {Role::TARGET_DEV, 24},
                  {Role::TARGET_TEST, 24}};
    task.languages.push_back({"src", identity_rotation(4), {0, 0, 0, 0}, 0.0});
    task.languages.push_back({"ta", plane_rotation(4, 0, 1, 0.7), {0.5, 0, 0, 0}, 0.0});
    task.languages.push_back({"tb", plane_rotation(4, 1, 3, 1.2), {0, -0.4, 0, 0.2}, 0.0});
    task.languages.push_back({"tc", random_rotation(4, 99), {0, 0, 0.3, 0}, 0.0});
    task.source_language = "src";
    return task;
}

/// One-example-per-language view of a split, keyed (lang, index).
std::vector<Example> lang_examples(const DatasetSplit& split, const std::string& code) {
    std::vector<Example> out;
    for (const TaggedExample& ex : split.examples) {
        if (ex.lang == code) out.push_back({ex.features, ex.label});
    }
    return out;
}

/// Nearest-centroid accuracy: centroids from train, scored on dev.
double nearest_centroid_accuracy(const std::vector<Example>& train, const std::vector<Example>& dev,
                                 std::size_t n_classes) {
    std::size_t dim = train.front().features.size();
    std::vector<std::vector<double>> centroids(n_classes, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(n_classes, 0);
    for (const Example& ex : train) {
        for (std::size_t d = 0; d < dim; ++d) centroids[static_cast<std::size_t>(ex.label)][d] += ex.features[d];
        ++counts[static_cast<std::size_t>(ex.label)];
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (double& v : centroids[c]) v /= static_cast<double>(counts[c]);
    }
    std::size_t hits = 0;
    for (const Example& ex : dev) {
        double best = 0.0;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
            double dist = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                double diff = ex.features[d] - centroids[c][d];
                dist += diff * diff;
            }
            if (c == 0 || dist < best) {
                best = dist;
                arg = c;
            }
        }
        if (static_cast<int>(arg) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dev.size());
}

DatasetSplit single_language_pool(std::size_t n) {
    DatasetSplit pool;
    pool.role = Role::TARGET_DEV;
    for (std::size_t i = 0; i < n; ++i) {
        pool.examples.push_back({"xx", {static_cast<double>(i)}, static_cast<int>(i % 2)});
    }
    return pool;
}

}  // namespace

TEST_CASE("rotation helpers produce orthogonal matrices") {
    TaskSpec task = four_language_task(1);
    CHECK_NOTHROW(task.validate());

    LanguageSpec skewed{"bad", std::vector<double>{1, 1, 0, 1}, {0, 0}, 0.0};
    TaskSpec two;
    two.n_classes = 2;
    two.feature_dim = 2;
    two.seed = 0;
    two.sizes = {{Role::TRAIN, 4}};
    two.languages.push_back(skewed);
    CHECK_THROWS_AS(two.validate(), ValidationError);
}

TEST_CASE("same seed gives identical splits") {
    auto a = generate_task(four_language_task(42));
    auto b = generate_task(four_language_task(42));
    for (const auto& [role, split] : a) {
        const DatasetSplit& other = b.at(role);
        REQUIRE(split.examples.size() == other.examples.size());
        for (std::size_t i = 0; i < split.examples.size(); ++i) {
            CHECK(split.examples[i].lang == other.examples[i].lang);
            CHECK(split.examples[i].label == other.examples[i].label);
            CHECK(split.examples[i].features == other.examples[i].features);
        }
    }
}

TEST_CASE("identity-transform target coincides with the source distribution") {
    TaskSpec task;
    task.n_classes = 2;
    task.feature_dim = 2;
    task.class_separation = 6.0;
    task.seed = 3;
    task.sizes = {{Role::TRAIN, 40}, {Role::SOURCE_DEV, 40}, {Role::TARGET_DEV, 40},
                  {Role::TARGET_TEST, 40}};
    task.languages.push_back({"src", identity_rotation(2), {0, 0}, 0.0});
    task.languages.push_back({"twin", identity_rotation(2), {0, 0}, 0.0});
    auto splits = generate_task(task);

    // Shared canonical draws plus identity transforms mean the twin's
    // examples equal the source's exactly.
    auto src = lang_examples(splits.at(Role::SOURCE_DEV), "src");
    auto twin = lang_examples(splits.at(Role::SOURCE_DEV), "twin");
    REQUIRE(src.size() == twin.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        CHECK(src[i].features == twin[i].features);
        CHECK(src[i].label == twin[i].label);
    }
}

TEST_CASE("rotations preserve class separability exactly") {
    auto splits = generate_task(four_language_task(17));
    const auto& train = splits.at(Role::TRAIN);
    const auto& dev = splits.at(Role::TARGET_DEV);

    double src_acc = nearest_centroid_accuracy(lang_examples(train, "src"), lang_examples(dev, "src"), 3);
    for (const std::string& code : {"ta", "tb", "tc"}) {
        double acc = nearest_centroid_accuracy(lang_examples(train, code), lang_examples(dev, code), 3);
        CHECK(std::abs(acc - src_acc) <= 1e-12);
    }
}

TEST_CASE("label noise flips to other classes at roughly the configured rate") {
    TaskSpec task = four_language_task(23);
    task.sizes[Role::TRAIN] = 4000;
    task.languages[1].label_noise = 0.3;
    auto splits = generate_task(task);

    auto clean = lang_examples(splits.at(Role::TRAIN), "src");
    auto noisy = lang_examples(splits.at(Role::TRAIN), "ta");
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (noisy[i].label != clean[i].label) ++flipped;
    }
    double rate = static_cast<double>(flipped) / static_cast<double>(clean.size());
    CHECK(rate > 0.25);
    CHECK(rate < 0.35);
}

TEST_CASE("shot sampling pins the documented selection") {
    DatasetSplit pool = single_language_pool(10);
    ShotSample sample = sample_shots(pool, {5, 42});

    // SplitMix64(42 ^ fnv1a64("xx")) drives one Fisher-Yates pass over
    // [0..9], which permutes it to [7,0,1,3,9,5,8,6,4,2].
    const std::vector<double> expected{7, 0, 1, 3, 9};
    REQUIRE(sample.shots.at("xx").size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(sample.shots.at("xx")[i].features[0] == expected[i]);
    }
    REQUIRE(sample.remainder.examples.size() == 5);
    CHECK(sample.remainder.examples[0].features[0] == 5);  // shuffled tail follows
}

TEST_CASE("smaller shot sets are prefixes of larger ones") {
    DatasetSplit pool = single_language_pool(40);
    for (std::uint64_t seed : {42u, 43u, 44u}) {
        ShotSample small = sample_shots(pool, {5, seed});
        ShotSample big = sample_shots(pool, {10, seed});
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(small.shots.at("xx")[i].features == big.shots.at("xx")[i].features);
        }
    }
}

TEST_CASE("shots and remainder partition the pool") {
    auto splits = generate_task(four_language_task(29));
    DatasetSplit pool = splits.at(Role::TARGET_DEV);
    ShotSample sample = sample_shots(pool, {6, 44});

    std::multiset<double> before, after;
    for (const TaggedExample& ex : pool.examples) before.insert(ex.features[0]);
    for (const auto& [lang, shots] : sample.shots) {
        for (const Example& ex : shots) after.insert(ex.features[0]);
    }
    for (const TaggedExample& ex : sample.remainder.examples) after.insert(ex.features[0]);
    CHECK(before == after);

    std::size_t shot_total = 0;
    for (const auto& [lang, shots] : sample.shots) shot_total += shots.size();
    CHECK(shot_total == 4 * 6);
    CHECK(sample.remainder.examples.size() == pool.examples.size() - shot_total);
}

TEST_CASE("remainder keeps exactly one example when s = pool - 1") {
    DatasetSplit pool = single_language_pool(10);
    ShotSample sample = sample_shots(pool, {9, 42});
    CHECK(sample.remainder.examples.size() == 1);
    CHECK_THROWS_AS(sample_shots(pool, {10, 42}), ValidationError);  // needs a remainder
}

TEST_CASE("dataset JSONL round-trips") {
    testutil::TempDir dir("synth");
    auto splits = generate_task(four_language_task(31));
    const DatasetSplit& split = splits.at(Role::SOURCE_DEV);
    write_dataset_jsonl(split, dir.path() / "dev.jsonl");
    DatasetSplit loaded = read_dataset_jsonl(dir.path() / "dev.jsonl", Role::SOURCE_DEV);

    REQUIRE(loaded.examples.size() == split.examples.size());
    for (std::size_t i = 0; i < split.examples.size(); ++i) {
        CHECK(loaded.examples[i].lang == split.examples[i].lang);
        CHECK(loaded.examples[i].label == split.examples[i].label);
        CHECK(loaded.examples[i].features == split.examples[i].features);
    }
}

TEST_CASE("task specs round-trip through JSON") {
    TaskSpec task = four_language_task(55);
    std::string text = task_spec_to_json(task);
    TaskSpec parsed = task_spec_from_json(text);
    CHECK(parsed.n_classes == task.n_classes);
    CHECK(parsed.feature_dim == task.feature_dim);
    CHECK(parsed.seed == task.seed);
    CHECK(parsed.languages.size() == task.languages.size());
    for (std::size_t i = 0; i < task.languages.size(); ++i) {
        CHECK(parsed.languages[i].code == task.languages[i].code);
        CHECK(parsed.languages[i].rotation == task.languages[i].rotation);
    }

    auto a = generate_task(task);
    auto b = generate_task(parsed);
    CHECK(a.at(Role::TRAIN).examples[0].features == b.at(Role::TRAIN).examples[0].features);

    const std::string shorthand = R"({
      "n_classes": 2, "feature_dim": 2, "seed": 1,
      "sizes": {"train": 8, "source_dev": 8, "target_dev": 8, "target_test": 8},
      "source_language": "src",
      "languages": [
        {"code": "src", "rotation": "identity"},
        {"code": "t1", "rotation": {"plane": [0, 1], "angle": 0.4}, "offset": [0.1, 0.0], "label_noise": 0.05}
      ]
    })";
    TaskSpec from_shorthand = task_spec_from_json(shorthand);
    CHECK(from_shorthand.languages[0].offset == std::vector<double>{0.0, 0.0});
    CHECK(from_shorthand.languages[1].label_noise == doctest::Approx(0.05));
}
