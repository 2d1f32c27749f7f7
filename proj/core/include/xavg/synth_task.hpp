#ifndef XAVG_SYNTH_TASK_HPP
#define XAVG_SYNTH_TASK_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xavg/model.hpp"
#include "xavg/rng.hpp"

namespace xavg {

enum class Role { TRAIN, SOURCE_DEV, TARGET_DEV, TARGET_TEST };

std::string role_name(Role r);
Role role_from_name(const std::string& name);

/// A language is a rigid transform of the canonical feature space plus a
/// label-noise rate; rotation angle, offset magnitude, and noise stand in
/// for how far a target sits from the source.
struct LanguageSpec {
    std::string code;
    std::vector<double> rotation;  // row-major d x d, orthogonal
    std::vector<double> offset;    // length d
    double label_noise = 0.0;
};

struct TaggedExample {
    std::string lang;
    std::vector<double> features;
    int label = 0;
};

struct DatasetSplit {
    Role role = Role::TRAIN;
    std::vector<TaggedExample> examples;
};

/// Language code -> plain examples, in split order.
std::map<std::string, std::vector<Example>> by_language(const DatasetSplit& split);

struct TaskSpec {
    std::size_t n_classes = 0;
    std::size_t feature_dim = 0;
    double class_separation = 6.0;          // pairwise distance between class means, in sigma units
    std::map<Role, std::size_t> sizes;      // per-language example count per role
    std::vector<LanguageSpec> languages;
    std::string source_language;            // defaults to the first listed language
    std::uint64_t seed = 0;

    void validate() const;
    const LanguageSpec& source() const;
};

/// Class-conditional unit Gaussians around means placed pairwise
/// class_separation apart; every language sees the same canonical draws
/// through its own rotation and offset, with labels flipped to a random
/// other class at its noise rate. Identical seeds give identical splits.
std::map<Role, DatasetSplit> generate_task(const TaskSpec& spec);

struct ShotSpec {
    std::size_t count = 0;
    std::uint64_t seed = 0;
};

struct ShotSample {
    std::map<std::string, std::vector<Example>> shots;
    DatasetSplit remainder;  // the validation pool left after removing shots
};

/// Per language: Fisher-Yates shuffles the language's pool with a
/// generator seeded by (spec.seed XOR fnv1a64(code)) and takes the first
/// `count` examples as shots. Smaller counts are prefixes of larger ones
/// at the same seed, and shots plus remainder exactly partition the pool.
ShotSample sample_shots(const DatasetSplit& pool, const ShotSpec& spec);

std::vector<double> identity_rotation(std::size_t dim);
/// Rotation by `angle` in the (axis_a, axis_b) coordinate plane.
std::vector<double> plane_rotation(std::size_t dim, std::size_t axis_a, std::size_t axis_b, double angle);
/// Random orthogonal matrix (Gram-Schmidt on Gaussian rows).
std::vector<double> random_rotation(std::size_t dim, std::uint64_t seed);

std::string task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const std::string& text);

/// Line-delimited {"lang", "label", "x"} records.
void write_dataset_jsonl(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_dataset_jsonl(const std::filesystem::path& path, Role role);

}  // namespace xavg

#endif  // XAVG_SYNTH_TASK_HPP
