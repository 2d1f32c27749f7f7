#include "xavg/synth_task.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "xavg/errors.hpp"

namespace xavg {

using ordered_json = nlohmann::ordered_json;

std::string role_name(Role r) {
    switch (r) {
        case Role::TRAIN: return "train";
        case Role::SOURCE_DEV: return "source_dev";
        case Role::TARGET_DEV: return "target_dev";
        case Role::TARGET_TEST: return "target_test";
    }
    return "?";
}

Role role_from_name(const std::string& name) {
    if (name == "train") return Role::TRAIN;
    if (name == "source_dev") return Role::SOURCE_DEV;
    if (name == "target_dev") return Role::TARGET_DEV;
    if (name == "target_test") return Role::TARGET_TEST;
    throw ValidationError("unknown dataset role '" + name + "'");
}

std::map<std::string, std::vector<Example>> by_language(const DatasetSplit& split) {
    std::map<std::string, std::vector<Example>> out;
    for (const TaggedExample& ex : split.examples) {
        out[ex.lang].push_back(Example{ex.features, ex.label});
    }
    return out;
}

namespace {

void check_orthogonal(const LanguageSpec& lang, std::size_t dim) {
    if (lang.rotation.size() != dim * dim) {
        throw ValidationError("rotation of '" + lang.code + "' is not " + std::to_string(dim) + "x" +
                              std::to_string(dim));
    }
    if (lang.offset.size() != dim) {
        throw ValidationError("offset of '" + lang.code + "' has wrong dimension");
    }
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                dot += lang.rotation[k * dim + i] * lang.rotation[k * dim + j];
            }
            double expected = i == j ? 1.0 : 0.0;
            if (std::abs(dot - expected) > 1e-9) {
                throw ValidationError("rotation of '" + lang.code + "' is not orthogonal");
            }
        }
    }
}

std::vector<double> apply_transform(const LanguageSpec& lang, const std::vector<double>& x) {
    const std::size_t d = x.size();
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        double acc = lang.offset[i];
        for (std::size_t j = 0; j < d; ++j) acc += lang.rotation[i * d + j] * x[j];
        out[i] = acc;
    }
    return out;
}

}  // namespace

void TaskSpec::validate() const {
    if (n_classes < 2) throw ValidationError("task needs at least two classes");
    if (feature_dim < n_classes) {
        throw ValidationError("feature_dim must be at least n_classes (class means span a basis)");
    }
    if (class_separation <= 0.0) throw ValidationError("class_separation must be positive");
    if (sizes.empty()) throw ValidationError("task defines no split sizes");
    for (const auto& [role, size] : sizes) {
        if (size == 0) throw ValidationError("size for split '" + role_name(role) + "' must be positive");
    }
    if (languages.empty()) throw ValidationError("task defines no languages");
    for (const LanguageSpec& lang : languages) {
        if (lang.code.empty()) throw ValidationError("language code must be non-empty");
        if (!(lang.label_noise >= 0.0 && lang.label_noise < 1.0)) {
            throw ValidationError("label_noise of '" + lang.code + "' must lie in [0, 1)");
        }
        check_orthogonal(lang, feature_dim);
    }
    source();  // must resolve
}

const LanguageSpec& TaskSpec::source() const {
    if (source_language.empty()) return languages.front();
    for (const LanguageSpec& lang : languages) {
        if (lang.code == source_language) return lang;
    }
    throw ValidationError("source language '" + source_language + "' is not among the task languages");
}

std::map<Role, DatasetSplit> generate_task(const TaskSpec& spec) {
    spec.validate();
    SplitMix64 rng(spec.seed);

    // Class c sits at (separation / sqrt(2)) * e_c, so all pairwise mean
    // distances equal class_separation exactly.
    const double scale = spec.class_separation / std::sqrt(2.0);

    std::map<Role, DatasetSplit> splits;
    for (Role role : {Role::TRAIN, Role::SOURCE_DEV, Role::TARGET_DEV, Role::TARGET_TEST}) {
        auto size_it = spec.sizes.find(role);
        if (size_it == spec.sizes.end()) continue;
        const std::size_t n = size_it->second;

        std::vector<std::vector<double>> canonical(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(i % spec.n_classes);
            std::vector<double> x(spec.feature_dim);
            for (std::size_t d = 0; d < spec.feature_dim; ++d) x[d] = rng.next_gaussian();
            x[static_cast<std::size_t>(labels[i])] += scale;
            canonical[i] = std::move(x);
        }

        DatasetSplit split;
        split.role = role;
        split.examples.reserve(n * spec.languages.size());
        for (const LanguageSpec& lang : spec.languages) {
            for (std::size_t i = 0; i < n; ++i) {
                int label = labels[i];
                double u = rng.next_double();
                if (u < lang.label_noise) {
                    label = (label + 1 + static_cast<int>(rng.next_below(spec.n_classes - 1))) %
                            static_cast<int>(spec.n_classes);
                }
                split.examples.push_back(TaggedExample{lang.code, apply_transform(lang, canonical[i]), label});
            }
        }
        splits[role] = std::move(split);
    }
    return splits;
}

ShotSample sample_shots(const DatasetSplit& pool, const ShotSpec& spec) {
    if (spec.count == 0) throw ValidationError("shot count must be positive");

    std::map<std::string, std::vector<const TaggedExample*>> pools;
    for (const TaggedExample& ex : pool.examples) pools[ex.lang].push_back(&ex);

    ShotSample result;
    result.remainder.role = pool.role;
    for (const auto& [lang, examples] : pools) {
        if (examples.size() <= spec.count) {
            throw ValidationError("language '" + lang + "' pool of " +
                                  std::to_string(examples.size()) +
                                  " is too small for " + std::to_string(spec.count) + " shots");
        }
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        SplitMix64 rng(spec.seed ^ fnv1a64(lang));
        fisher_yates_shuffle(order, rng);

        auto& shots = result.shots[lang];
        shots.reserve(spec.count);
        for (std::size_t i = 0; i < spec.count; ++i) {
            const TaggedExample* ex = examples[order[i]];
            shots.push_back(Example{ex->features, ex->label});
        }
        for (std::size_t i = spec.count; i < order.size(); ++i) {
            result.remainder.examples.push_back(*examples[order[i]]);
        }
    }
    return result;
}

std::vector<double> identity_rotation(std::size_t dim) {
    std::vector<double> r(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) r[i * dim + i] = 1.0;
    return r;
}

std::vector<double> plane_rotation(std::size_t dim, std::size_t axis_a, std::size_t axis_b, double angle) {
    if (axis_a >= dim || axis_b >= dim || axis_a == axis_b) {
        throw ValidationError("plane_rotation axes must be distinct and within the dimension");
    }
    std::vector<double> r = identity_rotation(dim);
    const double c = std::cos(angle), s = std::sin(angle);
    r[axis_a * dim + axis_a] = c;
    r[axis_a * dim + axis_b] = -s;
    r[axis_b * dim + axis_a] = s;
    r[axis_b * dim + axis_b] = c;
    return r;
}

std::vector<double> random_rotation(std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<std::vector<double>> rows(dim, std::vector<double>(dim));
    for (auto& row : rows) {
        for (double& v : row) v = rng.next_gaussian();
    }
    // Gram-Schmidt; Gaussian rows are almost surely independent.
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += rows[i][k] * rows[j][k];
            for (std::size_t k = 0; k < dim; ++k) rows[i][k] -= dot * rows[j][k];
        }
        double norm = 0.0;
        for (double v : rows[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw ValidationError("degenerate random rotation; try another seed");
        for (double& v : rows[i]) v /= norm;
    }
    std::vector<double> flat;
    flat.reserve(dim * dim);
    for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
    return flat;
}

namespace {

std::vector<double> rotation_from_json(const ordered_json& j, std::size_t dim, const std::string& code) {
    if (j.is_string()) {
        if (j.get<std::string>() == "identity") return identity_rotation(dim);
        throw ValidationError("unknown rotation '" + j.get<std::string>() + "' for '" + code + "'");
    }
    if (j.is_object() && j.contains("plane") && j.contains("angle")) {
        const auto& plane = j["plane"];
        return plane_rotation(dim, plane.at(0).get<std::size_t>(), plane.at(1).get<std::size_t>(),
                              j["angle"].get<double>());
    }
    if (j.is_object() && j.contains("random_seed")) {
        return random_rotation(dim, j["random_seed"].get<std::uint64_t>());
    }
    if (j.is_array()) {
        std::vector<double> flat;
        for (const auto& row : j) {
            for (const auto& v : row) flat.push_back(v.get<double>());
        }
        return flat;
    }
    throw ValidationError("rotation of '" + code + "' must be \"identity\", {plane, angle}, {random_seed}, or a matrix");
}

}  // namespace

std::string task_spec_to_json(const TaskSpec& spec) {
    ordered_json j = ordered_json::object();
    j["n_classes"] = spec.n_classes;
    j["feature_dim"] = spec.feature_dim;
    j["class_separation"] = spec.class_separation;
    j["seed"] = spec.seed;
    ordered_json sizes = ordered_json::object();
    for (const auto& [role, size] : spec.sizes) sizes[role_name(role)] = size;
    j["sizes"] = std::move(sizes);
    j["source_language"] = spec.source_language.empty() && !spec.languages.empty()
                               ? spec.languages.front().code
                               : spec.source_language;
    ordered_json langs = ordered_json::array();
    for (const LanguageSpec& lang : spec.languages) {
        ordered_json l = ordered_json::object();
        l["code"] = lang.code;
        ordered_json rotation = ordered_json::array();
        for (std::size_t r = 0; r < spec.feature_dim; ++r) {
            ordered_json row = ordered_json::array();
            for (std::size_t c = 0; c < spec.feature_dim; ++c) {
                row.push_back(lang.rotation[r * spec.feature_dim + c]);
            }
            rotation.push_back(std::move(row));
        }
        l["rotation"] = std::move(rotation);
        l["offset"] = lang.offset;
        l["label_noise"] = lang.label_noise;
        langs.push_back(std::move(l));
    }
    j["languages"] = std::move(langs);
    return j.dump();
}

TaskSpec task_spec_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ValidationError(std::string("task spec is not valid JSON: ") + e.what());
    }
    TaskSpec spec;
    spec.n_classes = j.at("n_classes").get<std::size_t>();
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    if (j.contains("class_separation")) spec.class_separation = j["class_separation"].get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [name, size] : j.at("sizes").items()) {
        spec.sizes[role_from_name(name)] = size.get<std::size_t>();
    }
    if (j.contains("source_language")) spec.source_language = j["source_language"].get<std::string>();
    for (const auto& l : j.at("languages")) {
        LanguageSpec lang;
        lang.code = l.at("code").get<std::string>();
        lang.rotation = rotation_from_json(l.at("rotation"), spec.feature_dim, lang.code);
        if (l.contains("offset")) {
            lang.offset = l["offset"].get<std::vector<double>>();
        } else {
            lang.offset.assign(spec.feature_dim, 0.0);
        }
        if (l.contains("label_noise")) lang.label_noise = l["label_noise"].get<double>();
        spec.languages.push_back(std::move(lang));
    }
    spec.validate();
    return spec;
}

void write_dataset_jsonl(const DatasetSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const TaggedExample& ex : split.examples) {
        ordered_json line = ordered_json::object();
        line["lang"] = ex.lang;
        line["label"] = ex.label;
        line["x"] = ex.features;
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DatasetSplit read_dataset_jsonl(const std::filesystem::path& path, Role role) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    DatasetSplit split;
    split.role = role;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const ordered_json::parse_error& e) {
            throw ValidationError("dataset line " + std::to_string(line_no) + " is not valid JSON: " +
                                  e.what());
        }
        TaggedExample ex;
        ex.lang = j.at("lang").get<std::string>();
        ex.label = j.at("label").get<int>();
        ex.features = j.at("x").get<std::vector<double>>();
        split.examples.push_back(std::move(ex));
    }
    return split;
}

}  // namespace xavg
