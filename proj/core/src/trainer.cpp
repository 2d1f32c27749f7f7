#include "xavg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace xavg {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (total_steps == 0) throw ValidationError("total_steps must be positive");
    if (snapshots == 0 || snapshots > total_steps) {
        throw ValidationError("snapshots must satisfy 1 <= k <= total_steps");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw ValidationError("warmup_fraction must lie in [0, 1)");
    }
    if (scheduler) {
        auto warmup = static_cast<std::uint64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
        if (warmup >= total_steps) throw ValidationError("warmup covers the whole run; nothing would decay");
    }
    if (per_language_quota == 0) throw ValidationError("per_language_quota must be at least 1");
    if (peak_lr < 0.0) throw ValidationError("peak_lr must be non-negative");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("beta1/beta2 must lie in [0, 1)");
    }
    if (epsilon <= 0.0) throw ValidationError("epsilon must be positive");
}

TrainConfig train_config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ValidationError(std::string("train config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");

    TrainConfig c;
    auto require = [&j](const char* key) -> const ordered_json& {
        if (!j.contains(key)) throw ValidationError(std::string("train config lacks '") + key + "'");
        return j[key];
    };
    c.total_steps = require("total_steps").get<std::uint64_t>();
    c.snapshots = require("snapshots").get<std::uint64_t>();
    c.peak_lr = require("peak_lr").get<double>();
    c.seed = require("seed").get<std::uint64_t>();
    if (j.contains("warmup_fraction")) c.warmup_fraction = j["warmup_fraction"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("per_language_quota")) c.per_language_quota = j["per_language_quota"].get<std::uint64_t>();
    if (j.contains("gradient_surgery")) c.gradient_surgery = j["gradient_surgery"].get<bool>();
    if (j.contains("scheduler")) c.scheduler = j["scheduler"].get<bool>();
    if (j.contains("freeze_classifier_from") && !j["freeze_classifier_from"].is_null()) {
        c.freeze_classifier_from = j["freeze_classifier_from"].get<std::string>();
    }
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& config) {
    ordered_json j = ordered_json::object();
    j["total_steps"] = config.total_steps;
    j["snapshots"] = config.snapshots;
    j["peak_lr"] = config.peak_lr;
    j["warmup_fraction"] = config.warmup_fraction;
    j["weight_decay"] = config.weight_decay;
    j["beta1"] = config.beta1;
    j["beta2"] = config.beta2;
    j["epsilon"] = config.epsilon;
    j["per_language_quota"] = config.per_language_quota;
    j["seed"] = config.seed;
    j["gradient_surgery"] = config.gradient_surgery;
    if (config.freeze_classifier_from) {
        j["freeze_classifier_from"] = *config.freeze_classifier_from;
    } else {
        j["freeze_classifier_from"] = nullptr;
    }
    j["scheduler"] = config.scheduler;
    return j.dump();
}

double lr_at(std::uint64_t step, const TrainConfig& config) {
    if (step < 1 || step > config.total_steps) {
        throw ValidationError("step " + std::to_string(step) + " outside 1.." +
                              std::to_string(config.total_steps));
    }
    if (!config.scheduler) return config.peak_lr;
    const double total = static_cast<double>(config.total_steps);
    const auto warmup =
        static_cast<std::uint64_t>(std::llround(config.warmup_fraction * total));
    if (step <= warmup) {
        return config.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return config.peak_lr * static_cast<double>(config.total_steps - step) /
           static_cast<double>(config.total_steps - warmup);
}

double balanced_loss(const std::map<std::string, double>& per_language_losses) {
    if (per_language_losses.empty()) throw ValidationError("balanced_loss: no languages");
    double sum = 0.0;
    for (const auto& [lang, loss] : per_language_losses) {
        if (!std::isfinite(loss)) throw ValidationError("balanced_loss: loss for '" + lang + "' is not finite");
        sum += loss;
    }
    return sum / static_cast<double>(per_language_losses.size());
}

std::map<std::string, std::vector<double>> gs_project_each(const GradientSet& grads,
                                                           const std::string& holdout) {
    if (grads.per_language.size() < 2) {
        throw ValidationError("gradient surgery needs at least two languages");
    }
    auto hit = grads.per_language.find(holdout);
    if (hit == grads.per_language.end()) {
        throw ValidationError("holdout language '" + holdout + "' has no gradient");
    }
    const std::vector<double>& h = hit->second;
    const std::size_t dim = h.size();

    double hh = 0.0;
    for (double v : h) hh += v * v;
    const bool degenerate = hh == 0.0;
    if (degenerate) {
        std::cerr << "warning: zero-norm holdout gradient for '" << holdout
                  << "'; skipping projection\n";
    }

    std::map<std::string, std::vector<double>> projected;
    for (const auto& [lang, g] : grads.per_language) {
        if (lang == holdout) continue;
        if (g.size() != dim) {
            throw ValidationError("gradient for '" + lang + "' has mismatched dimension");
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += g[i] * h[i];
        const double scale = (!degenerate && dot < 0.0) ? dot / hh : 0.0;
        std::vector<double> out(dim);
        for (std::size_t i = 0; i < dim; ++i) out[i] = g[i] - scale * h[i];
        projected[lang] = std::move(out);
    }
    return projected;
}

std::vector<double> gs_project(const GradientSet& grads, const std::string& holdout) {
    auto projected = gs_project_each(grads, holdout);
    const std::size_t dim = grads.per_language.at(holdout).size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& [lang, g] : projected) {
        for (std::size_t i = 0; i < dim; ++i) mean[i] += g[i];
    }
    for (double& v : mean) v /= static_cast<double>(projected.size());
    return mean;
}

OptimizerState OptimizerState::for_tensors(const NamedVectors& tensors) {
    OptimizerState state;
    for (const auto& [name, values] : tensors) {
        state.m[name] = std::vector<double>(values.size(), 0.0);
        state.v[name] = std::vector<double>(values.size(), 0.0);
    }
    return state;
}

void adamw_step(ModelParams& params, const NamedVectors& grads, OptimizerState& state, double lr,
                const TrainConfig& config) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));

    for (const auto& [name, grad] : grads) {
        auto pit = params.tensors.find(name);
        if (pit == params.tensors.end() || pit->second.size() != grad.size()) {
            throw ValidationError("gradient for unknown or mis-shaped tensor '" + name + "'");
        }
        std::vector<double>& theta = pit->second;
        std::vector<double>& m = state.m.at(name);
        std::vector<double>& v = state.v.at(name);
        const double decay = is_weight_tensor(name) ? config.weight_decay : 0.0;

        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double g = grad[i];
            if (!std::isfinite(g)) throw ValidationError("non-finite gradient in '" + name + "'");
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon) + lr * decay * theta[i];
        }
    }
}

namespace {

std::string snapshot_filename(std::uint64_t step) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "step-%06llu.safetensors", static_cast<unsigned long long>(step));
    return buf;
}

/// Per-language cursor over a reshuffling pool.
struct PoolCursor {
    std::vector<std::size_t> order;
    std::size_t next = 0;
};

std::vector<double> flatten(const NamedVectors& tensors, const std::vector<std::string>& names) {
    std::vector<double> flat;
    for (const std::string& name : names) {
        const auto& values = tensors.at(name);
        flat.insert(flat.end(), values.begin(), values.end());
    }
    return flat;
}

NamedVectors unflatten(const std::vector<double>& flat, const NamedVectors& like,
                       const std::vector<std::string>& names) {
    NamedVectors out;
    std::size_t pos = 0;
    for (const std::string& name : names) {
        const std::size_t n = like.at(name).size();
        out[name] = std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                                        flat.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
    }
    return out;
}

void write_run_manifest(const std::filesystem::path& run_dir, const SnapshotSet& run,
                        const TrainConfig& config, const ModelSpec& spec) {
    ordered_json j = ordered_json::object();
    j["run_id"] = run.run_id;
    j["total_steps"] = run.total_steps;
    ordered_json snaps = ordered_json::array();
    for (const auto& [step, ref] : run.snapshots) {
        ordered_json s = ordered_json::object();
        s["step"] = step;
        s["file"] = snapshot_filename(step);
        snaps.push_back(std::move(s));
    }
    j["snapshots"] = std::move(snaps);
    j["config"] = ordered_json::parse(train_config_to_json(config));
    ordered_json m = ordered_json::object();
    m["family"] = model_family_name(spec.family);
    m["feature_dim"] = spec.feature_dim;
    m["n_classes"] = spec.n_classes;
    m["hidden_dim"] = spec.hidden_dim;
    j["model"] = std::move(m);

    std::ofstream out(run_dir / "run.json", std::ios::trunc);
    if (!out) throw IoError("cannot write run manifest under '" + run_dir.string() + "'");
    out << j.dump(2) << "\n";
}

}  // namespace

SnapshotSet train_run(const TrainConfig& config, const ModelSpec& spec, const TrainData& data,
                      const SnapshotSchedule& schedule, const std::filesystem::path& run_dir,
                      const std::optional<Checkpoint>& init_from) {
    config.validate();
    spec.validate();
    if (schedule.total_steps != config.total_steps || schedule.steps.size() != config.snapshots) {
        throw ValidationError("schedule does not match the train config");
    }
    if (data.empty()) throw ValidationError("training data has no languages");
    for (const auto& [lang, pool] : data) {
        if (pool.size() < config.per_language_quota) {
            throw ValidationError("language '" + lang + "' has " + std::to_string(pool.size()) +
                                  " examples, fewer than one batch of " +
                                  std::to_string(config.per_language_quota));
        }
    }
    if (config.gradient_surgery && data.size() < 2) {
        throw ValidationError("gradient surgery needs at least two training languages");
    }

    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) throw IoError("cannot create run directory '" + run_dir.string() + "'");

    SplitMix64 rng(config.seed);
    ModelParams params;
    if (init_from) {
        auto shared = std::make_shared<const Checkpoint>(*init_from);
        params = params_from_checkpoint(CheckpointRef::from_memory(shared));
        if (params.spec.family != spec.family || params.spec.feature_dim != spec.feature_dim ||
            params.spec.n_classes != spec.n_classes || params.spec.hidden_dim != spec.hidden_dim) {
            throw ValidationError("initial checkpoint geometry does not match the model spec");
        }
    } else {
        params = init_params(spec, rng);
    }

    if (config.freeze_classifier_from) {
        CheckpointRef source = open_checkpoint(*config.freeze_classifier_from);
        ModelParams frozen = params_from_checkpoint(source);
        if (frozen.spec.family != spec.family || frozen.spec.n_classes != spec.n_classes) {
            throw ValidationError("frozen classifier source does not match the model spec");
        }
        for (auto& [name, values] : params.tensors) {
            if (is_classifier_tensor(name)) values = frozen.tensors.at(name);
        }
    }

    std::vector<std::string> trainable;
    for (const auto& [name, values] : params.tensors) {
        if (config.freeze_classifier_from && is_classifier_tensor(name)) continue;
        trainable.push_back(name);
    }

    NamedVectors trainable_template;
    for (const std::string& name : trainable) {
        trainable_template[name] = std::vector<double>(params.tensors.at(name).size(), 0.0);
    }
    OptimizerState state = OptimizerState::for_tensors(trainable_template);

    std::vector<std::string> languages;
    for (const auto& [lang, pool] : data) languages.push_back(lang);

    std::map<std::string, PoolCursor> cursors;
    for (const auto& lang : languages) {
        PoolCursor cursor;
        cursor.order.resize(data.at(lang).size());
        for (std::size_t i = 0; i < cursor.order.size(); ++i) cursor.order[i] = i;
        fisher_yates_shuffle(cursor.order, rng);
        cursors[lang] = std::move(cursor);
    }

    SnapshotSet run;
    run.run_id = run_dir.filename().string();
    run.total_steps = config.total_steps;

    for (std::uint64_t step = 1; step <= config.total_steps; ++step) {
        std::map<std::string, std::vector<Example>> batch;
        for (const std::string& lang : languages) {
            PoolCursor& cursor = cursors[lang];
            const auto& pool = data.at(lang);
            if (cursor.next + config.per_language_quota > cursor.order.size()) {
                fisher_yates_shuffle(cursor.order, rng);
                cursor.next = 0;
            }
            std::vector<Example> group;
            group.reserve(config.per_language_quota);
            for (std::uint64_t q = 0; q < config.per_language_quota; ++q) {
                group.push_back(pool[cursor.order[cursor.next++]]);
            }
            batch[lang] = std::move(group);
        }

        std::map<std::string, NamedVectors> grads_by_language;
        for (const auto& [lang, group] : batch) {
            auto [loss, grads] = forward_loss_and_grad(params, group);
            (void)loss;
            grads_by_language[lang] = std::move(grads);
        }

        NamedVectors update;
        if (config.gradient_surgery) {
            const std::string& holdout = languages[rng.next_below(languages.size())];
            GradientSet flat_set;
            for (const auto& [lang, grads] : grads_by_language) {
                flat_set.per_language[lang] = flatten(grads, trainable);
            }
            std::vector<double> merged = gs_project(flat_set, holdout);
            update = unflatten(merged, trainable_template, trainable);
        } else {
            update = trainable_template;
            const double inv = 1.0 / static_cast<double>(languages.size());
            for (const auto& [lang, grads] : grads_by_language) {
                for (const std::string& name : trainable) {
                    const auto& src = grads.at(name);
                    auto& dst = update[name];
                    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i] * inv;
                }
            }
        }

        adamw_step(params, update, state, lr_at(step, config), config);

        if (schedule.is_snapshot_step(step)) {
            const std::filesystem::path file = run_dir / snapshot_filename(step);
            write_checkpoint(params_to_checkpoint(params), file);
            run.snapshots.emplace_back(step, open_checkpoint(file));
        }
    }

    write_run_manifest(run_dir, run, config, spec);
    run.validate();
    return run;
}

CurriculumResult aligned_ensemble_curriculum(const TrainConfig& base_config, std::size_t ensemble_runs,
                                             const ModelSpec& spec, const TrainData& data,
                                             const SnapshotSchedule& schedule,
                                             const std::filesystem::path& base_dir) {
    if (ensemble_runs < 1) throw ValidationError("ensemble needs at least one run");

    CurriculumResult result;
    result.initial_run = train_run(base_config, spec, data, schedule, base_dir / "run-000");

    const std::string classifier_source = result.initial_run.last().source();
    for (std::size_t i = 1; i <= ensemble_runs; ++i) {
        TrainConfig config = base_config;
        config.seed = base_config.seed + i;
        config.freeze_classifier_from = classifier_source;
        char name[16];
        std::snprintf(name, sizeof(name), "run-%03zu", i);
        result.ensemble.runs.push_back(train_run(config, spec, data, schedule, base_dir / name));
    }
    return result;
}

SnapshotSet load_run(const std::filesystem::path& run_dir) {
    std::ifstream in(run_dir / "run.json");
    if (!in) throw IoError("cannot open run manifest in '" + run_dir.string() + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const ordered_json::parse_error& e) {
        throw ValidationError(std::string("run manifest is not valid JSON: ") + e.what());
    }
    SnapshotSet run;
    run.run_id = j.at("run_id").get<std::string>();
    run.total_steps = j.at("total_steps").get<std::uint64_t>();
    for (const auto& entry : j.at("snapshots")) {
        run.snapshots.emplace_back(entry.at("step").get<std::uint64_t>(),
                                   open_checkpoint(run_dir / entry.at("file").get<std::string>()));
    }
    run.validate();
    return run;
}

}  // namespace xavg
