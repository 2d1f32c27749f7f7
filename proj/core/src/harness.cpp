#include "xavg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include <json.hpp>

#include "xavg/snapshot_policy.hpp"

namespace xavg {

using ordered_json = nlohmann::ordered_json;

namespace {

const std::set<std::string> kSingleRunStrategies = {"last", "src-dev", "trg-dev", "ca", "gs-last"};
const std::set<std::string> kRaVariants = {"ra-last", "ra-ca"};
const std::set<std::string> kSoupVariants = {"soup-last", "soup-ca"};

std::string format4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace

ExperimentMode experiment_mode_from_name(const std::string& name) {
    if (name == "zero_shot") return ExperimentMode::ZERO_SHOT;
    if (name == "few_shot") return ExperimentMode::FEW_SHOT;
    throw ValidationError("unknown experiment mode '" + name + "'");
}

std::string experiment_mode_name(ExperimentMode m) {
    return m == ExperimentMode::ZERO_SHOT ? "zero_shot" : "few_shot";
}

void ExperimentPlan::validate() const {
    if (seeds.empty()) throw ValidationError("plan needs at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ValidationError("plan seeds must be unique");
    }
    if (strategies.empty() && averaging_variants.empty()) {
        throw ValidationError("plan requests nothing to evaluate");
    }
    std::set<std::string> seen;
    for (const std::string& s : strategies) {
        if (kSingleRunStrategies.find(s) == kSingleRunStrategies.end()) {
            throw ValidationError("unknown strategy '" + s + "'");
        }
        if (!seen.insert(s).second) throw ValidationError("duplicate strategy '" + s + "'");
        if (s == "gs-last" && mode == ExperimentMode::ZERO_SHOT) {
            throw ValidationError("gradient surgery needs multilingual batches; gs-last is few-shot only");
        }
    }
    bool want_ra = false, want_soup = false;
    for (const std::string& v : averaging_variants) {
        if (kRaVariants.count(v)) {
            want_ra = true;
        } else if (kSoupVariants.count(v)) {
            want_soup = true;
        } else {
            throw ValidationError("unknown averaging variant '" + v + "'");
        }
        if (!seen.insert(v).second) throw ValidationError("duplicate averaging variant '" + v + "'");
    }

    if (mode == ExperimentMode::ZERO_SHOT) {
        if (!shot_counts.empty()) throw ValidationError("zero-shot plans take no shot counts");
        if (want_ra && ensemble_runs == 0) {
            throw ValidationError("run-averaging variants need ensemble_runs >= 1");
        }
        if (want_soup && soup_grid.empty()) {
            throw ValidationError("soup variants need a non-empty soup_grid");
        }
        if (include_naive_ra && !want_ra) {
            throw ValidationError("include_naive_ra needs a ra-* variant to compare against");
        }
    } else {
        if (shot_counts.empty()) throw ValidationError("few-shot plans need shot counts");
        if (shot_seeds.empty()) throw ValidationError("few-shot plans need shot-set seeds");
        if (std::set<std::uint64_t>(shot_seeds.begin(), shot_seeds.end()).size() != shot_seeds.size()) {
            throw ValidationError("shot_seeds must be unique");
        }
        if (want_soup) throw ValidationError("soup variants apply to zero-shot plans only");
        if (include_naive_ra) throw ValidationError("include_naive_ra applies to zero-shot plans only");
        for (std::uint64_t s : shot_counts) {
            if (s == 0) throw ValidationError("shot counts must be positive");
            if (s < train.per_language_quota) {
                throw ValidationError("shot count " + std::to_string(s) +
                                      " is below the per-language batch quota");
            }
        }
        auto it = task.sizes.find(Role::TARGET_DEV);
        std::uint64_t max_shots = *std::max_element(shot_counts.begin(), shot_counts.end());
        if (it != task.sizes.end() && it->second <= max_shots) {
            throw ValidationError("target_dev pool must exceed the largest shot count");
        }
    }
    for (const SoupCell& cell : soup_grid) {
        if (cell.peak_lr < 0.0) throw ValidationError("soup cell peak_lr must be non-negative");
    }

    train.validate();
    model.validate();
    task.validate();
    if (model.feature_dim != task.feature_dim || model.n_classes != task.n_classes) {
        throw ValidationError("model geometry does not match the task");
    }
    for (Role role : {Role::TRAIN, Role::SOURCE_DEV, Role::TARGET_DEV, Role::TARGET_TEST}) {
        if (task.sizes.find(role) == task.sizes.end()) {
            throw ValidationError("task must size the '" + role_name(role) + "' split");
        }
    }
    std::size_t targets = 0;
    for (const LanguageSpec& lang : task.languages) {
        if (lang.code != task.source().code) ++targets;
    }
    if (targets == 0) throw ValidationError("task needs at least one target language");
}

namespace {

SoupCell soup_cell_from_json(const ordered_json& j) {
    SoupCell cell;
    cell.peak_lr = j.at("peak_lr").get<double>();
    if (j.contains("scheduler")) cell.scheduler = j["scheduler"].get<bool>();
    return cell;
}

ModelSpec model_spec_from_json(const ordered_json& j) {
    ModelSpec spec;
    spec.family = model_family_from_name(j.at("family").get<std::string>());
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    spec.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("hidden_dim")) spec.hidden_dim = j["hidden_dim"].get<std::size_t>();
    return spec;
}

ordered_json model_spec_to_json(const ModelSpec& spec) {
    ordered_json j = ordered_json::object();
    j["family"] = model_family_name(spec.family);
    j["feature_dim"] = spec.feature_dim;
    j["n_classes"] = spec.n_classes;
    if (spec.family == ModelFamily::MLP) j["hidden_dim"] = spec.hidden_dim;
    return j;
}

}  // namespace

ExperimentPlan plan_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ValidationError(std::string("plan is not valid JSON: ") + e.what());
    }
    ExperimentPlan plan;
    plan.mode = experiment_mode_from_name(j.at("mode").get<std::string>());
    plan.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("shot_counts")) plan.shot_counts = j["shot_counts"].get<std::vector<std::uint64_t>>();
    if (j.contains("shot_seeds")) plan.shot_seeds = j["shot_seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("strategies")) plan.strategies = j["strategies"].get<std::vector<std::string>>();
    if (j.contains("averaging_variants")) {
        plan.averaging_variants = j["averaging_variants"].get<std::vector<std::string>>();
    }
    if (j.contains("ensemble_runs")) plan.ensemble_runs = j["ensemble_runs"].get<std::uint64_t>();
    if (j.contains("soup_grid")) {
        for (const auto& cell : j["soup_grid"]) plan.soup_grid.push_back(soup_cell_from_json(cell));
    }
    if (j.contains("include_naive_ra")) plan.include_naive_ra = j["include_naive_ra"].get<bool>();
    if (j.contains("grouping")) plan.grouping = grouping_from_name(j["grouping"].get<std::string>());
    plan.train = train_config_from_json(j.at("train").dump());
    plan.model = model_spec_from_json(j.at("model"));
    plan.task = task_spec_from_json(j.at("task").dump());
    plan.validate();
    return plan;
}

std::string plan_to_json(const ExperimentPlan& plan) {
    ordered_json j = ordered_json::object();
    j["mode"] = experiment_mode_name(plan.mode);
    j["seeds"] = plan.seeds;
    j["shot_counts"] = plan.shot_counts;
    j["shot_seeds"] = plan.shot_seeds;
    j["strategies"] = plan.strategies;
    j["averaging_variants"] = plan.averaging_variants;
    j["ensemble_runs"] = plan.ensemble_runs;
    ordered_json grid = ordered_json::array();
    for (const SoupCell& cell : plan.soup_grid) {
        ordered_json c = ordered_json::object();
        c["peak_lr"] = cell.peak_lr;
        c["scheduler"] = cell.scheduler;
        grid.push_back(std::move(c));
    }
    j["soup_grid"] = std::move(grid);
    j["include_naive_ra"] = plan.include_naive_ra;
    j["grouping"] = grouping_name(plan.grouping);
    j["train"] = ordered_json::parse(train_config_to_json(plan.train));
    j["model"] = model_spec_to_json(plan.model);
    j["task"] = ordered_json::parse(task_spec_to_json(plan.task));
    return j.dump(2);
}

namespace {

using Pools = std::map<std::string, std::vector<Example>>;

LangScores eval_accuracy_by_language(const ModelParams& params, const Pools& pools) {
    LangScores scores;
    for (const auto& [lang, pool] : pools) {
        LabelSeq pred, gold;
        pred.labels.reserve(pool.size());
        gold.labels.reserve(pool.size());
        for (const Example& ex : pool) {
            pred.labels.push_back(predict(params, ex.features));
            gold.labels.push_back(ex.label);
        }
        scores[lang] = accuracy(pred, gold);
    }
    return scores;
}

std::vector<EvalRecord> build_records(const SnapshotSet& run, const Pools& source_dev,
                                      const Pools& target_dev) {
    std::vector<EvalRecord> records;
    for (const auto& [step, ref] : run.snapshots) {
        ModelParams params = params_from_checkpoint(ref);
        EvalRecord src_rec;
        src_rec.step = step;
        src_rec.split = Split::SOURCE_DEV;
        src_rec.scores = eval_accuracy_by_language(params, source_dev);
        records.push_back(std::move(src_rec));

        EvalRecord trg_rec;
        trg_rec.step = step;
        trg_rec.split = Split::TARGET_DEV;
        trg_rec.scores = eval_accuracy_by_language(params, target_dev);
        records.push_back(std::move(trg_rec));
    }
    return records;
}

ModelParams params_from_memory_checkpoint(Checkpoint cp) {
    auto shared = std::make_shared<const Checkpoint>(std::move(cp));
    return params_from_checkpoint(CheckpointRef::from_memory(shared));
}

LangScores score_selection(const std::string& strategy, const SnapshotSet& run,
                           std::span<const EvalRecord> records, const Pools& target_test) {
    if (strategy == "trg-dev") {
        auto result = select(SelectionStrategy::TRG_DEV, run, records);
        const auto& chosen = std::get<std::map<std::string, SelectedSnapshot>>(result);
        LangScores scores;
        for (const auto& [lang, sel] : chosen) {
            auto pool_it = target_test.find(lang);
            if (pool_it == target_test.end()) {
                throw ValidationError("no target_test pool for language '" + lang + "'");
            }
            ModelParams params = params_from_checkpoint(sel.ref);
            Pools single{{lang, pool_it->second}};
            scores[lang] = eval_accuracy_by_language(params, single).at(lang);
        }
        return scores;
    }

    ModelParams params;
    if (strategy == "ca") {
        auto result = select(SelectionStrategy::CA, run, records);
        params = params_from_memory_checkpoint(std::get<Checkpoint>(std::move(result)));
    } else {  // last, src-dev, gs-last (gs runs pass their own SnapshotSet)
        SelectionStrategy s =
            strategy == "src-dev" ? SelectionStrategy::SRC_DEV : SelectionStrategy::LAST;
        auto result = select(s, run, records);
        params = params_from_checkpoint(std::get<SelectedSnapshot>(result).ref);
    }
    return eval_accuracy_by_language(params, target_test);
}

LangScores score_checkpoint(const Checkpoint& cp, const Pools& target_test) {
    return eval_accuracy_by_language(params_from_memory_checkpoint(cp), target_test);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const std::filesystem::path& workdir) {
    plan.validate();

    ExperimentResult result;
    result.plan = plan;

    auto splits = generate_task(plan.task);
    const std::string source_lang = plan.task.source().code;

    Pools train_all = by_language(splits.at(Role::TRAIN));
    Pools source_train{{source_lang, train_all.at(source_lang)}};
    Pools source_dev{{source_lang, by_language(splits.at(Role::SOURCE_DEV)).at(source_lang)}};

    Pools target_dev, target_test;
    for (auto& [lang, pool] : by_language(splits.at(Role::TARGET_DEV))) {
        if (lang != source_lang) target_dev[lang] = std::move(pool);
    }
    for (auto& [lang, pool] : by_language(splits.at(Role::TARGET_TEST))) {
        if (lang != source_lang) target_test[lang] = std::move(pool);
    }

    SnapshotSchedule schedule = make_schedule(plan.train.total_steps, plan.train.snapshots);

    bool want_ra = false, want_soup = false;
    for (const std::string& v : plan.averaging_variants) {
        want_ra = want_ra || kRaVariants.count(v) > 0;
        want_soup = want_soup || kSoupVariants.count(v) > 0;
    }
    if ((want_ra || want_soup) && plan.model.family == ModelFamily::LINEAR &&
        plan.mode == ExperimentMode::ZERO_SHOT) {
        std::cerr << "warning: the linear model has an empty body; classifier-frozen ensemble runs "
                     "cannot move\n";
    }

    if (plan.mode == ExperimentMode::ZERO_SHOT) {
        for (std::uint64_t seed : plan.seeds) {
            TrainConfig config = plan.train;
            config.seed = seed;
            const std::filesystem::path seed_dir = workdir / ("seed-" + std::to_string(seed));

            if (!plan.strategies.empty()) {
                SnapshotSet run =
                    train_run(config, plan.model, source_train, schedule, seed_dir / "single");
                auto records = build_records(run, source_dev, target_dev);
                for (const std::string& strategy : plan.strategies) {
                    result.raw[strategy][0][0][seed] =
                        score_selection(strategy, run, records, target_test);
                }
            }

            if (want_ra || want_soup) {
                const std::filesystem::path ens_dir = seed_dir / "ensemble";
                SnapshotSet run0;
                RunSet ra_runs;
                if (want_ra) {
                    CurriculumResult curriculum = aligned_ensemble_curriculum(
                        config, plan.ensemble_runs, plan.model, source_train, schedule, ens_dir);
                    run0 = std::move(curriculum.initial_run);
                    ra_runs = std::move(curriculum.ensemble);
                } else {
                    run0 = train_run(config, plan.model, source_train, schedule, ens_dir / "run-000");
                }

                RunSet soup_runs;
                if (want_soup) {
                    const std::string classifier_source = run0.last().source();
                    for (std::size_t j = 0; j < plan.soup_grid.size(); ++j) {
                        TrainConfig cell_config = config;
                        cell_config.peak_lr = plan.soup_grid[j].peak_lr;
                        cell_config.scheduler = plan.soup_grid[j].scheduler;
                        cell_config.seed = seed + 1 + j;
                        cell_config.freeze_classifier_from = classifier_source;
                        soup_runs.runs.push_back(train_run(cell_config, plan.model, source_train,
                                                           schedule,
                                                           ens_dir / ("soup-" + std::to_string(j))));
                    }
                }

                RunSet naive_runs;
                if (plan.include_naive_ra) {
                    for (std::uint64_t i = 1; i <= plan.ensemble_runs; ++i) {
                        TrainConfig naive_config = config;
                        naive_config.seed = seed + i;
                        naive_runs.runs.push_back(train_run(naive_config, plan.model, source_train,
                                                            schedule,
                                                            ens_dir / ("naive-" + std::to_string(i))));
                    }
                }

                for (const std::string& variant : plan.averaging_variants) {
                    const RunSet& runs = kSoupVariants.count(variant) ? soup_runs : ra_runs;
                    Checkpoint cp = average_runs(runs, averaging_variant_from_name(variant));
                    result.raw[variant][0][0][seed] = score_checkpoint(cp, target_test);
                    if (plan.include_naive_ra && kRaVariants.count(variant)) {
                        Checkpoint naive = average_runs(naive_runs, averaging_variant_from_name(variant));
                        result.raw[variant + "-naive"][0][0][seed] =
                            score_checkpoint(naive, target_test);
                    }
                }
            }
        }
    } else {
        TrainConfig source_config = plan.train;
        SnapshotSet source_run =
            train_run(source_config, plan.model, source_train, schedule, workdir / "source");
        Checkpoint source_init = source_run.last().load_all();

        DatasetSplit target_dev_pool;
        target_dev_pool.role = Role::TARGET_DEV;
        for (const TaggedExample& ex : splits.at(Role::TARGET_DEV).examples) {
            if (ex.lang != source_lang) target_dev_pool.examples.push_back(ex);
        }

        for (std::uint64_t shots : plan.shot_counts) {
            for (std::uint64_t shot_seed : plan.shot_seeds) {
                ShotSample sample = sample_shots(target_dev_pool, ShotSpec{shots, shot_seed});
                Pools few_shot_dev = by_language(sample.remainder);

                TrainData data = source_train;
                for (const auto& [lang, pool] : sample.shots) data[lang] = pool;

                const std::filesystem::path set_dir =
                    workdir / ("shots-" + std::to_string(shots)) / ("set-" + std::to_string(shot_seed));

                RunSet seed_runs;
                for (std::uint64_t seed : plan.seeds) {
                    TrainConfig config = plan.train;
                    config.seed = seed;
                    const std::filesystem::path run_dir = set_dir / ("seed-" + std::to_string(seed));

                    SnapshotSet run = train_run(config, plan.model, data, schedule, run_dir,
                                                source_init);
                    auto records = build_records(run, source_dev, few_shot_dev);

                    for (const std::string& strategy : plan.strategies) {
                        if (strategy == "gs-last") {
                            TrainConfig gs_config = config;
                            gs_config.gradient_surgery = true;
                            SnapshotSet gs_run =
                                train_run(gs_config, plan.model, data, schedule,
                                          run_dir / "gs", source_init);
                            auto gs_records = build_records(gs_run, source_dev, few_shot_dev);
                            result.raw[strategy][shots][shot_seed][seed] =
                                score_selection("last", gs_run, gs_records, target_test);
                        } else {
                            result.raw[strategy][shots][shot_seed][seed] =
                                score_selection(strategy, run, records, target_test);
                        }
                    }
                    seed_runs.runs.push_back(std::move(run));
                }

                for (const std::string& variant : plan.averaging_variants) {
                    Checkpoint cp = average_runs(seed_runs, averaging_variant_from_name(variant));
                    result.raw[variant][shots][0][shot_seed] = score_checkpoint(cp, target_test);
                }
            }
        }
    }

    for (const auto& [strategy, by_shots] : result.raw) {
        for (const auto& [shots, groups] : by_shots) {
            MetricReport report = aggregate_grouped(groups, plan.grouping);
            result.table.rows.push_back(ResultRow{strategy, shots, report.mean, report.std_dev});
        }
    }
    return result;
}

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "csv") return ReportFormat::CSV;
    if (name == "json") return ReportFormat::JSON;
    throw ValidationError("unknown report format '" + name + "'");
}

namespace {

std::vector<ResultRow> sorted_rows(const ResultTable& table) {
    std::vector<ResultRow> rows = table.rows;
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.strategy, a.shots) < std::tie(b.strategy, b.shots);
    });
    return rows;
}

ordered_json rows_to_json(const ResultTable& table) {
    ordered_json rows = ordered_json::array();
    for (const ResultRow& row : sorted_rows(table)) {
        ordered_json r = ordered_json::object();
        r["strategy"] = row.strategy;
        r["shots"] = row.shots;
        r["mean"] = round4(row.mean);
        r["std"] = round4(row.std_dev);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

std::string render_report(const ResultTable& table, ReportFormat format) {
    if (format == ReportFormat::CSV) {
        std::string out = "strategy,shots,mean,std\n";
        for (const ResultRow& row : sorted_rows(table)) {
            out += row.strategy + "," + std::to_string(row.shots) + "," + format4(row.mean) + "," +
                   format4(row.std_dev) + "\n";
        }
        return out;
    }
    ordered_json j = ordered_json::object();
    j["rows"] = rows_to_json(table);
    return j.dump(2) + "\n";
}

std::string render_experiment_report(const ExperimentResult& result, ReportFormat format) {
    if (format == ReportFormat::CSV) return render_report(result.table, format);
    ordered_json j = ordered_json::object();
    j["plan"] = ordered_json::parse(plan_to_json(result.plan));
    j["rows"] = rows_to_json(result.table);
    return j.dump(2) + "\n";
}

void emit_report(const ResultTable& table, const std::filesystem::path& destination,
                 ReportFormat format) {
    std::ofstream out(destination, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open '" + destination.string() + "' for writing");
    out << render_report(table, format);
    if (!out) throw IoError("write to '" + destination.string() + "' failed");
}

std::string render_per_language_csv(const ExperimentResult& result) {
    std::string out = metric_report_csv_header();
    for (const auto& [strategy, by_shots] : result.raw) {
        for (const auto& [shots, groups] : by_shots) {
            MetricReport report = aggregate_grouped(groups, result.plan.grouping);
            out += metric_report_to_csv_rows(report, strategy, shots);
        }
    }
    return out;
}

std::string experiment_result_to_json(const ExperimentResult& result) {
    ordered_json j = ordered_json::object();
    j["plan"] = ordered_json::parse(plan_to_json(result.plan));
    ordered_json raw = ordered_json::object();
    for (const auto& [strategy, by_shots] : result.raw) {
        ordered_json shots_obj = ordered_json::object();
        for (const auto& [shots, groups] : by_shots) {
            ordered_json groups_obj = ordered_json::object();
            for (const auto& [group, seeds] : groups) {
                ordered_json seeds_obj = ordered_json::object();
                for (const auto& [seed, scores] : seeds) {
                    ordered_json langs = ordered_json::object();
                    for (const auto& [lang, score] : scores) langs[lang] = score;
                    seeds_obj[std::to_string(seed)] = std::move(langs);
                }
                groups_obj[std::to_string(group)] = std::move(seeds_obj);
            }
            shots_obj[std::to_string(shots)] = std::move(groups_obj);
        }
        raw[strategy] = std::move(shots_obj);
    }
    j["raw"] = std::move(raw);
    ordered_json rows = ordered_json::array();
    for (const ResultRow& row : sorted_rows(result.table)) {
        ordered_json r = ordered_json::object();
        r["strategy"] = row.strategy;
        r["shots"] = row.shots;
        r["mean"] = row.mean;
        r["std"] = row.std_dev;
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

ExperimentResult experiment_result_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ValidationError(std::string("results file is not valid JSON: ") + e.what());
    }
    ExperimentResult result;
    result.plan = plan_from_json(j.at("plan").dump());
    for (const auto& [strategy, shots_obj] : j.at("raw").items()) {
        for (const auto& [shots, groups_obj] : shots_obj.items()) {
            for (const auto& [group, seeds_obj] : groups_obj.items()) {
                for (const auto& [seed, langs] : seeds_obj.items()) {
                    LangScores scores;
                    for (const auto& [lang, score] : langs.items()) scores[lang] = score.get<double>();
                    result.raw[strategy][std::stoull(shots)][std::stoull(group)][std::stoull(seed)] =
                        std::move(scores);
                }
            }
        }
    }
    for (const auto& r : j.at("rows")) {
        result.table.rows.push_back(ResultRow{r.at("strategy").get<std::string>(),
                                              r.at("shots").get<std::uint64_t>(),
                                              r.at("mean").get<double>(),
                                              r.at("std").get<double>()});
    }
    return result;
}

}  // namespace xavg
