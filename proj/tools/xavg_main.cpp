// xavg: train toy runs, average checkpoints, select snapshots, evaluate,
// and drive full experiment sweeps.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xavg/harness.hpp"
#include "xavg/snapshot_policy.hpp"
#include "xavg/synth_task.hpp"
#include "xavg/trainer.hpp"

namespace {

using namespace xavg;

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Feature dimension and class count implied by a training pool.
ModelSpec infer_model_spec(const TrainData& data, const std::string& family,
                           std::size_t hidden_dim) {
    ModelSpec spec;
    spec.family = model_family_from_name(family);
    spec.hidden_dim = spec.family == ModelFamily::MLP ? hidden_dim : 0;
    int max_label = 0;
    for (const auto& [lang, pool] : data) {
        for (const Example& ex : pool) {
            if (spec.feature_dim == 0) spec.feature_dim = ex.features.size();
            if (ex.features.size() != spec.feature_dim) {
                throw ValidationError("inconsistent feature dimensions in the training data");
            }
            if (ex.label < 0) throw ValidationError("labels must be non-negative");
            max_label = std::max(max_label, ex.label);
        }
    }
    spec.n_classes = static_cast<std::size_t>(max_label) + 1;
    if (spec.n_classes < 2) {
        throw ValidationError("training data covers fewer than two classes");
    }
    return spec;
}

int cmd_gen(const std::string& task_path, const std::string& out_dir) {
    TaskSpec task = task_spec_from_json(read_text_file(task_path));
    std::filesystem::create_directories(out_dir);
    auto splits = generate_task(task);
    for (const auto& [role, split] : splits) {
        write_dataset_jsonl(split, std::filesystem::path(out_dir) / (role_name(role) + ".jsonl"));
    }
    std::cout << "wrote " << splits.size() << " splits under " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, const std::string& family, std::size_t hidden_dim,
              const std::string& init_from) {
    TrainConfig config = train_config_from_json(read_text_file(config_path));
    TrainData data = by_language(read_dataset_jsonl(data_path, Role::TRAIN));

    std::optional<Checkpoint> init;
    ModelSpec spec;
    if (!init_from.empty()) {
        CheckpointRef ref = open_checkpoint(init_from);
        spec = model_spec_from_metadata(ref.metadata());
        init = ref.load_all();
    } else {
        spec = infer_model_spec(data, family, hidden_dim);
    }

    SnapshotSchedule schedule = make_schedule(config.total_steps, config.snapshots);
    SnapshotSet run = train_run(config, spec, data, schedule, out_dir, init);
    std::cout << "trained " << run.run_id << ": " << run.snapshots.size()
              << " snapshots under " << out_dir << "\n";
    return 0;
}

bool is_run_dir(const std::filesystem::path& path) {
    return std::filesystem::is_directory(path) && std::filesystem::exists(path / "run.json");
}

int cmd_avg(const std::string& variant_name, const std::vector<std::string>& inputs,
            const std::string& out) {
    AveragingVariant variant = averaging_variant_from_name(variant_name);

    Checkpoint result;
    if (variant == AveragingVariant::CA) {
        if (inputs.size() == 1 && is_run_dir(inputs[0])) {
            result = average_run_ca(load_run(inputs[0]));
        } else {
            std::vector<CheckpointRef> refs;
            for (const std::string& input : inputs) refs.push_back(open_checkpoint(input));
            result = streaming_mean(refs);
        }
    } else {
        RunSet runs;
        for (const std::string& input : inputs) {
            if (!is_run_dir(input)) {
                throw ValidationError("'" + input + "' is not a run directory (no run.json)");
            }
            runs.runs.push_back(load_run(input));
        }
        result = average_runs(runs, variant);
    }
    write_checkpoint(result, out);
    std::cout << "wrote " << out << " (" << variant_name << " over " << inputs.size()
              << " input" << (inputs.size() == 1 ? "" : "s") << ")\n";
    return 0;
}

int cmd_select(const std::string& strategy_name, const std::string& run_dir,
               const std::string& records_path, const std::string& out) {
    SelectionStrategy strategy = selection_strategy_from_name(strategy_name);
    SnapshotSet run = load_run(run_dir);

    std::vector<EvalRecord> records;
    if (!records_path.empty()) {
        std::ifstream in(records_path);
        if (!in) throw IoError("cannot open '" + records_path + "'");
        records = eval_records_from_jsonl(in);
    }

    SelectionResult result = select(strategy, run, records);
    if (auto* single = std::get_if<SelectedSnapshot>(&result)) {
        std::filesystem::copy_file(single->ref.source(), out,
                                   std::filesystem::copy_options::overwrite_existing);
        std::cout << "selected step " << single->step << " -> " << out << "\n";
    } else if (auto* averaged = std::get_if<Checkpoint>(&result)) {
        write_checkpoint(*averaged, out);
        std::cout << "averaged " << run.snapshots.size() << " snapshots -> " << out << "\n";
    } else {
        const auto& per_language = std::get<std::map<std::string, SelectedSnapshot>>(result);
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [lang, sel] : per_language) {
            nlohmann::ordered_json entry = nlohmann::ordered_json::object();
            entry["step"] = sel.step;
            entry["file"] = sel.ref.source();
            j[lang] = std::move(entry);
        }
        write_text_file(out, j.dump(2) + "\n");
        std::cout << "wrote per-language selection map -> " << out << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& split_name, std::uint64_t step, const std::string& records_out) {
    CheckpointRef ref = open_checkpoint(checkpoint_path);
    ModelParams params = params_from_checkpoint(ref);
    DatasetSplit split = read_dataset_jsonl(data_path, Role::TARGET_TEST);

    std::map<std::string, double> scores;
    for (const auto& [lang, pool] : by_language(split)) {
        LabelSeq pred, gold;
        for (const Example& ex : pool) {
            pred.labels.push_back(predict(params, ex.features));
            gold.labels.push_back(ex.label);
        }
        scores[lang] = accuracy(pred, gold);
    }

    EvalRecord record{step, split_from_name(split_name), scores};
    std::vector<EvalRecord> one{record};
    std::cout << eval_records_to_jsonl(one);

    if (!records_out.empty()) {
        std::ofstream out(records_out, std::ios::app);
        if (!out) throw IoError("cannot open '" + records_out + "' for appending");
        out << eval_records_to_jsonl(one);
    }
    return 0;
}

int cmd_experiment(const std::string& plan_path, const std::string& out_dir) {
    ExperimentPlan plan = plan_from_json(read_text_file(plan_path));
    std::filesystem::create_directories(out_dir);
    ExperimentResult result = run_experiment(plan, std::filesystem::path(out_dir) / "work");

    write_text_file(std::filesystem::path(out_dir) / "plan.resolved.json", plan_to_json(plan) + "\n");
    write_text_file(std::filesystem::path(out_dir) / "report.csv",
                    render_experiment_report(result, ReportFormat::CSV));
    write_text_file(std::filesystem::path(out_dir) / "report.json",
                    render_experiment_report(result, ReportFormat::JSON));
    write_text_file(std::filesystem::path(out_dir) / "per_language.csv",
                    render_per_language_csv(result));
    write_text_file(std::filesystem::path(out_dir) / "results.json",
                    experiment_result_to_json(result));

    std::cout << render_experiment_report(result, ReportFormat::CSV);
    return 0;
}

int cmd_report(const std::string& results_path, const std::string& format_name,
               const std::string& out) {
    ExperimentResult result = experiment_result_from_json(read_text_file(results_path));
    ReportFormat format = report_format_from_name(format_name);
    std::string text = render_experiment_report(result, format);
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text_file(out, text);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Checkpoint-averaging toolkit and cross-lingual transfer harness"};
    app.require_subcommand(1);

    // gen
    std::string gen_task, gen_out;
    auto* gen = app.add_subcommand("gen", "Generate synthetic dataset splits from a task spec");
    gen->add_option("--task", gen_task, "TaskSpec JSON file")->required();
    gen->add_option("--out", gen_out, "Directory for the split JSONL files")->required();

    // train
    std::string train_config, train_data, train_out, train_family = "linear", train_init;
    std::size_t train_hidden = 16;
    auto* train = app.add_subcommand("train", "Train one run from a JSON config");
    train->add_option("--config", train_config, "TrainConfig JSON file")->required();
    train->add_option("--data", train_data, "Training data (JSONL)")->required();
    train->add_option("--out", train_out, "Run directory to create")->required();
    train->add_option("--model", train_family, "Model family: linear | mlp");
    train->add_option("--hidden-dim", train_hidden, "Hidden width for mlp");
    train->add_option("--init-from", train_init, "Checkpoint to initialize from");

    // avg
    std::string avg_variant, avg_out;
    std::vector<std::string> avg_inputs;
    auto* avg = app.add_subcommand("avg", "Average checkpoints or runs");
    avg->add_option("--variant", avg_variant, "ca | ra-last | ra-ca | soup-last | soup-ca")->required();
    avg->add_option("inputs", avg_inputs, "Checkpoint files (ca) or run directories")->required();
    avg->add_option("-o,--out", avg_out, "Output checkpoint path")->required();

    // select
    std::string sel_strategy, sel_run, sel_records, sel_out;
    auto* sel = app.add_subcommand("select", "Apply a model-selection strategy to a run");
    sel->add_option("--strategy", sel_strategy, "last | src-dev | trg-dev | ca")->required();
    sel->add_option("--run", sel_run, "Run directory")->required();
    sel->add_option("--records", sel_records, "Eval records (JSONL)");
    sel->add_option("-o,--out", sel_out, "Output path")->required();

    // eval
    std::string eval_ckpt, eval_data, eval_split = "target_test", eval_records;
    std::uint64_t eval_step = 0;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--data", eval_data, "Dataset (JSONL)")->required();
    eval->add_option("--split", eval_split, "source_dev | target_dev | target_test");
    eval->add_option("--step", eval_step, "Step index recorded with the scores");
    eval->add_option("--records", eval_records, "Append the eval record to this JSONL file");

    // experiment
    std::string exp_plan, exp_out;
    auto* exp = app.add_subcommand("experiment", "Run a full sweep from a plan");
    exp->add_option("--plan", exp_plan, "ExperimentPlan JSON file")->required();
    exp->add_option("--out", exp_out, "Output directory")->required();

    // report
    std::string rep_results, rep_format = "csv", rep_out;
    auto* rep = app.add_subcommand("report", "Re-emit a stored experiment result");
    rep->add_option("--results", rep_results, "results.json from an experiment run")->required();
    rep->add_option("--format", rep_format, "csv | json");
    rep->add_option("-o,--out", rep_out, "Output file (stdout when omitted)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen(gen_task, gen_out);
        if (train->parsed()) {
            return cmd_train(train_config, train_data, train_out, train_family, train_hidden,
                             train_init);
        }
        if (avg->parsed()) return cmd_avg(avg_variant, avg_inputs, avg_out);
        if (sel->parsed()) return cmd_select(sel_strategy, sel_run, sel_records, sel_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_step, eval_records);
        if (exp->parsed()) return cmd_experiment(exp_plan, exp_out);
        if (rep->parsed()) return cmd_report(rep_results, rep_format, rep_out);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const xavg::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const xavg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
