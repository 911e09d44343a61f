// miavlm: synthetic multiview data generation, benchmark construction,
// training, evaluation and the input-order experiment, end to end on one CPU.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "miavlm/bench.hpp"
#include "miavlm/checkpoint.hpp"
#include "miavlm/runner.hpp"
#include "miavlm/synthetic.hpp"
#include "miavlm/version.hpp"

namespace fs = std::filesystem;
using namespace miavlm;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
};

MapConfig resolve_config(const CommonOpts& opts) {
    if (!opts.config_path.empty()) return read_map_config(opts.config_path);
    return MapConfig::desk_scale();
}

void ensure_out_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

AntonymLexicon resolve_lexicon(const std::string& path) {
    return path.empty() ? AntonymLexicon::builtin() : AntonymLexicon::load(path);
}

Vocabulary benchmark_vocab(const AntonymLexicon& lexicon) {
    return Vocabulary::from_benchmark(QuestionTemplates::builtin(), lexicon);
}

int cmd_gen_data(const CommonOpts& opts, std::size_t count, std::size_t views,
                 std::size_t d_enc, std::size_t patches) {
    SyntheticConfig config;
    config.num_views = views;
    config.d_enc = d_enc;
    config.patches = patches;
    auto dataset = gen_synthetic(count, config, opts.seed);

    ensure_out_dir(opts.out_dir);
    std::vector<SceneEmbeddings> embeddings;
    embeddings.reserve(dataset.scenes.size());
    for (auto& s : dataset.scenes) embeddings.push_back(s.embeddings);
    const auto scenes_path = (fs::path(opts.out_dir) / "scenes.bin").string();
    const auto records_path = (fs::path(opts.out_dir) / "records.jsonl").string();
    save_scenes(scenes_path, embeddings);
    save_records(records_path, dataset.records);
    std::cout << "wrote " << dataset.scenes.size() << " scenes (" << views << " views each) to "
              << scenes_path << "\nwrote " << dataset.records.size() << " attribute records to "
              << records_path << "\n";
    return 0;
}

int cmd_gen_benchmark(const CommonOpts& opts, const std::string& records_path,
                      const std::string& lexicon_path) {
    const auto records = load_records(records_path);
    const auto lexicon = resolve_lexicon(lexicon_path);
    const auto templates = QuestionTemplates::builtin();

    auto positives = gen_positive(records, templates);
    auto negatives = gen_negative(positives, lexicon, opts.seed);
    std::vector<Question> all = positives;
    all.insert(all.end(), negatives.begin(), negatives.end());
    auto split = split_instructions(all, opts.seed);

    ensure_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    save_questions((out / "questions.jsonl").string(), all);
    save_questions((out / "questions_train.jsonl").string(), split.train);
    save_questions((out / "questions_test.jsonl").string(), split.test);
    lexicon.save((out / "lexicon.json").string());
    std::cout << "wrote " << positives.size() << " positive + " << negatives.size()
              << " negative questions; split " << split.train.size() << "/" << split.test.size()
              << " (train/test) under " << opts.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& scenes_path,
              const std::string& questions_path, const std::string& lexicon_path, int epochs,
              double lr, int batch_size, bool positives_only) {
    RunConfig run;
    run.map = resolve_config(opts);
    run.epochs = epochs;
    run.lr = lr;
    run.batch_size = batch_size;
    run.seed = opts.seed;
    run.include_negatives = !positives_only;
    run.scenes_path = scenes_path;
    run.questions_path = questions_path;
    run.out_dir = opts.out_dir;

    const auto scenes = load_scenes(scenes_path);
    const auto questions = load_questions(questions_path);
    const auto lexicon = resolve_lexicon(lexicon_path);
    const auto vocab = benchmark_vocab(lexicon);

    auto model = init_model(run.map, vocab.size(), run.seed);
    const auto log = train_model(model, scenes, questions, vocab, run);

    ensure_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    save_checkpoint((out / "checkpoint.bin").string(), named_params(model));
    write_map_config((out / "model.cfg").string(), run.map);
    write_json((out / "train_log.json").string(), train_log_to_json(log, run));
    std::cout << "trained " << epochs << " epochs on " << questions.size() << " questions; ";
    if (!log.epoch_losses.empty())
        std::cout << "loss " << log.epoch_losses.front() << " -> " << log.epoch_losses.back()
                  << "; ";
    std::cout << "checkpoint at " << (out / "checkpoint.bin").string() << "\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& checkpoint_path,
                 const std::string& scenes_path, const std::string& questions_path,
                 const std::string& lexicon_path) {
    RunConfig run;
    run.map = resolve_config(opts);
    run.seed = opts.seed;
    run.scenes_path = scenes_path;
    run.questions_path = questions_path;
    run.out_dir = opts.out_dir;

    const auto scenes = load_scenes(scenes_path);
    const auto questions = load_questions(questions_path);
    const auto lexicon = resolve_lexicon(lexicon_path);
    const auto vocab = benchmark_vocab(lexicon);

    auto model = init_model(run.map, vocab.size(), run.seed);
    auto params = named_params(model);
    load_checkpoint_into(checkpoint_path, params);

    const auto report = evaluate_model(model, run.map, vocab, scenes, questions);
    ensure_out_dir(opts.out_dir);
    const auto report_path = (fs::path(opts.out_dir) / "eval_report.json").string();
    write_json(report_path, eval_report_to_json(report, run));
    std::cout << "positive " << report.positive_accuracy << ", negative "
              << report.negative_accuracy << ", hooa " << report.hooa << "; report at "
              << report_path << "\n";
    return 0;
}

int cmd_order_exp(const CommonOpts& opts, const std::string& checkpoint_path,
                  const std::string& scenes_path, const std::string& questions_path,
                  const std::string& lexicon_path, std::size_t shuffles) {
    RunConfig run;
    run.map = resolve_config(opts);
    run.seed = opts.seed;
    run.scenes_path = scenes_path;
    run.questions_path = questions_path;
    run.out_dir = opts.out_dir;

    const auto scenes = load_scenes(scenes_path);
    auto questions = load_questions(questions_path);
    std::erase_if(questions, [](const Question& q) { return q.polarity != Polarity::kPositive; });
    if (questions.empty()) throw std::runtime_error("order-exp: no positive questions in input");
    const auto lexicon = resolve_lexicon(lexicon_path);
    const auto vocab = benchmark_vocab(lexicon);

    auto model = init_model(run.map, vocab.size(), run.seed);
    auto params = named_params(model);
    load_checkpoint_into(checkpoint_path, params);

    const auto report = order_experiment(model, run.map, vocab, scenes, questions, shuffles,
                                         opts.seed);
    ensure_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    write_json((out / "order_report.json").string(), order_report_to_json(report, run));
    write_order_plot_data((out / "order_plot.tsv").string(), report);
    std::cout << "miavlm variance " << report.miavlm.variance << ", baseline variance "
              << report.baseline.variance << "; report at " << (out / "order_report.json").string()
              << "\n";
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
    const auto j = read_json(in_path);
    const std::string kind = j.value("kind", "");
    if (kind == "order_experiment") {
        const auto report = order_report_from_json(j);
        std::cout << "order experiment (seed " << report.seed << ", " << report.shuffles
                  << " shuffles)\n";
        for (const auto* model : {&report.miavlm, &report.baseline}) {
            std::cout << "  " << model->label << ": variance " << model->variance << ", metrics";
            for (const auto& run : model->runs) std::cout << " " << run.metric;
            std::cout << "\n";
        }
        if (!out_dir.empty()) {
            ensure_out_dir(out_dir);
            const auto plot = (fs::path(out_dir) / "order_plot.tsv").string();
            write_order_plot_data(plot, report);
            std::cout << "plot data at " << plot << "\n";
        }
    } else if (kind == "evaluation") {
        const auto report = report_from_json(j.at("eval"));
        std::cout << "evaluation: positive " << report.positive_accuracy << ", negative "
                  << report.negative_accuracy << ", hooa " << report.hooa << " over "
                  << report.counts.total << " questions\n";
    } else if (kind == "train_log") {
        const auto losses = j.at("epoch_losses").get<std::vector<double>>();
        std::cout << "training log: " << losses.size() << " epochs";
        if (!losses.empty()) std::cout << ", loss " << losses.front() << " -> " << losses.back();
        std::cout << "\n";
    } else {
        throw std::runtime_error("report: unrecognized report kind '" + kind + "' in " + in_path);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MIAVLM desk-scale pipeline"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.failure_message([](const CLI::App*, const CLI::Error& e) {
        return std::string("error: ") + e.what() + "\n";
    });

    CommonOpts opts;
    std::string scenes_path, questions_path, checkpoint_path, records_path, lexicon_path, in_path;
    std::size_t count = 60, views = 3, d_enc = 16, patches = 4, shuffles = 5;
    int epochs = 20, batch_size = 32;
    double lr = 0.001;
    bool positives_only = false;

    auto add_common = [&](CLI::App* cmd, bool with_config = true) {
        cmd->add_option("--seed", opts.seed, "random seed");
        cmd->add_option("--out", opts.out_dir, "output directory");
        if (with_config) cmd->add_option("--config", opts.config_path, "model config file");
    };

    auto* gen_data = app.add_subcommand("gen-data", "generate synthetic multiview scenes");
    add_common(gen_data, false);
    gen_data->add_option("--count", count, "number of scenes");
    gen_data->add_option("--views", views, "views per scene (1..9)");
    gen_data->add_option("--d-enc", d_enc, "raw embedding width");
    gen_data->add_option("--patches", patches, "patch tokens per view");

    auto* gen_bench = app.add_subcommand("gen-benchmark", "build question sets from records");
    add_common(gen_bench, false);
    gen_bench->add_option("--records", records_path, "attribute records (JSONL)")->required();
    gen_bench->add_option("--lexicon", lexicon_path, "antonym lexicon (JSON)");

    auto* train = app.add_subcommand("train", "train the model");
    add_common(train);
    train->add_option("--scenes", scenes_path, "multiview embedding file")->required();
    train->add_option("--questions", questions_path, "training questions (JSONL)")->required();
    train->add_option("--lexicon", lexicon_path, "antonym lexicon (JSON)");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--lr", lr, "base learning rate");
    train->add_option("--batch", batch_size, "batch size");
    train->add_flag("--positives-only", positives_only, "drop negative instructions");

    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a question set");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint_path, "parameter container")->required();
    evaluate->add_option("--scenes", scenes_path, "multiview embedding file")->required();
    evaluate->add_option("--questions", questions_path, "questions (JSONL)")->required();
    evaluate->add_option("--lexicon", lexicon_path, "antonym lexicon (JSON)");

    auto* order = app.add_subcommand("order-exp", "input-order sensitivity experiment");
    add_common(order);
    order->add_option("--checkpoint", checkpoint_path, "parameter container")->required();
    order->add_option("--scenes", scenes_path, "multiview embedding file (9 views per scene)")
        ->required();
    order->add_option("--questions", questions_path, "questions (positives are used)")->required();
    order->add_option("--lexicon", lexicon_path, "antonym lexicon (JSON)");
    order->add_option("--shuffles", shuffles, "number of seeded shuffles");

    auto* report = app.add_subcommand("report", "summarize a stored report");
    report->add_option("--in", in_path, "report JSON")->required();
    report->add_option("--out", opts.out_dir, "directory for derived plot data");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_data->parsed()) return cmd_gen_data(opts, count, views, d_enc, patches);
        if (gen_bench->parsed()) return cmd_gen_benchmark(opts, records_path, lexicon_path);
        if (train->parsed())
            return cmd_train(opts, scenes_path, questions_path, lexicon_path, epochs, lr,
                             batch_size, positives_only);
        if (evaluate->parsed())
            return cmd_evaluate(opts, checkpoint_path, scenes_path, questions_path, lexicon_path);
        if (order->parsed())
            return cmd_order_exp(opts, checkpoint_path, scenes_path, questions_path, lexicon_path,
                                 shuffles);
        if (report->parsed())
            return cmd_report(in_path, report->count("--out") ? opts.out_dir : "");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
