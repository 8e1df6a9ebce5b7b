// Single entry point for the whole pipeline: generate fixtures, train victim
// models, search for triggers, and run the analyses. Every command writes its
// primary output atomically and is byte-reproducible for a fixed seed;
// timestamps exist only inside the optional run store.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "triggers/analysis.hpp"
#include "triggers/data.hpp"
#include "triggers/errors.hpp"
#include "triggers/io.hpp"
#include "triggers/models.hpp"
#include "triggers/search.hpp"
#include "triggers/store.hpp"
#include "triggers/synthetic.hpp"

using nlohmann::json;
using namespace triggers;

namespace {

void write_json(const std::string& path, const json& j) {
    atomic_write(path, j.dump(2) + "\n");
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

/// Records the finished command in $TRIGGERS_RUN_STORE when set. A re-run
/// with an identical config hits the duplicate-id guard; that is reported as
/// a warning, not a failure, since the outputs are byte-identical anyway.
void maybe_store(const json& config, const std::vector<std::string>& artifacts) {
    auto store = RunStore::from_env();
    if (!store)
        return;
    try {
        store->store_run(config, artifacts);
    } catch (const DataError& e) {
        if (std::string(e.what()).find("duplicate run id") == std::string::npos)
            throw;
        std::cerr << "warning: " << e.what() << " (outputs already stored)\n";
    }
}

std::vector<MicroModel> load_models(const std::vector<std::string>& paths) {
    std::vector<MicroModel> models;
    models.reserve(paths.size());
    for (const std::string& path : paths)
        models.push_back(MicroModel::from_json(read_json(path)));
    for (const MicroModel& m : models)
        if (m.dim != models.front().dim ||
            m.vocab.content_hash() != models.front().vocab.content_hash())
            throw DataError("ensemble shape mismatch");
    return models;
}

Dataset load_dataset(const std::string& path, const Vocabulary& vocab) {
    return encode(vocab, load_jsonl(path));
}

// ---- gen ----

struct GenArgs {
    std::string spec_path, task, out, vocab_out, targets_out;
    std::optional<std::uint64_t> seed;
};

int run_gen(const GenArgs& args) {
    SyntheticSpec spec;
    if (!args.spec_path.empty())
        spec = SyntheticSpec::from_json(read_json(args.spec_path));
    if (!args.task.empty())
        spec.task = args.task;
    if (args.seed)
        spec.seed = *args.seed;
    spec.validate();

    std::vector<std::string> artifacts{args.out};
    if (spec.task == "generation") {
        LmCorpus lm = generate_lm_corpus(spec, spec.seed);
        save_jsonl(args.out, lm.corpus);
        if (!args.targets_out.empty()) {
            json loss;
            loss["kind"] = "generation_target";
            loss["targets"] = lm.targets;
            loss["include_inputs"] = false;
            write_json(args.targets_out, loss);
            artifacts.push_back(args.targets_out);
        }
    } else {
        RawDataset data = spec.task == "classification"
                              ? generate_classification(spec, spec.seed)
                              : generate_spanqa(spec, spec.seed);
        save_jsonl(args.out, data);
    }
    if (!args.vocab_out.empty()) {
        write_json(args.vocab_out, synthetic_vocab(spec).to_json());
        artifacts.push_back(args.vocab_out);
    }
    json cmd{{"command", "gen"}, {"spec", spec.to_json()}};
    maybe_store(cmd, artifacts);
    std::cout << json{{"examples", spec.n_examples}, {"out", args.out}}.dump(2) << "\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string data, vocab, kind = "bag_classifier", out;
    int dim = 16, classes = 2, epochs = 10;
    double lr = 0.1;
    std::uint64_t seed = 0;
};

int run_train(const TrainArgs& args) {
    Vocabulary vocab = Vocabulary::from_json(read_json(args.vocab));
    Dataset dataset = load_dataset(args.data, vocab);
    MicroModel model =
        MicroModel::make(model_kind_from_name(args.kind), vocab, args.dim, args.classes, args.seed);
    const double before = mean_train_loss(model, dataset);
    model = train(std::move(model), dataset, args.epochs, args.lr, args.seed);
    const double after = mean_train_loss(model, dataset);
    write_json(args.out, model.to_json());
    json cmd{{"command", "train"}, {"data", args.data},   {"kind", args.kind},
             {"dim", args.dim},    {"epochs", args.epochs}, {"lr", args.lr},
             {"seed", args.seed}};
    maybe_store(cmd, {args.out});
    std::cout << json{{"train_loss_before", before}, {"train_loss_after", after}}.dump(2) << "\n";
    return 0;
}

// ---- attack ----

struct AttackArgs {
    std::vector<std::string> models;
    std::string data, loss, config, out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

int run_attack(const AttackArgs& args) {
    set_search_threads(args.threads);
    std::vector<MicroModel> models = load_models(args.models);
    const Vocabulary& vocab = models.front().vocab;
    Dataset dataset = load_dataset(args.data, vocab);
    TaskLoss loss = TaskLoss::from_json(read_json(args.loss), vocab);
    AttackConfig config = AttackConfig::from_json(read_json(args.config));
    if (args.seed)
        config.seed = *args.seed;
    AttackReport report = attack(models, dataset, loss, config);
    write_json(args.out, report.to_json(vocab));
    json cmd{{"command", "attack"},
             {"models", args.models},
             {"data", args.data},
             {"config", report.config},
             {"seed", config.seed}};
    maybe_store(cmd, {args.out});
    std::cout << json{{"final_loss", report.final_loss},
                      {"initial_loss", report.initial_loss},
                      {"success_rate", report.success_rate},
                      {"trigger", report.final_trigger.to_json(vocab)["tokens"]}}
                     .dump(2)
              << "\n";
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::vector<std::string> models;
    std::string report, data, loss, out;
    std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& args) {
    std::vector<MicroModel> victims = load_models(args.models);
    const Vocabulary& vocab = victims.front().vocab;
    AttackReport report = AttackReport::from_json(read_json(args.report), vocab);
    Dataset dataset = load_dataset(args.data, vocab);
    TaskLoss loss = TaskLoss::from_json(read_json(args.loss), vocab);
    std::vector<double> rates = transfer_eval(report.final_trigger, victims, dataset, loss);
    json out{{"models", args.models},
             {"rates", rates},
             {"trigger", report.final_trigger.to_json(vocab)["tokens"]}};
    if (!args.out.empty()) {
        write_json(args.out, out);
        json cmd{{"command", "eval"}, {"models", args.models}, {"report", args.report},
                 {"data", args.data}};
        maybe_store(cmd, {args.out});
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---- pmi ----

struct PmiArgs {
    std::string data, vocab, out, token;
    double smoothing = 100.0;
    int window = 4;
    std::optional<int> cls;
    std::uint64_t seed = 0;
};

int run_pmi(const PmiArgs& args) {
    Vocabulary vocab = Vocabulary::from_json(read_json(args.vocab));
    Dataset dataset = load_dataset(args.data, vocab);
    const bool span_data = !dataset.empty() && dataset.front().span.has_value();
    if (span_data)
        dataset = span_pmi_view(dataset, args.window);
    PmiTable table = compute_pmi(dataset, args.smoothing);
    json out = table.to_json(vocab);
    if (!args.token.empty()) {
        if (!args.cls)
            throw DataError("--token requires --class");
        const int id = vocab.require_id(args.token);
        out["query"] = {{"token", args.token},
                        {"class", *args.cls},
                        {"pmi", table.pmi(id, *args.cls)},
                        {"percentile", pmi_percentile(table, id, *args.cls)}};
    }
    write_json(args.out, out);
    json cmd{{"command", "pmi"}, {"data", args.data}, {"smoothing", args.smoothing}};
    maybe_store(cmd, {args.out});
    if (out.contains("query"))
        std::cout << out["query"].dump(2) << "\n";
    else
        std::cout << json{{"classes", table.class_ids.size()},
                          {"tokens", table.entries.size()}}
                         .dump(2)
                  << "\n";
    return 0;
}

// ---- perturb ----

struct PerturbArgs {
    std::string report, model, data, loss, out;
    int shuffles = 10;
    std::uint64_t seed = 0;
};

int run_perturb(const PerturbArgs& args) {
    MicroModel model = MicroModel::from_json(read_json(args.model));
    AttackReport report = AttackReport::from_json(read_json(args.report), model.vocab);
    Dataset dataset = load_dataset(args.data, model.vocab);
    TaskLoss loss = TaskLoss::from_json(read_json(args.loss), model.vocab);
    PerturbationReport perturbation = perturb_trigger(report.final_trigger, model, dataset, loss,
                                                      args.shuffles, args.seed);
    write_json(args.out, perturbation.to_json());
    json cmd{{"command", "perturb"}, {"report", args.report}, {"shuffles", args.shuffles},
             {"seed", args.seed}};
    maybe_store(cmd, {args.out});
    std::cout << json{{"original_rate", perturbation.original_rate},
                      {"shuffle_avg", perturbation.shuffle_avg},
                      {"shuffle_best", perturbation.shuffle_best}}
                     .dump(2)
              << "\n";
    return 0;
}

// ---- report ----

struct ReportArgs {
    std::string in, csv, out;
    std::uint64_t seed = 0;
};

std::string render_csv(const json& j) {
    std::string csv;
    if (j.contains("loss_curve")) { // attack report
        csv += "step,batch_loss\n";
        int step = 0;
        for (const auto& v : j.at("loss_curve"))
            csv += std::to_string(step++) + "," + std::to_string(v.get<double>()) + "\n";
    } else { // perturbation report
        csv += "perturbation,detail,success_rate\n";
        csv += "original,," + std::to_string(j.at("original_rate").get<double>()) + "\n";
        int trial = 0;
        for (const auto& v : j.at("shuffle").at("rates"))
            csv += "shuffle," + std::to_string(trial++) + "," +
                   std::to_string(v.get<double>()) + "\n";
        csv += "shuffle_avg,," + std::to_string(j.at("shuffle").at("avg").get<double>()) + "\n";
        csv += "shuffle_best,," + std::to_string(j.at("shuffle").at("best").get<double>()) + "\n";
        csv += "placement,front," + std::to_string(j.at("placement").at("front").get<double>()) +
               "\n";
        csv += "placement,end," + std::to_string(j.at("placement").at("end").get<double>()) + "\n";
        for (const auto& r : j.at("removal"))
            csv += "removal," + std::to_string(r.at("position").get<int>()) + "," +
                   std::to_string(r.at("rate").get<double>()) + "\n";
    }
    return csv;
}

int run_report(const ReportArgs& args) {
    json j = read_json(args.in);
    if (!j.contains("loss_curve") && !j.contains("original_rate"))
        throw DataError("not an attack or perturbation report: " + args.in);
    if (!args.csv.empty())
        atomic_write(args.csv, render_csv(j));
    const std::string rendered = j.dump(2) + "\n";
    if (!args.out.empty())
        atomic_write(args.out, rendered);
    else
        std::cout << rendered;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"universal adversarial trigger search and analysis"};
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--spec", gen_args.spec_path, "spec json (defaults when omitted)");
    gen->add_option("--task", gen_args.task, "classification | span | generation");
    gen->add_option("--out", gen_args.out, "dataset jsonl path")->required();
    gen->add_option("--vocab", gen_args.vocab_out, "also write the vocabulary json");
    gen->add_option("--targets-out", gen_args.targets_out,
                    "write the generation target set as a loss json");
    gen->add_option("--seed", gen_args.seed, "override spec seed");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a victim model");
    train->add_option("--data", train_args.data)->required();
    train->add_option("--vocab", train_args.vocab)->required();
    train->add_option("--kind", train_args.kind,
                      "bag_classifier | rnn_classifier | span_pointer | tiny_lm");
    train->add_option("--dim", train_args.dim);
    train->add_option("--classes", train_args.classes);
    train->add_option("--epochs", train_args.epochs);
    train->add_option("--lr", train_args.lr);
    train->add_option("--seed", train_args.seed);
    train->add_option("--out", train_args.out, "checkpoint path")->required();

    AttackArgs attack_args;
    auto* atk = app.add_subcommand("attack", "search for a universal trigger");
    atk->add_option("--model", attack_args.models, "checkpoint; repeat to ensemble")->required();
    atk->add_option("--data", attack_args.data)->required();
    atk->add_option("--loss", attack_args.loss, "task loss json")->required();
    atk->add_option("--config", attack_args.config, "attack config json")->required();
    atk->add_option("--out", attack_args.out, "report path")->required();
    atk->add_option("--seed", attack_args.seed, "override config seed");
    atk->add_option("--threads", attack_args.threads, "beam scoring workers");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score a found trigger on victim models");
    eval->add_option("--model", eval_args.models, "victim checkpoint; repeatable")->required();
    eval->add_option("--report", eval_args.report, "attack report with the trigger")->required();
    eval->add_option("--data", eval_args.data)->required();
    eval->add_option("--loss", eval_args.loss)->required();
    eval->add_option("--out", eval_args.out, "write rates json here");
    eval->add_option("--seed", eval_args.seed, "unused; accepted for uniformity");

    PmiArgs pmi_args;
    auto* pmi = app.add_subcommand("pmi", "token-class PMI table with smoothing");
    pmi->add_option("--data", pmi_args.data)->required();
    pmi->add_option("--vocab", pmi_args.vocab)->required();
    pmi->add_option("--smoothing", pmi_args.smoothing);
    pmi->add_option("--window", pmi_args.window, "span context window");
    pmi->add_option("--token", pmi_args.token, "report this token's percentile");
    pmi->add_option("--class", pmi_args.cls, "class for --token");
    pmi->add_option("--out", pmi_args.out)->required();
    pmi->add_option("--seed", pmi_args.seed, "unused; accepted for uniformity");

    PerturbArgs perturb_args;
    auto* per = app.add_subcommand("perturb", "shuffle/placement/removal study");
    per->add_option("--report", perturb_args.report)->required();
    per->add_option("--model", perturb_args.model)->required();
    per->add_option("--data", perturb_args.data)->required();
    per->add_option("--loss", perturb_args.loss)->required();
    per->add_option("--shuffles", perturb_args.shuffles);
    per->add_option("--seed", perturb_args.seed);
    per->add_option("--out", perturb_args.out)->required();

    ReportArgs report_args;
    auto* rep = app.add_subcommand("report", "render a stored report");
    rep->add_option("--in", report_args.in)->required();
    rep->add_option("--csv", report_args.csv, "also emit a csv table");
    rep->add_option("--out", report_args.out, "write rendering here instead of stdout");
    rep->add_option("--seed", report_args.seed, "unused; accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage problems exit 1; --help exits 0
    }

    try {
        if (gen->parsed())
            return run_gen(gen_args);
        if (train->parsed())
            return run_train(train_args);
        if (atk->parsed())
            return run_attack(attack_args);
        if (eval->parsed())
            return run_eval(eval_args);
        if (pmi->parsed())
            return run_pmi(pmi_args);
        if (per->parsed())
            return run_perturb(perturb_args);
        if (rep->parsed())
            return run_report(report_args);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
