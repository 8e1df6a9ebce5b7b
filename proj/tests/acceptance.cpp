// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit when any
// criterion fails. Every tolerance and fixture parameter is pinned here.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "support.hpp"
#include "triggers/analysis.hpp"
#include "triggers/data.hpp"
#include "triggers/errors.hpp"
#include "triggers/io.hpp"
#include "triggers/losses.hpp"
#include "triggers/models.hpp"
#include "triggers/search.hpp"
#include "triggers/synthetic.hpp"
#include "triggers/trigger.hpp"
#include "triggers/vocab.hpp"

using namespace triggers;
using triggers::test::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(4) << x;
    return os.str();
}

struct Result {
    bool ok = true;
    std::string detail;

    void check(bool cond, const std::string& why) {
        if (!cond && ok) {
            ok = false;
            detail = why;
        }
    }
    void note(const std::string& text) {
        if (ok)
            detail = text;
    }
};

// ---- criterion 1 ----------------------------------------------------------

Result criterion1() {
    Result r;
    const auto t0 = Clock::now();
    const ModelKind kinds[] = {ModelKind::bag_classifier, ModelKind::rnn_classifier,
                               ModelKind::span_pointer, ModelKind::tiny_lm};
    double worst = 0.0;
    for (int ki = 0; ki < 4; ++ki) {
        for (int i = 0; i < 20; ++i) {
            const test::GradCase gc = test::random_grad_case(kinds[ki], 9000 + 100 * ki + i);
            const TriggerGradient g = trigger_gradient(gc.model, gc.trigger, {gc.example}, gc.loss);
            worst = std::max(
                worst, test::grad_mismatch(g.grad, test::fd_gradient(gc.model, gc.trigger,
                                                                     gc.example, gc.loss)));
        }
    }
    const double secs = seconds_since(t0);
    r.check(worst <= 1e-4, "worst relative error " + fmt(worst));
    r.check(secs < 30.0, "took " + fmt(secs) + " s");
    r.note("80 cases, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s");
    return r;
}

// ---- criterion 2 ----------------------------------------------------------

std::vector<int> brute_force_topk(const Eigen::VectorXd& grad, const Eigen::VectorXd& cur,
                                  const EmbeddingMatrix& E, int k, const TokenFilter& filter,
                                  bool subtract_current) {
    std::vector<std::pair<double, int>> scored;
    for (int id = 0; id < E.count(); ++id) {
        if (!filter.permits(id))
            continue;
        const double s = subtract_current ? (E.rows.row(id) - cur.transpose()).dot(grad)
                                          : E.rows.row(id).dot(grad);
        scored.emplace_back(s, id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> ids;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(scored.size())); ++i)
        ids.push_back(scored[i].second);
    return ids;
}

Result criterion2() {
    Result r;
    std::mt19937_64 rng(20240823);
    std::normal_distribution<double> normal;
    auto uniform = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    for (int draw = 0; draw < 1000 && r.ok; ++draw) {
        const Vocabulary vocab = test::tiny_vocab(uniform(6, 16));
        const int dim = uniform(2, 6);
        const EmbeddingMatrix E = EmbeddingMatrix::deterministic(vocab, dim);
        const Eigen::VectorXd grad =
            Eigen::VectorXd::NullaryExpr(dim, [&] { return normal(rng); });
        const Eigen::VectorXd cur =
            E.rows.row(test::random_content_id(rng, vocab)).transpose();
        const int k = uniform(1, 5);
        TokenFilter filter = TokenFilter::all(vocab);
        if (draw % 3 == 0) {
            std::vector<std::string> blacklist;
            for (int i = uniform(1, 3); i > 0; --i)
                blacklist.push_back(vocab.token(test::random_content_id(rng, vocab)));
            filter = TokenFilter::make(vocab, blacklist);
        }
        const CandidateList got = hotflip_candidates(grad, cur, E, k, filter);
        const std::vector<int> shifted = brute_force_topk(grad, cur, E, k, filter, true);
        const std::vector<int> plain = brute_force_topk(grad, cur, E, k, filter, false);
        r.check(got.ids == shifted, "draw " + std::to_string(draw) + ": ids differ from brute force");
        r.check(shifted == plain, "draw " + std::to_string(draw) + ": ranking not shift-invariant");
        r.check(got.short_of_k == (filter.permitted_count() < k),
                "draw " + std::to_string(draw) + ": short_of_k flag wrong");
    }
    r.note("1000 draws, ids and order exact both with and without the shift term");
    return r;
}

// ---- criterion 3 ----------------------------------------------------------

struct RunSetup {
    std::vector<MicroModel> models;
    Dataset dataset;
    TaskLoss loss;
    AttackConfig config;
};

RunSetup monotone_run(int s) {
    const ModelKind kinds[] = {ModelKind::bag_classifier, ModelKind::rnn_classifier,
                               ModelKind::span_pointer, ModelKind::tiny_lm};
    const ModelKind kind = kinds[s % 4];
    const bool classifier =
        kind == ModelKind::bag_classifier || kind == ModelKind::rnn_classifier;
    std::mt19937_64 rng(7000 + s);
    const Vocabulary vocab = test::tiny_vocab(12);

    RunSetup r;
    r.models.push_back(MicroModel::make(kind, vocab, 4, classifier ? 2 : 0, 100 + s));
    if (s % 5 == 0)
        r.models.push_back(MicroModel::make(kind, vocab, 4, classifier ? 2 : 0, 500 + s));
    for (int i = 0; i < 10; ++i) {
        Example ex;
        ex.input_ids = test::random_content_ids(rng, vocab, 4 + static_cast<int>(rng() % 3));
        if (classifier)
            ex.label = i % 2;
        if (kind == ModelKind::span_pointer)
            ex.question_ids = test::random_content_ids(rng, vocab, 2);
        r.dataset.push_back(std::move(ex));
    }
    switch (kind) {
    case ModelKind::bag_classifier:
    case ModelKind::rnn_classifier:
        r.loss = TaskLoss::for_class(0);
        break;
    case ModelKind::span_pointer:
        r.loss = TaskLoss::for_span(1, 1);
        r.config.target_span = TargetSpan{1, {vocab.token(test::random_content_id(rng, vocab))}};
        break;
    case ModelKind::tiny_lm:
        r.loss = TaskLoss::for_generation({test::random_content_ids(rng, vocab, 2)}, true);
        break;
    }
    r.config.trigger_length = 3;
    r.config.init_token = "w00";
    r.config.num_candidates = 2;
    r.config.beam_size = 2;
    r.config.iterations = 2;
    r.config.batch_size = 4;
    r.config.seed = s;
    r.config.record_trace = true;
    return r;
}

Result criterion3() {
    Result r;
    for (int s = 0; s < 100 && r.ok; ++s) {
        const RunSetup run = monotone_run(s);
        const AttackReport rep = attack(run.models, run.dataset, run.loss, run.config);
        const std::string tag = "run " + std::to_string(s) + ": ";

        // Replay the seeded batch schedule and compare each step against the
        // loss of the trigger it started from.
        std::mt19937_64 rng(run.config.seed);
        std::vector<int> order(run.dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Trigger prev = init_trigger(run.config, run.models.front().vocab);
        std::size_t t = 0;
        for (int epoch = 0; epoch < run.config.iterations; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t at = 0; at < order.size();
                 at += static_cast<std::size_t>(run.config.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), at + static_cast<std::size_t>(run.config.batch_size));
                std::vector<Example> batch;
                for (std::size_t i = at; i < stop; ++i)
                    batch.push_back(run.dataset[order[i]]);
                if (t >= rep.trace.size()) {
                    r.check(false, tag + "trace shorter than the batch schedule");
                    break;
                }
                const double post = ensemble_loss(run.models, rep.trace[t], batch, run.loss);
                r.check(post == rep.loss_curve[t], tag + "batch replay mismatch at step " +
                                                       std::to_string(t));
                const double pre = ensemble_loss(run.models, prev, batch, run.loss);
                r.check(rep.loss_curve[t] <= pre + 1e-12,
                        tag + "step " + std::to_string(t) + " increased batch loss");
                prev = rep.trace[t];
                ++t;
            }
        }
        r.check(t == rep.trace.size(), tag + "trace length " + std::to_string(rep.trace.size()));
        r.check(rep.final_loss <= rep.initial_loss + 1e-12, tag + "final above initial");
    }
    r.note("100 runs x 6 steps, every step non-increasing, finals below initials");
    return r;
}

// ---- criteria 4, 5, 8 share the planted-bias classification fixture -------

struct ClsFixture {
    Vocabulary vocab;
    Dataset train;
    Dataset held_other; // held-out examples of the non-target class
    MicroModel model;
    TaskLoss loss = TaskLoss::for_class(0);
    AttackConfig config;
    AttackReport report;
    double grad_rate = 0.0;
};

ClsFixture cls_fixture() {
    SyntheticSpec spec;
    spec.task = "classification";
    spec.vocab_size = 200;
    spec.example_length = 4;
    spec.n_examples = 2000;
    spec.seed = 11;
    spec.n_classes = 2;
    spec.planted_token = "t007";
    spec.planted_class = 0;
    spec.rho = 0.9;

    ClsFixture f;
    f.vocab = synthetic_vocab(spec);
    f.train = encode(f.vocab, generate_classification(spec, spec.seed));
    RawDataset other;
    for (RawExample& ex : generate_classification(spec, 99))
        if (*ex.label == 1)
            other.push_back(std::move(ex));
    f.held_other = encode(f.vocab, other);

    f.model = train(MicroModel::make(ModelKind::bag_classifier, f.vocab, 64, 2, 7), f.train, 1500,
                    0.05, 7);

    f.config.trigger_length = 1;
    f.config.init_token = "the";
    f.config.num_candidates = 500; // more than the vocabulary: candidate set is exhaustive
    f.config.beam_size = 1;
    f.config.iterations = 1;
    f.config.batch_size = 2000;
    f.config.seed = 0;
    f.report = attack({f.model}, f.train, f.loss, f.config);
    f.grad_rate = trigger_success_rate(f.model, f.report.final_trigger, f.held_other, f.loss);
    return f;
}

Result criterion4(const ClsFixture& f, double secs_so_far, Clock::time_point t0) {
    Result r;
    r.check(f.grad_rate >= 0.90,
            "flip rate " + fmt(f.grad_rate) + " on held-out opposite-class examples");

    const TokenFilter filter = f.config.make_filter(f.vocab);
    double best_scan = std::numeric_limits<double>::infinity();
    for (int id = 0; id < f.vocab.size(); ++id) {
        if (!filter.permits(id))
            continue;
        Trigger t;
        t.token_ids = {id};
        best_scan = std::min(best_scan, batch_loss(f.model, t, f.train, f.loss));
    }
    r.check(f.report.final_loss <= best_scan + 1e-9,
            "attack loss " + fmt(f.report.final_loss) + " vs exhaustive best " + fmt(best_scan));
    const double secs = secs_so_far + seconds_since(t0);
    r.check(secs < 60.0, "took " + fmt(secs) + " s");
    r.note("flip rate " + fmt(f.grad_rate) + ", matches exhaustive scan, " + fmt(secs) + " s");
    return r;
}

Result criterion5(const ClsFixture& f) {
    Result r;
    const PmiTable table = compute_pmi(f.train, 100.0);
    const int planted = f.vocab.require_id("t007");
    const double pct = pmi_percentile(table, planted, 0);
    r.check(pct >= 99.0, "planted-token percentile " + fmt(pct));

    const AttackReport base =
        pmi_baseline_attack(table, f.held_other, f.model, f.loss, f.config, 20, 10, 0);
    r.check(base.success_rate >= f.grad_rate - 0.05,
            "baseline rate " + fmt(base.success_rate) + " vs gradient rate " + fmt(f.grad_rate));
    r.note("percentile " + fmt(pct) + ", baseline rate " + fmt(base.success_rate) +
           " vs gradient " + fmt(f.grad_rate));
    return r;
}

// ---- criterion 6 ----------------------------------------------------------

Result criterion6() {
    Result r;
    SyntheticSpec spec;
    spec.task = "span";
    spec.vocab_size = 40;
    spec.example_length = 10;
    spec.n_examples = 1000;
    spec.seed = 21;
    spec.n_types = 1;
    spec.n_answers = 6;
    spec.question_length = 4;
    spec.rho = 1.0;

    const Vocabulary vocab = synthetic_vocab(spec);
    const Dataset train_data = encode(vocab, generate_spanqa(spec, spec.seed));
    SyntheticSpec held_spec = spec;
    held_spec.n_examples = 500;
    const Dataset held = encode(vocab, generate_spanqa(held_spec, 77));
    const MicroModel model =
        train(MicroModel::make(ModelKind::span_pointer, vocab, 32, 0, 5), train_data, 40, 0.1, 5);

    AttackConfig cfg;
    cfg.trigger_length = 6;
    cfg.init_token = "the";
    cfg.num_candidates = 20;
    cfg.beam_size = 5;
    cfg.iterations = 5;
    cfg.batch_size = 32;
    cfg.seed = 0;
    cfg.target_span = TargetSpan{2, {"ans3", "ans4"}};
    const TaskLoss loss = TaskLoss::for_span(2, 3);
    const AttackReport rep = attack({model}, train_data, loss, cfg);
    const double attack_rate = trigger_success_rate(model, rep.final_trigger, held, loss);

    Trigger baseline; // just the target answer, nothing optimized around it
    baseline.token_ids = {vocab.require_id("ans3"), vocab.require_id("ans4")};
    baseline.frozen = {0, 1};
    const double base_rate = trigger_success_rate(model, baseline, held, TaskLoss::for_span(0, 1));
    r.check(attack_rate - base_rate >= 0.15, "attack " + fmt(attack_rate) + " vs baseline " +
                                                 fmt(base_rate));

    Trigger t;
    t.token_ids = {10, 11, 12, 13, 14};
    t.frozen = {1, 3};
    t.placement = Placement::end;
    const Trigger swapped = replace_target_span(t, {21, 23});
    r.check(swapped.token_ids == std::vector<int>({10, 21, 12, 23, 14}),
            "replace_target_span rewrote the wrong positions");
    r.check(swapped.frozen == t.frozen && swapped.placement == t.placement &&
                swapped.length() == t.length(),
            "replace_target_span must preserve length, frozen set, and placement");
    bool threw = false;
    try {
        replace_target_span(t, {21});
    } catch (const DataError&) {
        threw = true;
    }
    r.check(threw, "span length mismatch accepted");
    r.note("attack " + fmt(attack_rate) + " vs baseline " + fmt(base_rate) +
           ", span replacement exact");
    return r;
}

// ---- criterion 7 ----------------------------------------------------------

Result criterion7() {
    Result r;
    SyntheticSpec spec;
    spec.task = "generation";
    spec.vocab_size = 30;
    spec.example_length = 10;
    spec.n_examples = 400;
    spec.seed = 31;
    spec.n_targets = 8;
    spec.target_length = 5;

    const Vocabulary vocab = synthetic_vocab(spec);
    const LmCorpus lm = generate_lm_corpus(spec, spec.seed);
    const Dataset full = encode(vocab, lm.corpus);
    const MicroModel model =
        train(MicroModel::make(ModelKind::tiny_lm, vocab, 32, 0, 5), full, 30, 0.1, 5);

    std::vector<std::vector<int>> target_ids;
    for (const auto& target : lm.targets) {
        std::vector<int> ids;
        for (const std::string& tok : target)
            ids.push_back(vocab.require_id(tok));
        target_ids.push_back(std::move(ids));
    }
    const TaskLoss loss = TaskLoss::for_generation(target_ids, false);
    const Dataset small(full.begin(), full.begin() + 4);

    AttackConfig cfg;
    cfg.trigger_length = 4;
    cfg.init_token = "the";
    cfg.num_candidates = 100;
    cfg.beam_size = 1;
    cfg.iterations = 5;
    cfg.batch_size = 4;
    const double init_rate =
        trigger_success_rate(model, init_trigger(cfg, vocab), small, loss);

    int decreased = 0, improved = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        cfg.seed = seed;
        const AttackReport rep = attack({model}, small, loss, cfg);
        decreased += rep.final_loss < rep.initial_loss;
        improved += rep.success_rate > init_rate;
    }
    r.check(decreased == 10, "loss strictly decreased on " + std::to_string(decreased) + "/10 seeds");
    r.check(improved == 10,
            "target probability rose on " + std::to_string(improved) + "/10 seeds");
    r.note("10/10 seeds: loss down, mean target probability above init " + fmt(init_rate));
    return r;
}

// ---- criterion 8 ----------------------------------------------------------

Result criterion8(const ClsFixture& f) {
    Result r;
    Trigger tri;
    tri.token_ids = {f.vocab.require_id("t007"), f.vocab.require_id("t000"),
                     f.vocab.require_id("t001")};
    const PerturbationReport p = perturb_trigger(tri, f.model, f.held_other, f.loss, 5, 3);
    r.check(p.shuffle_applicable, "shuffle should apply to an unfrozen trigger");
    r.check(static_cast<int>(p.shuffled_rates.size()) == 5, "expected exactly 5 shuffle rates");
    const double mean =
        std::accumulate(p.shuffled_rates.begin(), p.shuffled_rates.end(), 0.0) / 5.0;
    r.check(std::abs(p.shuffle_avg - mean) <= 1e-12, "shuffle_avg is not the mean");
    r.check(p.shuffle_best == *std::max_element(p.shuffled_rates.begin(), p.shuffled_rates.end()),
            "shuffle_best is not the max");
    r.check(p.shuffle_avg <= p.shuffle_best, "avg above best");
    r.check(p.original_rate == trigger_success_rate(f.model, tri, f.held_other, f.loss),
            "original rate not reproduced");
    r.check(p.removal_rates.size() == 3, "one removal rate per non-frozen token");
    for (int i = 0; i < 3 && r.ok; ++i)
        r.check(p.removal_rates[i].first == i, "removal positions out of order");
    r.check(p.front_rate >= 0.0 && p.front_rate <= 1.0 && p.end_rate >= 0.0 && p.end_rate <= 1.0,
            "placement rates out of range");

    // All-equal tokens: every permutation is the identity, so each shuffle
    // must reproduce the original rate bit for bit.
    Trigger same;
    same.token_ids = std::vector<int>(3, f.vocab.require_id("t007"));
    const PerturbationReport q = perturb_trigger(same, f.model, f.held_other, f.loss, 4, 9);
    for (double rate : q.shuffled_rates)
        r.check(rate == q.original_rate, "identity shuffle changed the rate");

    // Freezing all but one position also forces identity shuffles, and removal
    // skips the frozen tokens.
    Trigger frozen = tri;
    frozen.frozen = {0, 2};
    const PerturbationReport q2 = perturb_trigger(frozen, f.model, f.held_other, f.loss, 3, 1);
    for (double rate : q2.shuffled_rates)
        r.check(rate == q2.original_rate, "single-open-position shuffle changed the rate");
    r.check(q2.removal_rates.size() == 1 && q2.removal_rates[0].first == 1,
            "removal should cover exactly the non-frozen position");
    r.note("5 shuffles, avg<=best, 3 removals, identity shuffles exact");
    return r;
}

// ---- criterion 9 ----------------------------------------------------------

int shell(const std::string& cmd) {
    const int status = std::system(("TRIGGERS_RUN_STORE= " + cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Result criterion9() {
    Result r;
    TempDir tmp;
    const std::string cli = "'" TRIGGERS_CLI_PATH "'";
    const nlohmann::json spec = {{"task", "classification"}, {"vocab_size", 20},
                                 {"example_length", 4},      {"n_examples", 60},
                                 {"seed", 3},                {"n_classes", 2},
                                 {"planted_token", "t007"},  {"planted_class", 0},
                                 {"rho", 0.9}};
    atomic_write(tmp.file("spec.json"), spec.dump());
    atomic_write(tmp.file("loss.json"),
                 nlohmann::json{{"kind", "targeted_class"}, {"class", 0}}.dump());
    atomic_write(tmp.file("config.json"), nlohmann::json{{"trigger_length", 2},
                                                         {"num_candidates", 25},
                                                         {"beam_size", 2},
                                                         {"iterations", 2},
                                                         {"batch_size", 60},
                                                         {"seed", 0}}
                                              .dump());

    for (const std::string run : {"a", "b"}) {
        auto out = [&](const std::string& name) { return "'" + tmp.file(run + "_" + name) + "'"; };
        r.check(shell(cli + " gen --spec '" + tmp.file("spec.json") + "' --out " +
                      out("data.jsonl") + " --vocab " + out("vocab.json")) == 0,
                "gen failed");
        r.check(shell(cli + " train --data " + out("data.jsonl") + " --vocab " +
                      out("vocab.json") +
                      " --kind bag_classifier --dim 8 --classes 2 --epochs 40 --lr 0.1 --seed 1"
                      " --out " +
                      out("model.json")) == 0,
                "train failed");
        r.check(shell(cli + " attack --model " + out("model.json") + " --data " +
                      out("data.jsonl") + " --loss '" + tmp.file("loss.json") + "' --config '" +
                      tmp.file("config.json") + "' --out " + out("report.json")) == 0,
                "attack failed");
        r.check(shell(cli + " pmi --data " + out("data.jsonl") + " --vocab " + out("vocab.json") +
                      " --token t007 --class 0 --out " + out("pmi.json")) == 0,
                "pmi failed");
        r.check(shell(cli + " perturb --report " + out("report.json") + " --model " +
                      out("model.json") + " --data " + out("data.jsonl") + " --loss '" +
                      tmp.file("loss.json") + "' --shuffles 4 --seed 2 --out " +
                      out("perturb.json")) == 0,
                "perturb failed");
        if (!r.ok)
            return r;
    }
    for (const std::string name :
         {"data.jsonl", "vocab.json", "model.json", "report.json", "pmi.json", "perturb.json"})
        r.check(read_file(tmp.file("a_" + name)) == read_file(tmp.file("b_" + name)),
                name + " differs between identical runs");

    // Re-running just the attack over the first run's artifacts agrees too.
    r.check(shell(cli + " attack --model '" + tmp.file("a_model.json") + "' --data '" +
                  tmp.file("a_data.jsonl") + "' --loss '" + tmp.file("loss.json") + "' --config '" +
                  tmp.file("config.json") + "' --out '" + tmp.file("report_again.json") + "'") == 0,
            "attack re-run failed");
    r.check(read_file(tmp.file("a_report.json")) == read_file(tmp.file("report_again.json")),
            "attack report not byte-identical on re-run");
    r.note("gen/train/attack/pmi/perturb artifacts byte-identical across re-runs");
    return r;
}

// ---- criterion 10 ---------------------------------------------------------

Result criterion10() {
    Result r;
    const Vocabulary vocab = test::tiny_vocab(10);
    std::mt19937_64 rng(77);
    const std::vector<MicroModel> models{
        MicroModel::make(ModelKind::rnn_classifier, vocab, 5, 2, 3)};
    Dataset dataset;
    for (int i = 0; i < 6; ++i) {
        Example ex;
        ex.input_ids = test::random_content_ids(rng, vocab, 3 + static_cast<int>(rng() % 3));
        ex.label = i % 2;
        dataset.push_back(std::move(ex));
    }
    const TaskLoss loss = TaskLoss::for_class(0);
    AttackConfig cfg;
    cfg.trigger_length = 3;
    cfg.init_token = "w00";
    cfg.num_candidates = 1;
    cfg.beam_size = 1;
    cfg.iterations = 3;
    cfg.batch_size = 3;
    cfg.seed = 42;
    cfg.record_trace = true;
    const AttackReport rep = attack(models, dataset, loss, cfg);

    // Greedy reference, written without beam machinery: one gradient per
    // batch, per position take the single best first-order candidate, keep it
    // only if it strictly lowers the true batch loss.
    const EmbeddingMatrix& E = models.front().embedding;
    const TokenFilter filter = cfg.make_filter(vocab);
    Trigger cur;
    cur.token_ids = std::vector<int>(3, vocab.require_id("w00"));
    Trigger best = cur;
    double best_full = ensemble_loss(models, cur, dataset, loss);
    const double ref_initial = best_full;
    std::vector<double> ref_curve;
    std::vector<Trigger> ref_trace;

    std::mt19937_64 order_rng(cfg.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.iterations; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Example> batch;
            for (std::size_t i = at; i < stop; ++i)
                batch.push_back(dataset[order[i]]);

            const TriggerGradient tg = ensemble_gradient(models, cur, batch, loss);
            double cur_loss = ensemble_loss(models, cur, batch, loss);
            for (int p = 0; p < cur.length(); ++p) {
                const Eigen::VectorXd gp = tg.grad.row(p).transpose();
                const Eigen::VectorXd ep = E.rows.row(cur.token_ids[p]).transpose();
                int best_id = -1;
                double best_score = std::numeric_limits<double>::infinity();
                for (int id = 0; id < vocab.size(); ++id) {
                    if (!filter.permits(id))
                        continue;
                    const double s = (E.rows.row(id) - ep.transpose()).dot(gp);
                    if (s < best_score) {
                        best_score = s;
                        best_id = id;
                    }
                }
                if (best_id == cur.token_ids[p])
                    continue;
                Trigger cand = cur;
                cand.token_ids[p] = best_id;
                const double cand_loss = ensemble_loss(models, cand, batch, loss);
                if (cand_loss < cur_loss) { // ties keep the incumbent
                    cur = cand;
                    cur_loss = cand_loss;
                }
            }
            ref_curve.push_back(cur_loss);
            ref_trace.push_back(cur);
            const double full = ensemble_loss(models, cur, dataset, loss);
            if (full < best_full) {
                best_full = full;
                best = cur;
            }
        }
    }

    r.check(rep.trace.size() == ref_trace.size(),
            "trace has " + std::to_string(rep.trace.size()) + " steps, reference " +
                std::to_string(ref_trace.size()));
    for (std::size_t t = 0; t < ref_trace.size() && r.ok; ++t) {
        r.check(rep.trace[t].token_ids == ref_trace[t].token_ids,
                "step " + std::to_string(t) + ": different trigger");
        r.check(rep.loss_curve[t] == ref_curve[t],
                "step " + std::to_string(t) + ": different batch loss");
    }
    r.check(rep.initial_loss == ref_initial, "initial loss differs");
    r.check(rep.final_trigger == best && rep.final_loss == best_full,
            "reported best trigger differs from the greedy reference");
    r.note(std::to_string(ref_trace.size()) + " steps match exactly, losses bit-identical");
    return r;
}

} // namespace

int main() {
    int failed = 0;
    const auto run = [&](int n, const std::string& name, auto&& fn) {
        Result res;
        try {
            res = fn();
        } catch (const std::exception& e) {
            res.ok = false;
            res.detail = std::string("exception: ") + e.what();
        }
        std::cout << (res.ok ? "[PASS]" : "[FAIL]") << " criterion " << n << ": " << name;
        if (!res.detail.empty())
            std::cout << " (" << res.detail << ")";
        std::cout << std::endl;
        failed += !res.ok;
    };

    run(1, "analytic trigger gradients match finite differences for all model kinds", criterion1);
    run(2, "hotflip candidates equal the brute-force ranking, with and without the shift term",
        criterion2);
    run(3, "every beam step is non-increasing in batch loss across 100 seeded runs", criterion3);

    const auto t0 = Clock::now();
    std::optional<ClsFixture> cls;
    std::string cls_error;
    try {
        cls = cls_fixture();
    } catch (const std::exception& e) {
        cls_error = std::string("fixture build failed: ") + e.what();
    }
    const double cls_secs = seconds_since(t0);

    run(4, "one-token attack recovers the planted bias and matches an exhaustive scan", [&] {
        if (!cls)
            return Result{false, cls_error};
        return criterion4(*cls, cls_secs, Clock::now());
    });
    run(5, "planted token is a top-percentile PMI artifact and the PMI baseline keeps pace", [&] {
        if (!cls)
            return Result{false, cls_error};
        return criterion5(*cls);
    });
    run(6, "optimized span trigger beats the bare target-span baseline", criterion6);
    run(7, "generation attack strictly lowers the loss and raises target probability", criterion7);
    run(8, "perturbation study structure and identity-shuffle fidelity", [&] {
        if (!cls)
            return Result{false, cls_error};
        return criterion8(*cls);
    });
    run(9, "pipeline re-runs with the same seed are byte-identical", criterion9);
    run(10, "beam_size=1, num_candidates=1 attack equals an independent greedy reference",
        criterion10);

    if (failed != 0)
        std::cout << failed << " criterion(s) failed" << std::endl;
    return failed == 0 ? 0 : 1;
}
