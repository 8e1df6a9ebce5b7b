#include "triggers/search.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "triggers/analysis.hpp"
#include "triggers/errors.hpp"

namespace triggers {

namespace {

int g_threads = 1;

/// Index-parallel map: out[i] = fn(i). Output order is independent of the
/// thread count, so results are bit-identical at any setting.
template <typename Fn>
std::vector<double> parallel_map(int n, int threads, Fn fn) {
    std::vector<double> out(n);
    if (threads <= 1 || n < 2) {
        for (int i = 0; i < n; ++i)
            out[i] = fn(i);
        return out;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
            out[i] = fn(i);
    };
    std::vector<std::thread> pool;
    const int workers = std::min(threads, n);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    return out;
}

void check_ensemble(const std::vector<MicroModel>& models) {
    if (models.empty())
        throw DataError("ensemble requires at least one model");
    for (const MicroModel& m : models)
        if (m.dim != models.front().dim ||
            m.vocab.content_hash() != models.front().vocab.content_hash())
            throw DataError("ensemble shape mismatch");
}

/// Span attacks must agree on where the frozen span lives: the loss indexes
/// the trigger, the config carries the tokens.
void check_task_coherence(const TaskLoss& loss, const AttackConfig& config) {
    if (loss.kind == TaskKind::span_target) {
        if (!config.target_span)
            throw DataError("task mismatch");
        const int start = config.target_span->position;
        const int end = start + static_cast<int>(config.target_span->tokens.size()) - 1;
        if (loss.target_span->first != start || loss.target_span->second != end)
            throw DataError("task mismatch");
    } else if (config.target_span) {
        throw DataError("task mismatch");
    }
}

} // namespace

void set_search_threads(int n) { g_threads = std::max(1, n); }
int search_threads() { return g_threads; }

Trigger init_trigger(const AttackConfig& config, const Vocabulary& vocab) {
    config.validate();
    Trigger t;
    t.placement = config.placement;
    t.token_ids.assign(config.trigger_length, vocab.require_id(config.init_token));
    if (config.target_span) {
        for (int i = 0; i < static_cast<int>(config.target_span->tokens.size()); ++i) {
            const int pos = config.target_span->position + i;
            t.token_ids[pos] = vocab.require_id(config.target_span->tokens[i]);
            t.frozen.insert(pos);
        }
    }
    return t;
}

CandidateList hotflip_candidates(const Eigen::VectorXd& grad_row,
                                 const Eigen::VectorXd& current_embedding,
                                 const EmbeddingMatrix& matrix, int k, const TokenFilter& filter) {
    if (!grad_row.allFinite())
        throw NumericError("gradient not finite");
    if (k < 1)
        throw DataError("num_candidates must be >= 1");
    const double shift = current_embedding.dot(grad_row);
    std::vector<std::pair<double, int>> scored;
    scored.reserve(matrix.count());
    for (int id = 0; id < matrix.count(); ++id) {
        if (!filter.permits(id))
            continue;
        scored.emplace_back(matrix.rows.row(id).dot(grad_row) - shift, id);
    }
    std::sort(scored.begin(), scored.end()); // (score, id) ascending: ties by smallest id
    CandidateList out;
    out.short_of_k = static_cast<int>(scored.size()) < k;
    const int take = std::min<int>(k, static_cast<int>(scored.size()));
    out.ids.reserve(take);
    for (int i = 0; i < take; ++i)
        out.ids.push_back(scored[i].second);
    return out;
}

Trigger beam_step(const Trigger& trigger, const std::vector<MicroModel>& models,
                  const std::vector<Example>& batch, const TaskLoss& loss,
                  const AttackConfig& config) {
    check_ensemble(models);
    if (batch.empty())
        throw DataError("empty batch");
    const MicroModel& lead = models.front();
    const TokenFilter filter = config.make_filter(lead.vocab);
    const TriggerGradient grad = ensemble_gradient(models, trigger, batch, loss);

    struct Beam {
        Trigger trig;
        double loss;
    };
    std::vector<Beam> frontier{{trigger, ensemble_loss(models, trigger, batch, loss)}};

    for (int pos = 0; pos < trigger.length(); ++pos) {
        if (trigger.is_frozen(pos))
            continue;
        const CandidateList cands = hotflip_candidates(
            grad.grad.row(pos).transpose(),
            lead.embedding.rows.row(trigger.token_ids[pos]).transpose(), lead.embedding,
            config.num_candidates, filter);

        // Expand each beam with the unchanged trigger first, then candidates in
        // score order; the stable sort below then prefers incumbents on ties.
        std::vector<Beam> expanded;
        std::vector<int> unscored; // indices into `expanded` needing a loss
        std::set<std::vector<int>> seen;
        for (const Beam& beam : frontier) {
            if (seen.insert(beam.trig.token_ids).second)
                expanded.push_back(beam);
            for (int cand : cands.ids) {
                Trigger next = beam.trig;
                next.token_ids[pos] = cand;
                if (seen.insert(next.token_ids).second) {
                    expanded.push_back({std::move(next), 0.0});
                    unscored.push_back(static_cast<int>(expanded.size()) - 1);
                }
            }
        }
        std::vector<double> losses =
            parallel_map(static_cast<int>(unscored.size()), g_threads, [&](int i) {
                return ensemble_loss(models, expanded[unscored[i]].trig, batch, loss);
            });
        for (std::size_t i = 0; i < unscored.size(); ++i)
            expanded[unscored[i]].loss = losses[i];

        std::stable_sort(expanded.begin(), expanded.end(),
                         [](const Beam& a, const Beam& b) { return a.loss < b.loss; });
        if (static_cast<int>(expanded.size()) > config.beam_size)
            expanded.resize(config.beam_size);
        frontier = std::move(expanded);
    }
    return frontier.front().trig;
}

Trigger pgd_step(const Trigger& trigger, const std::vector<MicroModel>& models,
                 const std::vector<Example>& batch, const TaskLoss& loss,
                 const AttackConfig& config) {
    check_ensemble(models);
    if (batch.empty())
        throw DataError("empty batch");
    if (config.strategy != Strategy::pgd)
        throw DataError("pgd_step requires strategy pgd");
    const MicroModel& lead = models.front();
    const TokenFilter filter = config.make_filter(lead.vocab);
    const TriggerGradient grad = ensemble_gradient(models, trigger, batch, loss);
    const Eigen::MatrixXd X = lead.trigger_embeddings(trigger);
    Trigger out = trigger;
    for (int pos = 0; pos < trigger.length(); ++pos) {
        if (trigger.is_frozen(pos))
            continue;
        Eigen::VectorXd moved =
            X.row(pos).transpose() - config.pgd_alpha * grad.grad.row(pos).transpose();
        out.token_ids[pos] = nearest_token(lead.embedding, moved, filter);
    }
    return out;
}

AttackReport attack(const std::vector<MicroModel>& models, const Dataset& dataset,
                    const TaskLoss& loss, const AttackConfig& config) {
    check_ensemble(models);
    config.validate();
    loss.validate();
    check_task_coherence(loss, config);
    if (dataset.empty())
        throw DataError("empty batch");
    const Vocabulary& vocab = models.front().vocab;
    if (config.make_filter(vocab).permitted_count() == 0)
        throw DataError("empty candidate set");

    Trigger trigger = init_trigger(config, vocab);
    AttackReport report;
    report.config = config.to_json();
    report.seed = config.seed;
    report.initial_loss = ensemble_loss(models, trigger, dataset, loss);

    Trigger best = trigger;
    double best_loss = report.initial_loss;

    std::mt19937_64 rng(config.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.iterations; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
            std::vector<Example> batch;
            const std::size_t stop = std::min(order.size(), at + config.batch_size);
            batch.reserve(stop - at);
            for (std::size_t i = at; i < stop; ++i)
                batch.push_back(dataset[order[i]]);

            trigger = config.strategy == Strategy::hotflip
                          ? beam_step(trigger, models, batch, loss, config)
                          : pgd_step(trigger, models, batch, loss, config);
            report.loss_curve.push_back(ensemble_loss(models, trigger, batch, loss));
            if (config.record_trace)
                report.trace.push_back(trigger);

            const double full = ensemble_loss(models, trigger, dataset, loss);
            if (full < best_loss) {
                best_loss = full;
                best = trigger;
            }
        }
    }
    if (report.loss_curve.empty())
        report.loss_curve.push_back(report.initial_loss); // zero iterations: curve echoes init
    report.final_trigger = best;
    report.final_loss = best_loss;
    report.success_rate = trigger_success_rate(models, best, dataset, loss);
    return report;
}

} // namespace triggers
