#include "triggers/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "triggers/errors.hpp"
#include "triggers/search.hpp"

namespace triggers {

double attack_success_rate(const std::vector<int>& predictions, int target) {
    if (predictions.empty())
        throw DataError("empty predictions");
    int hits = 0;
    for (int p : predictions)
        hits += p == target;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double attack_success_rate(const std::vector<std::vector<int>>& predictions,
                           const std::vector<int>& target) {
    if (predictions.empty())
        throw DataError("empty predictions");
    int hits = 0;
    for (const auto& p : predictions)
        hits += p == target;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace {

std::vector<int> frozen_span_ids(const Trigger& trigger) {
    std::vector<int> ids;
    for (int pos : trigger.frozen) // std::set iterates ascending
        ids.push_back(trigger.token_ids[pos]);
    return ids;
}

} // namespace

double trigger_success_rate(const MicroModel& model, const Trigger& trigger,
                            const Dataset& dataset, const TaskLoss& loss) {
    loss.validate();
    if (dataset.empty())
        throw DataError("empty batch");
    switch (loss.kind) {
    case TaskKind::targeted_class: {
        std::vector<int> predictions;
        predictions.reserve(dataset.size());
        for (const Example& example : dataset)
            predictions.push_back(predict_class(model, trigger.apply(example.input_ids)));
        return attack_success_rate(predictions, *loss.target_class);
    }
    case TaskKind::span_target: {
        const std::vector<int> target = frozen_span_ids(trigger);
        if (target.empty())
            throw DataError("span trigger has no frozen span");
        std::vector<std::vector<int>> predictions;
        predictions.reserve(dataset.size());
        for (const Example& example : dataset) {
            if (!example.question_ids)
                throw DataError("span example missing question");
            const std::vector<int> full = trigger.apply(example.input_ids);
            auto [s, e] = predict_span(model, full, *example.question_ids);
            predictions.emplace_back(full.begin() + s, full.begin() + e + 1);
        }
        return attack_success_rate(predictions, target);
    }
    case TaskKind::generation_target: {
        // Mean per-token target probability, conditioning as the loss does.
        double total = 0.0;
        long count = 0;
        auto accumulate = [&](const std::vector<int>& prefix) {
            for (const auto& target : loss.targets)
                for (double p : target_token_probs(model, prefix, target)) {
                    total += p;
                    ++count;
                }
        };
        if (loss.include_inputs) {
            for (const Example& example : dataset)
                accumulate(trigger.apply(example.input_ids));
        } else {
            accumulate(trigger.token_ids);
        }
        return total / static_cast<double>(count);
    }
    }
    throw NumericError("invalid task kind");
}

double trigger_success_rate(const std::vector<MicroModel>& models, const Trigger& trigger,
                            const Dataset& dataset, const TaskLoss& loss) {
    if (models.empty())
        throw DataError("ensemble requires at least one model");
    double total = 0.0;
    for (const MicroModel& m : models)
        total += trigger_success_rate(m, trigger, dataset, loss);
    return total / static_cast<double>(models.size());
}

double PmiTable::pmi(int token_id, int class_id) const {
    auto it = entries.find(token_id);
    if (it == entries.end())
        throw DataError("token never appears in PMI table");
    return it->second.at(class_index(class_id));
}

int PmiTable::class_index(int class_id) const {
    auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id)
        throw DataError("class absent from PMI table");
    return static_cast<int>(it - class_ids.begin());
}

nlohmann::json PmiTable::to_json(const Vocabulary& vocab) const {
    nlohmann::json j;
    j["smoothing"] = smoothing;
    j["classes"] = class_ids;
    nlohmann::json rows;
    for (const auto& [token_id, values] : entries)
        rows[vocab.token(token_id)] = values;
    j["pmi"] = std::move(rows);
    return j;
}

PmiTable PmiTable::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    PmiTable t;
    t.smoothing = j.at("smoothing").get<double>();
    t.class_ids = j.at("classes").get<std::vector<int>>();
    for (const auto& [token, values] : j.at("pmi").items())
        t.entries[vocab.require_id(token)] = values.get<std::vector<double>>();
    return t;
}

PmiTable compute_pmi(const Dataset& dataset, double smoothing) {
    if (smoothing < 0)
        throw DataError("smoothing must be >= 0");
    std::set<int> classes;
    for (const Example& example : dataset) {
        if (!example.label)
            throw DataError("example missing label");
        classes.insert(*example.label);
    }
    if (classes.size() < 2)
        throw DataError("degenerate PMI");

    PmiTable table;
    table.smoothing = smoothing;
    table.class_ids.assign(classes.begin(), classes.end());
    const int C = static_cast<int>(table.class_ids.size());

    std::map<int, std::vector<long>> joint; // token -> count per class
    std::vector<long> class_count(C, 0);
    long N = 0;
    for (const Example& example : dataset) {
        const int c = table.class_index(*example.label);
        for (int id : example.input_ids) {
            auto [it, fresh] = joint.try_emplace(id, std::vector<long>(C, 0));
            ++it->second[c];
            ++class_count[c];
            ++N;
        }
    }
    const double W = static_cast<double>(joint.size());
    const double total = static_cast<double>(N) + smoothing * W * C;
    for (const auto& [token_id, counts] : joint) {
        long token_total = 0;
        for (long n : counts)
            token_total += n;
        std::vector<double> values(C);
        for (int c = 0; c < C; ++c) {
            const double num = (static_cast<double>(counts[c]) + smoothing) * total;
            const double den = (static_cast<double>(token_total) + smoothing * C) *
                               (static_cast<double>(class_count[c]) + smoothing * W);
            values[c] = std::log(num / den);
        }
        table.entries[token_id] = std::move(values);
    }
    return table;
}

double pmi_percentile(const PmiTable& table, int token_id, int class_id) {
    const double value = table.pmi(token_id, class_id); // validates presence
    const int c = table.class_index(class_id);
    long below = 0;
    for (const auto& [id, values] : table.entries)
        below += values[c] < value;
    return 100.0 * static_cast<double>(below) / static_cast<double>(table.entries.size());
}

std::vector<int> top_pmi_tokens(const PmiTable& table, int class_id, int m) {
    if (m < 1)
        throw DataError("top_m must be >= 1");
    const int c = table.class_index(class_id);
    std::vector<std::pair<double, int>> ranked; // (-pmi, id) so sort is desc, ties by id
    ranked.reserve(table.entries.size());
    for (const auto& [id, values] : table.entries)
        ranked.emplace_back(-values[c], id);
    std::sort(ranked.begin(), ranked.end());
    std::vector<int> out;
    for (int i = 0; i < std::min<int>(m, static_cast<int>(ranked.size())); ++i)
        out.push_back(ranked[i].second);
    return out;
}

Dataset span_pmi_view(const Dataset& dataset, int window) {
    if (window < 1)
        throw DataError("window must be >= 1");
    std::set<int> types;
    for (const Example& example : dataset) {
        if (!example.question_ids || example.question_ids->empty())
            throw DataError("span example missing question");
        types.insert(example.question_ids->front());
    }
    const std::vector<int> type_ids(types.begin(), types.end());
    Dataset out;
    out.reserve(dataset.size());
    for (const Example& example : dataset) {
        if (!example.span)
            throw DataError("span example missing span");
        const auto [s, e] = *example.span;
        const int n = static_cast<int>(example.input_ids.size());
        if (s < 0 || e < s || e >= n)
            throw DataError("span out of range");
        Example view;
        for (int i = std::max(0, s - window); i < s; ++i)
            view.input_ids.push_back(example.input_ids[i]);
        for (int i = e + 1; i <= std::min(n - 1, e + window); ++i)
            view.input_ids.push_back(example.input_ids[i]);
        const int type = example.question_ids->front();
        view.label = static_cast<int>(
            std::lower_bound(type_ids.begin(), type_ids.end(), type) - type_ids.begin());
        out.push_back(std::move(view));
    }
    return out;
}

AttackReport pmi_baseline_attack(const PmiTable& table, const Dataset& dataset,
                                 const MicroModel& model, const TaskLoss& loss,
                                 const AttackConfig& config, int n_trials, int top_m,
                                 std::uint64_t seed) {
    loss.validate();
    config.validate();
    if (loss.kind != TaskKind::targeted_class)
        throw DataError("task mismatch");
    if (n_trials < 1)
        throw DataError("n_trials must be >= 1");
    const TokenFilter filter = config.make_filter(model.vocab);
    std::vector<int> pool;
    for (int id : top_pmi_tokens(table, *loss.target_class, top_m))
        if (filter.permits(id))
            pool.push_back(id);
    if (pool.empty())
        throw DataError("empty candidate set");

    const std::vector<MicroModel> models{model};
    AttackReport report;
    report.config = config.to_json();
    report.config["method"] = "pmi_baseline";
    report.config["n_trials"] = n_trials;
    report.config["top_m"] = top_m;
    report.seed = seed;

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
    Trigger base = init_trigger(config, model.vocab);
    double best_rate = -1.0;
    for (int trial = 0; trial < n_trials; ++trial) {
        Trigger t = base;
        for (int pos = 0; pos < t.length(); ++pos)
            if (!t.is_frozen(pos))
                t.token_ids[pos] = pool[pick(rng)];
        const double dataset_loss = ensemble_loss(models, t, dataset, loss);
        const double rate = trigger_success_rate(model, t, dataset, loss);
        report.trace.push_back(t);
        report.loss_curve.push_back(dataset_loss);
        if (trial == 0)
            report.initial_loss = dataset_loss;
        if (rate > best_rate) {
            best_rate = rate;
            report.final_trigger = t;
            report.final_loss = dataset_loss;
        }
    }
    report.success_rate = best_rate;
    return report;
}

nlohmann::json PerturbationReport::to_json() const {
    nlohmann::json j;
    j["original_rate"] = original_rate;
    j["shuffle"] = {{"applicable", shuffle_applicable},
                    {"rates", shuffled_rates},
                    {"avg", shuffle_avg},
                    {"best", shuffle_best}};
    j["placement"] = {{"front", front_rate}, {"end", end_rate}};
    nlohmann::json removals = nlohmann::json::array();
    for (const auto& [pos, rate] : removal_rates)
        removals.push_back({{"position", pos}, {"rate", rate}});
    j["removal"] = std::move(removals);
    return j;
}

PerturbationReport PerturbationReport::from_json(const nlohmann::json& j) {
    PerturbationReport r;
    r.original_rate = j.at("original_rate").get<double>();
    r.shuffle_applicable = j.at("shuffle").at("applicable").get<bool>();
    r.shuffled_rates = j.at("shuffle").at("rates").get<std::vector<double>>();
    r.shuffle_avg = j.at("shuffle").at("avg").get<double>();
    r.shuffle_best = j.at("shuffle").at("best").get<double>();
    r.front_rate = j.at("placement").at("front").get<double>();
    r.end_rate = j.at("placement").at("end").get<double>();
    for (const auto& entry : j.at("removal"))
        r.removal_rates.emplace_back(entry.at("position").get<int>(),
                                     entry.at("rate").get<double>());
    return r;
}

PerturbationReport perturb_trigger(const Trigger& trigger, const MicroModel& model,
                                   const Dataset& dataset, const TaskLoss& loss, int n_shuffles,
                                   std::uint64_t seed) {
    if (n_shuffles < 1)
        throw DataError("n_shuffles must be >= 1");
    PerturbationReport report;
    report.original_rate = trigger_success_rate(model, trigger, dataset, loss);

    std::vector<int> open; // non-frozen positions
    for (int pos = 0; pos < trigger.length(); ++pos)
        if (!trigger.is_frozen(pos))
            open.push_back(pos);

    report.shuffle_applicable = !open.empty();
    if (report.shuffle_applicable) {
        std::mt19937_64 rng(seed);
        for (int trial = 0; trial < n_shuffles; ++trial) {
            std::vector<int> tokens;
            for (int pos : open)
                tokens.push_back(trigger.token_ids[pos]);
            std::shuffle(tokens.begin(), tokens.end(), rng);
            Trigger shuffled = trigger;
            for (std::size_t i = 0; i < open.size(); ++i)
                shuffled.token_ids[open[i]] = tokens[i];
            report.shuffled_rates.push_back(
                trigger_success_rate(model, shuffled, dataset, loss));
        }
        report.shuffle_best = *std::max_element(report.shuffled_rates.begin(),
                                                report.shuffled_rates.end());
        double sum = 0.0;
        for (double r : report.shuffled_rates)
            sum += r;
        report.shuffle_avg = sum / static_cast<double>(report.shuffled_rates.size());
    }

    for (Placement p : {Placement::front, Placement::end}) {
        Trigger moved = trigger;
        moved.placement = p;
        const double rate = trigger_success_rate(model, moved, dataset, loss);
        (p == Placement::front ? report.front_rate : report.end_rate) = rate;
    }

    for (int pos : open) {
        Trigger cut;
        cut.placement = trigger.placement;
        for (int i = 0; i < trigger.length(); ++i) {
            if (i == pos)
                continue;
            cut.token_ids.push_back(trigger.token_ids[i]);
            if (trigger.is_frozen(i))
                cut.frozen.insert(static_cast<int>(cut.token_ids.size()) - 1);
        }
        report.removal_rates.emplace_back(pos,
                                          trigger_success_rate(model, cut, dataset, loss));
    }
    return report;
}

Trigger replace_target_span(const Trigger& trigger, const std::vector<int>& new_span_ids) {
    if (new_span_ids.size() != trigger.frozen.size())
        throw DataError("span length mismatch");
    Trigger out = trigger;
    std::size_t i = 0;
    for (int pos : trigger.frozen)
        out.token_ids[pos] = new_span_ids[i++];
    return out;
}

std::vector<double> transfer_eval(const Trigger& trigger, const std::vector<MicroModel>& victims,
                                  const Dataset& dataset, const TaskLoss& loss) {
    if (victims.empty())
        return {};
    for (const MicroModel& v : victims)
        if (v.vocab.content_hash() != victims.front().vocab.content_hash())
            throw DataError("vocabulary mismatch");
    std::vector<double> rates;
    rates.reserve(victims.size());
    for (const MicroModel& v : victims)
        rates.push_back(trigger_success_rate(v, trigger, dataset, loss));
    return rates;
}

} // namespace triggers
