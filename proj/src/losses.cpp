#include "triggers/losses.hpp"

#include <algorithm>
#include <cmath>

#include "triggers/errors.hpp"

namespace triggers {

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::targeted_class: return "targeted_class";
    case TaskKind::span_target: return "span_target";
    case TaskKind::generation_target: return "generation_target";
    }
    throw NumericError("invalid task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "targeted_class") return TaskKind::targeted_class;
    if (name == "span_target") return TaskKind::span_target;
    if (name == "generation_target") return TaskKind::generation_target;
    throw DataError("unknown task kind: " + name);
}

TaskLoss TaskLoss::for_class(int cls) {
    TaskLoss loss;
    loss.kind = TaskKind::targeted_class;
    loss.target_class = cls;
    loss.validate();
    return loss;
}

TaskLoss TaskLoss::for_span(int start, int end) {
    TaskLoss loss;
    loss.kind = TaskKind::span_target;
    loss.target_span = {start, end};
    loss.validate();
    return loss;
}

TaskLoss TaskLoss::for_generation(std::vector<std::vector<int>> targets, bool include_inputs) {
    TaskLoss loss;
    loss.kind = TaskKind::generation_target;
    loss.targets = std::move(targets);
    loss.include_inputs = include_inputs;
    loss.validate();
    return loss;
}

void TaskLoss::validate() const {
    switch (kind) {
    case TaskKind::targeted_class:
        if (!target_class || *target_class < 0)
            throw DataError("targeted_class loss requires a non-negative class");
        break;
    case TaskKind::span_target:
        if (!target_span || target_span->first < 0 || target_span->second < target_span->first)
            throw DataError("span_target loss requires 0 <= start <= end");
        break;
    case TaskKind::generation_target:
        if (targets.empty())
            throw DataError("generation_target loss requires at least one target sequence");
        for (const auto& seq : targets)
            if (seq.empty())
                throw DataError("generation_target sequences must be non-empty");
        break;
    }
}

nlohmann::json TaskLoss::to_json(const Vocabulary& vocab) const {
    nlohmann::json j;
    j["kind"] = task_kind_name(kind);
    switch (kind) {
    case TaskKind::targeted_class:
        j["class"] = *target_class;
        break;
    case TaskKind::span_target:
        j["start"] = target_span->first;
        j["end"] = target_span->second;
        break;
    case TaskKind::generation_target: {
        nlohmann::json seqs = nlohmann::json::array();
        for (const auto& seq : targets) {
            nlohmann::json toks = nlohmann::json::array();
            for (int id : seq)
                toks.push_back(vocab.token(id));
            seqs.push_back(std::move(toks));
        }
        j["targets"] = std::move(seqs);
        j["include_inputs"] = include_inputs;
        break;
    }
    }
    return j;
}

TaskLoss TaskLoss::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    if (!j.is_object() || !j.contains("kind"))
        throw DataError("loss spec must be an object with a \"kind\" field");
    TaskLoss loss;
    loss.kind = task_kind_from_name(j.at("kind").get<std::string>());
    switch (loss.kind) {
    case TaskKind::targeted_class:
        loss.target_class = j.at("class").get<int>();
        break;
    case TaskKind::span_target:
        loss.target_span = {j.at("start").get<int>(), j.at("end").get<int>()};
        break;
    case TaskKind::generation_target: {
        for (const auto& seq : j.at("targets")) {
            std::vector<int> ids;
            for (const auto& tok : seq)
                ids.push_back(vocab.require_id(tok.get<std::string>()));
            loss.targets.push_back(std::move(ids));
        }
        if (j.contains("include_inputs"))
            loss.include_inputs = j.at("include_inputs").get<bool>();
        break;
    }
    }
    loss.validate();
    return loss;
}

namespace {

double neg_log_clamped(double p) {
    return -std::log(std::clamp(p, kLogClamp, 1.0));
}

void check_probability(double p) {
    if (!(p >= -1e-9 && p <= 1.0 + 1e-9))
        throw NumericError("probability out of [0,1]: " + std::to_string(p));
}

} // namespace

double classification_loss(const Eigen::VectorXd& class_probs, int target) {
    if (target < 0 || target >= class_probs.size())
        throw DataError("target class out of range");
    check_probability(class_probs[target]);
    return neg_log_clamped(class_probs[target]);
}

double span_loss(const Eigen::VectorXd& start_probs, const Eigen::VectorXd& end_probs,
                 std::pair<int, int> target) {
    if (start_probs.size() != end_probs.size())
        throw DataError("span length mismatch");
    auto [s, e] = target;
    if (s < 0 || e < s || e >= start_probs.size())
        throw DataError("target span out of range");
    check_probability(start_probs[s]);
    check_probability(end_probs[e]);
    return neg_log_clamped(start_probs[s]) + neg_log_clamped(end_probs[e]);
}

double generation_loss(const std::vector<std::vector<double>>& stepwise_target_probs) {
    if (stepwise_target_probs.empty())
        throw DataError("generation loss requires at least one target");
    double total = 0.0;
    for (const auto& probs : stepwise_target_probs) {
        if (probs.empty())
            throw DataError("generation target produced no steps");
        for (double p : probs) {
            check_probability(p);
            total += std::log(std::max(1.0 - p, kLogClamp));
        }
    }
    return total / static_cast<double>(stepwise_target_probs.size());
}

} // namespace triggers
