#include "triggers/trigger.hpp"

#include "triggers/errors.hpp"

namespace triggers {

std::string placement_name(Placement p) {
    return p == Placement::front ? "front" : "end";
}

Placement placement_from_name(const std::string& name) {
    if (name == "front") return Placement::front;
    if (name == "end") return Placement::end;
    throw DataError("unknown placement: " + name);
}

std::string strategy_name(Strategy s) {
    return s == Strategy::hotflip ? "hotflip" : "pgd";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "hotflip") return Strategy::hotflip;
    if (name == "pgd") return Strategy::pgd;
    throw DataError("unknown strategy: " + name);
}

std::vector<int> Trigger::apply(const std::vector<int>& input_ids) const {
    std::vector<int> out;
    out.reserve(token_ids.size() + input_ids.size());
    if (placement == Placement::front) {
        out.insert(out.end(), token_ids.begin(), token_ids.end());
        out.insert(out.end(), input_ids.begin(), input_ids.end());
    } else {
        out.insert(out.end(), input_ids.begin(), input_ids.end());
        out.insert(out.end(), token_ids.begin(), token_ids.end());
    }
    return out;
}

int Trigger::offset_in(const std::vector<int>& input_ids, int pos) const {
    if (pos < 0 || pos >= length())
        throw DataError("trigger position out of range");
    return placement == Placement::front ? pos : static_cast<int>(input_ids.size()) + pos;
}

nlohmann::json Trigger::to_json(const Vocabulary& vocab) const {
    nlohmann::json j;
    nlohmann::json toks = nlohmann::json::array();
    for (int id : token_ids)
        toks.push_back(vocab.token(id));
    j["tokens"] = std::move(toks);
    j["token_ids"] = token_ids;
    j["placement"] = placement_name(placement);
    j["frozen"] = std::vector<int>(frozen.begin(), frozen.end());
    return j;
}

Trigger Trigger::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    Trigger t;
    if (j.contains("token_ids")) {
        t.token_ids = j.at("token_ids").get<std::vector<int>>();
        for (int id : t.token_ids)
            vocab.token(id); // validates range
    } else {
        for (const auto& tok : j.at("tokens"))
            t.token_ids.push_back(vocab.require_id(tok.get<std::string>()));
    }
    if (j.contains("placement"))
        t.placement = placement_from_name(j.at("placement").get<std::string>());
    if (j.contains("frozen"))
        for (int pos : j.at("frozen").get<std::vector<int>>()) {
            if (pos < 0 || pos >= t.length())
                throw DataError("frozen position out of range");
            t.frozen.insert(pos);
        }
    return t;
}

void AttackConfig::validate() const {
    if (trigger_length < 1)
        throw DataError("trigger_length must be >= 1");
    if (num_candidates < 1)
        throw DataError("num_candidates must be >= 1");
    if (beam_size < 1)
        throw DataError("beam_size must be >= 1");
    if (iterations < 0)
        throw DataError("iterations must be >= 0");
    if (batch_size < 1)
        throw DataError("batch_size must be >= 1");
    if (strategy == Strategy::pgd && !(pgd_alpha > 0.0))
        throw DataError("pgd_alpha must be > 0 for pgd");
    if (target_span) {
        if (target_span->tokens.empty())
            throw DataError("target_span.tokens must be non-empty");
        int end = target_span->position + static_cast<int>(target_span->tokens.size());
        if (target_span->position < 0 || end > trigger_length)
            throw DataError("target_span does not fit inside the trigger");
    }
}

TokenFilter AttackConfig::make_filter(const Vocabulary& vocab) const {
    std::optional<std::pair<int, int>> range;
    if (charset)
        range = std::pair<int, int>{charset->first, charset->second};
    return TokenFilter::make(vocab, blacklist, range);
}

nlohmann::json AttackConfig::to_json() const {
    nlohmann::json j;
    j["trigger_length"] = trigger_length;
    j["init_token"] = init_token;
    j["num_candidates"] = num_candidates;
    j["beam_size"] = beam_size;
    j["iterations"] = iterations;
    j["batch_size"] = batch_size;
    j["blacklist"] = blacklist;
    if (charset)
        j["charset"] = {std::string(1, charset->first), std::string(1, charset->second)};
    j["strategy"] = strategy_name(strategy);
    if (strategy == Strategy::pgd)
        j["pgd_alpha"] = pgd_alpha;
    j["seed"] = seed;
    j["placement"] = placement_name(placement);
    if (target_span) {
        j["target_span"] = {{"position", target_span->position},
                            {"tokens", target_span->tokens}};
    }
    j["record_trace"] = record_trace;
    return j;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
    AttackConfig c;
    if (j.contains("trigger_length")) c.trigger_length = j.at("trigger_length").get<int>();
    if (j.contains("init_token")) c.init_token = j.at("init_token").get<std::string>();
    if (j.contains("num_candidates")) c.num_candidates = j.at("num_candidates").get<int>();
    if (j.contains("beam_size")) c.beam_size = j.at("beam_size").get<int>();
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("blacklist")) c.blacklist = j.at("blacklist").get<std::vector<std::string>>();
    if (j.contains("charset")) {
        auto lohi = j.at("charset").get<std::vector<std::string>>();
        if (lohi.size() != 2 || lohi[0].size() != 1 || lohi[1].size() != 1)
            throw DataError("charset must be a pair of single characters");
        c.charset = {lohi[0][0], lohi[1][0]};
    }
    if (j.contains("strategy")) c.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    if (j.contains("pgd_alpha")) c.pgd_alpha = j.at("pgd_alpha").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("placement")) c.placement = placement_from_name(j.at("placement").get<std::string>());
    if (j.contains("target_span")) {
        TargetSpan span;
        span.position = j.at("target_span").at("position").get<int>();
        span.tokens = j.at("target_span").at("tokens").get<std::vector<std::string>>();
        c.target_span = std::move(span);
    }
    if (j.contains("record_trace")) c.record_trace = j.at("record_trace").get<bool>();
    c.validate();
    return c;
}

nlohmann::json AttackReport::to_json(const Vocabulary& vocab) const {
    nlohmann::json j;
    j["config"] = config;
    j["seed"] = seed;
    j["loss_curve"] = loss_curve;
    j["initial_loss"] = initial_loss;
    j["final_loss"] = final_loss;
    j["final_trigger"] = final_trigger.to_json(vocab);
    j["success_rate"] = success_rate;
    if (!trace.empty()) {
        nlohmann::json steps = nlohmann::json::array();
        for (const auto& t : trace)
            steps.push_back(t.to_json(vocab));
        j["trace"] = std::move(steps);
    }
    return j;
}

AttackReport AttackReport::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    AttackReport r;
    r.config = j.at("config");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    r.initial_loss = j.at("initial_loss").get<double>();
    r.final_loss = j.at("final_loss").get<double>();
    r.final_trigger = Trigger::from_json(j.at("final_trigger"), vocab);
    r.success_rate = j.at("success_rate").get<double>();
    if (j.contains("trace"))
        for (const auto& step : j.at("trace"))
            r.trace.push_back(Trigger::from_json(step, vocab));
    return r;
}

} // namespace triggers
