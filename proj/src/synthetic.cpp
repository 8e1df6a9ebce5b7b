#include "triggers/synthetic.hpp"

#include <algorithm>
#include <random>

#include "triggers/errors.hpp"

namespace triggers {

namespace {

std::string padded(const std::string& prefix, int i, int width) {
    std::string n = std::to_string(i);
    return prefix + std::string(std::max(0, width - static_cast<int>(n.size())), '0') + n;
}

std::vector<std::string> numbered(const std::string& prefix, int count, int width) {
    std::vector<std::string> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(padded(prefix, i, width));
    return out;
}

void append_unique(std::vector<std::string>& tokens, const std::string& tok) {
    if (std::find(tokens.begin(), tokens.end(), tok) == tokens.end())
        tokens.push_back(tok);
}

int pick(std::mt19937_64& rng, int n) {
    return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
}

bool chance(std::mt19937_64& rng, double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

} // namespace

void SyntheticSpec::validate() const {
    if (task != "classification" && task != "span" && task != "generation")
        throw DataError("task must be classification, span, or generation");
    if (vocab_size < 4)
        throw DataError("vocab_size must be >= 4");
    if (example_length < 1)
        throw DataError("example_length must be >= 1");
    if (n_examples < 1)
        throw DataError("n_examples must be >= 1");
    if (task == "classification") {
        if (n_classes < 2)
            throw DataError("n_classes must be >= 2");
        if (n_examples < 2 * n_classes)
            throw DataError("n_examples must be >= 2 per class");
        if (planted_class < 0 || planted_class >= n_classes)
            throw DataError("planted_class out of range");
        if (!(rho >= 0.0 && rho <= 1.0))
            throw DataError("rho must be in [0,1]");
        if (planted_token.empty())
            throw DataError("planted_token must be non-empty");
    }
    if (task == "span") {
        if (planted_span.empty())
            throw DataError("planted_span must be non-empty");
        if (example_length < static_cast<int>(planted_span.size()) + 2)
            throw DataError("example_length must be >= planted_span length + 2");
        if (n_types < 1)
            throw DataError("n_types must be >= 1");
        if (n_answers < 1)
            throw DataError("n_answers must be >= 1");
        if (question_length < 1)
            throw DataError("question_length must be >= 1");
        if (!(rho >= 0.0 && rho <= 1.0))
            throw DataError("rho must be in [0,1]");
    }
    if (task == "generation") {
        if (n_targets < 1)
            throw DataError("n_targets must be >= 1");
        if (target_length < 2)
            throw DataError("target_length must be >= 2");
    }
}

nlohmann::json SyntheticSpec::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["vocab_size"] = vocab_size;
    j["example_length"] = example_length;
    j["n_examples"] = n_examples;
    j["seed"] = seed;
    j["n_classes"] = n_classes;
    j["planted_token"] = planted_token;
    j["planted_class"] = planted_class;
    j["rho"] = rho;
    j["planted_span"] = planted_span;
    j["n_types"] = n_types;
    j["n_answers"] = n_answers;
    j["question_length"] = question_length;
    j["n_targets"] = n_targets;
    j["target_length"] = target_length;
    return j;
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    auto get = [&](const char* key, auto& into) {
        if (j.contains(key))
            into = j.at(key).get<std::decay_t<decltype(into)>>();
    };
    get("task", s.task);
    get("vocab_size", s.vocab_size);
    get("example_length", s.example_length);
    get("n_examples", s.n_examples);
    get("seed", s.seed);
    get("n_classes", s.n_classes);
    get("planted_token", s.planted_token);
    get("planted_class", s.planted_class);
    get("rho", s.rho);
    get("planted_span", s.planted_span);
    get("n_types", s.n_types);
    get("n_answers", s.n_answers);
    get("question_length", s.question_length);
    get("n_targets", s.n_targets);
    get("target_length", s.target_length);
    s.validate();
    return s;
}

namespace {

/// Filler tokens examples are padded with; excludes the artifact tokens so
/// planted correlations are exact.
std::vector<std::string> filler_pool(const SyntheticSpec& spec) {
    std::vector<std::string> pool;
    pool.push_back("the");
    const char* prefix = spec.task == "classification" ? "t"
                         : spec.task == "span"         ? "f"
                                                       : "c";
    for (std::string& tok : numbered(prefix, spec.vocab_size, 3))
        pool.push_back(std::move(tok));
    if (spec.task == "classification")
        std::erase(pool, spec.planted_token);
    return pool;
}

} // namespace

Vocabulary synthetic_vocab(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<std::string> tokens = filler_pool(spec);
    if (spec.task == "classification") {
        append_unique(tokens, spec.planted_token);
    } else if (spec.task == "span") {
        for (const std::string& tok : numbered("b", spec.n_types, 0))
            append_unique(tokens, tok);
        for (const std::string& tok : numbered("a", spec.n_types, 0))
            append_unique(tokens, tok);
        for (const std::string& tok : numbered("q", spec.n_types, 0))
            append_unique(tokens, tok);
        for (const std::string& tok : numbered("ans", spec.n_answers, 0))
            append_unique(tokens, tok);
        for (const std::string& tok : spec.planted_span)
            append_unique(tokens, tok);
    } else {
        append_unique(tokens, "p0");
        append_unique(tokens, "p1");
    }
    std::vector<int> specials = {0, 1, 2, 3};
    std::vector<std::string> all = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kBos,
                                    Vocabulary::kEos};
    all.insert(all.end(), tokens.begin(), tokens.end());
    return Vocabulary(std::move(all), std::move(specials));
}

RawDataset generate_classification(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.task != "classification")
        throw DataError("task must be classification");
    const std::vector<std::string> pool = filler_pool(spec);
    std::mt19937_64 rng(seed);
    RawDataset out;
    out.reserve(spec.n_examples);
    for (int i = 0; i < spec.n_examples; ++i) {
        RawExample ex;
        ex.label = i % spec.n_classes;
        ex.input.reserve(spec.example_length);
        for (int t = 0; t < spec.example_length; ++t)
            ex.input.push_back(pool[pick(rng, static_cast<int>(pool.size()))]);
        const double p_plant = *ex.label == spec.planted_class
                                   ? spec.rho
                                   : (1.0 - spec.rho) / (spec.n_classes - 1);
        if (chance(rng, p_plant))
            ex.input[pick(rng, spec.example_length)] = spec.planted_token;
        out.push_back(std::move(ex));
    }
    return out;
}

RawDataset generate_spanqa(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.task != "span")
        throw DataError("task must be span");
    const std::vector<std::string> pool = filler_pool(spec);
    const std::vector<std::string> b = numbered("b", spec.n_types, 0);
    const std::vector<std::string> a = numbered("a", spec.n_types, 0);
    const std::vector<std::string> q = numbered("q", spec.n_types, 0);
    const std::vector<std::string> answers = numbered("ans", spec.n_answers, 0);
    const int span_len = static_cast<int>(spec.planted_span.size());
    const int n = spec.example_length;
    std::mt19937_64 rng(seed);
    RawDataset out;
    out.reserve(spec.n_examples);
    for (int i = 0; i < spec.n_examples; ++i) {
        const int type = i % spec.n_types;
        RawExample ex;
        ex.input.reserve(n);
        for (int t = 0; t < n; ++t)
            ex.input.push_back(pool[pick(rng, static_cast<int>(pool.size()))]);

        // Answer span between its markers; marker type matches the question
        // type with probability rho.
        const int pos = 1 + pick(rng, n - span_len - 1); // span at [pos, pos+len)
        int marker = type;
        if (spec.n_types > 1 && !chance(rng, spec.rho)) {
            marker = pick(rng, spec.n_types - 1);
            if (marker >= type)
                ++marker;
        }
        ex.input[pos - 1] = b[marker];
        for (int k = 0; k < span_len; ++k)
            ex.input[pos + k] = answers[pick(rng, spec.n_answers)];
        if (pos + span_len < n)
            ex.input[pos + span_len] = a[marker];
        ex.span = {pos, pos + span_len - 1};

        ex.question = {q[type]};
        for (int t = 1; t < spec.question_length; ++t)
            ex.question->push_back(pool[pick(rng, static_cast<int>(pool.size()))]);
        out.push_back(std::move(ex));
    }
    return out;
}

LmCorpus generate_lm_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.task != "generation")
        throw DataError("task must be generation");
    const std::vector<std::string> pool = filler_pool(spec);
    std::mt19937_64 rng(seed);
    LmCorpus out;
    out.targets.reserve(spec.n_targets);
    for (int i = 0; i < spec.n_targets; ++i) {
        const int len = spec.target_length - 1 + pick(rng, 3); // mean, +-1
        std::vector<std::string> target;
        target.reserve(len);
        for (int t = 0; t < len; ++t)
            target.push_back(pool[pick(rng, static_cast<int>(pool.size()))]);
        out.targets.push_back(std::move(target));
    }
    out.corpus.reserve(spec.n_examples);
    for (int i = 0; i < spec.n_examples; ++i) {
        RawExample ex;
        if (chance(rng, 0.5)) {
            for (int t = 0; t < spec.example_length; ++t)
                ex.input.push_back(pool[pick(rng, static_cast<int>(pool.size()))]);
        } else {
            const int lead = pick(rng, 4);
            for (int t = 0; t < lead; ++t)
                ex.input.push_back(pool[pick(rng, static_cast<int>(pool.size()))]);
            ex.input.push_back("p0");
            ex.input.push_back("p1");
            const auto& target = out.targets[pick(rng, spec.n_targets)];
            ex.input.insert(ex.input.end(), target.begin(), target.end());
        }
        out.corpus.push_back(std::move(ex));
    }
    return out;
}

} // namespace triggers
