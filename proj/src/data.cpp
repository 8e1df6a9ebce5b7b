#include "triggers/data.hpp"

#include <fstream>
#include <sstream>

#include "triggers/errors.hpp"
#include "triggers/io.hpp"

namespace triggers {

nlohmann::json RawExample::to_json() const {
    nlohmann::json j{{"input", input}};
    if (label) j["label"] = *label;
    if (question) j["question"] = *question;
    if (span) j["span"] = {span->first, span->second};
    return j;
}

RawExample RawExample::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("input") || !j.at("input").is_array()) {
        throw DataError("example requires an 'input' token array");
    }
    RawExample ex;
    ex.input = j.at("input").get<std::vector<std::string>>();
    if (j.contains("label")) {
        if (!j.at("label").is_number_integer()) {
            throw DataError("'label' must be an integer");
        }
        ex.label = j.at("label").get<int>();
    }
    if (j.contains("question")) {
        ex.question = j.at("question").get<std::vector<std::string>>();
    }
    if (j.contains("span")) {
        const auto& s = j.at("span");
        if (!s.is_array() || s.size() != 2) {
            throw DataError("'span' must be [start, end]");
        }
        int start = s[0].get<int>();
        int end = s[1].get<int>();
        if (start < 0 || end < start || end >= static_cast<int>(ex.input.size())) {
            throw DataError("span out of range for input");
        }
        ex.span = {start, end};
    }
    return ex;
}

RawDataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset: " + path);
    }
    RawDataset out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            out.push_back(RawExample::from_json(j));
        } catch (const DataError& e) {
            throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_jsonl(const std::string& path, const RawDataset& dataset) {
    std::ostringstream out;
    for (const auto& ex : dataset) {
        out << ex.to_json().dump() << '\n';
    }
    atomic_write(path, out.str());
}

Example encode(const Vocabulary& vocab, const RawExample& raw) {
    Example ex;
    ex.input_ids.reserve(raw.input.size());
    for (const auto& tok : raw.input) {
        ex.input_ids.push_back(vocab.id(tok));
    }
    ex.label = raw.label;
    if (raw.question) {
        std::vector<int> q;
        q.reserve(raw.question->size());
        for (const auto& tok : *raw.question) {
            q.push_back(vocab.id(tok));
        }
        ex.question_ids = std::move(q);
    }
    ex.span = raw.span;
    return ex;
}

Dataset encode(const Vocabulary& vocab, const RawDataset& raw) {
    Dataset out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        out.push_back(encode(vocab, r));
    }
    return out;
}

std::vector<std::string> collect_corpus(const RawDataset& dataset) {
    std::vector<std::string> corpus;
    for (const auto& ex : dataset) {
        corpus.insert(corpus.end(), ex.input.begin(), ex.input.end());
        if (ex.question) {
            corpus.insert(corpus.end(), ex.question->begin(), ex.question->end());
        }
    }
    return corpus;
}

} // namespace triggers
