#ifndef TRIGGERS_DATA_HPP
#define TRIGGERS_DATA_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "triggers/vocab.hpp"

namespace triggers {

/// One dataset record as stored on disk (token strings, pre-vocabulary).
struct RawExample {
    std::vector<std::string> input;
    std::optional<int> label;
    std::optional<std::vector<std::string>> question;
    std::optional<std::pair<int, int>> span; // inclusive token indices into input

    nlohmann::json to_json() const;
    static RawExample from_json(const nlohmann::json& j);
};

/// One example encoded against a vocabulary (token ids). `span`, when present,
/// is in input coordinates; attacks shift it as triggers are concatenated.
struct Example {
    std::vector<int> input_ids;
    std::optional<int> label;
    std::optional<std::vector<int>> question_ids;
    std::optional<std::pair<int, int>> span;
};

using RawDataset = std::vector<RawExample>;
using Dataset = std::vector<Example>;

/// One JSON object per line: {"input": [...], "label": int?, "question": [...]?,
/// "span": [s, e]?}. Malformed lines report their line number.
RawDataset load_jsonl(const std::string& path);
void save_jsonl(const std::string& path, const RawDataset& dataset);

/// Maps token strings to ids; unseen tokens become the unknown id.
Example encode(const Vocabulary& vocab, const RawExample& raw);
Dataset encode(const Vocabulary& vocab, const RawDataset& raw);

/// Every token string in the dataset, inputs then questions, in order.
/// This is the corpus build_vocab consumes.
std::vector<std::string> collect_corpus(const RawDataset& dataset);

} // namespace triggers

#endif
