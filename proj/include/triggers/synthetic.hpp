#ifndef TRIGGERS_SYNTHETIC_HPP
#define TRIGGERS_SYNTHETIC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "triggers/data.hpp"
#include "triggers/vocab.hpp"

namespace triggers {

/// Knobs for the planted-artifact generators. rho is the probability the
/// planted token appears in its associated class's examples; other classes
/// see it with probability (1-rho)/(n_classes-1). The span generator reuses
/// rho as the marker/question-type correlation.
struct SyntheticSpec {
    std::string task = "classification"; // classification | span | generation
    int vocab_size = 50;                 // content (filler) tokens
    int example_length = 10;
    int n_examples = 200;
    std::uint64_t seed = 0;

    // classification
    int n_classes = 2;
    std::string planted_token = "t007";
    int planted_class = 0;
    double rho = 0.9;

    // span
    std::vector<std::string> planted_span = {"ans0", "ans1"}; // target answer
    int n_types = 2;        // question types, each with its own span markers
    int n_answers = 6;      // answer phrases the paragraphs actually contain
    int question_length = 4;

    // generation
    int n_targets = 30;
    int target_length = 10; // mean; actual lengths vary by +-1

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
};

/// The full token inventory a spec's generator can emit (content tokens,
/// markers, answers, prefixes), so models never meet out-of-vocabulary ids
/// even for tokens too rare to clear a frequency cutoff. "the" is always
/// present as a neutral filler: it is the default trigger initializer.
Vocabulary synthetic_vocab(const SyntheticSpec& spec);

/// Balanced-label random sequences; the planted token replaces one random
/// position with probability rho in its class, (1-rho)/(C-1) elsewhere.
RawDataset generate_classification(const SyntheticSpec& spec, std::uint64_t seed);

/// Paragraph + typed question + answer span. The span sits between a
/// before-marker and an after-marker tied to the question type with
/// probability rho, so marker tokens carry PMI signal for their type.
RawDataset generate_spanqa(const SyntheticSpec& spec, std::uint64_t seed);

struct LmCorpus {
    RawDataset corpus;                             // plain token sequences
    std::vector<std::vector<std::string>> targets; // the target set
};

/// Training sequences where target phrases follow the rare two-token prefix
/// "p0 p1"; the rest is filler. Also returns the sampled target set.
LmCorpus generate_lm_corpus(const SyntheticSpec& spec, std::uint64_t seed);

} // namespace triggers

#endif
