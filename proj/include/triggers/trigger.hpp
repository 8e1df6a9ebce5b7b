#ifndef TRIGGERS_TRIGGER_HPP
#define TRIGGERS_TRIGGER_HPP

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "triggers/losses.hpp"
#include "triggers/vocab.hpp"

namespace triggers {

enum class Placement { front, end };

std::string placement_name(Placement p);
Placement placement_from_name(const std::string& name);

/// The adversarial token sequence plus where it attaches and which positions
/// are pinned (a fixed target answer span stays verbatim through the search).
struct Trigger {
    std::vector<int> token_ids;
    Placement placement = Placement::front;
    std::set<int> frozen;

    int length() const { return static_cast<int>(token_ids.size()); }
    bool is_frozen(int pos) const { return frozen.count(pos) > 0; }

    /// Trigger prepended or appended to one example's ids.
    std::vector<int> apply(const std::vector<int>& input_ids) const;

    /// Index of trigger position `pos` inside apply()'s output.
    int offset_in(const std::vector<int>& input_ids, int pos) const;

    bool operator==(const Trigger& other) const = default;

    nlohmann::json to_json(const Vocabulary& vocab) const;
    static Trigger from_json(const nlohmann::json& j, const Vocabulary& vocab);
};

/// Fixed target answer carried inside a span-task trigger: the span occupies
/// positions [position, position + tokens.size()) and is frozen during search.
struct TargetSpan {
    int position = 0;
    std::vector<std::string> tokens;
};

enum class Strategy { hotflip, pgd };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct AttackConfig {
    int trigger_length = 3;
    std::string init_token = "the";
    int num_candidates = 40;
    int beam_size = 1;
    int iterations = 5;
    int batch_size = 32;
    std::vector<std::string> blacklist;      // tokens the filter rejects
    std::optional<std::pair<char, char>> charset; // printable-range restriction
    Strategy strategy = Strategy::hotflip;
    double pgd_alpha = 1.0;
    std::uint64_t seed = 0;
    Placement placement = Placement::front;
    std::optional<TargetSpan> target_span;
    bool record_trace = false;

    void validate() const;
    TokenFilter make_filter(const Vocabulary& vocab) const;

    nlohmann::json to_json() const;
    static AttackConfig from_json(const nlohmann::json& j);
};

struct AttackReport {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<double> loss_curve; // batch loss after every beam/pgd step
    double initial_loss = 0.0;      // full-dataset loss of the init trigger
    double final_loss = 0.0;        // full-dataset loss of the reported trigger
    Trigger final_trigger;
    double success_rate = 0.0;
    std::vector<Trigger> trace; // trigger after each step when record_trace

    nlohmann::json to_json(const Vocabulary& vocab) const;
    static AttackReport from_json(const nlohmann::json& j, const Vocabulary& vocab);
};

} // namespace triggers

#endif
