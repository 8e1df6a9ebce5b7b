#ifndef TRIGGERS_LOSSES_HPP
#define TRIGGERS_LOSSES_HPP

#include <Eigen/Core>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "triggers/vocab.hpp"

namespace triggers {

/// Log arguments are clamped at this floor so every loss stays finite and beam
/// scores remain comparable.
inline constexpr double kLogClamp = 1e-12;

enum class TaskKind { targeted_class, span_target, generation_target };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

/// Tagged attack target: a class label, a span inside the trigger, or a set of
/// target token sequences. Only the active kind's fields are populated.
struct TaskLoss {
    TaskKind kind = TaskKind::targeted_class;
    std::optional<int> target_class;
    std::optional<std::pair<int, int>> target_span; // inclusive indices into the trigger
    std::vector<std::vector<int>> targets;          // generation target sequences
    bool include_inputs = false;                    // generation: condition on each input

    static TaskLoss for_class(int cls);
    static TaskLoss for_span(int start, int end);
    static TaskLoss for_generation(std::vector<std::vector<int>> targets,
                                   bool include_inputs = false);

    void validate() const;

    nlohmann::json to_json(const Vocabulary& vocab) const;
    static TaskLoss from_json(const nlohmann::json& j, const Vocabulary& vocab);
};

/// -ln(probs[target]) with probs clamped to [1e-12, 1].
double classification_loss(const Eigen::VectorXd& class_probs, int target);

/// -ln(start_probs[s]) - ln(end_probs[e]), same clamping. Both distributions
/// range over the same concatenated sequence.
double span_loss(const Eigen::VectorXd& start_probs, const Eigen::VectorXd& end_probs,
                 std::pair<int, int> target);

/// Mean over targets of sum_i ln(1 - p_i), with 1 - p_i clamped below at 1e-12.
/// Minimizing this drives every p_i toward 1; the value is negative once the
/// model prefers the targets, bottoming out at the clamp.
double generation_loss(const std::vector<std::vector<double>>& stepwise_target_probs);

} // namespace triggers

#endif
