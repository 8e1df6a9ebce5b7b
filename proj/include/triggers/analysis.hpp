#ifndef TRIGGERS_ANALYSIS_HPP
#define TRIGGERS_ANALYSIS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "triggers/models.hpp"
#include "triggers/trigger.hpp"

namespace triggers {

/// Fraction of predictions equal to the target. Class labels compare by
/// equality; span predictions compare extracted token sequences (exact match).
double attack_success_rate(const std::vector<int>& predictions, int target);
double attack_success_rate(const std::vector<std::vector<int>>& predictions,
                           const std::vector<int>& target);

/// Task-appropriate success of a trigger over a dataset:
///   targeted_class    fraction of examples predicted as the target class
///   span_target       fraction whose predicted span extracts exactly the
///                     trigger's target span tokens
///   generation_target mean per-token target probability (a rate in [0,1],
///                     though not a match fraction)
/// Ensemble overload averages per-model rates.
double trigger_success_rate(const MicroModel& model, const Trigger& trigger,
                            const Dataset& dataset, const TaskLoss& loss);
double trigger_success_rate(const std::vector<MicroModel>& models, const Trigger& trigger,
                            const Dataset& dataset, const TaskLoss& loss);

/// Smoothed PMI(token, class) over token occurrences, natural log:
///   ln[ (count(w,c)+s) * (N + s*W*C) / ((count(w)+s*C) * (count(c)+s*W)) ]
/// with W = distinct observed tokens, C = classes, N = total occurrences.
/// A token split identically across classes scores exactly 0.
struct PmiTable {
    double smoothing = 100.0;
    std::vector<int> class_ids;                 // ascending
    std::map<int, std::vector<double>> entries; // token id -> pmi per class

    double pmi(int token_id, int class_id) const; // absent token/class -> error
    bool contains(int token_id) const { return entries.count(token_id) > 0; }
    int class_index(int class_id) const;

    nlohmann::json to_json(const Vocabulary& vocab) const;
    static PmiTable from_json(const nlohmann::json& j, const Vocabulary& vocab);
};

PmiTable compute_pmi(const Dataset& dataset, double smoothing = 100.0);

/// Percent of table tokens with strictly lower PMI for the class.
double pmi_percentile(const PmiTable& table, int token_id, int class_id);

/// Table tokens ranked by descending PMI for the class, ties by smallest id.
std::vector<int> top_pmi_tokens(const PmiTable& table, int class_id, int m);

/// Re-labels a span dataset for PMI: each example becomes the +-window tokens
/// around its answer span, labeled by question type (distinct first question
/// tokens, ascending, become classes 0..C-1).
Dataset span_pmi_view(const Dataset& dataset, int window = 4);

/// Triggers built by sampling positions from the class's top_m PMI tokens,
/// each evaluated on the dataset; the best by success rate is reported and
/// every trial appears in the report's trace. Classification tasks only.
AttackReport pmi_baseline_attack(const PmiTable& table, const Dataset& dataset,
                                 const MicroModel& model, const TaskLoss& loss,
                                 const AttackConfig& config, int n_trials, int top_m,
                                 std::uint64_t seed);

struct PerturbationReport {
    double original_rate = 0.0;
    bool shuffle_applicable = true; // false when every position is frozen
    std::vector<double> shuffled_rates;
    double shuffle_avg = 0.0;
    double shuffle_best = 0.0;
    double front_rate = 0.0;
    double end_rate = 0.0;
    std::vector<std::pair<int, double>> removal_rates; // (removed position, rate)

    nlohmann::json to_json() const;
    static PerturbationReport from_json(const nlohmann::json& j);
};

/// Token-order shuffles (non-frozen positions only), placement flip, and
/// one-at-a-time token removal, each re-scored by trigger_success_rate.
PerturbationReport perturb_trigger(const Trigger& trigger, const MicroModel& model,
                                   const Dataset& dataset, const TaskLoss& loss, int n_shuffles,
                                   std::uint64_t seed);

/// Swaps the frozen span tokens (ascending position order) for new ids.
Trigger replace_target_span(const Trigger& trigger, const std::vector<int>& new_span_ids);

/// Success rate per victim model; no gradient access involved.
std::vector<double> transfer_eval(const Trigger& trigger, const std::vector<MicroModel>& victims,
                                  const Dataset& dataset, const TaskLoss& loss);

} // namespace triggers

#endif
