#ifndef TRIGGERS_SEARCH_HPP
#define TRIGGERS_SEARCH_HPP

#include <Eigen/Core>
#include <vector>

#include "triggers/models.hpp"
#include "triggers/trigger.hpp"

namespace triggers {

/// Worker cap for beam scoring (1 = sequential). Results are identical at any
/// setting; threads only split the candidate-scoring loop.
void set_search_threads(int n);
int search_threads();

/// L copies of the init token; when the config carries a target span, those
/// positions hold the span tokens and are frozen.
Trigger init_trigger(const AttackConfig& config, const Vocabulary& vocab);

struct CandidateList {
    std::vector<int> ids;     // ascending first-order score, ties by id
    bool short_of_k = false;  // fewer permitted tokens than requested
};

/// First-order replacement candidates: the k permitted ids minimizing
/// (rows[id] - current_embedding) . grad_row. The subtracted term shifts every
/// score equally, so the ranking matches rows[id] . grad_row.
CandidateList hotflip_candidates(const Eigen::VectorXd& grad_row,
                                 const Eigen::VectorXd& current_embedding,
                                 const EmbeddingMatrix& matrix, int k, const TokenFilter& filter);

/// One left-to-right beam pass. The batch gradient is evaluated once at the
/// incoming trigger; every expansion is re-scored by its true batch loss; the
/// unchanged beam always stays in the frontier, so the returned trigger's
/// batch loss never exceeds the incoming trigger's.
Trigger beam_step(const Trigger& trigger, const std::vector<MicroModel>& models,
                  const std::vector<Example>& batch, const TaskLoss& loss,
                  const AttackConfig& config);

/// Continuous step e - alpha * grad per non-frozen position, then projection
/// to the nearest permitted vocabulary embedding. All positions move from the
/// same gradient evaluation.
Trigger pgd_step(const Trigger& trigger, const std::vector<MicroModel>& models,
                 const std::vector<Example>& batch, const TaskLoss& loss,
                 const AttackConfig& config);

/// Outer loop: `iterations` epochs of seeded shuffling and batching, one
/// beam/pgd step per batch, batch loss recorded after every step. Reports the
/// trigger with the lowest full-dataset loss seen, the initial trigger
/// included.
AttackReport attack(const std::vector<MicroModel>& models, const Dataset& dataset,
                    const TaskLoss& loss, const AttackConfig& config);

} // namespace triggers

#endif
