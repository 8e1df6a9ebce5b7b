#ifndef TRIGGERS_MODELS_HPP
#define TRIGGERS_MODELS_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "triggers/data.hpp"
#include "triggers/losses.hpp"
#include "triggers/trigger.hpp"
#include "triggers/vocab.hpp"

namespace triggers {

enum class ModelKind { bag_classifier, rnn_classifier, span_pointer, tiny_lm };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

/// Batch-mean loss and its gradient with respect to the trigger rows.
/// grad is L×d; row i is the mean over the batch of dL/d e_adv_i.
struct TriggerGradient {
    double loss = 0.0;
    Eigen::MatrixXd grad;
};

/// Small differentiable text models over a frozen embedding table. The
/// embedding matrix is derived from the vocabulary (not trained), so models
/// trained separately on the same vocabulary share one embedding space —
/// that is what makes ensembling and transfer evaluation line up.
///
///   bag_classifier  logits = W * mean(e_1..e_T) + b
///   rnn_classifier  h_t = tanh(A h_{t-1} + B e_t), logits = W h_T + b
///   span_pointer    q = mean(question embeddings);
///                   start_i = e_i' Ms q + e_{i-1}' Ns q
///                   end_i   = e_i' Me q + e_{i+1}' Ne q   (out-of-range = 0)
///   tiny_lm         same recurrence as rnn_classifier, consumed sequence is
///                   <s> + tokens, p(y_t | prefix) = softmax(E h_t) with E the
///                   tied (frozen) embedding table
///
/// Hidden size equals dim throughout: the tied-embedding LM needs its hidden
/// state in embedding space.
struct MicroModel {
    ModelKind kind = ModelKind::bag_classifier;
    int dim = 0;
    int n_classes = 0; // classifiers only
    Vocabulary vocab;
    EmbeddingMatrix embedding; // V x d, frozen

    Eigen::MatrixXd W; // n_classes x d
    Eigen::VectorXd b; // n_classes
    Eigen::MatrixXd A; // d x d recurrence
    Eigen::MatrixXd B; // d x d input projection
    Eigen::MatrixXd Ms, Ns, Me, Ne; // d x d bilinear span scorers

    static MicroModel make(ModelKind kind, const Vocabulary& vocab, int dim, int n_classes,
                           std::uint64_t seed);

    /// L x d matrix of the trigger tokens' embeddings.
    Eigen::MatrixXd trigger_embeddings(const Trigger& trigger) const;

    void check_finite() const;

    nlohmann::json to_json() const;
    static MicroModel from_json(const nlohmann::json& j);
};

/// L(target, f(trigger; example)) with the trigger's own embeddings.
double forward_loss(const MicroModel& model, const Trigger& trigger, const Example& example,
                    const TaskLoss& loss);

/// Same loss but with explicit trigger rows (free variables): the entry point
/// for the finite-difference oracle and the PGD step. trig_embed is L x d and
/// overrides the embeddings of trigger.token_ids; everything else still uses
/// the frozen table.
double loss_at(const MicroModel& model, const Eigen::MatrixXd& trig_embed,
               const Trigger& trigger, const Example& example, const TaskLoss& loss);

/// Hand-derived dL/d(trigger rows) for a single example at trig_embed.
TriggerGradient gradient_at(const MicroModel& model, const Eigen::MatrixXd& trig_embed,
                            const Trigger& trigger, const Example& example,
                            const TaskLoss& loss);

/// Batch-mean loss and gradient at the trigger's own embeddings.
TriggerGradient trigger_gradient(const MicroModel& model, const Trigger& trigger,
                                 const std::vector<Example>& batch, const TaskLoss& loss);

/// Elementwise mean of per-model gradients and losses.
TriggerGradient ensemble_gradient(const std::vector<MicroModel>& models, const Trigger& trigger,
                                  const std::vector<Example>& batch, const TaskLoss& loss);

/// Mean forward_loss over a batch (single model / ensemble mean).
double batch_loss(const MicroModel& model, const Trigger& trigger,
                  const std::vector<Example>& batch, const TaskLoss& loss);
double ensemble_loss(const std::vector<MicroModel>& models, const Trigger& trigger,
                     const std::vector<Example>& batch, const TaskLoss& loss);

/// Plain SGD on the task parameters (embeddings stay frozen); one update per
/// example, dataset reshuffled every epoch from seed. Deterministic.
MicroModel train(MicroModel model, const std::vector<Example>& dataset, int epochs, double lr,
                 std::uint64_t seed);

/// Mean training-objective loss over the dataset (ground-truth targets).
double mean_train_loss(const MicroModel& model, const std::vector<Example>& dataset);

Eigen::VectorXd class_probs(const MicroModel& model, const std::vector<int>& ids);
int predict_class(const MicroModel& model, const std::vector<int>& ids);

std::pair<Eigen::VectorXd, Eigen::VectorXd> span_distributions(const MicroModel& model,
                                                               const std::vector<int>& ids,
                                                               const std::vector<int>& question_ids);
/// Joint argmax over start <= end; ties resolved to the smallest (start, end).
std::pair<int, int> predict_span(const MicroModel& model, const std::vector<int>& ids,
                                 const std::vector<int>& question_ids);

/// p(target_i | <s> + prefix + target_<i) for each target token in order.
std::vector<double> target_token_probs(const MicroModel& model, const std::vector<int>& prefix_ids,
                                       const std::vector<int>& target_ids);

} // namespace triggers

#endif
