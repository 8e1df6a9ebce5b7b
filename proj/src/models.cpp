#include "triggers/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "triggers/errors.hpp"

namespace triggers {

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::bag_classifier: return "bag_classifier";
    case ModelKind::rnn_classifier: return "rnn_classifier";
    case ModelKind::span_pointer: return "span_pointer";
    case ModelKind::tiny_lm: return "tiny_lm";
    }
    throw NumericError("invalid model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "bag_classifier") return ModelKind::bag_classifier;
    if (name == "rnn_classifier") return ModelKind::rnn_classifier;
    if (name == "span_pointer") return ModelKind::span_pointer;
    if (name == "tiny_lm") return ModelKind::tiny_lm;
    throw DataError("unknown model kind: " + name);
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    Eigen::VectorXd shifted = (z.array() - z.maxCoeff()).exp();
    return shifted / shifted.sum();
}

/// dL/dlogits for L = -ln(clamp(p[target])). Zero when the clamp is active so
/// the analytic gradient agrees with differentiating the clamped loss.
Eigen::VectorXd ce_delta(const Eigen::VectorXd& p, int target) {
    if (p[target] <= kLogClamp)
        return Eigen::VectorXd::Zero(p.size());
    Eigen::VectorXd delta = p;
    delta[target] -= 1.0;
    return delta;
}

const Eigen::MatrixXd& table(const MicroModel& m) { return m.embedding.rows; }

void check_id(const MicroModel& m, int id) {
    if (id < 0 || id >= m.vocab.size())
        throw DataError("unknown token id");
}

/// Concatenated sequence rows with the trigger rows taken from X (the free
/// variables of the attack). trig[i] is the row holding trigger position i.
struct Assembled {
    Eigen::MatrixXd rows;
    std::vector<int> trig;
};

Assembled assemble(const MicroModel& m, const Eigen::MatrixXd& X, const Trigger& trigger,
                   const std::vector<int>& input_ids, bool with_bos) {
    const int L = trigger.length();
    const int n = static_cast<int>(input_ids.size());
    const int base = with_bos ? 1 : 0;
    if (X.rows() != L || (L > 0 && X.cols() != m.dim))
        throw DataError("trigger embedding shape mismatch");
    Assembled a;
    a.rows.resize(base + L + n, m.dim);
    a.trig.resize(L);
    if (with_bos)
        a.rows.row(0) = table(m).row(m.vocab.bos_id());
    const int trig_at = trigger.placement == Placement::front ? base : base + n;
    const int input_at = trigger.placement == Placement::front ? base + L : base;
    for (int i = 0; i < L; ++i) {
        a.rows.row(trig_at + i) = X.row(i);
        a.trig[i] = trig_at + i;
    }
    for (int j = 0; j < n; ++j) {
        check_id(m, input_ids[j]);
        a.rows.row(input_at + j) = table(m).row(input_ids[j]);
    }
    return a;
}

Eigen::VectorXd question_vector(const MicroModel& m, const Example& example) {
    if (!example.question_ids || example.question_ids->empty())
        throw DataError("span example missing question");
    Eigen::VectorXd q = Eigen::VectorXd::Zero(m.dim);
    for (int id : *example.question_ids) {
        check_id(m, id);
        q += table(m).row(id).transpose();
    }
    return q / static_cast<double>(example.question_ids->size());
}

// ---- bag_classifier ----

Eigen::VectorXd bag_probs(const MicroModel& m, const Eigen::MatrixXd& rows) {
    Eigen::VectorXd mean = rows.colwise().mean().transpose();
    return softmax(m.W * mean + m.b);
}

double bag_backward(const MicroModel& m, const Eigen::MatrixXd& rows, int target,
                    Eigen::MatrixXd* d_rows) {
    Eigen::VectorXd p = bag_probs(m, rows);
    if (d_rows) {
        Eigen::VectorXd delta = ce_delta(p, target);
        Eigen::RowVectorXd per_row =
            (m.W.transpose() * delta).transpose() / static_cast<double>(rows.rows());
        *d_rows = per_row.replicate(rows.rows(), 1);
    }
    return classification_loss(p, target);
}

// ---- rnn_classifier (shared recurrence with tiny_lm) ----

/// h_t = tanh(A h_{t-1} + B c_t), h_{-1} = 0. Returns all hidden states, one
/// row per consumed input row.
Eigen::MatrixXd run_recurrence(const MicroModel& m, const Eigen::MatrixXd& rows) {
    const int T = static_cast<int>(rows.rows());
    Eigen::MatrixXd H(T, m.dim);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(m.dim);
    for (int t = 0; t < T; ++t) {
        h = (m.A * h + m.B * rows.row(t).transpose()).array().tanh();
        H.row(t) = h.transpose();
    }
    return H;
}

struct RnnGrads {
    Eigen::MatrixXd d_rows;
    Eigen::MatrixXd dA, dB;
};

/// Backpropagation through time. d_h holds dL/dh_t accumulated from the heads
/// (classifier head at the last step, LM heads at every prediction step).
RnnGrads rnn_bptt(const MicroModel& m, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& H,
                  const Eigen::MatrixXd& d_h, bool want_params) {
    const int T = static_cast<int>(rows.rows());
    RnnGrads g;
    g.d_rows = Eigen::MatrixXd::Zero(T, m.dim);
    if (want_params) {
        g.dA = Eigen::MatrixXd::Zero(m.dim, m.dim);
        g.dB = Eigen::MatrixXd::Zero(m.dim, m.dim);
    }
    Eigen::VectorXd carry = Eigen::VectorXd::Zero(m.dim);
    for (int t = T - 1; t >= 0; --t) {
        Eigen::VectorXd dh = d_h.row(t).transpose() + carry;
        Eigen::ArrayXd ht = H.row(t).transpose().array();
        Eigen::VectorXd da = ((1.0 - ht * ht) * dh.array()).matrix();
        g.d_rows.row(t) = (m.B.transpose() * da).transpose();
        if (want_params) {
            Eigen::VectorXd h_prev =
                t > 0 ? Eigen::VectorXd(H.row(t - 1).transpose()) : Eigen::VectorXd::Zero(m.dim);
            g.dA += da * h_prev.transpose();
            g.dB += da * rows.row(t);
        }
        carry = m.A.transpose() * da;
    }
    return g;
}

double rnn_backward(const MicroModel& m, const Eigen::MatrixXd& rows, int target,
                    Eigen::MatrixXd* d_rows, RnnGrads* param_grads, Eigen::MatrixXd* dW,
                    Eigen::VectorXd* db) {
    if (rows.rows() == 0)
        throw DataError("empty input sequence");
    Eigen::MatrixXd H = run_recurrence(m, rows);
    Eigen::VectorXd h_last = H.row(H.rows() - 1).transpose();
    Eigen::VectorXd p = softmax(m.W * h_last + m.b);
    double loss = classification_loss(p, target);
    if (d_rows || param_grads) {
        Eigen::VectorXd delta = ce_delta(p, target);
        Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(rows.rows(), m.dim);
        d_h.row(rows.rows() - 1) = (m.W.transpose() * delta).transpose();
        RnnGrads g = rnn_bptt(m, rows, H, d_h, param_grads != nullptr);
        if (d_rows)
            *d_rows = g.d_rows;
        if (param_grads) {
            *param_grads = std::move(g);
            *dW = delta * h_last.transpose();
            *db = delta;
        }
    }
    return loss;
}

// ---- span_pointer ----

struct SpanForward {
    Eigen::VectorXd p_start, p_end;
    Eigen::VectorXd msq, nsq, meq, neq; // projected question vectors
};

SpanForward span_forward(const MicroModel& m, const Eigen::MatrixXd& rows,
                         const Eigen::VectorXd& q) {
    const int T = static_cast<int>(rows.rows());
    if (T == 0)
        throw DataError("empty input sequence");
    SpanForward f;
    f.msq = m.Ms * q;
    f.nsq = m.Ns * q;
    f.meq = m.Me * q;
    f.neq = m.Ne * q;
    Eigen::VectorXd u(T), v(T);
    for (int i = 0; i < T; ++i) {
        u[i] = rows.row(i).dot(f.msq) + (i > 0 ? rows.row(i - 1).dot(f.nsq) : 0.0);
        v[i] = rows.row(i).dot(f.meq) + (i + 1 < T ? rows.row(i + 1).dot(f.neq) : 0.0);
    }
    f.p_start = softmax(u);
    f.p_end = softmax(v);
    return f;
}

struct SpanParamGrads {
    Eigen::MatrixXd dMs, dNs, dMe, dNe;
};

double span_backward(const MicroModel& m, const Eigen::MatrixXd& rows, const Eigen::VectorXd& q,
                     std::pair<int, int> target, Eigen::MatrixXd* d_rows,
                     SpanParamGrads* param_grads) {
    const int T = static_cast<int>(rows.rows());
    SpanForward f = span_forward(m, rows, q);
    double loss = span_loss(f.p_start, f.p_end, target);
    if (d_rows || param_grads) {
        Eigen::VectorXd alpha = ce_delta(f.p_start, target.first);
        Eigen::VectorXd beta = ce_delta(f.p_end, target.second);
        if (d_rows) {
            d_rows->setZero(T, m.dim);
            for (int j = 0; j < T; ++j) {
                Eigen::VectorXd g = alpha[j] * f.msq + beta[j] * f.meq;
                if (j + 1 < T)
                    g += alpha[j + 1] * f.nsq;
                if (j > 0)
                    g += beta[j - 1] * f.neq;
                d_rows->row(j) = g.transpose();
            }
        }
        if (param_grads) {
            param_grads->dMs = Eigen::MatrixXd::Zero(m.dim, m.dim);
            param_grads->dNs = Eigen::MatrixXd::Zero(m.dim, m.dim);
            param_grads->dMe = Eigen::MatrixXd::Zero(m.dim, m.dim);
            param_grads->dNe = Eigen::MatrixXd::Zero(m.dim, m.dim);
            for (int i = 0; i < T; ++i) {
                param_grads->dMs += alpha[i] * rows.row(i).transpose() * q.transpose();
                if (i > 0)
                    param_grads->dNs += alpha[i] * rows.row(i - 1).transpose() * q.transpose();
                param_grads->dMe += beta[i] * rows.row(i).transpose() * q.transpose();
                if (i + 1 < T)
                    param_grads->dNe += beta[i] * rows.row(i + 1).transpose() * q.transpose();
            }
        }
    }
    return loss;
}

// ---- tiny_lm ----

/// Stepwise p(y_i | consumed so far) for one target sequence appended to the
/// already-assembled prefix rows, plus everything the backward pass needs.
struct LmForward {
    Eigen::MatrixXd rows; // prefix + embedded target[0..m-2]
    Eigen::MatrixXd H;
    std::vector<Eigen::VectorXd> step_probs; // full distribution per prediction
    std::vector<double> target_probs;
};

LmForward lm_forward(const MicroModel& m, const Eigen::MatrixXd& prefix_rows,
                     const std::vector<int>& target) {
    if (target.empty())
        throw DataError("generation target sequence empty");
    const int P = static_cast<int>(prefix_rows.rows());
    const int mlen = static_cast<int>(target.size());
    LmForward f;
    f.rows.resize(P + mlen - 1, m.dim);
    f.rows.topRows(P) = prefix_rows;
    for (int i = 0; i + 1 < mlen; ++i) {
        check_id(m, target[i]);
        f.rows.row(P + i) = table(m).row(target[i]);
    }
    if (mlen > 0)
        check_id(m, target[mlen - 1]);
    f.H = run_recurrence(m, f.rows);
    for (int i = 0; i < mlen; ++i) {
        Eigen::VectorXd p = softmax(table(m) * f.H.row(P - 1 + i).transpose());
        f.target_probs.push_back(p[target[i]]);
        f.step_probs.push_back(std::move(p));
    }
    return f;
}

/// dL/dh contributions of L = sum_i ln(clamp(1 - p_i)) at the prediction rows.
Eigen::MatrixXd lm_head_grads(const MicroModel& m, const LmForward& f,
                              const std::vector<int>& target, int prefix_len) {
    Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(f.rows.rows(), m.dim);
    for (int i = 0; i < static_cast<int>(target.size()); ++i) {
        double p = f.target_probs[i];
        if (1.0 - p <= kLogClamp)
            continue; // clamp active: flat
        // d ln(1-p)/dz = -1/(1-p) * p * (onehot - ptilde) = p/(1-p) * (ptilde - onehot)
        Eigen::VectorXd dz = (p / (1.0 - p)) * ce_delta(f.step_probs[i], target[i]);
        d_h.row(prefix_len - 1 + i) += (table(m).transpose() * dz).transpose();
    }
    return d_h;
}

double generation_example_loss(const MicroModel& m, const Eigen::MatrixXd& prefix_rows,
                               const TaskLoss& loss, Eigen::MatrixXd* d_prefix,
                               RnnGrads* param_grads) {
    const int P = static_cast<int>(prefix_rows.rows());
    std::vector<std::vector<double>> all_probs;
    if (d_prefix)
        d_prefix->setZero(P, m.dim);
    if (param_grads) {
        param_grads->dA = Eigen::MatrixXd::Zero(m.dim, m.dim);
        param_grads->dB = Eigen::MatrixXd::Zero(m.dim, m.dim);
    }
    const double scale = 1.0 / static_cast<double>(loss.targets.size());
    for (const auto& target : loss.targets) {
        LmForward f = lm_forward(m, prefix_rows, target);
        all_probs.push_back(f.target_probs);
        if (d_prefix || param_grads) {
            Eigen::MatrixXd d_h = lm_head_grads(m, f, target, P);
            RnnGrads g = rnn_bptt(m, f.rows, f.H, d_h, param_grads != nullptr);
            if (d_prefix)
                *d_prefix += scale * g.d_rows.topRows(P);
            if (param_grads) {
                param_grads->dA += scale * g.dA;
                param_grads->dB += scale * g.dB;
            }
        }
    }
    return generation_loss(all_probs);
}

void require_task(bool ok) {
    if (!ok)
        throw DataError("task mismatch");
}

int require_label(const Example& example) {
    if (!example.label)
        throw DataError("example missing label");
    return *example.label;
}

/// Maps the loss's trigger-relative span to concatenated-sequence indices.
std::pair<int, int> concat_span(const Trigger& trigger, const std::vector<int>& input_ids,
                                const TaskLoss& loss) {
    return {trigger.offset_in(input_ids, loss.target_span->first),
            trigger.offset_in(input_ids, loss.target_span->second)};
}

const std::vector<int>& generation_inputs(const Example& example, const TaskLoss& loss) {
    static const std::vector<int> kNone;
    return loss.include_inputs ? example.input_ids : kNone;
}

} // namespace

MicroModel MicroModel::make(ModelKind kind, const Vocabulary& vocab, int dim, int n_classes,
                            std::uint64_t seed) {
    if (dim < 1)
        throw DataError("dim must be >= 1");
    const bool classifier = kind == ModelKind::bag_classifier || kind == ModelKind::rnn_classifier;
    if (classifier && n_classes < 2)
        throw DataError("classifier needs >= 2 classes");
    MicroModel m;
    m.kind = kind;
    m.dim = dim;
    m.n_classes = classifier ? n_classes : 0;
    m.vocab = vocab;
    m.embedding = EmbeddingMatrix::deterministic(vocab, dim);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](int rows, int cols, double scale) {
        Eigen::MatrixXd out(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                out(i, j) = scale * gauss(rng);
        return out;
    };
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    switch (kind) {
    case ModelKind::bag_classifier:
        m.W = draw(n_classes, dim, s);
        m.b = Eigen::VectorXd::Zero(n_classes);
        break;
    case ModelKind::rnn_classifier:
        m.W = draw(n_classes, dim, s);
        m.b = Eigen::VectorXd::Zero(n_classes);
        m.A = draw(dim, dim, 0.5 * s);
        m.B = draw(dim, dim, s);
        break;
    case ModelKind::span_pointer:
        m.Ms = draw(dim, dim, s);
        m.Ns = draw(dim, dim, s);
        m.Me = draw(dim, dim, s);
        m.Ne = draw(dim, dim, s);
        break;
    case ModelKind::tiny_lm:
        m.A = draw(dim, dim, 0.5 * s);
        m.B = draw(dim, dim, s);
        break;
    }
    return m;
}

Eigen::MatrixXd MicroModel::trigger_embeddings(const Trigger& trigger) const {
    Eigen::MatrixXd X(trigger.length(), dim);
    for (int i = 0; i < trigger.length(); ++i) {
        check_id(*this, trigger.token_ids[i]);
        X.row(i) = table(*this).row(trigger.token_ids[i]);
    }
    return X;
}

void MicroModel::check_finite() const {
    bool ok = embedding.rows.allFinite();
    for (const Eigen::MatrixXd* p : {&W, &A, &B, &Ms, &Ns, &Me, &Ne})
        ok = ok && (p->size() == 0 || p->allFinite());
    ok = ok && (b.size() == 0 || b.allFinite());
    if (!ok)
        throw NumericError("model parameters not finite");
}

double loss_at(const MicroModel& m, const Eigen::MatrixXd& trig_embed, const Trigger& trigger,
               const Example& example, const TaskLoss& loss) {
    loss.validate();
    switch (m.kind) {
    case ModelKind::bag_classifier: {
        require_task(loss.kind == TaskKind::targeted_class);
        Assembled a = assemble(m, trig_embed, trigger, example.input_ids, false);
        if (a.rows.rows() == 0)
            throw DataError("empty input sequence");
        return classification_loss(bag_probs(m, a.rows), *loss.target_class);
    }
    case ModelKind::rnn_classifier: {
        require_task(loss.kind == TaskKind::targeted_class);
        Assembled a = assemble(m, trig_embed, trigger, example.input_ids, false);
        return rnn_backward(m, a.rows, *loss.target_class, nullptr, nullptr, nullptr, nullptr);
    }
    case ModelKind::span_pointer: {
        require_task(loss.kind == TaskKind::span_target);
        Assembled a = assemble(m, trig_embed, trigger, example.input_ids, false);
        return span_backward(m, a.rows, question_vector(m, example),
                             concat_span(trigger, example.input_ids, loss), nullptr, nullptr);
    }
    case ModelKind::tiny_lm: {
        require_task(loss.kind == TaskKind::generation_target);
        Assembled a = assemble(m, trig_embed, trigger, generation_inputs(example, loss), true);
        return generation_example_loss(m, a.rows, loss, nullptr, nullptr);
    }
    }
    throw NumericError("invalid model kind");
}

double forward_loss(const MicroModel& m, const Trigger& trigger, const Example& example,
                    const TaskLoss& loss) {
    return loss_at(m, m.trigger_embeddings(trigger), trigger, example, loss);
}

TriggerGradient gradient_at(const MicroModel& m, const Eigen::MatrixXd& trig_embed,
                            const Trigger& trigger, const Example& example,
                            const TaskLoss& loss) {
    loss.validate();
    const int L = trigger.length();
    TriggerGradient out;
    out.grad = Eigen::MatrixXd::Zero(L, m.dim);
    Eigen::MatrixXd d_rows;
    Assembled a;
    switch (m.kind) {
    case ModelKind::bag_classifier:
        require_task(loss.kind == TaskKind::targeted_class);
        a = assemble(m, trig_embed, trigger, example.input_ids, false);
        if (a.rows.rows() == 0)
            throw DataError("empty input sequence");
        out.loss = bag_backward(m, a.rows, *loss.target_class, &d_rows);
        break;
    case ModelKind::rnn_classifier:
        require_task(loss.kind == TaskKind::targeted_class);
        a = assemble(m, trig_embed, trigger, example.input_ids, false);
        out.loss =
            rnn_backward(m, a.rows, *loss.target_class, &d_rows, nullptr, nullptr, nullptr);
        break;
    case ModelKind::span_pointer:
        require_task(loss.kind == TaskKind::span_target);
        a = assemble(m, trig_embed, trigger, example.input_ids, false);
        out.loss = span_backward(m, a.rows, question_vector(m, example),
                                 concat_span(trigger, example.input_ids, loss), &d_rows, nullptr);
        break;
    case ModelKind::tiny_lm:
        require_task(loss.kind == TaskKind::generation_target);
        a = assemble(m, trig_embed, trigger, generation_inputs(example, loss), true);
        out.loss = generation_example_loss(m, a.rows, loss, &d_rows, nullptr);
        break;
    }
    for (int i = 0; i < L; ++i)
        out.grad.row(i) = d_rows.row(a.trig[i]);
    return out;
}

TriggerGradient trigger_gradient(const MicroModel& m, const Trigger& trigger,
                                 const std::vector<Example>& batch, const TaskLoss& loss) {
    if (batch.empty())
        throw DataError("empty batch");
    Eigen::MatrixXd X = m.trigger_embeddings(trigger);
    TriggerGradient acc;
    acc.grad = Eigen::MatrixXd::Zero(trigger.length(), m.dim);
    for (const Example& example : batch) {
        TriggerGradient g = gradient_at(m, X, trigger, example, loss);
        acc.loss += g.loss;
        acc.grad += g.grad;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    acc.loss *= inv;
    acc.grad *= inv;
    if (!acc.grad.allFinite() || !std::isfinite(acc.loss))
        throw NumericError("gradient not finite");
    return acc;
}

TriggerGradient ensemble_gradient(const std::vector<MicroModel>& models, const Trigger& trigger,
                                  const std::vector<Example>& batch, const TaskLoss& loss) {
    if (models.empty())
        throw DataError("ensemble requires at least one model");
    for (const MicroModel& m : models)
        if (m.dim != models.front().dim ||
            m.vocab.content_hash() != models.front().vocab.content_hash())
            throw DataError("ensemble shape mismatch");
    TriggerGradient acc;
    acc.grad = Eigen::MatrixXd::Zero(trigger.length(), models.front().dim);
    for (const MicroModel& m : models) {
        TriggerGradient g = trigger_gradient(m, trigger, batch, loss);
        acc.loss += g.loss;
        acc.grad += g.grad;
    }
    const double inv = 1.0 / static_cast<double>(models.size());
    acc.loss *= inv;
    acc.grad *= inv;
    return acc;
}

double batch_loss(const MicroModel& m, const Trigger& trigger, const std::vector<Example>& batch,
                  const TaskLoss& loss) {
    if (batch.empty())
        throw DataError("empty batch");
    double total = 0.0;
    for (const Example& example : batch)
        total += forward_loss(m, trigger, example, loss);
    return total / static_cast<double>(batch.size());
}

double ensemble_loss(const std::vector<MicroModel>& models, const Trigger& trigger,
                     const std::vector<Example>& batch, const TaskLoss& loss) {
    if (models.empty())
        throw DataError("ensemble requires at least one model");
    double total = 0.0;
    for (const MicroModel& m : models)
        total += batch_loss(m, trigger, batch, loss);
    return total / static_cast<double>(models.size());
}

namespace {

/// Training objective for one example against its ground-truth target.
/// Returns the loss; when grads given, fills parameter gradients.
double train_example(const MicroModel& m, const Example& example, bool want_grads,
                     Eigen::MatrixXd* dW, Eigen::VectorXd* db, RnnGrads* rnn_g,
                     SpanParamGrads* span_g) {
    const Trigger empty; // training sees clean inputs
    const Eigen::MatrixXd no_rows(0, m.dim);
    switch (m.kind) {
    case ModelKind::bag_classifier: {
        Assembled a = assemble(m, no_rows, empty, example.input_ids, false);
        if (a.rows.rows() == 0)
            throw DataError("empty input sequence");
        int y = require_label(example);
        Eigen::VectorXd p = bag_probs(m, a.rows);
        if (want_grads) {
            Eigen::VectorXd delta = ce_delta(p, y);
            Eigen::VectorXd mean = a.rows.colwise().mean().transpose();
            *dW = delta * mean.transpose();
            *db = delta;
        }
        return classification_loss(p, y);
    }
    case ModelKind::rnn_classifier: {
        Assembled a = assemble(m, no_rows, empty, example.input_ids, false);
        if (want_grads)
            return rnn_backward(m, a.rows, require_label(example), nullptr, rnn_g, dW, db);
        return rnn_backward(m, a.rows, require_label(example), nullptr, nullptr, nullptr, nullptr);
    }
    case ModelKind::span_pointer: {
        if (!example.span)
            throw DataError("span example missing span");
        Assembled a = assemble(m, no_rows, empty, example.input_ids, false);
        auto [s, e] = *example.span;
        if (s < 0 || e < s || e >= a.rows.rows())
            throw DataError("span out of range");
        return span_backward(m, a.rows, question_vector(m, example), {s, e},
                             nullptr, want_grads ? span_g : nullptr);
    }
    case ModelKind::tiny_lm: {
        // Next-token cross entropy over the input, consuming <s> + input[:-1].
        const auto& w = example.input_ids;
        if (w.empty())
            throw DataError("empty input sequence");
        const int n = static_cast<int>(w.size());
        Eigen::MatrixXd rows(n, m.dim);
        rows.row(0) = table(m).row(m.vocab.bos_id());
        for (int i = 0; i + 1 < n; ++i) {
            check_id(m, w[i]);
            rows.row(i + 1) = table(m).row(w[i]);
        }
        check_id(m, w[n - 1]);
        Eigen::MatrixXd H = run_recurrence(m, rows);
        double loss = 0.0;
        Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(n, m.dim);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd p = softmax(table(m) * H.row(i).transpose());
            loss += -std::log(std::clamp(p[w[i]], kLogClamp, 1.0));
            if (want_grads) {
                Eigen::VectorXd dz = ce_delta(p, w[i]) / static_cast<double>(n);
                d_h.row(i) = (table(m).transpose() * dz).transpose();
            }
        }
        if (want_grads)
            *rnn_g = rnn_bptt(m, rows, H, d_h, true);
        return loss / static_cast<double>(n);
    }
    }
    throw NumericError("invalid model kind");
}

} // namespace

double mean_train_loss(const MicroModel& m, const std::vector<Example>& dataset) {
    if (dataset.empty())
        throw DataError("empty batch");
    double total = 0.0;
    for (const Example& example : dataset)
        total += train_example(m, example, false, nullptr, nullptr, nullptr, nullptr);
    return total / static_cast<double>(dataset.size());
}

MicroModel train(MicroModel m, const std::vector<Example>& dataset, int epochs, double lr,
                 std::uint64_t seed) {
    if (dataset.empty())
        throw DataError("empty batch");
    if (!(lr > 0.0))
        throw DataError("lr must be > 0");
    std::mt19937_64 rng(seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int idx : order) {
            Eigen::MatrixXd dW;
            Eigen::VectorXd db;
            RnnGrads rnn_g;
            SpanParamGrads span_g;
            double loss;
            try {
                loss = train_example(m, dataset[idx], true, &dW, &db, &rnn_g, &span_g);
            } catch (const NumericError&) {
                loss = std::numeric_limits<double>::quiet_NaN(); // NaN probs = divergence
            }
            if (!std::isfinite(loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch));
            switch (m.kind) {
            case ModelKind::bag_classifier:
                m.W -= lr * dW;
                m.b -= lr * db;
                break;
            case ModelKind::rnn_classifier:
                m.W -= lr * dW;
                m.b -= lr * db;
                m.A -= lr * rnn_g.dA;
                m.B -= lr * rnn_g.dB;
                break;
            case ModelKind::span_pointer:
                m.Ms -= lr * span_g.dMs;
                m.Ns -= lr * span_g.dNs;
                m.Me -= lr * span_g.dMe;
                m.Ne -= lr * span_g.dNe;
                break;
            case ModelKind::tiny_lm:
                m.A -= lr * rnn_g.dA;
                m.B -= lr * rnn_g.dB;
                break;
            }
        }
        m.check_finite();
    }
    return m;
}

Eigen::VectorXd class_probs(const MicroModel& m, const std::vector<int>& ids) {
    require_task(m.kind == ModelKind::bag_classifier || m.kind == ModelKind::rnn_classifier);
    const Trigger empty;
    const Eigen::MatrixXd no_rows(0, m.dim);
    Assembled a = assemble(m, no_rows, empty, ids, false);
    if (a.rows.rows() == 0)
        throw DataError("empty input sequence");
    if (m.kind == ModelKind::bag_classifier)
        return bag_probs(m, a.rows);
    Eigen::MatrixXd H = run_recurrence(m, a.rows);
    return softmax(m.W * H.row(H.rows() - 1).transpose() + m.b);
}

int predict_class(const MicroModel& m, const std::vector<int>& ids) {
    Eigen::VectorXd p = class_probs(m, ids);
    int best = 0;
    for (int c = 1; c < p.size(); ++c)
        if (p[c] > p[best])
            best = c;
    return best;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> span_distributions(
    const MicroModel& m, const std::vector<int>& ids, const std::vector<int>& question_ids) {
    require_task(m.kind == ModelKind::span_pointer);
    Example example;
    example.question_ids = question_ids;
    const Trigger empty;
    const Eigen::MatrixXd no_rows(0, m.dim);
    Assembled a = assemble(m, no_rows, empty, ids, false);
    SpanForward f = span_forward(m, a.rows, question_vector(m, example));
    return {f.p_start, f.p_end};
}

std::pair<int, int> predict_span(const MicroModel& m, const std::vector<int>& ids,
                                 const std::vector<int>& question_ids) {
    auto [ps, pe] = span_distributions(m, ids, question_ids);
    const int T = static_cast<int>(ps.size());
    int best_s = 0, best_e = 0;
    double best = -1.0;
    for (int s = 0; s < T; ++s)
        for (int e = s; e < T; ++e)
            if (ps[s] * pe[e] > best) {
                best = ps[s] * pe[e];
                best_s = s;
                best_e = e;
            }
    return {best_s, best_e};
}

std::vector<double> target_token_probs(const MicroModel& m, const std::vector<int>& prefix_ids,
                                       const std::vector<int>& target_ids) {
    require_task(m.kind == ModelKind::tiny_lm);
    Trigger prefix_trigger;
    prefix_trigger.token_ids = prefix_ids;
    Eigen::MatrixXd X = m.trigger_embeddings(prefix_trigger);
    Assembled a = assemble(m, X, prefix_trigger, {}, true);
    LmForward f = lm_forward(m, a.rows, target_ids);
    return f.target_probs;
}

// ---- checkpoints ----

namespace {

nlohmann::json mat_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
    const int rows = static_cast<int>(j.size());
    if (rows == 0)
        return Eigen::MatrixXd(0, 0);
    const int cols = static_cast<int>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (static_cast<int>(j.at(i).size()) != cols)
            throw DataError("ragged parameter matrix in checkpoint");
        for (int c = 0; c < cols; ++c)
            m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i)
        out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(j.size());
    for (int i = 0; i < static_cast<int>(j.size()); ++i)
        v[i] = j.at(i).get<double>();
    return v;
}

} // namespace

nlohmann::json MicroModel::to_json() const {
    nlohmann::json j;
    j["kind"] = model_kind_name(kind);
    j["dim"] = dim;
    j["n_classes"] = n_classes;
    j["vocab"] = vocab.to_json();
    j["vocab_hash"] = vocab.content_hash();
    nlohmann::json params;
    switch (kind) {
    case ModelKind::bag_classifier:
        params["W"] = mat_json(W);
        params["b"] = vec_json(b);
        break;
    case ModelKind::rnn_classifier:
        params["W"] = mat_json(W);
        params["b"] = vec_json(b);
        params["A"] = mat_json(A);
        params["B"] = mat_json(B);
        break;
    case ModelKind::span_pointer:
        params["Ms"] = mat_json(Ms);
        params["Ns"] = mat_json(Ns);
        params["Me"] = mat_json(Me);
        params["Ne"] = mat_json(Ne);
        break;
    case ModelKind::tiny_lm:
        params["A"] = mat_json(A);
        params["B"] = mat_json(B);
        break;
    }
    j["params"] = std::move(params);
    return j;
}

MicroModel MicroModel::from_json(const nlohmann::json& j) {
    MicroModel m;
    m.kind = model_kind_from_name(j.at("kind").get<std::string>());
    m.dim = j.at("dim").get<int>();
    m.n_classes = j.at("n_classes").get<int>();
    m.vocab = Vocabulary::from_json(j.at("vocab"));
    if (j.contains("vocab_hash") &&
        j.at("vocab_hash").get<std::string>() != m.vocab.content_hash())
        throw DataError("checkpoint vocab hash mismatch");
    m.embedding = EmbeddingMatrix::deterministic(m.vocab, m.dim);
    const nlohmann::json& params = j.at("params");
    auto need = [&](const char* name) -> const nlohmann::json& {
        if (!params.contains(name))
            throw DataError(std::string("checkpoint missing parameter ") + name);
        return params.at(name);
    };
    switch (m.kind) {
    case ModelKind::bag_classifier:
        m.W = mat_from_json(need("W"));
        m.b = vec_from_json(need("b"));
        break;
    case ModelKind::rnn_classifier:
        m.W = mat_from_json(need("W"));
        m.b = vec_from_json(need("b"));
        m.A = mat_from_json(need("A"));
        m.B = mat_from_json(need("B"));
        break;
    case ModelKind::span_pointer:
        m.Ms = mat_from_json(need("Ms"));
        m.Ns = mat_from_json(need("Ns"));
        m.Me = mat_from_json(need("Me"));
        m.Ne = mat_from_json(need("Ne"));
        break;
    case ModelKind::tiny_lm:
        m.A = mat_from_json(need("A"));
        m.B = mat_from_json(need("B"));
        break;
    }
    m.check_finite();
    return m;
}

} // namespace triggers
