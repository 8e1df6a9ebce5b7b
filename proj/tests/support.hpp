#ifndef TRIGGERS_TESTS_SUPPORT_HPP
#define TRIGGERS_TESTS_SUPPORT_HPP

// Shared test fixtures: tiny vocabularies, randomized task setups, the
// central-difference gradient oracle, and a throwaway temp directory.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "triggers/losses.hpp"
#include "triggers/models.hpp"
#include "triggers/trigger.hpp"
#include "triggers/vocab.hpp"

namespace triggers::test {

/// n content tokens named w00..w{n-1} after the four specials.
inline Vocabulary tiny_vocab(int n) {
    std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kBos,
                                       Vocabulary::kEos};
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "w%02d", i);
        tokens.push_back(buf);
    }
    return Vocabulary(std::move(tokens), {0, 1, 2, 3});
}

inline int random_content_id(std::mt19937_64& rng, const Vocabulary& vocab) {
    std::uniform_int_distribution<int> pick(4, vocab.size() - 1);
    return pick(rng);
}

inline std::vector<int> random_content_ids(std::mt19937_64& rng, const Vocabulary& vocab, int k) {
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i)
        out.push_back(random_content_id(rng, vocab));
    return out;
}

/// Central differences of loss_at over every trigger-row entry.
inline Eigen::MatrixXd fd_gradient(const MicroModel& m, const Trigger& trigger,
                                   const Example& example, const TaskLoss& loss,
                                   double eps = 1e-5) {
    const Eigen::MatrixXd X = m.trigger_embeddings(trigger);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(X.rows(), X.cols());
    for (int r = 0; r < X.rows(); ++r) {
        for (int c = 0; c < X.cols(); ++c) {
            Eigen::MatrixXd Xp = X;
            Eigen::MatrixXd Xm = X;
            Xp(r, c) += eps;
            Xm(r, c) -= eps;
            g(r, c) = (loss_at(m, Xp, trigger, example, loss) -
                       loss_at(m, Xm, trigger, example, loss)) /
                      (2.0 * eps);
        }
    }
    return g;
}

/// Worst relative mismatch between two gradients, with a 1e-8 absolute floor
/// folded into the denominator: a return value <= 1e-4 means every entry is
/// within 1e-4 relative error or 1e-8 absolute error.
inline double grad_mismatch(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
    double worst = 0.0;
    for (int r = 0; r < analytic.rows(); ++r) {
        for (int c = 0; c < analytic.cols(); ++c) {
            const double denom =
                std::max({1e-4, std::abs(analytic(r, c)), std::abs(fd(r, c))});
            worst = std::max(worst, std::abs(analytic(r, c) - fd(r, c)) / denom);
        }
    }
    return worst;
}

struct GradCase {
    MicroModel model;
    Trigger trigger;
    Example example;
    TaskLoss loss;
};

/// Randomized model/trigger/example/loss setup for one gradient check.
inline GradCase random_grad_case(ModelKind kind, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto pick = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };

    GradCase gc;
    const Vocabulary vocab = tiny_vocab(pick(8, 20));
    const int dim = pick(3, 8);
    const int n_classes = pick(2, 4);
    gc.model = MicroModel::make(kind, vocab, dim, n_classes, seed);

    gc.trigger.token_ids = random_content_ids(rng, vocab, pick(1, 4));
    gc.trigger.placement = pick(0, 1) == 0 ? Placement::front : Placement::end;
    gc.example.input_ids = random_content_ids(rng, vocab, pick(2, 6));

    switch (kind) {
    case ModelKind::bag_classifier:
    case ModelKind::rnn_classifier:
        gc.example.label = 0;
        gc.loss = TaskLoss::for_class(pick(0, n_classes - 1));
        break;
    case ModelKind::span_pointer: {
        gc.example.question_ids = random_content_ids(rng, vocab, pick(1, 3));
        // Span targets address positions inside the trigger.
        const int s = pick(0, gc.trigger.length() - 1);
        const int e = pick(s, gc.trigger.length() - 1);
        gc.loss = TaskLoss::for_span(s, e);
        break;
    }
    case ModelKind::tiny_lm: {
        std::vector<std::vector<int>> targets;
        const int n_targets = pick(1, 3);
        for (int t = 0; t < n_targets; ++t)
            targets.push_back(random_content_ids(rng, vocab, pick(1, 3)));
        gc.loss = TaskLoss::for_generation(std::move(targets), pick(0, 1) == 1);
        break;
    }
    }
    return gc;
}

/// Self-cleaning scratch directory.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::mt19937_64 rng{std::random_device{}()};
        path = std::filesystem::temp_directory_path() /
               ("triggers_test_" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace triggers::test

#endif
