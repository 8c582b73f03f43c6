#include "ope/policies.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "ope/rng.hpp"

namespace ope {

namespace {

class MixturePolicyFn final : public PolicyFunction {
public:
    MixturePolicyFn(std::shared_ptr<const PolicyFunction> inner, double w)
        : inner_(std::move(inner)), w_(w) {
        if (!(w_ >= 0.0 && w_ <= 1.0)) throw std::invalid_argument("mixture weight outside [0,1]");
    }
    int num_actions() const override { return inner_->num_actions(); }
    void action_probs(std::span<const double> x, std::span<double> out) const override {
        inner_->action_probs(x, out);
        const double u = (1.0 - w_) / static_cast<double>(out.size());
        for (auto& v : out) v = w_ * v + u;
    }
    bool context_free() const override { return inner_->context_free(); }
    PolicyKind kind() const override { return inner_->kind(); }

private:
    std::shared_ptr<const PolicyFunction> inner_;
    double w_;
};

}  // namespace

std::shared_ptr<const PolicyFunction> uniform_policy(int num_actions) {
    if (num_actions < 2) throw std::invalid_argument("uniform_policy: need K >= 2");
    std::vector<double> p(static_cast<std::size_t>(num_actions),
                          1.0 / static_cast<double>(num_actions));
    return std::make_shared<TablePolicy>(std::move(p), PolicyKind::evaluation);
}

std::shared_ptr<const PolicyFunction> fixed_arm_policy(int num_actions, int arm) {
    if (num_actions < 2 || arm < 0 || arm >= num_actions) {
        throw std::invalid_argument("fixed_arm_policy: arm out of range");
    }
    std::vector<double> p(static_cast<std::size_t>(num_actions), 0.0);
    p[static_cast<std::size_t>(arm)] = 1.0;
    return std::make_shared<TablePolicy>(std::move(p), PolicyKind::evaluation);
}

std::shared_ptr<const PolicyFunction> mixture_policy_fn(
    std::shared_ptr<const PolicyFunction> inner, double w) {
    return std::make_shared<MixturePolicyFn>(std::move(inner), w);
}

namespace {

class RandomWalkPolicy final : public AdaptivePolicy {
public:
    RandomWalkPolicy(int num_actions, double step_sd, std::uint64_t seed, double floor_delta)
        : step_sd_(step_sd), floor_(floor_delta), rng_(seed),
          probs_(static_cast<std::size_t>(num_actions)) {
        if (num_actions < 2) throw std::invalid_argument("random_walk_policy: need K >= 2");
        if (!(step_sd >= 0.0)) throw std::invalid_argument("random_walk_policy: step_sd < 0");
        if (!(floor_delta > 0.0)) throw std::invalid_argument("random_walk_policy: floor <= 0");
        for (auto& p : probs_) p = rng_.uniform();
        clamp_normalize();
    }

    int num_actions() const override { return static_cast<int>(probs_.size()); }

    // Context is unused: the walk drifts the action law directly.
    void update(std::span<const double>, int, double) override {
        if (step_sd_ == 0.0) return;
        for (auto& p : probs_) p += rng_.normal(0.0, step_sd_);
        clamp_normalize();
    }

    std::shared_ptr<const PolicyFunction> snapshot() const override {
        return std::make_shared<TablePolicy>(probs_, PolicyKind::behavior_snapshot);
    }

private:
    void clamp_normalize() {
        double sum = 0.0;
        for (auto& p : probs_) {
            p = std::max(p, floor_);
            sum += p;
        }
        for (auto& p : probs_) p /= sum;
    }

    double step_sd_;
    double floor_;
    Rng rng_;
    std::vector<double> probs_;
};

struct LinUcbArm {
    Eigen::MatrixXd a_inv;
    Eigen::VectorXd b;
    Eigen::VectorXd theta;
};

class LinUcbSnapshot final : public PolicyFunction {
public:
    LinUcbSnapshot(std::vector<std::shared_ptr<const LinUcbArm>> arms, double exploration)
        : arms_(std::move(arms)), exploration_(exploration) {}

    int num_actions() const override { return static_cast<int>(arms_.size()); }

    void action_probs(std::span<const double> x, std::span<double> out) const override {
        const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
        std::vector<double> scores(arms_.size());
        for (std::size_t a = 0; a < arms_.size(); ++a) {
            const auto& arm = *arms_[a];
            const double width = std::sqrt(std::max(0.0, xv.dot(arm.a_inv * xv)));
            scores[a] = xv.dot(arm.theta) + exploration_ * width;
        }
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(argmax_lowest_tie(scores))] = 1.0;
    }

    PolicyKind kind() const override { return PolicyKind::behavior_snapshot; }

private:
    std::vector<std::shared_ptr<const LinUcbArm>> arms_;
    double exploration_;
};

class LinUcbPolicy final : public AdaptivePolicy {
public:
    LinUcbPolicy(int num_actions, int dim, double ridge, double exploration)
        : exploration_(exploration) {
        if (num_actions < 2 || dim < 1) throw std::invalid_argument("linucb_policy: bad shape");
        if (!(ridge > 0.0)) throw std::invalid_argument("linucb_policy: ridge must be > 0");
        if (!(exploration >= 0.0)) throw std::invalid_argument("linucb_policy: alpha < 0");
        auto fresh = std::make_shared<LinUcbArm>();
        fresh->a_inv = Eigen::MatrixXd::Identity(dim, dim) / ridge;
        fresh->b = Eigen::VectorXd::Zero(dim);
        fresh->theta = Eigen::VectorXd::Zero(dim);
        arms_.assign(static_cast<std::size_t>(num_actions), fresh);
    }

    int num_actions() const override { return static_cast<int>(arms_.size()); }

    void update(std::span<const double> x, int a, double y) override {
        const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
        auto next = std::make_shared<LinUcbArm>(*arms_[static_cast<std::size_t>(a)]);
        // Sherman-Morrison rank-1 update of the inverse design matrix.
        const Eigen::VectorXd ax = next->a_inv * xv;
        next->a_inv.noalias() -= (ax * ax.transpose()) / (1.0 + xv.dot(ax));
        next->b += y * xv;
        next->theta = next->a_inv * next->b;
        arms_[static_cast<std::size_t>(a)] = std::move(next);
    }

    std::shared_ptr<const PolicyFunction> snapshot() const override {
        return std::make_shared<LinUcbSnapshot>(arms_, exploration_);
    }

private:
    double exploration_;
    std::vector<std::shared_ptr<const LinUcbArm>> arms_;
};

class MixtureAdaptive final : public AdaptivePolicy {
public:
    MixtureAdaptive(std::unique_ptr<AdaptivePolicy> inner, double w)
        : inner_(std::move(inner)), w_(w) {
        if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("mixture weight outside [0,1]");
    }
    int num_actions() const override { return inner_->num_actions(); }
    void update(std::span<const double> x, int a, double y) override { inner_->update(x, a, y); }
    std::shared_ptr<const PolicyFunction> snapshot() const override {
        return std::make_shared<MixturePolicyFn>(inner_->snapshot(), w_);
    }

private:
    std::unique_ptr<AdaptivePolicy> inner_;
    double w_;
};

}  // namespace

std::unique_ptr<AdaptivePolicy> random_walk_policy(int num_actions, double step_sd,
                                                   std::uint64_t seed, double floor_delta) {
    return std::make_unique<RandomWalkPolicy>(num_actions, step_sd, seed, floor_delta);
}

std::unique_ptr<AdaptivePolicy> linucb_policy(int num_actions, int dim, double ridge,
                                              double exploration) {
    return std::make_unique<LinUcbPolicy>(num_actions, dim, ridge, exploration);
}

std::unique_ptr<AdaptivePolicy> mixture_policy(std::unique_ptr<AdaptivePolicy> inner, double w) {
    return std::make_unique<MixtureAdaptive>(std::move(inner), w);
}

LogisticModel::LogisticModel(int num_classes, int dim)
    : num_classes_(num_classes), dim_(dim),
      weights_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(dim), 0.0),
      bias_(static_cast<std::size_t>(num_classes), 0.0) {}

void LogisticModel::fit(const std::vector<std::vector<double>>& xs,
                        const std::vector<int>& labels, const LogisticConfig& cfg) {
    if (xs.size() != labels.size() || xs.empty()) {
        throw std::invalid_argument("LogisticModel::fit: shape mismatch");
    }
    std::vector<bool> seen(static_cast<std::size_t>(num_classes_), false);
    for (int l : labels) {
        if (l < 0 || l >= num_classes_) throw std::invalid_argument("label out of range");
        seen[static_cast<std::size_t>(l)] = true;
    }
    for (int k = 0; k < num_classes_; ++k) {
        if (!seen[static_cast<std::size_t>(k)]) {
            throw std::invalid_argument("class " + std::to_string(k) +
                                        " absent from training data");
        }
    }

    const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd x(n, dim_);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < dim_; ++j) x(i, j) = xs[static_cast<std::size_t>(i)]
                                                   [static_cast<std::size_t>(j)];
    }

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(num_classes_, dim_);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(num_classes_);
    Eigen::MatrixXd logits(n, num_classes_);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (int it = 0; it < cfg.iterations; ++it) {
        logits.noalias() = x * w.transpose();
        logits.rowwise() += b.transpose();
        // Softmax probabilities, row-wise, with max subtraction.
        for (Eigen::Index i = 0; i < n; ++i) {
            auto row = logits.row(i);
            row.array() -= row.maxCoeff();
            row = row.array().exp();
            row /= row.sum();
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            logits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        }
        const Eigen::MatrixXd grad_w = inv_n * logits.transpose() * x + cfg.l2 * w;
        const Eigen::VectorXd grad_b = inv_n * logits.colwise().sum().transpose();
        w -= cfg.step_size * grad_w;
        b -= cfg.step_size * grad_b;
    }

    for (int k = 0; k < num_classes_; ++k) {
        bias_[static_cast<std::size_t>(k)] = b(k);
        for (int j = 0; j < dim_; ++j) {
            weights_[static_cast<std::size_t>(k) * static_cast<std::size_t>(dim_) +
                     static_cast<std::size_t>(j)] = w(k, j);
        }
    }
}

int LogisticModel::predict(std::span<const double> x) const {
    std::vector<double> scores(static_cast<std::size_t>(num_classes_), 0.0);
    for (int k = 0; k < num_classes_; ++k) {
        double s = bias_[static_cast<std::size_t>(k)];
        const std::size_t off = static_cast<std::size_t>(k) * static_cast<std::size_t>(dim_);
        for (int j = 0; j < dim_ && j < static_cast<int>(x.size()); ++j) {
            s += weights_[off + static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
        }
        scores[static_cast<std::size_t>(k)] = s;
    }
    return argmax_lowest_tie(scores);
}

double LogisticModel::training_accuracy(const std::vector<std::vector<double>>& xs,
                                        const std::vector<int>& labels) const {
    int hits = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (predict(xs[i]) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(xs.size());
}

namespace {

class ClassifierPolicy final : public PolicyFunction {
public:
    explicit ClassifierPolicy(LogisticModel model) : model_(std::move(model)) {}
    int num_actions() const override { return model_.num_classes(); }
    void action_probs(std::span<const double> x, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(model_.predict(x))] = 1.0;
    }

private:
    LogisticModel model_;
};

}  // namespace

std::shared_ptr<const PolicyFunction> fit_evaluation_policy(
    const std::vector<std::vector<double>>& xs, const std::vector<int>& labels, int num_classes,
    double w, const LogisticConfig& cfg) {
    if (xs.empty()) throw std::invalid_argument("fit_evaluation_policy: empty training data");
    LogisticModel model(num_classes, static_cast<int>(xs.front().size()));
    model.fit(xs, labels, cfg);
    auto det = std::make_shared<ClassifierPolicy>(std::move(model));
    if (w >= 1.0) return det;
    return mixture_policy_fn(std::move(det), w);
}

}  // namespace ope
