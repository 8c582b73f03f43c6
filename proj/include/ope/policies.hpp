#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ope/types.hpp"

namespace ope {

// Mutable behavior-policy state. update() may consume only past observations;
// snapshot() returns the current conditional law as an immutable function.
class AdaptivePolicy {
public:
    virtual ~AdaptivePolicy() = default;
    virtual int num_actions() const = 0;
    virtual void update(std::span<const double> x, int a, double y) = 0;
    virtual std::shared_ptr<const PolicyFunction> snapshot() const = 0;
};

std::shared_ptr<const PolicyFunction> uniform_policy(int num_actions);

// One-hot evaluation policy on a fixed arm.
std::shared_ptr<const PolicyFunction> fixed_arm_policy(int num_actions, int arm);

// w * inner + (1-w) * uniform.
std::shared_ptr<const PolicyFunction> mixture_policy_fn(
    std::shared_ptr<const PolicyFunction> inner, double w);

// Context-free random walk: probabilities drift by Gaussian steps, are clamped
// to floor_delta and renormalized each update.
std::unique_ptr<AdaptivePolicy> random_walk_policy(int num_actions, double step_sd,
                                                   std::uint64_t seed,
                                                   double floor_delta = 1e-3);

// Disjoint ridge models per arm; the snapshot is one-hot on the arm with the
// highest upper confidence score, ties to the lowest index.
std::unique_ptr<AdaptivePolicy> linucb_policy(int num_actions, int dim, double ridge,
                                              double exploration);

// Forwards updates to inner; snapshots mix inner with uniform at weight w.
std::unique_ptr<AdaptivePolicy> mixture_policy(std::unique_ptr<AdaptivePolicy> inner, double w);

struct LogisticConfig {
    int iterations = 500;
    double step_size = 0.1;
    double l2 = 1e-4;
};

// Multinomial logistic regression, full-batch gradient descent.
class LogisticModel {
public:
    LogisticModel(int num_classes, int dim);

    void fit(const std::vector<std::vector<double>>& xs, const std::vector<int>& labels,
             const LogisticConfig& cfg);
    int predict(std::span<const double> x) const;
    double training_accuracy(const std::vector<std::vector<double>>& xs,
                             const std::vector<int>& labels) const;
    int num_classes() const { return num_classes_; }

private:
    int num_classes_;
    int dim_;
    std::vector<double> weights_;  // row-major (num_classes x dim)
    std::vector<double> bias_;
};

// Trains a classifier on (xs, labels) and returns w * onehot(prediction) +
// (1-w) * uniform. Every class 0..K-1 must be present in the labels.
std::shared_ptr<const PolicyFunction> fit_evaluation_policy(
    const std::vector<std::vector<double>>& xs, const std::vector<int>& labels, int num_classes,
    double w, const LogisticConfig& cfg = {});

}  // namespace ope
