#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ope/dataset.hpp"
#include "ope/policies.hpp"
#include "ope/rng.hpp"
#include "ope/types.hpp"

namespace ope {

struct FiniteSupport {
    std::vector<std::vector<double>> contexts;
    std::vector<double> probs;
};

// Per-replication context draw state. Classification environments hand out a
// fresh without-replacement shuffle; synthetic environments draw i.i.d.
class ContextStream {
public:
    virtual ~ContextStream() = default;
    // Throws when the stream is exhausted (without-replacement mode).
    virtual void next(Rng& rng, std::vector<double>& out) = 0;
};

class BanditEnvironment {
public:
    virtual ~BanditEnvironment() = default;

    virtual int num_actions() const = 0;
    virtual int dim() const = 0;
    virtual double reward_bound() const = 0;  // C2

    virtual double f_star(int a, std::span<const double> x) const = 0;
    virtual double e_star(int a, std::span<const double> x) const = 0;
    double v_star(int a, std::span<const double> x) const {
        const double f = f_star(a, x);
        return e_star(a, x) - f * f;
    }

    virtual const FiniteSupport* support() const { return nullptr; }
    virtual std::unique_ptr<ContextStream> make_context_stream(Rng& rng) const = 0;
    virtual double sample_reward(Rng& rng, int a, std::span<const double> x) const = 0;

    // Exact policy value when available (finite support, or closed form).
    virtual std::optional<double> exact_value(const PolicyFunction& pi_e) const;

    long long clip_events() const { return clip_events_.load(); }

protected:
    mutable std::atomic<long long> clip_events_{0};
};

// R(pi_e); throws when the environment admits no exact evaluation.
double true_policy_value(const BanditEnvironment& env, const PolicyFunction& pi_e);

// Draws x_t, queries the behavior policy, samples the action from the emitted
// vector, draws the reward, stores the full propensity vector plus the policy
// snapshot, then feeds the observation back to the policy.
HistoricalLog generate_log(ContextStream& ctx, const BanditEnvironment& env,
                           AdaptivePolicy& behavior, int periods, Rng& rng);
HistoricalLog generate_log(const BanditEnvironment& env, AdaptivePolicy& behavior, int periods,
                           Rng& rng);

EvaluationCovariates draw_covariates(ContextStream& ctx, int n, Rng& rng);

struct SyntheticSpec {
    int num_actions = 2;
    int dim = 2;

    // Context law: finite support when set, otherwise independent Gaussians.
    std::optional<FiniteSupport> finite_context;
    std::vector<double> context_mean;  // defaults to zeros
    std::vector<double> context_sd;    // defaults to ones

    std::vector<std::vector<double>> arm_coef;  // K x d
    std::vector<double> arm_intercept;          // K

    std::string noise = "truncated_gaussian";  // none | bernoulli | truncated_gaussian
    double noise_sd = 0.5;
    double noise_halfwidth = 2.0;
    double c2 = 10.0;
};

// Rejects unbounded noise specs; rewards are clipped to [-c2, c2] with clip
// events counted.
std::unique_ptr<BanditEnvironment> make_synthetic_env(const SyntheticSpec& spec);

// Rows become the finite context support; reward is 1 when the action matches
// the row label. Contexts are drawn without replacement per replication unless
// with_replacement is set.
std::unique_ptr<BanditEnvironment> classification_to_bandit(const ClassificationDataset& ds,
                                                            bool with_replacement = false);
std::unique_ptr<BanditEnvironment> classification_to_bandit(
    std::vector<std::vector<double>> contexts, std::vector<int> labels, int num_classes,
    bool with_replacement = false);

// JSON-lines log exchange: one sample per line with fields
// (t, x, a, y, propensities). Imported logs carry no policy snapshots.
void export_log_jsonl(const HistoricalLog& log, std::ostream& out);
HistoricalLog import_log_jsonl(std::istream& in);

}  // namespace ope
