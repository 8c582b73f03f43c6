#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ope {

inline constexpr double kPropensitySumTol = 1e-9;

// True when entries are finite, lie in [0,1], and sum to 1 within tolerance.
bool is_probability_vector(std::span<const double> p, double tol = kPropensitySumTol);
// As above but additionally every entry strictly positive (overlap).
bool is_strictly_positive_probability_vector(std::span<const double> p,
                                             double tol = kPropensitySumTol);

// Lowest index among the maxima.
int argmax_lowest_tie(std::span<const double> v);

enum class PolicyKind { evaluation, behavior_snapshot };

// A full conditional action-probability function pi(.|x). Behavior-policy
// snapshots captured at logging time and fixed evaluation policies share this
// interface; both are immutable and safe to share across threads.
class PolicyFunction {
public:
    virtual ~PolicyFunction() = default;

    virtual int num_actions() const = 0;
    // Writes pi(.|x) into out; out.size() must equal num_actions().
    virtual void action_probs(std::span<const double> x, std::span<double> out) const = 0;
    // True when the output does not depend on x (enables pooled fast paths).
    virtual bool context_free() const { return false; }
    virtual PolicyKind kind() const { return PolicyKind::evaluation; }

    std::vector<double> probs(std::span<const double> x) const;
    bool is_deterministic_at(std::span<const double> x, double tol = kPropensitySumTol) const;
};

// Context-free policy backed by a fixed probability vector.
class TablePolicy final : public PolicyFunction {
public:
    TablePolicy(std::vector<double> probs, PolicyKind kind);
    int num_actions() const override { return static_cast<int>(probs_.size()); }
    void action_probs(std::span<const double>, std::span<double> out) const override;
    bool context_free() const override { return true; }
    PolicyKind kind() const override { return kind_; }
    const std::vector<double>& table() const { return probs_; }

private:
    std::vector<double> probs_;
    PolicyKind kind_;
};

// One period of logged bandit feedback. The propensity vector is the behavior
// policy's full conditional law at logging time, not only the chosen entry.
struct LoggedSample {
    int t = 0;                          // 1-based period index
    std::vector<double> x;              // context
    int a = 0;                          // 0-based action
    double y = 0.0;                     // reward
    std::vector<double> propensities;   // pi_t(.|x), length K

    // Validating factory: rejects non-simplex propensities, out-of-range
    // actions, and rewards above the bound.
    static LoggedSample checked(int t, std::vector<double> x, int a, double y,
                                std::vector<double> propensities,
                                double reward_bound = 1.0);
    void check(double reward_bound) const;
};

// Ordered dependent sample. Snapshots, when present, carry the full behavior
// policy function per period (needed by the variance machinery; logs imported
// from JSON lines do not have them).
struct HistoricalLog {
    int num_actions = 0;
    int dim = 0;
    std::vector<LoggedSample> samples;
    std::vector<std::shared_ptr<const PolicyFunction>> snapshots;

    int size() const { return static_cast<int>(samples.size()); }
    bool has_snapshots() const { return snapshots.size() == samples.size() && !samples.empty(); }
    // Periods 1..T with no gaps, consistent K and d, simplex propensities.
    void check_structure() const;
};

struct EvaluationCovariates {
    std::vector<std::vector<double>> contexts;

    int size() const { return static_cast<int>(contexts.size()); }
};

// Bounds appearing in the identification and weighting assumptions.
struct ImportanceRatioBound {
    double c1 = 100.0;    // importance ratio bound
    double c2 = 1.0;      // reward / outcome-model bound
    double c3 = 0.0;      // bound on 1/sqrt(g); 0 means derive as 1/sqrt(epsilon)
    double epsilon = 1e-3;  // variance floor

    void check() const;
    double effective_c3() const { return c3 > 0.0 ? c3 : 1.0 / std::sqrt(epsilon); }
};

struct Diagnostics {
    double max_importance_ratio = 0.0;
    int floor_hits = 0;
};

struct EstimateReport {
    std::string method;
    double theta_hat = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> weights;  // g_t over the estimation window; empty if unweighted
    double stat_denominator = std::numeric_limits<double>::quiet_NaN();
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    double alpha = std::numeric_limits<double>::quiet_NaN();
    int burn_in = 0;
    int window = 0;  // periods actually averaged
    Diagnostics diagnostics;
    std::vector<std::string> notes;

    bool has_ci() const { return std::isfinite(ci_low) && std::isfinite(ci_high); }
    std::string to_json_string() const;
};

enum class ViolationKind { ratio_bound, reward_bound, nonpositive_propensity };

struct Violation {
    ViolationKind kind;
    int t = 0;
    int arm = -1;
    double value = 0.0;
    double bound = 0.0;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

// Checks the realized log against the stated bounds: importance ratios over
// every arm, reward magnitudes, and propensity positivity. Dimension
// mismatches are structural and throw instead of being reported.
ValidationReport validate_log(const HistoricalLog& log, const PolicyFunction& eval_policy,
                              const ImportanceRatioBound& bounds);

}  // namespace ope
