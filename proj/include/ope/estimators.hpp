#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ope/env.hpp"
#include "ope/nuisance.hpp"
#include "ope/types.hpp"

namespace ope {

// How the centered outcome-model term enters the variance target: the
// displayed formula squares per arm inside the action sum; the alternative
// squares the summed term. The two coincide for a deterministic evaluation
// policy at theta = 0 but differ in general.
enum class VarianceTermForm { per_arm_square, squared_sum };

struct FeasibleOptions {
    double epsilon = 1e-3;   // floor for g
    int burn_in = 0;         // periods discarded from the front of the window
    double alpha = 0.05;     // CI level
    double g_init = 1.0;     // first-pass constant weight in two-step runs
    VarianceTermForm form = VarianceTermForm::per_arm_square;
};

struct VarianceWeights {
    enum class Source { known, eval_data, sample_split, initializer };
    std::vector<double> g;
    Source source = Source::known;
    double epsilon = 1e-3;
    int floor_hits = 0;
};

struct ScoreInputs {
    const LoggedSample* sample = nullptr;
    const PolicyFunction* pi_e = nullptr;
    const NuisanceModel* nuisance = nullptr;
    double theta = 0.0;
};

// Doubly robust score: importance-weighted residual on the realized action
// plus the outcome-model average, minus theta.
double score(const ScoreInputs& in);

// Per-period augmented terms q_t (the score at theta = 0), using the stored
// propensity of each realized action and the strict-past nuisance pair.
std::vector<double> augmented_terms(const HistoricalLog& log, const PolicyFunction& pi_e,
                                    const NuisanceSequence& nuisances,
                                    Diagnostics* diag = nullptr);

EstimateReport dm_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                           const NuisanceSequence& nuisances);
EstimateReport adaipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e);
EstimateReport a2ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                              const NuisanceSequence& nuisances);
// Inverse-sqrt(g) weighted average; weights must cover every period and sit
// on or above their floor.
EstimateReport a3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                              const NuisanceSequence& nuisances, const VarianceWeights& weights,
                              double alpha = 0.05);

// Plug-in estimate of the per-period score variance from a covariate pool.
double variance_estimate(const EvaluationCovariates& pool, const PolicyFunction& pi_e,
                         const PolicyFunction& behavior_snapshot, const NuisanceModel& nuisance,
                         double theta_prev,
                         VarianceTermForm form = VarianceTermForm::per_arm_square);

// max(g_prime, epsilon); bumps *floor_hits when the floor binds.
double floor_variance(double g_prime, double epsilon, int* floor_hits = nullptr);

// Exact per-period score variance on a finite-support environment.
double oracle_sigma_star(const BanditEnvironment& env, const PolicyFunction& behavior_snapshot,
                         const PolicyFunction& pi_e, double theta0,
                         VarianceTermForm form = VarianceTermForm::per_arm_square);

// Weighted estimate with per-period variances computed from the pool, floored,
// over periods burn_in+1..T. theta_prev[t-1] supplies the running estimate
// used in the variance formula for period t (theta_prev[0] is the t=1 value).
EstimateReport fa3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                               const NuisanceSequence& nuisances,
                               const EvaluationCovariates& pool,
                               std::span<const double> theta_prev, const FeasibleOptions& opts);
// Same pipeline with the outcome model forced to zero (IPW augmented term and
// second-moment-only plug-in variance).
EstimateReport fa2daipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                 const NuisanceSequence& nuisances,
                                 const EvaluationCovariates& pool,
                                 std::span<const double> theta_prev,
                                 const FeasibleOptions& opts);

// Two-step estimation: constant-weight running estimates feed the variance
// weights of the final pass.
EstimateReport tsfa3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                 const NuisanceSequence& nuisances,
                                 const EvaluationCovariates& pool, const FeasibleOptions& opts);
EstimateReport tsfa2daipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                   const NuisanceSequence& nuisances,
                                   const EvaluationCovariates& pool, const FeasibleOptions& opts);

// Sample splitting: periods 1..floor(rT) form the estimation window and the
// remaining contexts form the variance pool.
struct SampleSplit {
    int window = 0;      // floor(rT)
    int pool_begin = 0;  // first pooled period, window+1
};
SampleSplit make_sample_split(int periods, double r);

EstimateReport tsfa3ipw_split_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                       const NuisanceSequence& nuisances, double r,
                                       const FeasibleOptions& opts);

// Normal CI from the standardized statistic: half-width z * sqrt(window) over
// the summed inverse-root weights.
std::pair<double, double> confidence_interval(double theta_hat, int window,
                                              std::span<const double> g, double alpha);

// First-pass running estimates theta_tilde_t under a constant weight.
std::vector<double> running_initial_estimates(std::span<const double> q, double g_init);

}  // namespace ope
