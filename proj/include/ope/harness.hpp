#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ope/env.hpp"
#include "ope/estimators.hpp"
#include "ope/nuisance.hpp"
#include "ope/types.hpp"

namespace ope {

struct BehaviorSpec {
    std::string kind = "rw";  // rw | linucb
    double w = 0.7;           // adaptive weight in the uniform mixture
    double step_sd = 0.05;
    double ridge = 1.0;
    double ucb_alpha = 1.0;
};

struct EvalPolicySpec {
    std::string kind = "logistic";  // logistic | arm | uniform
    int arm = 0;
    double w = 0.7;
    LogisticConfig classifier;
    double fit_fraction = 0.3;  // dataset share held out for classifier training
    bool paper_faithful = false;  // fit on the logged rows instead
};

struct ExperimentConfig {
    std::string name = "experiment";

    // Environment: exactly one of dataset_path / synthetic.
    std::string dataset_path;
    std::optional<SyntheticSpec> synthetic;
    bool standardize = false;
    bool with_replacement = false;

    BehaviorSpec behavior;
    EvalPolicySpec eval;

    int periods = 1000;  // T
    int eval_n = 1000;   // N
    double split_r = 0.5;
    int burn_in = -1;  // -1: T/2 for the stabilized estimator
    double epsilon = 1e-3;
    double g_init = 1.0;
    double alpha = 0.05;
    VarianceTermForm form = VarianceTermForm::per_arm_square;

    std::vector<std::string> estimators = {"fa3ipw", "sfa3ipw", "dm",
                                           "adaipw", "a2ipw",   "fa2daipw"};
    int replications = 20;
    std::uint64_t base_seed = 20200617;
    NuisanceConfig nuisance;
    int threads = 0;  // 0: hardware concurrency
    bool allow_failures = false;

    static ExperimentConfig from_json_string(const std::string& text);
    static ExperimentConfig from_json_file(const std::string& path);
    std::string to_json_string() const;

    int effective_burn_in() const { return burn_in >= 0 ? burn_in : periods / 2; }
    FeasibleOptions feasible_options(int burn) const {
        return FeasibleOptions{epsilon, burn, alpha, g_init, form};
    }
};

struct ResultRow {
    std::string estimator;
    std::string env;
    std::string policy;
    int replications = 0;
    double theta0 = std::numeric_limits<double>::quiet_NaN();
    double mse = std::numeric_limits<double>::quiet_NaN();
    double sd_squared_error = std::numeric_limits<double>::quiet_NaN();
    double mean_ci_width = std::numeric_limits<double>::quiet_NaN();
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double mean_runtime_ms = std::numeric_limits<double>::quiet_NaN();
};

struct ResultTable {
    std::vector<ResultRow> rows;

    void to_csv(std::ostream& out) const;
    std::string to_csv_string() const;
    std::string to_json_string() const;
};

// One replication's output for one estimator.
struct RepEstimate {
    double theta_hat = std::numeric_limits<double>::quiet_NaN();
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    double runtime_ms = 0.0;
    bool has_ci() const { return std::isfinite(ci_low) && std::isfinite(ci_high); }
};

// Squared-error aggregation against the per-replication truth.
ResultRow aggregate_estimates(const std::string& estimator, const std::string& env,
                              const std::string& policy,
                              const std::vector<RepEstimate>& estimates,
                              const std::vector<double>& theta0s);

// Replication engine: seeded parallel replications, deterministic for a fixed
// config regardless of worker count.
ResultTable run_experiment(const ExperimentConfig& cfg);

// Estimator pass over an imported (snapshot-free) log: weighted estimators are
// reported as disabled.
struct LogRunResult {
    std::vector<EstimateReport> reports;
    std::vector<std::string> disabled;
};
LogRunResult run_on_imported_log(const HistoricalLog& log, const ExperimentConfig& cfg);

// Builds the configured environment and behavior policy; used by the CLI
// `simulate` path and by run_experiment itself.
struct ExperimentSetup {
    std::unique_ptr<BanditEnvironment> env;
    std::shared_ptr<const PolicyFunction> eval_policy;
    double theta0 = std::numeric_limits<double>::quiet_NaN();
    std::string env_name;
    std::string policy_name;
};
ExperimentSetup prepare_experiment(const ExperimentConfig& cfg);

std::unique_ptr<AdaptivePolicy> make_behavior_policy(const BehaviorSpec& spec, int num_actions,
                                                     int dim, std::uint64_t seed);

// Dynamic work-stealing loop over [0, count).
void parallel_for(int count, int threads, const std::function<void(int)>& body);

}  // namespace ope
