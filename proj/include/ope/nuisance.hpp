#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ope/env.hpp"
#include "ope/types.hpp"

namespace ope {

// Floor applied to e_hat - f_hat^2 so the plug-in conditional variance cannot
// go negative term-wise.
inline constexpr double kConditionalVarianceFloor = 1e-6;

struct NuisanceConfig {
    enum class Method { nw, knn };
    Method method = Method::nw;
    double bandwidth = 0.0;  // 0 -> median pairwise distance rule
    int k = 5;
    int refit_every = 10;
    double c2 = 1.0;  // clamp bound for f_hat; e_hat clamps to [0, c2^2]
    int bandwidth_points = 200;
};

// A fitted (f_hat, e_hat) pair. Outputs are clamped to [-c2, c2] and
// [0, c2^2]; arms without samples return the cold-start values (0, c2^2).
class NuisanceModel {
public:
    virtual ~NuisanceModel() = default;
    virtual double f_hat(int a, std::span<const double> x) const = 0;
    virtual double e_hat(int a, std::span<const double> x) const = 0;
    virtual int fitted_through() const = 0;
    virtual double bound() const = 0;

    double v_hat(int a, std::span<const double> x) const {
        const double f = f_hat(a, x);
        return std::max(e_hat(a, x) - f * f, kConditionalVarianceFloor);
    }
};

// Evaluates a nuisance sequence over a fixed covariate pool block by block.
// eval() must be called with nondecreasing fit points; outputs are laid out
// arm-major: value(a, i) = out[a * N + i].
class PoolNuisanceWorker {
public:
    virtual ~PoolNuisanceWorker() = default;
    virtual void eval(int fit_point, std::vector<double>& f_out, std::vector<double>& e_out) = 0;
};

// Pairs indexed t = 1..T; the pair at t is a pure function of samples with
// period <= fit_point(t) <= t-1 (no lookahead).
class NuisanceSequence {
public:
    virtual ~NuisanceSequence() = default;
    virtual int periods() const = 0;
    virtual const NuisanceModel& at(int t) const = 0;
    virtual int fit_point(int t) const = 0;
    // Distinct fit points, ascending.
    virtual std::vector<int> fit_points() const;
    virtual std::unique_ptr<PoolNuisanceWorker> make_pool_worker(const EvaluationCovariates& pool,
                                                                 int num_actions) const;
};

// Sequential nonparametric fit on a log: refits every `refit_every` periods,
// reusing the stale pair in between (stale pairs still see only strict past).
std::unique_ptr<NuisanceSequence> sequential_nuisance(const HistoricalLog& log,
                                                      const NuisanceConfig& cfg);

// Single models fitted through a fixed prefix (used directly in tests and by
// the sequential fit).
std::unique_ptr<NuisanceModel> nw_fit(const HistoricalLog& log, int fit_through, double bandwidth,
                                      double c2);
std::unique_ptr<NuisanceModel> knn_fit(const HistoricalLog& log, int fit_through, int k,
                                       double c2);

// f* / e* of an environment presented as a nuisance pair.
std::unique_ptr<NuisanceSequence> oracle_nuisance(const BanditEnvironment& env, int periods);
// Constant pair (tests and reductions).
std::unique_ptr<NuisanceSequence> constant_nuisance(double f0, double e0, double c2, int periods);
// View of `inner` with f_hat forced to zero and e_hat kept (IPW-style weights).
std::unique_ptr<NuisanceSequence> zero_f_view(std::shared_ptr<const NuisanceSequence> inner);

// Median pairwise Euclidean distance bandwidth rule over the first
// min(max_points, n) contexts.
double median_distance_bandwidth(std::span<const std::vector<double>> contexts, int max_points);

}  // namespace ope
