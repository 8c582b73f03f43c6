#include "ope/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ope/stats.hpp"

namespace ope {

namespace {

void require_snapshots(const HistoricalLog& log, const char* who) {
    if (!log.has_snapshots()) {
        throw std::invalid_argument(std::string(who) +
                                    ": log carries no behavior-policy snapshots, so per-period "
                                    "variances cannot be estimated");
    }
}

double augmented_term(const LoggedSample& s, std::span<const double> pe,
                      const NuisanceModel& nuisance, Diagnostics* diag) {
    const double prop = s.propensities[static_cast<std::size_t>(s.a)];
    if (!(prop > 0.0)) {
        throw std::runtime_error("augmented term: zero logged propensity on the realized action "
                                 "(overlap violation) at period " + std::to_string(s.t));
    }
    const double pe_a = pe[static_cast<std::size_t>(s.a)];
    if (diag != nullptr) {
        diag->max_importance_ratio = std::max(diag->max_importance_ratio, pe_a / prop);
    }
    double value = pe_a * (s.y - nuisance.f_hat(s.a, s.x)) / prop;
    for (int a = 0; a < static_cast<int>(pe.size()); ++a) {
        value += pe[static_cast<std::size_t>(a)] * nuisance.f_hat(a, s.x);
    }
    return value;
}

struct WeightedMean {
    double sum_wq = 0.0;
    double sum_w = 0.0;

    void add(double w, double q) {
        sum_wq += w * q;
        sum_w += w;
    }
    double value() const { return sum_wq / sum_w; }
};

EstimateReport make_unweighted_report(std::string method, std::span<const double> q,
                                      Diagnostics diag) {
    WeightedMean acc;
    for (double v : q) acc.add(1.0, v);
    EstimateReport r;
    r.method = std::move(method);
    r.theta_hat = acc.value();
    r.window = static_cast<int>(q.size());
    r.diagnostics = diag;
    return r;
}

}  // namespace

double score(const ScoreInputs& in) {
    if (in.sample == nullptr || in.pi_e == nullptr || in.nuisance == nullptr) {
        throw std::invalid_argument("score: missing inputs");
    }
    if (in.nuisance->fitted_through() > in.sample->t - 1) {
        throw std::invalid_argument("score: nuisance pair uses data from the sample's period");
    }
    const auto pe = in.pi_e->probs(in.sample->x);
    return augmented_term(*in.sample, pe, *in.nuisance, nullptr) - in.theta;
}

std::vector<double> augmented_terms(const HistoricalLog& log, const PolicyFunction& pi_e,
                                    const NuisanceSequence& nuisances, Diagnostics* diag) {
    log.check_structure();
    if (nuisances.periods() < log.size()) {
        throw std::invalid_argument("augmented_terms: nuisance sequence shorter than log");
    }
    std::vector<double> q;
    q.reserve(log.samples.size());
    std::vector<double> pe(static_cast<std::size_t>(log.num_actions));
    for (const auto& s : log.samples) {
        pi_e.action_probs(s.x, pe);
        q.push_back(augmented_term(s, pe, nuisances.at(s.t), diag));
    }
    return q;
}

EstimateReport dm_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                           const NuisanceSequence& nuisances) {
    log.check_structure();
    std::vector<double> pe(static_cast<std::size_t>(log.num_actions));
    WeightedMean acc;
    for (const auto& s : log.samples) {
        pi_e.action_probs(s.x, pe);
        const auto& model = nuisances.at(s.t);
        double v = 0.0;
        for (int a = 0; a < log.num_actions; ++a) {
            v += pe[static_cast<std::size_t>(a)] * model.f_hat(a, s.x);
        }
        acc.add(1.0, v);
    }
    EstimateReport r;
    r.method = "dm";
    r.theta_hat = acc.value();
    r.window = log.size();
    return r;
}

EstimateReport adaipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e) {
    const auto zero = constant_nuisance(0.0, 0.0, 1.0, log.size());
    Diagnostics diag;
    const auto q = augmented_terms(log, pi_e, *zero, &diag);
    auto r = make_unweighted_report("adaipw", q, diag);
    return r;
}

EstimateReport a2ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                              const NuisanceSequence& nuisances) {
    Diagnostics diag;
    const auto q = augmented_terms(log, pi_e, nuisances, &diag);
    return make_unweighted_report("a2ipw", q, diag);
}

EstimateReport a3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                              const NuisanceSequence& nuisances, const VarianceWeights& weights,
                              double alpha) {
    if (static_cast<int>(weights.g.size()) != log.size()) {
        throw std::invalid_argument("a3ipw_estimate: weights must cover every period");
    }
    for (double g : weights.g) {
        if (!(g >= weights.epsilon)) {
            throw std::invalid_argument("a3ipw_estimate: weight below the variance floor");
        }
    }
    Diagnostics diag;
    diag.floor_hits = weights.floor_hits;
    const auto q = augmented_terms(log, pi_e, nuisances, &diag);
    WeightedMean acc;
    for (std::size_t i = 0; i < q.size(); ++i) {
        acc.add(1.0 / std::sqrt(weights.g[i]), q[i]);
    }

    EstimateReport r;
    r.method = "a3ipw";
    r.theta_hat = acc.value();
    r.window = log.size();
    r.weights = weights.g;
    r.stat_denominator = acc.sum_w / std::sqrt(static_cast<double>(log.size()));
    r.diagnostics = diag;
    r.alpha = alpha;
    if (log.size() >= 2) {
        std::tie(r.ci_low, r.ci_high) = confidence_interval(r.theta_hat, r.window, r.weights, alpha);
    } else {
        r.notes.push_back("single-period window: CI suppressed");
    }
    return r;
}

double variance_estimate(const EvaluationCovariates& pool, const PolicyFunction& pi_e,
                         const PolicyFunction& behavior_snapshot, const NuisanceModel& nuisance,
                         double theta_prev, VarianceTermForm form) {
    if (pool.contexts.empty()) throw std::invalid_argument("variance_estimate: empty pool");
    const int num_actions = pi_e.num_actions();
    std::vector<double> pe(static_cast<std::size_t>(num_actions));
    std::vector<double> pb(static_cast<std::size_t>(num_actions));
    double total = 0.0;
    for (const auto& x : pool.contexts) {
        pi_e.action_probs(x, pe);
        behavior_snapshot.action_probs(x, pb);
        double first = 0.0;
        double per_arm = 0.0;
        double summed = 0.0;
        for (int a = 0; a < num_actions; ++a) {
            const double pea = pe[static_cast<std::size_t>(a)];
            const double pba = pb[static_cast<std::size_t>(a)];
            if (!(pba > 0.0)) {
                throw std::runtime_error("variance_estimate: behavior snapshot assigns zero "
                                         "probability on the pool");
            }
            first += pea * pea * nuisance.v_hat(a, x) / pba;
            const double u = pea * nuisance.f_hat(a, x);
            per_arm += (u - theta_prev) * (u - theta_prev);
            summed += u;
        }
        total += first + (form == VarianceTermForm::per_arm_square
                              ? per_arm
                              : (summed - theta_prev) * (summed - theta_prev));
    }
    return total / static_cast<double>(pool.contexts.size());
}

double floor_variance(double g_prime, double epsilon, int* floor_hits) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("floor_variance: epsilon must be > 0");
    if (g_prime < epsilon) {
        if (floor_hits != nullptr) ++*floor_hits;
        return epsilon;
    }
    return g_prime;
}

double oracle_sigma_star(const BanditEnvironment& env, const PolicyFunction& behavior_snapshot,
                         const PolicyFunction& pi_e, double theta0, VarianceTermForm form) {
    const FiniteSupport* sup = env.support();
    if (sup == nullptr) {
        throw std::invalid_argument("oracle_sigma_star: environment has no finite support");
    }
    const int num_actions = env.num_actions();
    std::vector<double> pe(static_cast<std::size_t>(num_actions));
    std::vector<double> pb(static_cast<std::size_t>(num_actions));
    double total = 0.0;
    for (std::size_t i = 0; i < sup->contexts.size(); ++i) {
        const auto& x = sup->contexts[i];
        pi_e.action_probs(x, pe);
        behavior_snapshot.action_probs(x, pb);
        double first = 0.0;
        double per_arm = 0.0;
        double summed = 0.0;
        for (int a = 0; a < num_actions; ++a) {
            const double pea = pe[static_cast<std::size_t>(a)];
            first += pea * pea * env.v_star(a, x) / pb[static_cast<std::size_t>(a)];
            const double u = pea * env.f_star(a, x);
            per_arm += (u - theta0) * (u - theta0);
            summed += u;
        }
        total += sup->probs[i] * (first + (form == VarianceTermForm::per_arm_square
                                               ? per_arm
                                               : (summed - theta0) * (summed - theta0)));
    }
    return total;
}

namespace {

// Weighted pass over an estimation window with per-period plug-in variances.
// Reductions over the pool are refreshed per nuisance block; context-free
// behavior snapshots collapse the per-period pool sweep to O(K).
EstimateReport feasible_weighted_estimate(const char* method, const HistoricalLog& log,
                                          const PolicyFunction& pi_e,
                                          const NuisanceSequence& nuisances,
                                          const EvaluationCovariates& pool,
                                          std::span<const double> theta_prev,
                                          const FeasibleOptions& opts, int window_end) {
    log.check_structure();
    require_snapshots(log, method);
    if (pool.contexts.empty()) throw std::invalid_argument("feasible estimate: empty pool");
    const int T = window_end;
    if (opts.burn_in < 0 || opts.burn_in >= T) {
        throw std::invalid_argument("feasible estimate: burn-in must lie in [0, window)");
    }
    if (static_cast<int>(theta_prev.size()) < T) {
        throw std::invalid_argument("feasible estimate: theta_prev must cover the window");
    }
    if (!(opts.epsilon > 0.0)) throw std::invalid_argument("feasible estimate: epsilon <= 0");

    const int num_actions = log.num_actions;
    const std::size_t n = pool.contexts.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    // Evaluation-policy values over the pool are period-invariant.
    std::vector<double> pe(static_cast<std::size_t>(num_actions) * n);
    std::vector<double> pe2(pe.size());
    {
        std::vector<double> row(static_cast<std::size_t>(num_actions));
        for (std::size_t i = 0; i < n; ++i) {
            pi_e.action_probs(pool.contexts[i], row);
            for (int a = 0; a < num_actions; ++a) {
                const std::size_t c = static_cast<std::size_t>(a) * n + i;
                pe[c] = row[static_cast<std::size_t>(a)];
                pe2[c] = pe[c] * pe[c];
            }
        }
    }

    Diagnostics diag;
    const auto q = augmented_terms(log, pi_e, nuisances, &diag);

    auto worker = nuisances.make_pool_worker(pool, num_actions);
    std::vector<double> f_buf, e_buf, v_buf(pe.size());
    std::vector<double> arm_sums(static_cast<std::size_t>(num_actions));
    double s1 = 0.0, s2 = 0.0, m1 = 0.0, m2 = 0.0;
    int current_fit = -1;

    WeightedMean acc;
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(T - opts.burn_in));
    std::vector<double> pb(static_cast<std::size_t>(num_actions));

    for (int t = opts.burn_in + 1; t <= T; ++t) {
        const int fit = nuisances.fit_point(t);
        if (fit != current_fit) {
            worker->eval(fit, f_buf, e_buf);
            current_fit = fit;
            s1 = s2 = m1 = m2 = 0.0;
            std::fill(arm_sums.begin(), arm_sums.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double m = 0.0;
                for (int a = 0; a < num_actions; ++a) {
                    const std::size_t c = static_cast<std::size_t>(a) * n + i;
                    const double f = f_buf[c];
                    const double v = std::max(e_buf[c] - f * f, kConditionalVarianceFloor);
                    v_buf[c] = v;
                    const double u = pe[c] * f;
                    s1 += u;
                    s2 += u * u;
                    m += u;
                    arm_sums[static_cast<std::size_t>(a)] += pe2[c] * v;
                }
                m1 += m;
                m2 += m * m;
            }
            s1 *= inv_n;
            s2 *= inv_n;
            m1 *= inv_n;
            m2 *= inv_n;
            for (auto& w : arm_sums) w *= inv_n;
        }

        const auto& snapshot = *log.snapshots[static_cast<std::size_t>(t - 1)];
        const double theta = theta_prev[static_cast<std::size_t>(t - 1)];
        double first = 0.0;
        if (snapshot.context_free()) {
            snapshot.action_probs({}, pb);
            for (int a = 0; a < num_actions; ++a) {
                first += arm_sums[static_cast<std::size_t>(a)] / pb[static_cast<std::size_t>(a)];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                snapshot.action_probs(pool.contexts[i], pb);
                for (int a = 0; a < num_actions; ++a) {
                    const std::size_t c = static_cast<std::size_t>(a) * n + i;
                    first += pe2[c] * v_buf[c] / pb[static_cast<std::size_t>(a)];
                }
            }
            first *= inv_n;
        }
        const double term2 =
            opts.form == VarianceTermForm::per_arm_square
                ? s2 - 2.0 * theta * s1 + static_cast<double>(num_actions) * theta * theta
                : m2 - 2.0 * theta * m1 + theta * theta;
        const double g = floor_variance(first + term2, opts.epsilon, &diag.floor_hits);
        weights.push_back(g);
        acc.add(1.0 / std::sqrt(g), q[static_cast<std::size_t>(t - 1)]);
    }

    EstimateReport r;
    r.method = method;
    r.theta_hat = acc.value();
    r.window = T - opts.burn_in;
    r.burn_in = opts.burn_in;
    r.weights = std::move(weights);
    r.stat_denominator = acc.sum_w / std::sqrt(static_cast<double>(r.window));
    r.diagnostics = diag;
    r.alpha = opts.alpha;
    if (r.window >= 2) {
        std::tie(r.ci_low, r.ci_high) =
            confidence_interval(r.theta_hat, r.window, r.weights, opts.alpha);
    } else {
        r.notes.push_back("single-period window: CI suppressed");
    }
    return r;
}

std::shared_ptr<const NuisanceSequence> borrow(const NuisanceSequence& seq) {
    return {std::shared_ptr<const NuisanceSequence>{}, &seq};
}

}  // namespace

EstimateReport fa3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                               const NuisanceSequence& nuisances,
                               const EvaluationCovariates& pool,
                               std::span<const double> theta_prev, const FeasibleOptions& opts) {
    return feasible_weighted_estimate("fa3ipw", log, pi_e, nuisances, pool, theta_prev, opts,
                                      log.size());
}

EstimateReport fa2daipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                 const NuisanceSequence& nuisances,
                                 const EvaluationCovariates& pool,
                                 std::span<const double> theta_prev, const FeasibleOptions& opts) {
    const auto zeroed = zero_f_view(borrow(nuisances));
    return feasible_weighted_estimate("fa2daipw", log, pi_e, *zeroed, pool, theta_prev, opts,
                                      log.size());
}

std::vector<double> running_initial_estimates(std::span<const double> q, double g_init) {
    if (!(g_init > 0.0)) {
        throw std::invalid_argument("running_initial_estimates: g_init must be positive");
    }
    std::vector<double> theta(q.size(), 0.0);
    const double w = 1.0 / std::sqrt(g_init);
    WeightedMean acc;
    // theta[t] is the estimate from the first t periods and feeds period t+1;
    // theta[0] stays at the conventional initial value 0.
    for (std::size_t t = 0; t + 1 < q.size(); ++t) {
        acc.add(w, q[t]);
        theta[t + 1] = acc.value();
    }
    return theta;
}

EstimateReport tsfa3ipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                 const NuisanceSequence& nuisances,
                                 const EvaluationCovariates& pool, const FeasibleOptions& opts) {
    const auto q = augmented_terms(log, pi_e, nuisances, nullptr);
    const auto theta_prev = running_initial_estimates(q, opts.g_init);
    auto r = feasible_weighted_estimate("tsfa3ipw", log, pi_e, nuisances, pool, theta_prev, opts,
                                        log.size());
    return r;
}

EstimateReport tsfa2daipw_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                   const NuisanceSequence& nuisances,
                                   const EvaluationCovariates& pool, const FeasibleOptions& opts) {
    const auto zeroed = zero_f_view(borrow(nuisances));
    const auto q = augmented_terms(log, pi_e, *zeroed, nullptr);
    const auto theta_prev = running_initial_estimates(q, opts.g_init);
    auto r = feasible_weighted_estimate("tsfa2daipw", log, pi_e, *zeroed, pool, theta_prev, opts,
                                        log.size());
    return r;
}

SampleSplit make_sample_split(int periods, double r) {
    if (!(r > 0.0 && r < 1.0)) {
        throw std::invalid_argument("make_sample_split: r must lie in (0,1)");
    }
    SampleSplit s;
    s.window = static_cast<int>(std::floor(r * static_cast<double>(periods)));
    if (s.window < 1) throw std::invalid_argument("make_sample_split: floor(rT) must be >= 1");
    s.pool_begin = s.window + 1;
    if (s.pool_begin > periods) {
        throw std::invalid_argument("make_sample_split: empty covariate pool");
    }
    return s;
}

EstimateReport tsfa3ipw_split_estimate(const HistoricalLog& log, const PolicyFunction& pi_e,
                                       const NuisanceSequence& nuisances, double r,
                                       const FeasibleOptions& opts) {
    log.check_structure();
    const SampleSplit split = make_sample_split(log.size(), r);
    EvaluationCovariates pool;
    pool.contexts.reserve(static_cast<std::size_t>(log.size() - split.window));
    for (int t = split.pool_begin; t <= log.size(); ++t) {
        pool.contexts.push_back(log.samples[static_cast<std::size_t>(t - 1)].x);
    }
    const auto q = augmented_terms(log, pi_e, nuisances, nullptr);
    const auto theta_prev = running_initial_estimates(
        std::span<const double>(q.data(), static_cast<std::size_t>(split.window)), opts.g_init);
    auto report = feasible_weighted_estimate("tsfa3ipw-ss", log, pi_e, nuisances, pool, theta_prev,
                                             opts, split.window);
    return report;
}

std::pair<double, double> confidence_interval(double theta_hat, int window,
                                              std::span<const double> g, double alpha) {
    if (g.empty()) throw std::invalid_argument("confidence_interval: weights required");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("confidence_interval: alpha must lie in (0,1)");
    }
    double sum_w = 0.0;
    for (double gi : g) sum_w += 1.0 / std::sqrt(gi);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const double half = z * std::sqrt(static_cast<double>(window)) / sum_w;
    return {theta_hat - half, theta_hat + half};
}

}  // namespace ope
