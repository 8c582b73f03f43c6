#include "ope/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "ope/dataset.hpp"
#include "ope/stats.hpp"

namespace ope {

namespace {

using nlohmann::json;

SyntheticSpec synthetic_from_json(const json& j) {
    SyntheticSpec s;
    s.num_actions = j.value("num_actions", s.num_actions);
    s.dim = j.value("dim", s.dim);
    if (j.contains("finite_context")) {
        FiniteSupport fs;
        fs.contexts = j.at("finite_context").at("contexts").get<std::vector<std::vector<double>>>();
        if (j.at("finite_context").contains("probs")) {
            fs.probs = j.at("finite_context").at("probs").get<std::vector<double>>();
        } else {
            fs.probs.assign(fs.contexts.size(), 1.0 / static_cast<double>(fs.contexts.size()));
        }
        s.finite_context = std::move(fs);
    }
    s.context_mean = j.value("context_mean", s.context_mean);
    s.context_sd = j.value("context_sd", s.context_sd);
    s.arm_coef = j.value("arm_coef", s.arm_coef);
    s.arm_intercept = j.value("arm_intercept", s.arm_intercept);
    s.noise = j.value("noise", s.noise);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.noise_halfwidth = j.value("noise_halfwidth", s.noise_halfwidth);
    s.c2 = j.value("c2", s.c2);
    return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
    json j;
    j["num_actions"] = s.num_actions;
    j["dim"] = s.dim;
    if (s.finite_context) {
        j["finite_context"] = {{"contexts", s.finite_context->contexts},
                               {"probs", s.finite_context->probs}};
    }
    if (!s.context_mean.empty()) j["context_mean"] = s.context_mean;
    if (!s.context_sd.empty()) j["context_sd"] = s.context_sd;
    j["arm_coef"] = s.arm_coef;
    j["arm_intercept"] = s.arm_intercept;
    j["noise"] = s.noise;
    j["noise_sd"] = s.noise_sd;
    j["noise_halfwidth"] = s.noise_halfwidth;
    j["c2"] = s.c2;
    return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    cfg.dataset_path = j.value("dataset", cfg.dataset_path);
    if (j.contains("synthetic")) cfg.synthetic = synthetic_from_json(j.at("synthetic"));
    cfg.standardize = j.value("standardize", cfg.standardize);
    cfg.with_replacement = j.value("with_replacement", cfg.with_replacement);

    if (j.contains("behavior")) {
        const auto& b = j.at("behavior");
        cfg.behavior.kind = b.value("kind", cfg.behavior.kind);
        cfg.behavior.w = b.value("w", cfg.behavior.w);
        cfg.behavior.step_sd = b.value("step_sd", cfg.behavior.step_sd);
        cfg.behavior.ridge = b.value("ridge", cfg.behavior.ridge);
        cfg.behavior.ucb_alpha = b.value("ucb_alpha", cfg.behavior.ucb_alpha);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.kind = e.value("kind", cfg.eval.kind);
        cfg.eval.arm = e.value("arm", cfg.eval.arm);
        cfg.eval.w = e.value("w", cfg.eval.w);
        cfg.eval.fit_fraction = e.value("fit_fraction", cfg.eval.fit_fraction);
        cfg.eval.paper_faithful = e.value("paper_faithful", cfg.eval.paper_faithful);
        cfg.eval.classifier.iterations = e.value("iterations", cfg.eval.classifier.iterations);
        cfg.eval.classifier.step_size = e.value("step_size", cfg.eval.classifier.step_size);
        cfg.eval.classifier.l2 = e.value("l2", cfg.eval.classifier.l2);
    }
    cfg.periods = j.value("periods", cfg.periods);
    cfg.eval_n = j.value("eval_n", cfg.eval_n);
    cfg.split_r = j.value("split_r", cfg.split_r);
    cfg.burn_in = j.value("burn_in", cfg.burn_in);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.g_init = j.value("g_init", cfg.g_init);
    cfg.alpha = j.value("alpha", cfg.alpha);
    if (j.value("variance_form", "per_arm") == "squared_sum") {
        cfg.form = VarianceTermForm::squared_sum;
    }
    cfg.estimators = j.value("estimators", cfg.estimators);
    cfg.replications = j.value("replications", cfg.replications);
    cfg.base_seed = j.value("seed", cfg.base_seed);
    if (j.contains("nuisance")) {
        const auto& n = j.at("nuisance");
        cfg.nuisance.method = n.value("method", std::string("nw")) == "knn"
                                  ? NuisanceConfig::Method::knn
                                  : NuisanceConfig::Method::nw;
        cfg.nuisance.bandwidth = n.value("bandwidth", cfg.nuisance.bandwidth);
        cfg.nuisance.k = n.value("k", cfg.nuisance.k);
        cfg.nuisance.refit_every = n.value("refit_every", cfg.nuisance.refit_every);
        cfg.nuisance.bandwidth_points = n.value("bandwidth_points", cfg.nuisance.bandwidth_points);
    }
    cfg.threads = j.value("threads", cfg.threads);
    cfg.allow_failures = j.value("allow_failures", cfg.allow_failures);
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

std::string ExperimentConfig::to_json_string() const {
    json j;
    j["name"] = name;
    if (!dataset_path.empty()) j["dataset"] = dataset_path;
    if (synthetic) j["synthetic"] = synthetic_to_json(*synthetic);
    j["standardize"] = standardize;
    j["with_replacement"] = with_replacement;
    j["behavior"] = {{"kind", behavior.kind},
                     {"w", behavior.w},
                     {"step_sd", behavior.step_sd},
                     {"ridge", behavior.ridge},
                     {"ucb_alpha", behavior.ucb_alpha}};
    j["eval"] = {{"kind", eval.kind},       {"arm", eval.arm},
                 {"w", eval.w},             {"fit_fraction", eval.fit_fraction},
                 {"paper_faithful", eval.paper_faithful},
                 {"iterations", eval.classifier.iterations},
                 {"step_size", eval.classifier.step_size},
                 {"l2", eval.classifier.l2}};
    j["periods"] = periods;
    j["eval_n"] = eval_n;
    j["split_r"] = split_r;
    j["burn_in"] = burn_in;
    j["epsilon"] = epsilon;
    j["g_init"] = g_init;
    j["alpha"] = alpha;
    j["variance_form"] = form == VarianceTermForm::per_arm_square ? "per_arm" : "squared_sum";
    j["estimators"] = estimators;
    j["replications"] = replications;
    j["seed"] = base_seed;
    j["nuisance"] = {{"method", nuisance.method == NuisanceConfig::Method::nw ? "nw" : "knn"},
                     {"bandwidth", nuisance.bandwidth},
                     {"k", nuisance.k},
                     {"refit_every", nuisance.refit_every},
                     {"bandwidth_points", nuisance.bandwidth_points}};
    j["threads"] = threads;
    j["allow_failures"] = allow_failures;
    return j.dump(2);
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
    if (count <= 0) return;
    int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, count);
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto run = [&]() {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= count || failed.load()) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::unique_ptr<AdaptivePolicy> make_behavior_policy(const BehaviorSpec& spec, int num_actions,
                                                     int dim, std::uint64_t seed) {
    std::unique_ptr<AdaptivePolicy> inner;
    if (spec.kind == "rw") {
        inner = random_walk_policy(num_actions, spec.step_sd, seed);
    } else if (spec.kind == "linucb") {
        inner = linucb_policy(num_actions, dim, spec.ridge, spec.ucb_alpha);
    } else {
        throw std::invalid_argument("unknown behavior policy kind '" + spec.kind + "'");
    }
    return mixture_policy(std::move(inner), spec.w);
}

namespace {

std::string dataset_stem(const std::string& path) {
    const auto slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    const auto dot = base.find_last_of('.');
    if (dot != std::string::npos) base = base.substr(0, dot);
    return base.empty() ? "dataset" : base;
}

struct DatasetSplit {
    std::vector<std::vector<double>> fit_xs;
    std::vector<int> fit_labels;
    std::vector<std::vector<double>> pool_xs;
    std::vector<int> pool_labels;
    int num_classes = 0;
};

DatasetSplit split_dataset(const ClassificationDataset& ds, double fit_fraction,
                           std::uint64_t seed) {
    DatasetSplit out;
    out.num_classes = ds.n_classes;
    std::vector<int> order(static_cast<std::size_t>(ds.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(seed);
    rng.shuffle(order);
    const int n_fit = std::max(ds.n_classes,
                               static_cast<int>(fit_fraction * static_cast<double>(ds.size())));
    for (int i = 0; i < ds.size(); ++i) {
        const int row = order[static_cast<std::size_t>(i)];
        auto x = ds.dense_row(row);
        const int label = ds.rows[static_cast<std::size_t>(row)].label;
        if (i < n_fit) {
            out.fit_xs.push_back(std::move(x));
            out.fit_labels.push_back(label);
        } else {
            out.pool_xs.push_back(std::move(x));
            out.pool_labels.push_back(label);
        }
    }
    return out;
}

constexpr std::uint64_t kSetupSeedSalt = 0x9E3779B97F4A7C15ULL;

}  // namespace

ExperimentSetup prepare_experiment(const ExperimentConfig& cfg) {
    ExperimentSetup setup;
    setup.policy_name = cfg.behavior.kind + "-w" + format_double(cfg.behavior.w);

    if (cfg.synthetic && !cfg.dataset_path.empty()) {
        throw std::invalid_argument("config: choose either a dataset or a synthetic environment");
    }

    if (cfg.synthetic) {
        setup.env = make_synthetic_env(*cfg.synthetic);
        setup.env_name = "synthetic";
        if (cfg.eval.kind == "arm") {
            setup.eval_policy =
                mixture_policy_fn(fixed_arm_policy(cfg.synthetic->num_actions, cfg.eval.arm),
                                  cfg.eval.w);
        } else if (cfg.eval.kind == "uniform") {
            setup.eval_policy = uniform_policy(cfg.synthetic->num_actions);
        } else {
            throw std::invalid_argument("synthetic environments need eval.kind 'arm' or "
                                        "'uniform'");
        }
        setup.theta0 = true_policy_value(*setup.env, *setup.eval_policy);
        return setup;
    }

    if (cfg.dataset_path.empty()) {
        throw std::invalid_argument("config: no environment given (dataset or synthetic)");
    }
    ClassificationDataset ds = parse_libsvm_file(cfg.dataset_path);
    if (cfg.standardize) ds = standardize_features(ds).first;
    setup.env_name = dataset_stem(cfg.dataset_path);

    if (cfg.eval.kind != "logistic") {
        throw std::invalid_argument("dataset environments use eval.kind 'logistic'");
    }
    if (cfg.eval.paper_faithful) {
        // Classifier refit per replication on the logged rows; the policy and
        // theta0 are produced inside the replication loop.
        setup.env = classification_to_bandit(ds, cfg.with_replacement);
        return setup;
    }

    const auto split = split_dataset(ds, cfg.eval.fit_fraction, cfg.base_seed ^ kSetupSeedSalt);
    if (static_cast<int>(split.pool_xs.size()) < cfg.periods + cfg.eval_n &&
        !cfg.with_replacement) {
        throw std::invalid_argument("dataset too small for T + N without replacement");
    }
    setup.eval_policy = fit_evaluation_policy(split.fit_xs, split.fit_labels, split.num_classes,
                                              cfg.eval.w, cfg.eval.classifier);
    setup.env = classification_to_bandit(split.pool_xs, split.pool_labels, split.num_classes,
                                         cfg.with_replacement);
    setup.theta0 = true_policy_value(*setup.env, *setup.eval_policy);
    return setup;
}

namespace {

struct RepOutcome {
    std::vector<RepEstimate> estimates;  // aligned with cfg.estimators
    double theta0 = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string error;
};

EstimateReport dispatch_estimator(const std::string& name, const ExperimentConfig& cfg,
                                  const HistoricalLog& log, const PolicyFunction& pi_e,
                                  const NuisanceSequence& nuis, const EvaluationCovariates& pool) {
    if (name == "dm") return dm_estimate(log, pi_e, nuis);
    if (name == "adaipw") return adaipw_estimate(log, pi_e);
    if (name == "a2ipw") return a2ipw_estimate(log, pi_e, nuis);
    if (name == "fa3ipw" || name == "tsfa3ipw") {
        return tsfa3ipw_estimate(log, pi_e, nuis, pool, cfg.feasible_options(0));
    }
    if (name == "sfa3ipw") {
        return tsfa3ipw_estimate(log, pi_e, nuis, pool,
                                 cfg.feasible_options(cfg.effective_burn_in()));
    }
    if (name == "fa2daipw") {
        return tsfa2daipw_estimate(log, pi_e, nuis, pool, cfg.feasible_options(0));
    }
    if (name == "fa3ipw-ss") {
        return tsfa3ipw_split_estimate(log, pi_e, nuis, cfg.split_r, cfg.feasible_options(0));
    }
    throw std::invalid_argument("unknown estimator '" + name + "'");
}

bool estimator_needs_pool(const std::string& name) {
    return name == "fa3ipw" || name == "tsfa3ipw" || name == "sfa3ipw" || name == "fa2daipw";
}

// Per-period variance estimation needs the full policy functions.
bool estimator_needs_snapshots(const std::string& name) {
    return estimator_needs_pool(name) || name == "fa3ipw-ss";
}

}  // namespace

ResultTable run_experiment(const ExperimentConfig& cfg) {
    if (cfg.replications < 1) throw std::invalid_argument("run_experiment: replications >= 1");
    for (const auto& name : cfg.estimators) {
        if (name != "dm" && name != "adaipw" && name != "a2ipw" && !estimator_needs_snapshots(name)) {
            throw std::invalid_argument("unknown estimator '" + name + "'");
        }
    }
    const ExperimentSetup setup = prepare_experiment(cfg);
    const bool needs_pool = std::any_of(cfg.estimators.begin(), cfg.estimators.end(),
                                        estimator_needs_pool);

    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(cfg.replications));

    parallel_for(cfg.replications, cfg.threads, [&](int rep) {
        auto& out = outcomes[static_cast<std::size_t>(rep)];
        const std::uint64_t seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(rep));
        try {
            Rng rng(seed);
            const std::uint64_t behavior_seed = rng.next_u64();
            auto behavior = make_behavior_policy(cfg.behavior, setup.env->num_actions(),
                                                 setup.env->dim(), behavior_seed);
            auto ctx = setup.env->make_context_stream(rng);
            const HistoricalLog log = generate_log(*ctx, *setup.env, *behavior, cfg.periods, rng);

            std::shared_ptr<const PolicyFunction> pi_e = setup.eval_policy;
            double theta0 = setup.theta0;
            if (cfg.eval.paper_faithful) {
                // Classifier fit on the logged rows themselves, labels read off
                // the environment's conditional means.
                std::vector<std::vector<double>> xs;
                std::vector<int> labels;
                std::vector<double> f(static_cast<std::size_t>(log.num_actions));
                xs.reserve(log.samples.size());
                for (const auto& s : log.samples) {
                    xs.push_back(s.x);
                    for (int a = 0; a < log.num_actions; ++a) {
                        f[static_cast<std::size_t>(a)] = setup.env->f_star(a, s.x);
                    }
                    labels.push_back(argmax_lowest_tie(f));
                }
                pi_e = fit_evaluation_policy(xs, labels, log.num_actions, cfg.eval.w,
                                             cfg.eval.classifier);
                theta0 = true_policy_value(*setup.env, *pi_e);
            }
            out.theta0 = theta0;

            EvaluationCovariates pool;
            if (needs_pool) pool = draw_covariates(*ctx, cfg.eval_n, rng);

            NuisanceConfig ncfg = cfg.nuisance;
            ncfg.c2 = setup.env->reward_bound();
            const auto nuis = sequential_nuisance(log, ncfg);

            out.estimates.resize(cfg.estimators.size());
            for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
                const auto start = std::chrono::steady_clock::now();
                const EstimateReport rep_report =
                    dispatch_estimator(cfg.estimators[e], cfg, log, *pi_e, *nuis, pool);
                const auto stop = std::chrono::steady_clock::now();
                auto& est = out.estimates[e];
                est.theta_hat = rep_report.theta_hat;
                est.ci_low = rep_report.ci_low;
                est.ci_high = rep_report.ci_high;
                est.runtime_ms =
                    std::chrono::duration<double, std::milli>(stop - start).count();
            }
        } catch (const std::exception& ex) {
            out.failed = true;
            out.error = "replication " + std::to_string(rep) + " (seed " + std::to_string(seed) +
                        "): " + ex.what();
        }
    });

    std::vector<double> theta0s;
    std::vector<const RepOutcome*> kept;
    for (const auto& out : outcomes) {
        if (out.failed) {
            if (!cfg.allow_failures) throw std::runtime_error(out.error);
            continue;
        }
        kept.push_back(&out);
        theta0s.push_back(out.theta0);
    }
    if (kept.empty()) throw std::runtime_error("run_experiment: every replication failed");

    ResultTable table;
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        std::vector<RepEstimate> column;
        column.reserve(kept.size());
        for (const auto* out : kept) column.push_back(out->estimates[e]);
        table.rows.push_back(aggregate_estimates(cfg.estimators[e], setup.env_name,
                                                 setup.policy_name, column, theta0s));
    }
    return table;
}

ResultRow aggregate_estimates(const std::string& estimator, const std::string& env,
                              const std::string& policy,
                              const std::vector<RepEstimate>& estimates,
                              const std::vector<double>& theta0s) {
    if (estimates.empty() || estimates.size() != theta0s.size()) {
        throw std::invalid_argument("aggregate_estimates: shape mismatch");
    }
    ResultRow row;
    row.estimator = estimator;
    row.env = env;
    row.policy = policy;
    row.replications = static_cast<int>(estimates.size());

    OnlineStats sq_err, runtime, width, theta0_stats;
    int ci_count = 0, covered = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const auto& est = estimates[i];
        const double err = est.theta_hat - theta0s[i];
        sq_err.push(err * err);
        runtime.push(est.runtime_ms);
        theta0_stats.push(theta0s[i]);
        if (est.has_ci()) {
            ++ci_count;
            width.push(est.ci_high - est.ci_low);
            if (theta0s[i] >= est.ci_low && theta0s[i] <= est.ci_high) ++covered;
        }
    }
    row.theta0 = theta0_stats.mean;
    row.mse = sq_err.mean;
    row.sd_squared_error = sq_err.sd();
    row.mean_runtime_ms = runtime.mean;
    if (ci_count > 0) {
        row.mean_ci_width = width.mean;
        row.coverage = static_cast<double>(covered) / static_cast<double>(ci_count);
    }
    return row;
}

namespace {

void csv_cell(std::ostream& out, double v) {
    if (std::isfinite(v)) out << format_double(v);
}

}  // namespace

void ResultTable::to_csv(std::ostream& out) const {
    out << "estimator,env,policy,replications,theta0,mse,sd_squared_error,mean_ci_width,"
           "coverage,mean_runtime_ms\n";
    for (const auto& r : rows) {
        out << r.estimator << ',' << r.env << ',' << r.policy << ',' << r.replications << ',';
        csv_cell(out, r.theta0);
        out << ',';
        csv_cell(out, r.mse);
        out << ',';
        csv_cell(out, r.sd_squared_error);
        out << ',';
        csv_cell(out, r.mean_ci_width);
        out << ',';
        csv_cell(out, r.coverage);
        out << ',';
        csv_cell(out, r.mean_runtime_ms);
        out << '\n';
    }
}

std::string ResultTable::to_csv_string() const {
    std::ostringstream ss;
    to_csv(ss);
    return ss.str();
}

std::string ResultTable::to_json_string() const {
    json arr = json::array();
    for (const auto& r : rows) {
        json j;
        j["estimator"] = r.estimator;
        j["env"] = r.env;
        j["policy"] = r.policy;
        j["replications"] = r.replications;
        j["theta0"] = r.theta0;
        j["mse"] = r.mse;
        j["sd_squared_error"] = r.sd_squared_error;
        if (std::isfinite(r.mean_ci_width)) j["mean_ci_width"] = r.mean_ci_width;
        if (std::isfinite(r.coverage)) j["coverage"] = r.coverage;
        j["mean_runtime_ms"] = r.mean_runtime_ms;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

LogRunResult run_on_imported_log(const HistoricalLog& log, const ExperimentConfig& cfg) {
    LogRunResult result;
    std::shared_ptr<const PolicyFunction> pi_e;
    if (cfg.eval.kind == "arm") {
        pi_e = mixture_policy_fn(fixed_arm_policy(log.num_actions, cfg.eval.arm), cfg.eval.w);
    } else if (cfg.eval.kind == "uniform") {
        pi_e = uniform_policy(log.num_actions);
    } else {
        throw std::invalid_argument("imported logs need eval.kind 'arm' or 'uniform'");
    }

    NuisanceConfig ncfg = cfg.nuisance;
    double c2 = 1.0;
    for (const auto& s : log.samples) c2 = std::max(c2, std::abs(s.y));
    ncfg.c2 = c2;
    const auto nuis = sequential_nuisance(log, ncfg);
    EvaluationCovariates empty_pool;

    for (const auto& name : cfg.estimators) {
        if (estimator_needs_snapshots(name) && !log.has_snapshots()) {
            result.disabled.push_back(name);
            continue;
        }
        result.reports.push_back(dispatch_estimator(name, cfg, log, *pi_e, *nuis, empty_pool));
    }
    return result;
}

}  // namespace ope
