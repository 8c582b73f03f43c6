#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ope/acceptance.hpp"
#include "ope/dataset.hpp"
#include "ope/env.hpp"
#include "ope/estimators.hpp"
#include "ope/harness.hpp"
#include "ope/nuisance.hpp"
#include "ope/policies.hpp"
#include "ope/rng.hpp"
#include "ope/stats.hpp"

namespace py = pybind11;
using namespace ope;

namespace {

// Bindings work on a bundle that keeps the log, policies, and environment
// alive together; estimator calls take keyword knobs instead of C++ structs.
struct Simulation {
    std::shared_ptr<BanditEnvironment> env;
    std::shared_ptr<const PolicyFunction> eval_policy;
    HistoricalLog log;
    EvaluationCovariates pool;
    double theta0 = std::numeric_limits<double>::quiet_NaN();
};

NuisanceConfig nuisance_config(const std::string& method, double bandwidth, int k,
                               int refit_every, double c2) {
    NuisanceConfig cfg;
    cfg.method = method == "knn" ? NuisanceConfig::Method::knn : NuisanceConfig::Method::nw;
    cfg.bandwidth = bandwidth;
    cfg.k = k;
    cfg.refit_every = refit_every;
    cfg.c2 = c2;
    return cfg;
}

py::dict report_to_dict(const EstimateReport& r) {
    py::dict d;
    d["method"] = r.method;
    d["theta_hat"] = r.theta_hat;
    d["window"] = r.window;
    d["burn_in"] = r.burn_in;
    d["weights"] = r.weights;
    if (std::isfinite(r.stat_denominator)) d["stat_denominator"] = r.stat_denominator;
    if (r.has_ci()) {
        d["ci_low"] = r.ci_low;
        d["ci_high"] = r.ci_high;
        d["alpha"] = r.alpha;
    }
    d["max_importance_ratio"] = r.diagnostics.max_importance_ratio;
    d["floor_hits"] = r.diagnostics.floor_hits;
    if (!r.notes.empty()) d["notes"] = r.notes;
    return d;
}

SyntheticSpec spec_from_kwargs(int num_actions, int dim,
                               std::vector<std::vector<double>> arm_coef,
                               std::vector<double> arm_intercept, const std::string& noise,
                               double noise_sd, double noise_halfwidth, double c2) {
    SyntheticSpec s;
    s.num_actions = num_actions;
    s.dim = dim;
    s.arm_coef = std::move(arm_coef);
    s.arm_intercept = std::move(arm_intercept);
    s.noise = noise;
    s.noise_sd = noise_sd;
    s.noise_halfwidth = noise_halfwidth;
    s.c2 = c2;
    return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "off-policy evaluation from adaptively logged bandit feedback";

    py::class_<ClassificationDataset>(m, "Dataset")
        .def_property_readonly("n_rows", &ClassificationDataset::size)
        .def_readonly("n_features", &ClassificationDataset::n_features)
        .def_readonly("n_classes", &ClassificationDataset::n_classes)
        .def_readonly("label_map", &ClassificationDataset::label_map)
        .def("dense_row", &ClassificationDataset::dense_row)
        .def("label",
             [](const ClassificationDataset& ds, int i) {
                 return ds.rows.at(static_cast<std::size_t>(i)).label;
             })
        .def("to_libsvm", &serialize_libsvm_string);

    m.def("parse_libsvm", &parse_libsvm_string, py::arg("text"), py::arg("min_features") = 0);
    m.def("parse_libsvm_file", &parse_libsvm_file, py::arg("path"), py::arg("min_features") = 0);
    m.def(
        "standardize_features",
        [](const ClassificationDataset& ds) { return standardize_features(ds).first; },
        py::arg("dataset"));
    m.def("make_gaussian_blobs", &make_gaussian_blobs, py::arg("n_rows"), py::arg("n_features"),
          py::arg("n_classes"), py::arg("class_sep"), py::arg("seed"));

    py::class_<Simulation>(m, "Simulation")
        .def_property_readonly("theta0", [](const Simulation& s) { return s.theta0; })
        .def_property_readonly("periods", [](const Simulation& s) { return s.log.size(); })
        .def_property_readonly("num_actions",
                               [](const Simulation& s) { return s.log.num_actions; })
        .def("context", [](const Simulation& s,
                           int t) { return s.log.samples.at(static_cast<std::size_t>(t)).x; })
        .def("action", [](const Simulation& s,
                          int t) { return s.log.samples.at(static_cast<std::size_t>(t)).a; })
        .def("reward", [](const Simulation& s,
                          int t) { return s.log.samples.at(static_cast<std::size_t>(t)).y; })
        .def("propensities",
             [](const Simulation& s, int t) {
                 return s.log.samples.at(static_cast<std::size_t>(t)).propensities;
             })
        .def("to_jsonl",
             [](const Simulation& s) {
                 std::ostringstream out;
                 export_log_jsonl(s.log, out);
                 return out.str();
             })
        .def(
            "validate",
            [](const Simulation& s, double c1, double c2) {
                ImportanceRatioBound bounds;
                bounds.c1 = c1;
                bounds.c2 = c2;
                const auto report = validate_log(s.log, *s.eval_policy, bounds);
                py::list out;
                for (const auto& v : report.violations) {
                    py::dict d;
                    d["t"] = v.t;
                    d["arm"] = v.arm;
                    d["value"] = v.value;
                    d["bound"] = v.bound;
                    d["message"] = v.message;
                    out.append(std::move(d));
                }
                return out;
            },
            py::arg("c1") = 100.0, py::arg("c2") = 1.0)
        .def(
            "estimate",
            [](const Simulation& s, const std::string& method, const std::string& nuisance,
               double bandwidth, int k, int refit_every, double epsilon, int burn_in,
               double alpha, double split_r, bool square_outside) {
                ExperimentConfig cfg;
                cfg.estimators = {method};
                cfg.epsilon = epsilon;
                cfg.burn_in = burn_in;
                cfg.alpha = alpha;
                cfg.split_r = split_r;
                cfg.form = square_outside ? VarianceTermForm::squared_sum
                                          : VarianceTermForm::per_arm_square;
                const auto ncfg = nuisance_config(nuisance, bandwidth, k, refit_every,
                                                  s.env->reward_bound());
                const auto nuis = sequential_nuisance(s.log, ncfg);
                FeasibleOptions opts = cfg.feasible_options(std::max(burn_in, 0));

                EstimateReport report;
                if (method == "dm") {
                    report = dm_estimate(s.log, *s.eval_policy, *nuis);
                } else if (method == "adaipw") {
                    report = adaipw_estimate(s.log, *s.eval_policy);
                } else if (method == "a2ipw") {
                    report = a2ipw_estimate(s.log, *s.eval_policy, *nuis);
                } else if (method == "fa3ipw" || method == "tsfa3ipw" || method == "sfa3ipw") {
                    if (method != "sfa3ipw") opts.burn_in = std::max(burn_in, 0);
                    else if (burn_in < 0) opts.burn_in = s.log.size() / 2;
                    report = tsfa3ipw_estimate(s.log, *s.eval_policy, *nuis, s.pool, opts);
                } else if (method == "fa2daipw") {
                    opts.burn_in = std::max(burn_in, 0);
                    report = tsfa2daipw_estimate(s.log, *s.eval_policy, *nuis, s.pool, opts);
                } else if (method == "fa3ipw-ss") {
                    opts.burn_in = std::max(burn_in, 0);
                    report = tsfa3ipw_split_estimate(s.log, *s.eval_policy, *nuis, split_r, opts);
                } else {
                    throw std::invalid_argument("unknown estimator '" + method + "'");
                }
                return report_to_dict(report);
            },
            py::arg("method"), py::kw_only(), py::arg("nuisance") = "nw",
            py::arg("bandwidth") = 0.0, py::arg("k") = 5, py::arg("refit_every") = 10,
            py::arg("epsilon") = 1e-3, py::arg("burn_in") = -1, py::arg("alpha") = 0.05,
            py::arg("split_r") = 0.5, py::arg("square_outside") = false);

    m.def(
        "simulate",
        [](int num_actions, int dim, std::vector<std::vector<double>> arm_coef,
           std::vector<double> arm_intercept, const std::string& noise, double noise_sd,
           double noise_halfwidth, double c2, const std::string& behavior, double behavior_w,
           double step_sd, double ridge, double ucb_alpha, int eval_arm, double eval_w,
           int periods, int eval_n, std::uint64_t seed) {
            auto sim = std::make_unique<Simulation>();
            sim->env = make_synthetic_env(spec_from_kwargs(num_actions, dim, std::move(arm_coef),
                                                           std::move(arm_intercept), noise,
                                                           noise_sd, noise_halfwidth, c2));
            sim->eval_policy = eval_w >= 1.0
                                   ? fixed_arm_policy(num_actions, eval_arm)
                                   : mixture_policy_fn(fixed_arm_policy(num_actions, eval_arm),
                                                       eval_w);
            sim->theta0 = true_policy_value(*sim->env, *sim->eval_policy);

            Rng rng(seed);
            const std::uint64_t behavior_seed = rng.next_u64();
            BehaviorSpec bspec;
            bspec.kind = behavior;
            bspec.w = behavior_w;
            bspec.step_sd = step_sd;
            bspec.ridge = ridge;
            bspec.ucb_alpha = ucb_alpha;
            auto policy = make_behavior_policy(bspec, num_actions, dim, behavior_seed);
            auto ctx = sim->env->make_context_stream(rng);
            sim->log = generate_log(*ctx, *sim->env, *policy, periods, rng);
            if (eval_n > 0) sim->pool = draw_covariates(*ctx, eval_n, rng);
            return sim;
        },
        py::arg("num_actions"), py::arg("dim"), py::arg("arm_coef"), py::arg("arm_intercept"),
        py::kw_only(), py::arg("noise") = "truncated_gaussian", py::arg("noise_sd") = 0.5,
        py::arg("noise_halfwidth") = 2.0, py::arg("c2") = 10.0, py::arg("behavior") = "rw",
        py::arg("behavior_w") = 0.7, py::arg("step_sd") = 0.05, py::arg("ridge") = 1.0,
        py::arg("ucb_alpha") = 1.0, py::arg("eval_arm") = 0, py::arg("eval_w") = 1.0,
        py::arg("periods") = 1000, py::arg("eval_n") = 1000, py::arg("seed") = 0);

    m.def(
        "simulate_classification",
        [](const ClassificationDataset& ds, const std::string& behavior, double behavior_w,
           double step_sd, double eval_w, double fit_fraction, int periods, int eval_n,
           std::uint64_t seed) {
            auto sim = std::make_unique<Simulation>();
            // Classifier split first, bandit pool from the remainder.
            std::ostringstream tmp;
            serialize_libsvm(ds, tmp);
            ExperimentConfig cfg;
            cfg.eval.w = eval_w;
            cfg.eval.fit_fraction = fit_fraction;
            cfg.periods = periods;
            cfg.eval_n = eval_n;
            cfg.base_seed = seed;
            cfg.behavior.kind = behavior;
            cfg.behavior.w = behavior_w;
            cfg.behavior.step_sd = step_sd;

            // Reuse the harness split by writing through its dataset loader.
            const auto dir = std::filesystem::temp_directory_path() / "ope-py";
            std::filesystem::create_directories(dir);
            const auto path = dir / ("ds-" + std::to_string(seed) + ".libsvm");
            {
                std::ofstream out(path);
                out << tmp.str();
            }
            cfg.dataset_path = path.string();
            auto setup = prepare_experiment(cfg);
            std::filesystem::remove(path);

            sim->eval_policy = setup.eval_policy;
            sim->theta0 = setup.theta0;
            Rng rng(seed);
            const std::uint64_t behavior_seed = rng.next_u64();
            auto policy = make_behavior_policy(cfg.behavior, setup.env->num_actions(),
                                               setup.env->dim(), behavior_seed);
            auto ctx = setup.env->make_context_stream(rng);
            sim->log = generate_log(*ctx, *setup.env, *policy, periods, rng);
            if (eval_n > 0) sim->pool = draw_covariates(*ctx, eval_n, rng);
            sim->env = std::shared_ptr<BanditEnvironment>(setup.env.release());
            return sim;
        },
        py::arg("dataset"), py::kw_only(), py::arg("behavior") = "rw",
        py::arg("behavior_w") = 0.7, py::arg("step_sd") = 0.05, py::arg("eval_w") = 0.7,
        py::arg("fit_fraction") = 0.3, py::arg("periods") = 1000, py::arg("eval_n") = 1000,
        py::arg("seed") = 0);

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const auto cfg = ExperimentConfig::from_json_string(config_json);
            const auto table = run_experiment(cfg);
            return py::module_::import("json").attr("loads")(table.to_json_string());
        },
        py::arg("config_json"));

    m.def(
        "run_acceptance",
        [](const std::string& suite, int threads) {
            AcceptanceOptions opts;
            opts.threads = threads;
            const auto res = run_acceptance(suite, opts);
            py::dict d;
            d["suite"] = res.suite;
            d["pass"] = res.pass;
            d["detail"] = res.detail;
            d["seconds"] = res.seconds;
            return d;
        },
        py::arg("suite"), py::arg("threads") = 0);
    m.def("acceptance_suites", &acceptance_suite_names);

    m.def("normal_quantile", &normal_quantile);
    m.attr("__version__") = "0.1.0";
}
