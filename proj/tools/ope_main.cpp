#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ope/acceptance.hpp"
#include "ope/dataset.hpp"
#include "ope/env.hpp"
#include "ope/harness.hpp"
#include "ope/stats.hpp"

namespace {

ope::ExperimentConfig load_config(const std::string& path, int threads,
                                  std::uint64_t seed_override, bool has_seed_override) {
    auto cfg = ope::ExperimentConfig::from_json_file(path);
    if (threads > 0) cfg.threads = threads;
    if (has_seed_override) {
        cfg.base_seed = seed_override;
    } else if (const char* env_seed = std::getenv("OPE_SEED")) {
        cfg.base_seed = std::strtoull(env_seed, nullptr, 10);
    }
    return cfg;
}

int run_command(const std::string& config_path, const std::string& out_dir, int threads,
                std::uint64_t seed, bool has_seed, bool allow_failures, bool paper_faithful,
                const std::string& log_path) {
    auto cfg = load_config(config_path, threads, seed, has_seed);
    if (allow_failures) cfg.allow_failures = true;
    if (paper_faithful) cfg.eval.paper_faithful = true;

    if (!log_path.empty()) {
        std::ifstream in(log_path);
        if (!in) {
            std::cerr << "cannot open log " << log_path << "\n";
            return 1;
        }
        const auto log = ope::import_log_jsonl(in);
        const auto result = ope::run_on_imported_log(log, cfg);
        for (const auto& name : result.disabled) {
            std::cout << "disabled: " << name
                      << " (imported log carries no behavior-policy snapshots)\n";
        }
        for (const auto& report : result.reports) {
            std::cout << report.to_json_string() << "\n";
        }
        return 0;
    }

    const auto table = ope::run_experiment(cfg);
    std::cout << table.to_csv_string();
    if (!out_dir.empty()) {
        std::ofstream csv(out_dir + "/" + cfg.name + ".csv");
        csv << table.to_csv_string();
        std::ofstream js(out_dir + "/" + cfg.name + ".json");
        js << table.to_json_string() << "\n";
        std::cout << "wrote " << out_dir << "/" << cfg.name << ".{csv,json}\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"off-policy evaluation from adaptively logged bandit feedback"};
    app.require_subcommand(1);

    // run
    std::string config_path, out_dir, log_path;
    int threads = 0;
    std::uint64_t seed = 0;
    bool allow_failures = false, paper_faithful = false;
    auto* run = app.add_subcommand("run", "run a replication experiment from a JSON config");
    run->add_option("-c,--config", config_path, "JSON config file")->required();
    run->add_option("-o,--out", out_dir, "directory for CSV/JSON tables");
    run->add_option("-t,--threads", threads, "worker threads (default: hardware)");
    auto* seed_opt = run->add_option("--seed", seed, "base seed override (also via OPE_SEED)");
    run->add_flag("--allow-failures", allow_failures, "skip failed replications");
    run->add_flag("--paper-faithful", paper_faithful,
                  "fit the evaluation classifier on the logged rows");
    run->add_option("--log", log_path, "run the estimators once on an imported JSONL log");

    // accept
    std::string suite;
    int accept_threads = 0;
    bool accept_json = false;
    std::vector<std::string> accept_data;
    auto* accept = app.add_subcommand("accept", "run an acceptance suite");
    accept->add_option("suite", suite, "suite name, or 'all' / 'list'")->required();
    accept->add_option("-t,--threads", accept_threads, "worker threads");
    accept->add_flag("--json", accept_json, "emit one JSON verdict per line");
    accept->add_option("--data", accept_data,
                       "LIBSVM files for the table1 suite (default: generated stand-ins)");

    // parse
    std::string parse_path, parse_out;
    int parse_min_features = 0;
    bool parse_stats = false, parse_standardize = false;
    auto* parse = app.add_subcommand("parse", "parse a LIBSVM file");
    parse->add_option("file", parse_path, "LIBSVM text file")->required();
    parse->add_flag("--stats", parse_stats, "print dataset statistics");
    parse->add_flag("--standardize", parse_standardize, "standardize features before dumping");
    parse->add_option("--min-features", parse_min_features,
                      "raise the inferred feature count (files omit dimension headers)");
    parse->add_option("-o,--out", parse_out, "write the (optionally normalized) dataset dump");

    // simulate
    std::string sim_config, sim_out;
    std::uint64_t sim_seed = 0;
    auto* simulate = app.add_subcommand("simulate", "generate a log and export it as JSON lines");
    simulate->add_option("-c,--config", sim_config, "JSON config file")->required();
    simulate->add_option("-o,--out", sim_out, "output JSONL path (default: stdout)");
    auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "base seed override");

    // blobs
    int blob_rows = 4000, blob_features = 36, blob_classes = 6;
    double blob_sep = 0.55;
    std::uint64_t blob_seed = 1;
    std::string blob_out;
    auto* blobs = app.add_subcommand("blobs", "write a Gaussian-blob classification dataset");
    blobs->add_option("-n,--rows", blob_rows, "row count");
    blobs->add_option("-d,--features", blob_features, "feature count");
    blobs->add_option("-k,--classes", blob_classes, "class count");
    blobs->add_option("--sep", blob_sep, "cluster center scale");
    blobs->add_option("--seed", blob_seed, "generator seed");
    blobs->add_option("-o,--out", blob_out, "output LIBSVM path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            return run_command(config_path, out_dir, threads, seed, seed_opt->count() > 0,
                               allow_failures, paper_faithful, log_path);
        }
        if (*accept) {
            if (suite == "list") {
                for (const auto& s : ope::acceptance_suite_names()) std::cout << s << "\n";
                return 0;
            }
            ope::AcceptanceOptions opts;
            opts.threads = accept_threads;
            opts.dataset_paths = accept_data;
            std::vector<std::string> suites =
                suite == "all" ? ope::acceptance_suite_names() : std::vector<std::string>{suite};
            bool all_pass = true;
            for (const auto& s : suites) {
                const auto res = ope::run_acceptance(s, opts);
                all_pass = all_pass && res.pass;
                if (accept_json) {
                    nlohmann::json j;
                    j["suite"] = res.suite;
                    j["pass"] = res.pass;
                    j["detail"] = res.detail;
                    j["seconds"] = res.seconds;
                    std::cout << j.dump() << "\n";
                } else {
                    std::cout << (res.pass ? "[PASS] " : "[FAIL] ") << res.suite << ": "
                              << res.detail << " (" << ope::format_double(res.seconds) << " s)\n";
                }
            }
            return all_pass ? 0 : 1;
        }
        if (*parse) {
            auto ds = ope::parse_libsvm_file(parse_path, parse_min_features);
            if (parse_stats) {
                std::cout << "rows: " << ds.size() << "\nfeatures: " << ds.n_features
                          << "\nclasses: " << ds.n_classes << "\n";
                std::vector<int> counts(static_cast<std::size_t>(ds.n_classes), 0);
                for (const auto& row : ds.rows) ++counts[static_cast<std::size_t>(row.label)];
                for (int k = 0; k < ds.n_classes; ++k) {
                    std::cout << "class " << ds.label_map[static_cast<std::size_t>(k)] << ": "
                              << counts[static_cast<std::size_t>(k)] << "\n";
                }
            }
            if (parse_standardize) ds = ope::standardize_features(ds).first;
            if (!parse_out.empty()) {
                std::ofstream out(parse_out);
                ope::serialize_libsvm(ds, out);
                std::cout << "wrote " << parse_out << "\n";
            }
            return 0;
        }
        if (*blobs) {
            const auto ds = ope::make_gaussian_blobs(blob_rows, blob_features, blob_classes,
                                                     blob_sep, blob_seed);
            std::ofstream out(blob_out);
            if (!out) {
                std::cerr << "cannot open " << blob_out << "\n";
                return 1;
            }
            ope::serialize_libsvm(ds, out);
            std::cout << "wrote " << ds.size() << " rows to " << blob_out << "\n";
            return 0;
        }
        if (*simulate) {
            auto cfg = load_config(sim_config, 0, sim_seed, sim_seed_opt->count() > 0);
            const auto setup = ope::prepare_experiment(cfg);
            ope::Rng rng(cfg.base_seed);
            const std::uint64_t behavior_seed = rng.next_u64();
            auto behavior = ope::make_behavior_policy(cfg.behavior, setup.env->num_actions(),
                                                      setup.env->dim(), behavior_seed);
            auto ctx = setup.env->make_context_stream(rng);
            const auto log = ope::generate_log(*ctx, *setup.env, *behavior, cfg.periods, rng);
            if (sim_out.empty()) {
                ope::export_log_jsonl(log, std::cout);
            } else {
                std::ofstream out(sim_out);
                ope::export_log_jsonl(log, out);
                std::cout << "wrote " << log.size() << " samples to " << sim_out << "\n";
            }
            return 0;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
