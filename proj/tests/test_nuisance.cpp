#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ope/env.hpp"
#include "ope/nuisance.hpp"
#include "ope/policies.hpp"
#include "ope/rng.hpp"
#include "ope/stats.hpp"

using namespace ope;

namespace {

HistoricalLog manual_log(std::vector<std::vector<double>> xs, std::vector<int> as,
                         std::vector<double> ys, int num_actions) {
    HistoricalLog log;
    log.num_actions = num_actions;
    log.dim = static_cast<int>(xs.front().size());
    std::vector<double> props(static_cast<std::size_t>(num_actions),
                              1.0 / static_cast<double>(num_actions));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        log.samples.push_back(
            LoggedSample{static_cast<int>(i) + 1, xs[i], as[i], ys[i], props});
    }
    return log;
}

// Brute-force k-NN oracle: sort all same-arm points by (distance, period).
double knn_oracle(const HistoricalLog& log, int fit_through, int k, int arm,
                  const std::vector<double>& x) {
    std::vector<std::pair<double, double>> pts;  // (dist^2 keyed with period, y)
    std::vector<std::tuple<double, int, double>> rows;
    for (const auto& s : log.samples) {
        if (s.t > fit_through || s.a != arm) continue;
        double d2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            d2 += (x[j] - s.x[j]) * (x[j] - s.x[j]);
        }
        rows.emplace_back(d2, s.t, s.y);
    }
    std::sort(rows.begin(), rows.end());
    const int kk = std::min<int>(k, static_cast<int>(rows.size()));
    double sum = 0.0;
    for (int i = 0; i < kk; ++i) sum += std::get<2>(rows[static_cast<std::size_t>(i)]);
    return sum / kk;
}

}  // namespace

TEST_CASE("nadaraya-watson point estimates") {
    SUBCASE("single sample reproduces its reward at the sample point") {
        const auto log = manual_log({{0.2, 0.4}}, {0}, {0.7}, 2);
        const auto model = nw_fit(log, 1, 0.5, 1.0);
        CHECK(model->f_hat(0, log.samples[0].x) == doctest::Approx(0.7));
        CHECK(model->e_hat(0, log.samples[0].x) == doctest::Approx(0.49));
    }
    SUBCASE("two equidistant samples average at the midpoint") {
        const auto log = manual_log({{-1.0}, {1.0}}, {0, 0}, {0.0, 2.0}, 2);
        const auto model = nw_fit(log, 2, 0.8, 2.0);
        CHECK(model->f_hat(0, std::vector<double>{0.0}) == doctest::Approx(1.0));
    }
    SUBCASE("empty arm cold-starts at (0, c2^2)") {
        const auto log = manual_log({{0.0}}, {0}, {1.0}, 2);
        const auto model = nw_fit(log, 1, 0.5, 1.0);
        CHECK(model->f_hat(1, std::vector<double>{0.0}) == 0.0);
        CHECK(model->e_hat(1, std::vector<double>{0.0}) == 1.0);
    }
    SUBCASE("outputs are clamped to the stated bound") {
        const auto log = manual_log({{0.0}}, {0}, {0.9}, 2);
        const auto model = nw_fit(log, 1, 0.5, 0.5);
        CHECK(model->f_hat(0, std::vector<double>{0.0}) == 0.5);
    }
}

TEST_CASE("k nearest neighbor point estimates") {
    const auto log = manual_log({{0.0}, {1.0}, {2.0}, {3.0}, {4.0}},
                                {0, 0, 0, 0, 0}, {1.0, 0.0, 1.0, 0.0, 1.0}, 2);
    SUBCASE("k=1 returns the nearest reward") {
        const auto model = knn_fit(log, 5, 1, 1.0);
        CHECK(model->f_hat(0, std::vector<double>{0.1}) == 1.0);
        CHECK(model->f_hat(0, std::vector<double>{0.9}) == 0.0);
    }
    SUBCASE("k >= n_a returns the arm mean") {
        const auto model = knn_fit(log, 5, 50, 1.0);
        CHECK(model->f_hat(0, std::vector<double>{0.0}) == doctest::Approx(0.6));
    }
    SUBCASE("k=3 matches the brute-force oracle on hand-placed points") {
        const auto model = knn_fit(log, 5, 3, 1.0);
        for (double q : {-0.5, 0.4, 1.7, 2.5, 3.8, 5.0}) {
            const std::vector<double> x{q};
            CHECK(model->f_hat(0, x) == doctest::Approx(knn_oracle(log, 5, 3, 0, x)));
        }
    }
    SUBCASE("distance ties resolve toward the earlier period") {
        const auto tie_log = manual_log({{-1.0}, {1.0}}, {0, 0}, {0.0, 1.0}, 2);
        const auto model = knn_fit(tie_log, 2, 1, 1.0);
        CHECK(model->f_hat(0, std::vector<double>{0.0}) == 0.0);  // period 1 wins
    }
}

TEST_CASE("sequential nuisance respects the strict past") {
    SyntheticSpec spec;
    spec.num_actions = 2;
    spec.dim = 1;
    spec.arm_coef = {{0.5}, {-0.5}};
    spec.arm_intercept = {0.0, 0.5};
    spec.noise = "truncated_gaussian";
    spec.noise_sd = 0.2;
    spec.noise_halfwidth = 0.8;
    spec.c2 = 3.0;
    const auto env = make_synthetic_env(spec);
    auto behavior = mixture_policy(random_walk_policy(2, 0.05, 51), 0.7);
    Rng rng(53);
    const auto log = generate_log(*env, *behavior, 60, rng);

    NuisanceConfig cfg;
    cfg.refit_every = 10;
    cfg.c2 = 3.0;
    const auto seq = sequential_nuisance(log, cfg);

    SUBCASE("t=1 uses the cold pair") {
        CHECK(seq->at(1).f_hat(0, log.samples[5].x) == 0.0);
        CHECK(seq->fit_point(1) == 0);
    }
    SUBCASE("fit points advance in refit_every strides") {
        CHECK(seq->fit_point(10) == 0);
        CHECK(seq->fit_point(11) == 10);
        CHECK(seq->fit_point(21) == 20);
        CHECK(seq->fit_points() == std::vector<int>{0, 10, 20, 30, 40, 50});
    }
    SUBCASE("no lookahead: truncating the log does not change earlier pairs") {
        HistoricalLog shorter;
        shorter.num_actions = log.num_actions;
        shorter.dim = log.dim;
        shorter.samples.assign(log.samples.begin(), log.samples.begin() + 30);
        const auto seq_short = sequential_nuisance(shorter, cfg);
        Rng probe(55);
        for (int t = 1; t <= 30; ++t) {
            const std::vector<double> x{probe.normal()};
            for (int a = 0; a < 2; ++a) {
                CHECK(seq->at(t).f_hat(a, x) == seq_short->at(t).f_hat(a, x));
                CHECK(seq->at(t).e_hat(a, x) == seq_short->at(t).e_hat(a, x));
            }
        }
    }
    SUBCASE("refit every period changes the pair when data lands nearby") {
        NuisanceConfig every;
        every.refit_every = 1;
        every.c2 = 3.0;
        const auto seq1 = sequential_nuisance(log, every);
        const auto& s = log.samples[10];  // pair at t=11 sees period 11's sample... not yet
        const double before = seq1->at(s.t).f_hat(s.a, s.x);
        const double after = seq1->at(s.t + 1).f_hat(s.a, s.x);
        CHECK(before != after);  // the new sample lands exactly at the query point
    }
    SUBCASE("boundedness over random queries") {
        Rng probe(57);
        for (int i = 0; i < 10000; ++i) {
            const std::vector<double> x{probe.normal() * 2.0};
            const int t = 1 + static_cast<int>(probe.index(60));
            const int a = static_cast<int>(probe.index(2));
            const double f = seq->at(t).f_hat(a, x);
            const double e = seq->at(t).e_hat(a, x);
            CHECK(std::abs(f) <= 3.0);
            CHECK(e >= 0.0);
            CHECK(e <= 9.0);
            CHECK(seq->at(t).v_hat(a, x) >= kConditionalVarianceFloor);
        }
    }
}

TEST_CASE("pool workers agree with direct model queries") {
    SyntheticSpec spec;
    spec.num_actions = 3;
    spec.dim = 2;
    spec.arm_coef = {{0.3, 0.0}, {0.0, 0.3}, {-0.2, 0.2}};
    spec.arm_intercept = {0.1, 0.4, -0.1};
    spec.noise = "truncated_gaussian";
    spec.noise_sd = 0.3;
    spec.noise_halfwidth = 1.0;
    spec.c2 = 3.0;
    const auto env = make_synthetic_env(spec);
    auto behavior = mixture_policy(random_walk_policy(3, 0.05, 61), 0.7);
    Rng rng(63);
    const auto log = generate_log(*env, *behavior, 120, rng);

    EvaluationCovariates pool;
    for (int i = 0; i < 17; ++i) {
        pool.contexts.push_back({rng.normal(), rng.normal()});
    }

    auto check_worker = [&](const NuisanceConfig& cfg, double tol) {
        const auto seq = sequential_nuisance(log, cfg);
        auto worker = seq->make_pool_worker(pool, log.num_actions);
        std::vector<double> f, e;
        for (int fit : seq->fit_points()) {
            worker->eval(fit, f, e);
            int t = 0;
            for (int u = 1; u <= log.size(); ++u) {
                if (seq->fit_point(u) == fit) {
                    t = u;
                    break;
                }
            }
            const auto& model = seq->at(t);
            for (int a = 0; a < log.num_actions; ++a) {
                for (std::size_t i = 0; i < pool.contexts.size(); ++i) {
                    const std::size_t c = static_cast<std::size_t>(a) * pool.contexts.size() + i;
                    CHECK(std::abs(f[c] - model.f_hat(a, pool.contexts[i])) <= tol);
                    CHECK(std::abs(e[c] - model.e_hat(a, pool.contexts[i])) <= tol);
                }
            }
        }
    };

    SUBCASE("nadaraya-watson incremental worker") {
        NuisanceConfig cfg;
        cfg.method = NuisanceConfig::Method::nw;
        cfg.refit_every = 7;
        cfg.c2 = 3.0;
        check_worker(cfg, 1e-12);
    }
    SUBCASE("knn heap worker") {
        NuisanceConfig cfg;
        cfg.method = NuisanceConfig::Method::knn;
        cfg.k = 4;
        cfg.refit_every = 9;
        cfg.c2 = 3.0;
        check_worker(cfg, 1e-12);
    }
}

TEST_CASE("nw consistency improves with horizon on a smooth mean") {
    SyntheticSpec spec;
    spec.num_actions = 2;
    spec.dim = 1;
    spec.arm_coef = {{0.8}, {-0.8}};
    spec.arm_intercept = {0.0, 0.0};
    spec.noise = "truncated_gaussian";
    spec.noise_sd = 0.3;
    spec.noise_halfwidth = 1.2;
    spec.c2 = 5.0;
    const auto env = make_synthetic_env(spec);

    auto mean_abs_err = [&](int periods) {
        auto behavior = mixture_policy(random_walk_policy(2, 0.05, 71), 0.0);  // uniform
        Rng rng(73);
        const auto log = generate_log(*env, *behavior, periods, rng);
        // h ~ T^{-1/(d+4)} scaling of a base bandwidth.
        const double h = 1.2 * std::pow(static_cast<double>(periods), -1.0 / 5.0);
        const auto model = nw_fit(log, periods, h, 5.0);
        double err = 0.0;
        int count = 0;
        for (double q = -1.5; q <= 1.5; q += 0.25) {
            const std::vector<double> x{q};
            for (int a = 0; a < 2; ++a) {
                err += std::abs(model->f_hat(a, x) - env->f_star(a, x));
                ++count;
            }
        }
        return err / count;
    };

    CHECK(mean_abs_err(2000) < mean_abs_err(100));
}
