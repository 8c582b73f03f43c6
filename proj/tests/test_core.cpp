#include <doctest.h>

#include "ope/policies.hpp"
#include "ope/rng.hpp"
#include "ope/types.hpp"

using namespace ope;

namespace {

HistoricalLog two_period_log(std::vector<double> props) {
    HistoricalLog log;
    log.num_actions = 2;
    log.dim = 1;
    log.samples.push_back(LoggedSample{1, {0.0}, 0, 1.0, props});
    log.samples.push_back(LoggedSample{2, {1.0}, 1, 0.0, props});
    return log;
}

}  // namespace

TEST_CASE("checked samples reject invalid propensity vectors") {
    CHECK_NOTHROW(LoggedSample::checked(1, {0.0}, 0, 0.5, {0.5, 0.5}));
    CHECK_THROWS(LoggedSample::checked(1, {0.0}, 0, 0.5, {0.6, 0.6}));
    CHECK_THROWS(LoggedSample::checked(1, {0.0}, 0, 0.5, {1.0, 0.0}));   // zero entry
    CHECK_THROWS(LoggedSample::checked(1, {0.0}, 0, 0.5, {1.2, -0.2}));  // negative entry
    CHECK_THROWS(LoggedSample::checked(1, {0.0}, 2, 0.5, {0.5, 0.5}));   // action range
    CHECK_THROWS(LoggedSample::checked(1, {0.0}, 0, 2.0, {0.5, 0.5}));   // reward bound
    CHECK_THROWS(LoggedSample::checked(0, {0.0}, 0, 0.5, {0.5, 0.5}));   // period index
}

TEST_CASE("random invalid simplex constructions are all rejected") {
    Rng rng(123);
    int rejected = 0;
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) {
        std::vector<double> p = {rng.uniform(), rng.uniform()};
        const double sum = p[0] + p[1];
        // Perturb away from the simplex by at least 100x the tolerance.
        const double off = (rng.uniform() < 0.5 ? 1.0 : -1.0) * (1e-7 + rng.uniform());
        p[0] = p[0] / sum + off;
        p[1] = p[1] / sum;
        try {
            LoggedSample::checked(1, {0.0}, 0, 0.0, p);
        } catch (const std::invalid_argument&) {
            ++rejected;
        }
    }
    CHECK(rejected == trials);
}

TEST_CASE("validate_log flags ratio violations") {
    const auto eval = fixed_arm_policy(2, 0);
    ImportanceRatioBound bounds;
    bounds.c1 = 4.0;

    SUBCASE("ratio within bound") {
        const auto log = two_period_log({0.5, 0.5});
        const auto report = validate_log(log, *eval, bounds);
        CHECK(report.ok());
    }
    SUBCASE("ratio 10 exceeds 4") {
        const auto log = two_period_log({0.1, 0.9});
        const auto report = validate_log(log, *eval, bounds);
        REQUIRE(report.violations.size() == 2);  // both periods share the propensities
        CHECK(report.violations[0].kind == ViolationKind::ratio_bound);
        CHECK(report.violations[0].value == doctest::Approx(10.0));
    }
    SUBCASE("empty log is a precondition error") {
        HistoricalLog log;
        log.num_actions = 2;
        log.dim = 1;
        CHECK_THROWS(validate_log(log, *eval, bounds));
    }
    SUBCASE("dimension mismatch is structural") {
        auto log = two_period_log({0.5, 0.5});
        log.dim = 3;
        CHECK_THROWS(validate_log(log, *eval, bounds));
    }
}

TEST_CASE("validate_log reports reward-bound violations") {
    auto log = two_period_log({0.5, 0.5});
    log.samples[0].y = 5.0;
    ImportanceRatioBound bounds;
    bounds.c1 = 10.0;
    bounds.c2 = 1.0;
    const auto report = validate_log(log, *uniform_policy(2), bounds);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].kind == ViolationKind::reward_bound);
    CHECK(report.violations[0].t == 1);
}

TEST_CASE("validate_log is pure") {
    const auto log = two_period_log({0.2, 0.8});
    const auto eval = fixed_arm_policy(2, 0);
    ImportanceRatioBound bounds;
    bounds.c1 = 3.0;
    const auto r1 = validate_log(log, *eval, bounds);
    const auto r2 = validate_log(log, *eval, bounds);
    REQUIRE(r1.violations.size() == r2.violations.size());
    for (std::size_t i = 0; i < r1.violations.size(); ++i) {
        CHECK(r1.violations[i].t == r2.violations[i].t);
        CHECK(r1.violations[i].value == r2.violations[i].value);
    }
}

TEST_CASE("bounds sanity checks") {
    ImportanceRatioBound b;
    CHECK_NOTHROW(b.check());
    b.epsilon = -1.0;
    CHECK_THROWS(b.check());
    b.epsilon = 1e-3;
    b.c3 = 10.0;  // 1/c3^2 = 0.01 >= epsilon: fine
    CHECK_NOTHROW(b.check());
    b.c3 = 100.0;  // 1/c3^2 = 1e-4 < epsilon: inconsistent pair
    CHECK_THROWS(b.check());
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_lowest_tie(std::vector<double>{0.0, 0.0}) == 0);
    CHECK(argmax_lowest_tie(std::vector<double>{1.0, 2.0, 2.0}) == 1);
}

TEST_CASE("estimate report JSON carries CI only when present") {
    EstimateReport r;
    r.method = "a2ipw";
    r.theta_hat = 0.25;
    r.window = 10;
    CHECK(!r.has_ci());
    CHECK(r.to_json_string().find("ci_low") == std::string::npos);
    r.ci_low = 0.1;
    r.ci_high = 0.4;
    r.alpha = 0.05;
    CHECK(r.has_ci());
    CHECK(r.to_json_string().find("ci_low") != std::string::npos);
}

TEST_CASE("a pure one-hot evaluation policy trips the ratio bound") {
    // With w = 1 the evaluation policy puts mass 1 on one arm; whenever the
    // behavior policy keeps mass elsewhere the realized ratio is 1/pi_t(a*),
    // which exceeds any C1 below that value.
    const auto log = two_period_log({0.5, 0.5});
    const auto eval = fixed_arm_policy(2, 0);
    ImportanceRatioBound bounds;
    bounds.c1 = 1.5;
    const auto report = validate_log(log, *eval, bounds);
    CHECK(!report.ok());
    for (const auto& v : report.violations) {
        CHECK(v.kind == ViolationKind::ratio_bound);
        CHECK(v.value == doctest::Approx(2.0));
    }
}
