#include "ope/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ope/stats.hpp"

namespace ope {

bool is_probability_vector(std::span<const double> p, double tol) {
    if (p.empty()) return false;
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0 + tol) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
}

bool is_strictly_positive_probability_vector(std::span<const double> p, double tol) {
    if (!is_probability_vector(p, tol)) return false;
    return std::all_of(p.begin(), p.end(), [](double v) { return v > 0.0; });
}

int argmax_lowest_tie(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax_lowest_tie: empty");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::vector<double> PolicyFunction::probs(std::span<const double> x) const {
    std::vector<double> out(static_cast<std::size_t>(num_actions()));
    action_probs(x, out);
    return out;
}

bool PolicyFunction::is_deterministic_at(std::span<const double> x, double tol) const {
    const auto p = probs(x);
    int ones = 0;
    for (double v : p) {
        if (std::abs(v - 1.0) <= tol) ++ones;
        else if (v > tol) return false;
    }
    return ones == 1;
}

TablePolicy::TablePolicy(std::vector<double> probs, PolicyKind kind)
    : probs_(std::move(probs)), kind_(kind) {
    if (!is_probability_vector(probs_)) {
        throw std::invalid_argument("TablePolicy: not a probability vector");
    }
}

void TablePolicy::action_probs(std::span<const double>, std::span<double> out) const {
    std::copy(probs_.begin(), probs_.end(), out.begin());
}

LoggedSample LoggedSample::checked(int t, std::vector<double> x, int a, double y,
                                   std::vector<double> propensities, double reward_bound) {
    LoggedSample s{t, std::move(x), a, y, std::move(propensities)};
    s.check(reward_bound);
    return s;
}

void LoggedSample::check(double reward_bound) const {
    if (t < 1) throw std::invalid_argument("LoggedSample: period index must be >= 1");
    if (a < 0 || a >= static_cast<int>(propensities.size())) {
        throw std::invalid_argument("LoggedSample: action out of range");
    }
    if (!is_strictly_positive_probability_vector(propensities)) {
        throw std::invalid_argument("LoggedSample: propensities must be a strictly positive "
                                    "probability vector");
    }
    if (!std::isfinite(y) || std::abs(y) > reward_bound + 1e-12) {
        throw std::invalid_argument("LoggedSample: |y| exceeds the reward bound");
    }
}

void HistoricalLog::check_structure() const {
    if (samples.empty()) throw std::invalid_argument("HistoricalLog: empty log");
    for (int i = 0; i < size(); ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.t != i + 1) throw std::invalid_argument("HistoricalLog: period indices must be 1..T");
        if (static_cast<int>(s.x.size()) != dim) {
            throw std::invalid_argument("HistoricalLog: context dimension mismatch");
        }
        if (static_cast<int>(s.propensities.size()) != num_actions) {
            throw std::invalid_argument("HistoricalLog: action count mismatch");
        }
        if (!is_probability_vector(s.propensities)) {
            throw std::invalid_argument("HistoricalLog: invalid propensity vector");
        }
    }
    if (!snapshots.empty() && snapshots.size() != samples.size()) {
        throw std::invalid_argument("HistoricalLog: snapshot count mismatch");
    }
}

void ImportanceRatioBound::check() const {
    if (!(c1 > 0.0) || !(c2 > 0.0) || !(epsilon > 0.0)) {
        throw std::invalid_argument("ImportanceRatioBound: bounds must be positive");
    }
    const double c3e = effective_c3();
    if (!(c3e > 0.0) || epsilon > 1.0 / (c3e * c3e) + 1e-15) {
        throw std::invalid_argument("ImportanceRatioBound: epsilon must not exceed 1/c3^2");
    }
}

std::string EstimateReport::to_json_string() const {
    nlohmann::json j;
    j["method"] = method;
    j["theta_hat"] = theta_hat;
    j["window"] = window;
    j["burn_in"] = burn_in;
    if (!weights.empty()) j["weights"] = weights;
    if (std::isfinite(stat_denominator)) j["stat_denominator"] = stat_denominator;
    if (has_ci()) {
        j["ci_low"] = ci_low;
        j["ci_high"] = ci_high;
        j["alpha"] = alpha;
    }
    j["diagnostics"] = {{"max_importance_ratio", diagnostics.max_importance_ratio},
                        {"floor_hits", diagnostics.floor_hits}};
    if (!notes.empty()) j["notes"] = notes;
    return j.dump();
}

ValidationReport validate_log(const HistoricalLog& log, const PolicyFunction& eval_policy,
                              const ImportanceRatioBound& bounds) {
    log.check_structure();
    bounds.check();
    if (eval_policy.num_actions() != log.num_actions) {
        throw std::invalid_argument("validate_log: action count mismatch");
    }

    ValidationReport report;
    std::vector<double> pe(static_cast<std::size_t>(log.num_actions));
    for (const auto& s : log.samples) {
        if (static_cast<int>(s.x.size()) != log.dim) {
            throw std::invalid_argument("validate_log: context dimension mismatch");
        }
        eval_policy.action_probs(s.x, pe);
        for (int a = 0; a < log.num_actions; ++a) {
            const double prop = s.propensities[static_cast<std::size_t>(a)];
            if (prop <= 0.0) {
                report.violations.push_back({ViolationKind::nonpositive_propensity, s.t, a, prop,
                                             0.0, "nonpositive propensity"});
                continue;
            }
            const double ratio = pe[static_cast<std::size_t>(a)] / prop;
            if (ratio > bounds.c1) {
                report.violations.push_back({ViolationKind::ratio_bound, s.t, a, ratio, bounds.c1,
                                             "importance ratio exceeds C1"});
            }
        }
        if (std::abs(s.y) > bounds.c2) {
            report.violations.push_back(
                {ViolationKind::reward_bound, s.t, -1, s.y, bounds.c2, "|y| exceeds C2"});
        }
    }
    return report;
}

}  // namespace ope
