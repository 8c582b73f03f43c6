#include "ope/env.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ope/stats.hpp"

namespace ope {

std::optional<double> BanditEnvironment::exact_value(const PolicyFunction& pi_e) const {
    const FiniteSupport* sup = support();
    if (sup == nullptr) return std::nullopt;
    double total = 0.0;
    std::vector<double> pe(static_cast<std::size_t>(num_actions()));
    for (std::size_t i = 0; i < sup->contexts.size(); ++i) {
        pi_e.action_probs(sup->contexts[i], pe);
        double inner = 0.0;
        for (int a = 0; a < num_actions(); ++a) {
            inner += pe[static_cast<std::size_t>(a)] * f_star(a, sup->contexts[i]);
        }
        total += sup->probs[i] * inner;
    }
    return total;
}

double true_policy_value(const BanditEnvironment& env, const PolicyFunction& pi_e) {
    const auto v = env.exact_value(pi_e);
    if (!v) {
        throw std::runtime_error("true_policy_value: environment has no finite support or "
                                 "closed form for this policy");
    }
    return *v;
}

HistoricalLog generate_log(ContextStream& ctx, const BanditEnvironment& env,
                           AdaptivePolicy& behavior, int periods, Rng& rng) {
    if (periods < 1) throw std::invalid_argument("generate_log: periods must be >= 1");
    if (behavior.num_actions() != env.num_actions()) {
        throw std::invalid_argument("generate_log: behavior policy action count mismatch");
    }

    HistoricalLog log;
    log.num_actions = env.num_actions();
    log.dim = env.dim();
    log.samples.reserve(static_cast<std::size_t>(periods));
    log.snapshots.reserve(static_cast<std::size_t>(periods));

    std::vector<double> x;
    for (int t = 1; t <= periods; ++t) {
        ctx.next(rng, x);
        auto snapshot = behavior.snapshot();
        auto props = snapshot->probs(x);
        if (!is_strictly_positive_probability_vector(props)) {
            throw std::runtime_error("generate_log: behavior policy emitted an invalid "
                                     "probability vector at period " + std::to_string(t));
        }
        const int a = rng.categorical(props);
        const double y = env.sample_reward(rng, a, x);
        log.samples.push_back(LoggedSample{t, x, a, y, std::move(props)});
        log.snapshots.push_back(std::move(snapshot));
        behavior.update(x, a, y);
    }
    return log;
}

HistoricalLog generate_log(const BanditEnvironment& env, AdaptivePolicy& behavior, int periods,
                           Rng& rng) {
    auto ctx = env.make_context_stream(rng);
    return generate_log(*ctx, env, behavior, periods, rng);
}

EvaluationCovariates draw_covariates(ContextStream& ctx, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("draw_covariates: n must be >= 1");
    EvaluationCovariates ev;
    ev.contexts.resize(static_cast<std::size_t>(n));
    for (auto& x : ev.contexts) ctx.next(rng, x);
    return ev;
}

namespace {

// Variance of N(0, sd^2) truncated to [-w, w].
double truncated_normal_variance(double sd, double halfwidth) {
    if (sd == 0.0) return 0.0;
    const double alpha = halfwidth / sd;
    const double phi = std::exp(-0.5 * alpha * alpha) / std::sqrt(2.0 * M_PI);
    const double mass = 2.0 * normal_cdf(alpha) - 1.0;
    return sd * sd * (1.0 - 2.0 * alpha * phi / mass);
}

enum class NoiseKind { none, bernoulli, truncated_gaussian };

class SyntheticEnv final : public BanditEnvironment {
public:
    explicit SyntheticEnv(const SyntheticSpec& spec) : spec_(spec) {
        if (spec_.num_actions < 2 || spec_.dim < 1) {
            throw std::invalid_argument("make_synthetic_env: bad shape");
        }
        if (static_cast<int>(spec_.arm_coef.size()) != spec_.num_actions ||
            static_cast<int>(spec_.arm_intercept.size()) != spec_.num_actions) {
            throw std::invalid_argument("make_synthetic_env: need per-arm coefficients");
        }
        for (const auto& c : spec_.arm_coef) {
            if (static_cast<int>(c.size()) != spec_.dim) {
                throw std::invalid_argument("make_synthetic_env: coefficient dim mismatch");
            }
        }
        if (spec_.noise == "none") noise_ = NoiseKind::none;
        else if (spec_.noise == "bernoulli") noise_ = NoiseKind::bernoulli;
        else if (spec_.noise == "truncated_gaussian") noise_ = NoiseKind::truncated_gaussian;
        else {
            // Anything without an a-priori bound (e.g. plain "gaussian") is not
            // a valid reward law here.
            throw std::invalid_argument("make_synthetic_env: unbounded or unknown noise spec '" +
                                        spec_.noise + "'");
        }
        if (noise_ == NoiseKind::truncated_gaussian) {
            if (!(spec_.noise_sd > 0.0) || !(spec_.noise_halfwidth > 0.0) ||
                !std::isfinite(spec_.noise_halfwidth)) {
                throw std::invalid_argument("make_synthetic_env: truncated noise needs a finite "
                                            "positive sd and halfwidth");
            }
            noise_var_ = truncated_normal_variance(spec_.noise_sd, spec_.noise_halfwidth);
        }
        if (spec_.finite_context) {
            const auto& fs = *spec_.finite_context;
            if (fs.contexts.empty() || fs.contexts.size() != fs.probs.size()) {
                throw std::invalid_argument("make_synthetic_env: bad finite context support");
            }
            if (!is_probability_vector(fs.probs)) {
                throw std::invalid_argument("make_synthetic_env: support probs not a simplex");
            }
            for (const auto& x : fs.contexts) {
                if (static_cast<int>(x.size()) != spec_.dim) {
                    throw std::invalid_argument("make_synthetic_env: support context dim mismatch");
                }
            }
        }
        if (spec_.context_mean.empty()) spec_.context_mean.assign(spec_.dim, 0.0);
        if (spec_.context_sd.empty()) spec_.context_sd.assign(spec_.dim, 1.0);
    }

    int num_actions() const override { return spec_.num_actions; }
    int dim() const override { return spec_.dim; }
    double reward_bound() const override { return spec_.c2; }

    double f_star(int a, std::span<const double> x) const override {
        double v = spec_.arm_intercept[static_cast<std::size_t>(a)];
        const auto& coef = spec_.arm_coef[static_cast<std::size_t>(a)];
        for (std::size_t j = 0; j < coef.size(); ++j) v += coef[j] * x[j];
        if (noise_ == NoiseKind::bernoulli) v = std::clamp(v, 0.0, 1.0);
        return v;
    }

    double e_star(int a, std::span<const double> x) const override {
        const double f = f_star(a, x);
        switch (noise_) {
            case NoiseKind::none: return f * f;
            case NoiseKind::bernoulli: return f;  // y^2 = y on {0,1}
            case NoiseKind::truncated_gaussian: return f * f + noise_var_;
        }
        return f * f;
    }

    const FiniteSupport* support() const override {
        return spec_.finite_context ? &*spec_.finite_context : nullptr;
    }

    void sample_context(Rng& rng, std::vector<double>& out) const {
        if (spec_.finite_context) {
            const auto& fs = *spec_.finite_context;
            out = fs.contexts[static_cast<std::size_t>(rng.categorical(fs.probs))];
            return;
        }
        out.resize(static_cast<std::size_t>(spec_.dim));
        for (int j = 0; j < spec_.dim; ++j) {
            out[static_cast<std::size_t>(j)] =
                rng.normal(spec_.context_mean[static_cast<std::size_t>(j)],
                           spec_.context_sd[static_cast<std::size_t>(j)]);
        }
    }

    std::unique_ptr<ContextStream> make_context_stream(Rng&) const override {
        return std::make_unique<SyntheticStream>(*this);
    }

    double sample_reward(Rng& rng, int a, std::span<const double> x) const override {
        const double f = f_star(a, x);
        double y = f;
        switch (noise_) {
            case NoiseKind::none: break;
            case NoiseKind::bernoulli: y = rng.uniform() < f ? 1.0 : 0.0; break;
            case NoiseKind::truncated_gaussian:
                y = f + rng.truncated_normal(spec_.noise_sd, spec_.noise_halfwidth);
                break;
        }
        if (std::abs(y) > spec_.c2) {
            ++clip_events_;
            y = std::clamp(y, -spec_.c2, spec_.c2);
        }
        return y;
    }

    std::optional<double> exact_value(const PolicyFunction& pi_e) const override {
        if (support() != nullptr) return BanditEnvironment::exact_value(pi_e);
        // Gaussian contexts with linear means admit a closed form for
        // context-free policies (Bernoulli clamping breaks linearity).
        if (!pi_e.context_free() || noise_ == NoiseKind::bernoulli) return std::nullopt;
        std::vector<double> pe(static_cast<std::size_t>(num_actions()));
        pi_e.action_probs({}, pe);
        double total = 0.0;
        for (int a = 0; a < num_actions(); ++a) {
            double mean_f = spec_.arm_intercept[static_cast<std::size_t>(a)];
            for (int j = 0; j < spec_.dim; ++j) {
                mean_f += spec_.arm_coef[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)] *
                          spec_.context_mean[static_cast<std::size_t>(j)];
            }
            total += pe[static_cast<std::size_t>(a)] * mean_f;
        }
        return total;
    }

private:
    class SyntheticStream final : public ContextStream {
    public:
        explicit SyntheticStream(const SyntheticEnv& env) : env_(env) {}
        void next(Rng& rng, std::vector<double>& out) override { env_.sample_context(rng, out); }

    private:
        const SyntheticEnv& env_;
    };

    SyntheticSpec spec_;
    NoiseKind noise_ = NoiseKind::truncated_gaussian;
    double noise_var_ = 0.0;
};

class ClassificationEnv final : public BanditEnvironment {
public:
    ClassificationEnv(std::vector<std::vector<double>> contexts, std::vector<int> labels,
                      int num_classes, bool with_replacement)
        : labels_(std::move(labels)), num_classes_(num_classes),
          with_replacement_(with_replacement) {
        if (contexts.empty() || contexts.size() != labels_.size()) {
            throw std::invalid_argument("classification_to_bandit: empty dataset");
        }
        if (num_classes_ < 2) throw std::invalid_argument("classification_to_bandit: need K >= 2");
        dim_ = static_cast<int>(contexts.front().size());
        support_.contexts = std::move(contexts);
        support_.probs.assign(support_.contexts.size(),
                              1.0 / static_cast<double>(support_.contexts.size()));
        for (std::size_t i = 0; i < support_.contexts.size(); ++i) {
            label_of_.emplace(support_.contexts[i], labels_[i]);  // first row wins on duplicates
        }
    }

    int num_actions() const override { return num_classes_; }
    int dim() const override { return dim_; }
    double reward_bound() const override { return 1.0; }

    double f_star(int a, std::span<const double> x) const override {
        return a == label_at(x) ? 1.0 : 0.0;
    }
    double e_star(int a, std::span<const double> x) const override { return f_star(a, x); }

    const FiniteSupport* support() const override { return &support_; }

    std::unique_ptr<ContextStream> make_context_stream(Rng& rng) const override {
        if (with_replacement_) return std::make_unique<WithReplacementStream>(*this);
        std::vector<int> order(support_.contexts.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);
        return std::make_unique<ShuffledStream>(*this, std::move(order));
    }

    double sample_reward(Rng&, int a, std::span<const double> x) const override {
        return f_star(a, x);
    }

    std::optional<double> exact_value(const PolicyFunction& pi_e) const override {
        // Row-wise sum: matches the sampling law even if duplicate contexts
        // carry conflicting labels.
        double total = 0.0;
        std::vector<double> pe(static_cast<std::size_t>(num_classes_));
        for (std::size_t i = 0; i < support_.contexts.size(); ++i) {
            pi_e.action_probs(support_.contexts[i], pe);
            total += pe[static_cast<std::size_t>(labels_[i])];
        }
        return total / static_cast<double>(support_.contexts.size());
    }

private:
    int label_at(std::span<const double> x) const {
        const auto it = label_of_.find(std::vector<double>(x.begin(), x.end()));
        if (it == label_of_.end()) {
            throw std::invalid_argument("classification env: context is not a dataset row");
        }
        return it->second;
    }

    class ShuffledStream final : public ContextStream {
    public:
        ShuffledStream(const ClassificationEnv& env, std::vector<int> order)
            : env_(env), order_(std::move(order)) {}
        void next(Rng&, std::vector<double>& out) override {
            if (pos_ >= order_.size()) {
                throw std::runtime_error("classification env: context pool exhausted "
                                         "(without-replacement mode)");
            }
            out = env_.support_.contexts[static_cast<std::size_t>(order_[pos_++])];
        }

    private:
        const ClassificationEnv& env_;
        std::vector<int> order_;
        std::size_t pos_ = 0;
    };

    class WithReplacementStream final : public ContextStream {
    public:
        explicit WithReplacementStream(const ClassificationEnv& env) : env_(env) {}
        void next(Rng& rng, std::vector<double>& out) override {
            out = env_.support_.contexts[rng.index(env_.support_.contexts.size())];
        }

    private:
        const ClassificationEnv& env_;
    };

    std::vector<int> labels_;
    int num_classes_;
    bool with_replacement_;
    int dim_ = 0;
    FiniteSupport support_;
    std::map<std::vector<double>, int> label_of_;
};

}  // namespace

std::unique_ptr<BanditEnvironment> make_synthetic_env(const SyntheticSpec& spec) {
    return std::make_unique<SyntheticEnv>(spec);
}

std::unique_ptr<BanditEnvironment> classification_to_bandit(const ClassificationDataset& ds,
                                                            bool with_replacement) {
    if (ds.rows.empty()) throw std::invalid_argument("classification_to_bandit: empty dataset");
    std::vector<std::vector<double>> contexts;
    std::vector<int> labels;
    contexts.reserve(ds.rows.size());
    labels.reserve(ds.rows.size());
    for (int i = 0; i < ds.size(); ++i) {
        contexts.push_back(ds.dense_row(i));
        labels.push_back(ds.rows[static_cast<std::size_t>(i)].label);
    }
    return std::make_unique<ClassificationEnv>(std::move(contexts), std::move(labels),
                                               ds.n_classes, with_replacement);
}

std::unique_ptr<BanditEnvironment> classification_to_bandit(
    std::vector<std::vector<double>> contexts, std::vector<int> labels, int num_classes,
    bool with_replacement) {
    return std::make_unique<ClassificationEnv>(std::move(contexts), std::move(labels), num_classes,
                                               with_replacement);
}

void export_log_jsonl(const HistoricalLog& log, std::ostream& out) {
    for (const auto& s : log.samples) {
        nlohmann::json j;
        j["t"] = s.t;
        j["x"] = s.x;
        j["a"] = s.a;
        j["y"] = s.y;
        j["propensities"] = s.propensities;
        out << j.dump() << '\n';
    }
}

HistoricalLog import_log_jsonl(std::istream& in) {
    HistoricalLog log;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        try {
            LoggedSample s;
            s.t = j.at("t").get<int>();
            s.x = j.at("x").get<std::vector<double>>();
            s.a = j.at("a").get<int>();
            s.y = j.at("y").get<double>();
            s.propensities = j.at("propensities").get<std::vector<double>>();
            log.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!log.samples.empty()) {
        log.num_actions = static_cast<int>(log.samples.front().propensities.size());
        log.dim = static_cast<int>(log.samples.front().x.size());
    }
    log.check_structure();
    return log;
}

}  // namespace ope
