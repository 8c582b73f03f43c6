#include "ope/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ope/stats.hpp"

namespace ope {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

// Arm-major copy of the log prefix data shared by every model of a sequence.
struct ArmStore {
    int dim = 0;
    int num_actions = 0;
    // Per arm: contexts flattened (n_a x dim), rewards, squared rewards, periods.
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> ys;
    std::vector<std::vector<double>> y2s;
    std::vector<std::vector<int>> periods;

    explicit ArmStore(const HistoricalLog& log)
        : dim(log.dim), num_actions(log.num_actions), xs(log.num_actions), ys(log.num_actions),
          y2s(log.num_actions), periods(log.num_actions) {
        for (const auto& s : log.samples) {
            auto& x = xs[static_cast<std::size_t>(s.a)];
            x.insert(x.end(), s.x.begin(), s.x.end());
            ys[static_cast<std::size_t>(s.a)].push_back(s.y);
            y2s[static_cast<std::size_t>(s.a)].push_back(s.y * s.y);
            periods[static_cast<std::size_t>(s.a)].push_back(s.t);
        }
    }

    // Number of arm-a samples with period <= fit_through.
    int count_through(int a, int fit_through) const {
        const auto& p = periods[static_cast<std::size_t>(a)];
        return static_cast<int>(std::upper_bound(p.begin(), p.end(), fit_through) - p.begin());
    }

    std::span<const double> context(int a, int i) const {
        return {xs[static_cast<std::size_t>(a)].data() +
                    static_cast<std::size_t>(i) * static_cast<std::size_t>(dim),
                static_cast<std::size_t>(dim)};
    }
};

class NwModel final : public NuisanceModel {
public:
    NwModel(std::shared_ptr<const ArmStore> store, int fit_through, double h, double c2)
        : store_(std::move(store)), fit_through_(fit_through), h_(std::max(h, 1e-8)), c2_(c2) {
        counts_.resize(static_cast<std::size_t>(store_->num_actions));
        for (int a = 0; a < store_->num_actions; ++a) {
            counts_[static_cast<std::size_t>(a)] = store_->count_through(a, fit_through);
        }
    }

    double f_hat(int a, std::span<const double> x) const override {
        return kernel_mean(a, x, store_->ys, -c2_, c2_, 0.0);
    }
    double e_hat(int a, std::span<const double> x) const override {
        return kernel_mean(a, x, store_->y2s, 0.0, c2_ * c2_, c2_ * c2_);
    }
    int fitted_through() const override { return fit_through_; }
    double bound() const override { return c2_; }
    double bandwidth() const { return h_; }

private:
    double kernel_mean(int a, std::span<const double> x,
                       const std::vector<std::vector<double>>& values, double lo, double hi,
                       double cold) const {
        const int n = counts_[static_cast<std::size_t>(a)];
        if (n == 0) return cold;
        const auto& vals = values[static_cast<std::size_t>(a)];
        const double inv_2h2 = 0.5 / (h_ * h_);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < n; ++i) {
            const double w = std::exp(-sq_dist(x, store_->context(a, i)) * inv_2h2);
            num += w * vals[static_cast<std::size_t>(i)];
            den += w;
        }
        if (!(den > 0.0)) return cold;
        return std::clamp(num / den, lo, hi);
    }

    std::shared_ptr<const ArmStore> store_;
    int fit_through_;
    double h_;
    double c2_;
    std::vector<int> counts_;
};

class KnnModel final : public NuisanceModel {
public:
    KnnModel(std::shared_ptr<const ArmStore> store, int fit_through, int k, double c2)
        : store_(std::move(store)), fit_through_(fit_through), k_(k), c2_(c2) {
        if (k_ < 1) throw std::invalid_argument("knn_fit: k must be >= 1");
        counts_.resize(static_cast<std::size_t>(store_->num_actions));
        for (int a = 0; a < store_->num_actions; ++a) {
            counts_[static_cast<std::size_t>(a)] = store_->count_through(a, fit_through);
        }
    }

    double f_hat(int a, std::span<const double> x) const override {
        return knn_mean(a, x, store_->ys, -c2_, c2_, 0.0);
    }
    double e_hat(int a, std::span<const double> x) const override {
        return knn_mean(a, x, store_->y2s, 0.0, c2_ * c2_, c2_ * c2_);
    }
    int fitted_through() const override { return fit_through_; }
    double bound() const override { return c2_; }

private:
    double knn_mean(int a, std::span<const double> x,
                    const std::vector<std::vector<double>>& values, double lo, double hi,
                    double cold) const {
        const int n = counts_[static_cast<std::size_t>(a)];
        if (n == 0) return cold;
        const auto& periods = store_->periods[static_cast<std::size_t>(a)];
        // (distance^2, period) pairs; ties resolved toward earlier periods.
        std::vector<std::pair<double, int>> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            order[static_cast<std::size_t>(i)] = {sq_dist(x, store_->context(a, i)),
                                                  periods[static_cast<std::size_t>(i)]};
        }
        const int kk = std::min(k_, n);
        std::nth_element(order.begin(), order.begin() + (kk - 1), order.end());
        std::sort(order.begin(), order.begin() + kk);
        const auto& vals = values[static_cast<std::size_t>(a)];
        // Map selected periods back to arm-local indices via sorted periods.
        double sum = 0.0;
        for (int i = 0; i < kk; ++i) {
            const int idx = static_cast<int>(
                std::lower_bound(periods.begin(), periods.end(), order[static_cast<std::size_t>(i)].second) -
                periods.begin());
            sum += vals[static_cast<std::size_t>(idx)];
        }
        return std::clamp(sum / static_cast<double>(kk), lo, hi);
    }

    std::shared_ptr<const ArmStore> store_;
    int fit_through_;
    int k_;
    double c2_;
    std::vector<int> counts_;
};

// Incremental Nadaraya-Watson sums over a fixed pool: each arriving sample
// touches its arm's per-covariate accumulators once, so evaluating the whole
// sequence costs O(T * N) kernel evaluations instead of O(blocks * N * T).
class NwPoolWorker final : public PoolNuisanceWorker {
public:
    NwPoolWorker(std::shared_ptr<const ArmStore> store, std::vector<std::vector<double>> pool,
                 const std::vector<std::pair<int, double>>& h_by_fit_point, double c2)
        : store_(std::move(store)), pool_(std::move(pool)), h_by_fit_(h_by_fit_point), c2_(c2) {
        const std::size_t cells =
            static_cast<std::size_t>(store_->num_actions) * pool_.size();
        sw_.assign(cells, 0.0);
        swy_.assign(cells, 0.0);
        swy2_.assign(cells, 0.0);
        counts_.assign(static_cast<std::size_t>(store_->num_actions), 0);
        next_in_arm_.assign(static_cast<std::size_t>(store_->num_actions), 0);
    }

    void eval(int fit_point, std::vector<double>& f_out, std::vector<double>& e_out) override {
        const double h = std::max(bandwidth_for(fit_point), 1e-8);
        if (h != h_ && absorbed_ > 0) reset_sums();
        h_ = h;
        absorb_through(fit_point);

        const std::size_t n = pool_.size();
        f_out.assign(sw_.size(), 0.0);
        e_out.assign(sw_.size(), 0.0);
        for (int a = 0; a < store_->num_actions; ++a) {
            const std::size_t off = static_cast<std::size_t>(a) * n;
            const bool cold = counts_[static_cast<std::size_t>(a)] == 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (cold || !(sw_[off + i] > 0.0)) {
                    f_out[off + i] = 0.0;
                    e_out[off + i] = c2_ * c2_;
                } else {
                    f_out[off + i] = std::clamp(swy_[off + i] / sw_[off + i], -c2_, c2_);
                    e_out[off + i] = std::clamp(swy2_[off + i] / sw_[off + i], 0.0, c2_ * c2_);
                }
            }
        }
    }

private:
    double bandwidth_for(int fit_point) const {
        for (const auto& [p, h] : h_by_fit_) {
            if (p == fit_point) return h;
        }
        throw std::logic_error("NwPoolWorker: unknown fit point");
    }

    void reset_sums() {
        std::fill(sw_.begin(), sw_.end(), 0.0);
        std::fill(swy_.begin(), swy_.end(), 0.0);
        std::fill(swy2_.begin(), swy2_.end(), 0.0);
        std::fill(counts_.begin(), counts_.end(), 0);
        std::fill(next_in_arm_.begin(), next_in_arm_.end(), 0);
        absorbed_ = 0;
    }

    void absorb_through(int fit_point) {
        const double inv_2h2 = 0.5 / (h_ * h_);
        const std::size_t n = pool_.size();
        for (int a = 0; a < store_->num_actions; ++a) {
            const auto& periods = store_->periods[static_cast<std::size_t>(a)];
            const auto& ys = store_->ys[static_cast<std::size_t>(a)];
            const auto& y2s = store_->y2s[static_cast<std::size_t>(a)];
            const std::size_t off = static_cast<std::size_t>(a) * n;
            int& pos = next_in_arm_[static_cast<std::size_t>(a)];
            while (pos < static_cast<int>(periods.size()) &&
                   periods[static_cast<std::size_t>(pos)] <= fit_point) {
                const auto xs = store_->context(a, pos);
                const double y = ys[static_cast<std::size_t>(pos)];
                const double y2 = y2s[static_cast<std::size_t>(pos)];
                for (std::size_t i = 0; i < n; ++i) {
                    const double w = std::exp(-sq_dist(pool_[i], xs) * inv_2h2);
                    sw_[off + i] += w;
                    swy_[off + i] += w * y;
                    swy2_[off + i] += w * y2;
                }
                ++counts_[static_cast<std::size_t>(a)];
                ++pos;
                ++absorbed_;
            }
        }
    }

    std::shared_ptr<const ArmStore> store_;
    std::vector<std::vector<double>> pool_;
    std::vector<std::pair<int, double>> h_by_fit_;
    double c2_;
    double h_ = -1.0;
    int absorbed_ = 0;
    std::vector<double> sw_, swy_, swy2_;
    std::vector<int> counts_;
    std::vector<int> next_in_arm_;
};

// Bounded neighbor heaps per (arm, pool covariate); replacement only on a
// strictly smaller distance so earlier periods win ties.
class KnnPoolWorker final : public PoolNuisanceWorker {
public:
    KnnPoolWorker(std::shared_ptr<const ArmStore> store, std::vector<std::vector<double>> pool,
                  int k, double c2)
        : store_(std::move(store)), pool_(std::move(pool)), k_(k), c2_(c2) {
        heaps_.resize(static_cast<std::size_t>(store_->num_actions) * pool_.size());
        next_in_arm_.assign(static_cast<std::size_t>(store_->num_actions), 0);
    }

    void eval(int fit_point, std::vector<double>& f_out, std::vector<double>& e_out) override {
        absorb_through(fit_point);
        f_out.assign(heaps_.size(), 0.0);
        e_out.assign(heaps_.size(), 0.0);
        for (std::size_t c = 0; c < heaps_.size(); ++c) {
            const auto& heap = heaps_[c];
            if (heap.empty()) {
                f_out[c] = 0.0;
                e_out[c] = c2_ * c2_;
                continue;
            }
            double sy = 0.0, sy2 = 0.0;
            for (const auto& e : heap) {
                sy += e.y;
                sy2 += e.y * e.y;
            }
            const double m = static_cast<double>(heap.size());
            f_out[c] = std::clamp(sy / m, -c2_, c2_);
            e_out[c] = std::clamp(sy2 / m, 0.0, c2_ * c2_);
        }
    }

private:
    struct Entry {
        double d2;
        int period;
        double y;
        bool operator<(const Entry& o) const {  // max-heap: worst neighbor on top
            return d2 != o.d2 ? d2 < o.d2 : period < o.period;
        }
    };

    void absorb_through(int fit_point) {
        const std::size_t n = pool_.size();
        for (int a = 0; a < store_->num_actions; ++a) {
            const auto& periods = store_->periods[static_cast<std::size_t>(a)];
            const auto& ys = store_->ys[static_cast<std::size_t>(a)];
            const std::size_t off = static_cast<std::size_t>(a) * n;
            int& pos = next_in_arm_[static_cast<std::size_t>(a)];
            while (pos < static_cast<int>(periods.size()) &&
                   periods[static_cast<std::size_t>(pos)] <= fit_point) {
                const auto xs = store_->context(a, pos);
                const int period = periods[static_cast<std::size_t>(pos)];
                const double y = ys[static_cast<std::size_t>(pos)];
                for (std::size_t i = 0; i < n; ++i) {
                    auto& heap = heaps_[off + i];
                    const Entry e{sq_dist(pool_[i], xs), period, y};
                    if (static_cast<int>(heap.size()) < k_) {
                        heap.push_back(e);
                        std::push_heap(heap.begin(), heap.end());
                    } else if (e.d2 < heap.front().d2) {
                        std::pop_heap(heap.begin(), heap.end());
                        heap.back() = e;
                        std::push_heap(heap.begin(), heap.end());
                    }
                }
                ++pos;
            }
        }
    }

    std::shared_ptr<const ArmStore> store_;
    std::vector<std::vector<double>> pool_;
    int k_;
    double c2_;
    std::vector<std::vector<Entry>> heaps_;
    std::vector<int> next_in_arm_;
};

// Naive worker: direct model queries per block (reference path and fallback).
class QueryPoolWorker final : public PoolNuisanceWorker {
public:
    QueryPoolWorker(const NuisanceSequence& seq, std::vector<std::vector<double>> pool,
                    int num_actions)
        : seq_(seq), pool_(std::move(pool)), num_actions_(num_actions) {}

    void eval(int fit_point, std::vector<double>& f_out, std::vector<double>& e_out) override {
        const NuisanceModel* model = nullptr;
        for (int t = 1; t <= seq_.periods(); ++t) {
            if (seq_.fit_point(t) == fit_point) {
                model = &seq_.at(t);
                break;
            }
        }
        if (model == nullptr) throw std::logic_error("QueryPoolWorker: unknown fit point");
        const std::size_t n = pool_.size();
        f_out.assign(static_cast<std::size_t>(num_actions_) * n, 0.0);
        e_out.assign(static_cast<std::size_t>(num_actions_) * n, 0.0);
        for (int a = 0; a < num_actions_; ++a) {
            const std::size_t off = static_cast<std::size_t>(a) * n;
            for (std::size_t i = 0; i < n; ++i) {
                f_out[off + i] = model->f_hat(a, pool_[i]);
                e_out[off + i] = model->e_hat(a, pool_[i]);
            }
        }
    }

private:
    const NuisanceSequence& seq_;
    std::vector<std::vector<double>> pool_;
    int num_actions_;
};

}  // namespace

std::vector<int> NuisanceSequence::fit_points() const {
    std::vector<int> pts;
    for (int t = 1; t <= periods(); ++t) {
        const int p = fit_point(t);
        if (pts.empty() || pts.back() != p) pts.push_back(p);
    }
    return pts;
}

std::unique_ptr<PoolNuisanceWorker> NuisanceSequence::make_pool_worker(
    const EvaluationCovariates& pool, int num_actions) const {
    return std::make_unique<QueryPoolWorker>(*this, pool.contexts, num_actions);
}

double median_distance_bandwidth(std::span<const std::vector<double>> contexts, int max_points) {
    const int n = std::min<int>(static_cast<int>(contexts.size()), max_points);
    if (n < 2) return 1.0;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            dists.push_back(std::sqrt(sq_dist(contexts[static_cast<std::size_t>(i)],
                                              contexts[static_cast<std::size_t>(j)])));
        }
    }
    return std::max(median(std::move(dists)), 1e-8);
}

namespace {

class FittedSequence final : public NuisanceSequence {
public:
    FittedSequence(const HistoricalLog& log, const NuisanceConfig& cfg)
        : cfg_(cfg), periods_(log.size()), store_(std::make_shared<ArmStore>(log)) {
        if (cfg_.refit_every < 1) throw std::invalid_argument("refit_every must be >= 1");
        std::vector<std::vector<double>> contexts;
        contexts.reserve(log.samples.size());
        for (const auto& s : log.samples) contexts.push_back(s.x);

        for (int p = 0; p <= periods_ - 1; p += cfg_.refit_every) {
            double h = cfg_.bandwidth;
            if (cfg_.method == NuisanceConfig::Method::nw && h <= 0.0) {
                h = median_distance_bandwidth(
                    std::span<const std::vector<double>>(contexts.data(),
                                                         static_cast<std::size_t>(p)),
                    cfg_.bandwidth_points);
            }
            h_by_fit_.emplace_back(p, h);
            if (cfg_.method == NuisanceConfig::Method::nw) {
                models_.push_back(std::make_unique<NwModel>(store_, p, h, cfg_.c2));
            } else {
                models_.push_back(std::make_unique<KnnModel>(store_, p, cfg_.k, cfg_.c2));
            }
        }
    }

    int periods() const override { return periods_; }
    const NuisanceModel& at(int t) const override {
        check_t(t);
        return *models_[static_cast<std::size_t>((t - 1) / cfg_.refit_every)];
    }
    int fit_point(int t) const override {
        check_t(t);
        return ((t - 1) / cfg_.refit_every) * cfg_.refit_every;
    }

    std::unique_ptr<PoolNuisanceWorker> make_pool_worker(const EvaluationCovariates& pool,
                                                         int) const override {
        if (cfg_.method == NuisanceConfig::Method::nw) {
            return std::make_unique<NwPoolWorker>(store_, pool.contexts, h_by_fit_, cfg_.c2);
        }
        return std::make_unique<KnnPoolWorker>(store_, pool.contexts, cfg_.k, cfg_.c2);
    }

private:
    void check_t(int t) const {
        if (t < 1 || t > periods_) throw std::out_of_range("NuisanceSequence: period index");
    }

    NuisanceConfig cfg_;
    int periods_;
    std::shared_ptr<const ArmStore> store_;
    std::vector<std::unique_ptr<NuisanceModel>> models_;
    std::vector<std::pair<int, double>> h_by_fit_;
};

class OracleModel final : public NuisanceModel {
public:
    OracleModel(const BanditEnvironment& env) : env_(env) {}
    double f_hat(int a, std::span<const double> x) const override { return env_.f_star(a, x); }
    double e_hat(int a, std::span<const double> x) const override { return env_.e_star(a, x); }
    int fitted_through() const override { return 0; }
    double bound() const override { return env_.reward_bound(); }

private:
    const BanditEnvironment& env_;
};

class SingleModelSequence final : public NuisanceSequence {
public:
    SingleModelSequence(std::unique_ptr<NuisanceModel> model, int periods)
        : model_(std::move(model)), periods_(periods) {}
    int periods() const override { return periods_; }
    const NuisanceModel& at(int) const override { return *model_; }
    int fit_point(int) const override { return 0; }

private:
    std::unique_ptr<NuisanceModel> model_;
    int periods_;
};

class ConstantModel final : public NuisanceModel {
public:
    ConstantModel(double f0, double e0, double c2) : f0_(f0), e0_(e0), c2_(c2) {}
    double f_hat(int, std::span<const double>) const override { return f0_; }
    double e_hat(int, std::span<const double>) const override { return e0_; }
    int fitted_through() const override { return 0; }
    double bound() const override { return c2_; }

private:
    double f0_, e0_, c2_;
};

class ZeroFModel final : public NuisanceModel {
public:
    explicit ZeroFModel(const NuisanceModel& inner) : inner_(inner) {}
    double f_hat(int, std::span<const double>) const override { return 0.0; }
    double e_hat(int a, std::span<const double> x) const override { return inner_.e_hat(a, x); }
    int fitted_through() const override { return inner_.fitted_through(); }
    double bound() const override { return inner_.bound(); }

private:
    const NuisanceModel& inner_;
};

class ZeroFWorker final : public PoolNuisanceWorker {
public:
    explicit ZeroFWorker(std::unique_ptr<PoolNuisanceWorker> inner) : inner_(std::move(inner)) {}
    void eval(int fit_point, std::vector<double>& f_out, std::vector<double>& e_out) override {
        inner_->eval(fit_point, f_out, e_out);
        std::fill(f_out.begin(), f_out.end(), 0.0);
    }

private:
    std::unique_ptr<PoolNuisanceWorker> inner_;
};

class ZeroFSequence final : public NuisanceSequence {
public:
    explicit ZeroFSequence(std::shared_ptr<const NuisanceSequence> inner)
        : inner_(std::move(inner)) {
        for (int t = 1; t <= inner_->periods(); ++t) {
            // One wrapper per distinct model block.
            if (wrappers_.empty() || inner_->fit_point(t) != wrapped_points_.back()) {
                wrappers_.push_back(std::make_unique<ZeroFModel>(inner_->at(t)));
                wrapped_points_.push_back(inner_->fit_point(t));
            }
        }
    }
    int periods() const override { return inner_->periods(); }
    const NuisanceModel& at(int t) const override {
        const int p = inner_->fit_point(t);
        for (std::size_t i = 0; i < wrapped_points_.size(); ++i) {
            if (wrapped_points_[i] == p) return *wrappers_[i];
        }
        throw std::logic_error("ZeroFSequence: unknown fit point");
    }
    int fit_point(int t) const override { return inner_->fit_point(t); }
    std::unique_ptr<PoolNuisanceWorker> make_pool_worker(const EvaluationCovariates& pool,
                                                         int num_actions) const override {
        return std::make_unique<ZeroFWorker>(inner_->make_pool_worker(pool, num_actions));
    }

private:
    std::shared_ptr<const NuisanceSequence> inner_;
    std::vector<std::unique_ptr<ZeroFModel>> wrappers_;
    std::vector<int> wrapped_points_;
};

}  // namespace

std::unique_ptr<NuisanceSequence> sequential_nuisance(const HistoricalLog& log,
                                                      const NuisanceConfig& cfg) {
    return std::make_unique<FittedSequence>(log, cfg);
}

std::unique_ptr<NuisanceModel> nw_fit(const HistoricalLog& log, int fit_through, double bandwidth,
                                      double c2) {
    auto store = std::make_shared<ArmStore>(log);
    double h = bandwidth;
    if (h <= 0.0) {
        std::vector<std::vector<double>> contexts;
        for (const auto& s : log.samples) {
            if (s.t <= fit_through) contexts.push_back(s.x);
        }
        h = median_distance_bandwidth(contexts, 200);
    }
    return std::make_unique<NwModel>(std::move(store), fit_through, h, c2);
}

std::unique_ptr<NuisanceModel> knn_fit(const HistoricalLog& log, int fit_through, int k,
                                       double c2) {
    return std::make_unique<KnnModel>(std::make_shared<ArmStore>(log), fit_through, k, c2);
}

std::unique_ptr<NuisanceSequence> oracle_nuisance(const BanditEnvironment& env, int periods) {
    return std::make_unique<SingleModelSequence>(std::make_unique<OracleModel>(env), periods);
}

std::unique_ptr<NuisanceSequence> constant_nuisance(double f0, double e0, double c2, int periods) {
    return std::make_unique<SingleModelSequence>(std::make_unique<ConstantModel>(f0, e0, c2),
                                                 periods);
}

std::unique_ptr<NuisanceSequence> zero_f_view(std::shared_ptr<const NuisanceSequence> inner) {
    return std::make_unique<ZeroFSequence>(std::move(inner));
}

}  // namespace ope
