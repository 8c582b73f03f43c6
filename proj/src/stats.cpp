#include "ope/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

namespace ope {

namespace {
const boost::math::normal_distribution<double> kStdNormal(0.0, 1.0);
}

double normal_cdf(double z) { return boost::math::cdf(kStdNormal, z); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
    }
    return boost::math::quantile(kStdNormal, p);
}

double chi_squared_sf(double x, int df) {
    if (df < 1) throw std::invalid_argument("chi_squared_sf: df < 1");
    if (x <= 0.0) return 1.0;
    boost::math::chi_squared_distribution<double> dist(df);
    return boost::math::cdf(boost::math::complement(dist, x));
}

double fisher_f_sf(double f, int df1, int df2) {
    if (df1 < 1 || df2 < 1) throw std::invalid_argument("fisher_f_sf: df < 1");
    if (f <= 0.0) return 1.0;
    boost::math::fisher_f_distribution<double> dist(df1, df2);
    return boost::math::cdf(boost::math::complement(dist, f));
}

double binomial_sf_geq(int k, int n, double p) {
    if (k <= 0) return 1.0;
    if (k > n) return 0.0;
    boost::math::binomial_distribution<double> dist(n, p);
    // P(X >= k) = 1 - P(X <= k-1)
    return boost::math::cdf(boost::math::complement(dist, k - 1));
}

double sign_test_p(int wins, int n) { return binomial_sf_geq(wins, n, 0.5); }

namespace {

// Raw A^2 against a vector of null CDF values at the sorted sample.
double ad_statistic(const std::vector<double>& z) {
    const std::size_t n = z.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double zi = std::clamp(z[i], 1e-300, 1.0 - 1e-16);
        const double zr = std::clamp(z[n - 1 - i], 1e-300, 1.0 - 1e-16);
        s += (2.0 * static_cast<double>(i) + 1.0) * (std::log(zi) + std::log1p(-zr));
    }
    const double dn = static_cast<double>(n);
    return -dn - s / dn;
}

}  // namespace

AdResult anderson_darling_normality(std::vector<double> xs) {
    const std::size_t n = xs.size();
    if (n < 8) throw std::invalid_argument("anderson_darling_normality: need n >= 8");
    std::sort(xs.begin(), xs.end());
    OnlineStats st;
    for (double x : xs) st.push(x);
    const double mu = st.mean;
    const double sd = st.sd();
    if (!(sd > 0.0)) throw std::invalid_argument("anderson_darling_normality: zero variance");

    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = normal_cdf((xs[i] - mu) / sd);

    AdResult r;
    r.a2 = ad_statistic(z);
    const double dn = static_cast<double>(n);
    r.a2_corrected = r.a2 * (1.0 + 0.75 / dn + 2.25 / (dn * dn));
    // D'Agostino & Stephens (1986) p-value approximation, composite normal null.
    const double a = r.a2_corrected;
    if (a < 0.2) {
        r.p = 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
    } else if (a < 0.34) {
        r.p = 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
    } else if (a < 0.6) {
        r.p = std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
    } else if (a < 153.467) {
        r.p = std::exp(1.2937 - 5.709 * a + 0.0186 * a * a);
    } else {
        r.p = 0.0;
    }
    r.p = std::clamp(r.p, 0.0, 1.0);
    return r;
}

double anderson_darling_standard_normal(std::vector<double> xs) {
    if (xs.size() < 8) {
        throw std::invalid_argument("anderson_darling_standard_normal: need n >= 8");
    }
    std::sort(xs.begin(), xs.end());
    std::vector<double> z(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) z[i] = normal_cdf(xs[i]);
    return ad_statistic(z);
}

namespace {

// Asymptotic Kolmogorov tail Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_q(double lambda) {
    if (lambda < 1e-8) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    KsResult r;
    r.d = d;
    const double ne = std::sqrt(na * nb / (na + nb));
    r.p = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    return r;
}

ChiSquareResult chi_square_gof(std::span<const long long> counts,
                               std::span<const double> probs) {
    if (counts.size() != probs.size() || counts.empty()) {
        throw std::invalid_argument("chi_square_gof: size mismatch");
    }
    long long total = 0;
    for (long long c : counts) total += c;
    if (total <= 0) throw std::invalid_argument("chi_square_gof: no observations");
    ChiSquareResult r;
    r.df = static_cast<int>(counts.size()) - 1;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double expected = probs[i] * static_cast<double>(total);
        if (expected <= 0.0) throw std::invalid_argument("chi_square_gof: zero expected cell");
        const double diff = static_cast<double>(counts[i]) - expected;
        r.stat += diff * diff / expected;
    }
    r.p = chi_squared_sf(r.stat, r.df);
    return r;
}

double OnlineStats::sd() const { return std::sqrt(variance()); }

double median(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("median: empty");
    const std::size_t mid = xs.size() / 2;
    std::nth_element(xs.begin(), xs.begin() + mid, xs.end());
    double hi = xs[mid];
    if (xs.size() % 2 == 1) return hi;
    std::nth_element(xs.begin(), xs.begin() + mid - 1, xs.begin() + mid);
    return 0.5 * (xs[mid - 1] + hi);
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

}  // namespace ope
