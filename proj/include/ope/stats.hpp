#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ope {

double normal_cdf(double z);
// Standard-normal quantile, |error| well below 1e-8 over (0, 1).
double normal_quantile(double p);

// Upper-tail probabilities.
double chi_squared_sf(double x, int df);
double fisher_f_sf(double f, int df1, int df2);
// P(Binomial(n, p) >= k).
double binomial_sf_geq(int k, int n, double p);
// One-sided sign test: p-value of observing >= wins successes out of n fair flips.
double sign_test_p(int wins, int n);

// Anderson-Darling checks. `a2` is the raw statistic; for the composite
// normality test (mean and sd estimated) `p` follows the D'Agostino-Stephens
// approximation on the small-sample-corrected statistic.
struct AdResult {
    double a2 = 0.0;
    double a2_corrected = 0.0;
    double p = 0.0;
};
AdResult anderson_darling_normality(std::vector<double> xs);
// Fully specified N(0,1) null; pass/fail against asymptotic critical values.
double anderson_darling_standard_normal(std::vector<double> xs);

struct KsResult {
    double d = 0.0;
    double p = 0.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

struct ChiSquareResult {
    double stat = 0.0;
    int df = 0;
    double p = 0.0;
};
// Goodness of fit of observed counts against expected cell probabilities.
ChiSquareResult chi_square_gof(std::span<const long long> counts,
                               std::span<const double> probs);

// Streaming mean/variance (Welford).
struct OnlineStats {
    long long n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double sd() const;
};

double median(std::vector<double> xs);

// Shortest round-trip decimal rendering (std::to_chars).
std::string format_double(double v);

}  // namespace ope
