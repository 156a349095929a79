#pragma once

#include <span>
#include <vector>

namespace entryfx::stats {

/// Empirical quantile with linear interpolation between closest ranks
/// (Hyndman-Fan type 7). `values` need not be sorted. Throws on empty input.
double quantile_linear(std::span<const double> values, double p);

double median(std::span<const double> values);
double mean(std::span<const double> values);

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_sd(std::span<const double> values);

double normal_quantile(double p);
double normal_cdf(double x);
double student_t_quantile(double p, double df);
double student_t_cdf(double x, double df);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), with the
/// Stephens small-sample correction to the asymptotic Kolmogorov law.
KsResult ks_uniform(std::span<const double> sample);

}  // namespace entryfx::stats
