#include "entryfx/stats.hpp"

#include "entryfx/error.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace entryfx::stats {

double quantile_linear(std::span<const double> values, double p) {
    if (values.empty()) {
        throw ValidationError("empty_sample", "quantile of an empty sample");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::span<const double> values) { return quantile_linear(values, 0.5); }

double mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_sd(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<>(), p);
}

double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<>(), x); }

double student_t_quantile(double p, double df) {
    return boost::math::quantile(boost::math::students_t_distribution<>(df), p);
}

double student_t_cdf(double x, double df) {
    return boost::math::cdf(boost::math::students_t_distribution<>(df), x);
}

KsResult ks_uniform(std::span<const double> sample) {
    if (sample.empty()) throw ValidationError("empty_sample", "KS test on an empty sample");
    std::vector<double> x(sample.begin(), sample.end());
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = std::clamp(x[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 0.2) return {d, 1.0};
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        q += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-12) break;
    }
    return {d, std::clamp(q, 0.0, 1.0)};
}

}  // namespace entryfx::stats
