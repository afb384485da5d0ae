#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the Panjer engine; counts are evaluated from closed-form pmfs and
// compound laws by explicit convolution powers.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

inline std::vector<double> poisson_pmf(double lambda, std::size_t n_max) {
    std::vector<double> p(n_max + 1, 0.0);
    for (std::size_t n = 0; n <= n_max; ++n)
        p[n] = lambda > 0.0 ? std::exp(-lambda + n * std::log(lambda) - std::lgamma(n + 1.0)) : (n == 0 ? 1.0 : 0.0);
    return p;
}

inline std::vector<double> binomial_pmf(std::size_t trials, double q) {
    std::vector<double> p(trials + 1, 0.0);
    for (std::size_t n = 0; n <= trials; ++n)
        p[n] = std::exp(std::lgamma(trials + 1.0) - std::lgamma(n + 1.0) - std::lgamma(trials - n + 1.0) +
                        n * std::log(q) + (trials - n) * std::log1p(-q));
    return p;
}

// Number of failures before r successes.
inline std::vector<double> negative_binomial_pmf(double r, double p, std::size_t n_max) {
    std::vector<double> out(n_max + 1, 0.0);
    for (std::size_t n = 0; n <= n_max; ++n)
        out[n] = std::exp(std::lgamma(r + n) - std::lgamma(r) - std::lgamma(n + 1.0) + r * std::log(p) +
                          n * std::log1p(-p));
    return out;
}

inline std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty())
        return {};
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            out[i + j] += a[i] * b[j];
    return out;
}

inline std::vector<double> truncate(std::vector<double> v, std::size_t n_max) {
    if (v.size() > n_max + 1)
        v.resize(n_max + 1);
    return v;
}

// Compound law Σ_{j <= N} Y_j with P(N = n) = counts[n], by explicit
// convolution powers of the severity, truncated at n_max.
inline std::vector<double> compound_by_powers(const std::vector<double>& counts, const std::vector<double>& severity,
                                              std::size_t n_max) {
    std::vector<double> out(n_max + 1, 0.0);
    std::vector<double> power{1.0};
    for (std::size_t n = 0; n < counts.size(); ++n) {
        for (std::size_t i = 0; i < power.size() && i <= n_max; ++i)
            out[i] += counts[n] * power[i];
        power = truncate(convolve(power, severity), n_max);
    }
    return out;
}

inline double tv(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    const std::size_t n = std::max(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double x = i < a.size() ? a[i] : 0.0;
        const double y = i < b.size() ? b[i] : 0.0;
        s += std::abs(x - y);
    }
    return 0.5 * s;
}

inline double pmf_mean(const std::vector<double>& p) {
    double m = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        m += i * p[i];
    return m;
}

} // namespace oracle
