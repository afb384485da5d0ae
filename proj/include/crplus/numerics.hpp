#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace crplus::numerics {

// Thread-safe log|Γ(x)|.
double log_gamma(double x);
double digamma(double x);

// Gamma(shape, scale) distribution function (regularized lower incomplete gamma).
double gamma_cdf(double x, double shape, double scale);

double normal_cdf(double x);
double normal_quantile(double p);
double students_t_sf(double t, double dof); // P(T > t)
double chi_squared_sf(double x, double dof); // P(X > x)

// Asymptotic Kolmogorov survival function Q(x) = 2 Σ (-1)^{j-1} exp(-2 j² x²).
double kolmogorov_sf(double x);

// Sum with Neumaier compensation.
double stable_sum(std::span<const double> values);

// Quantile of an empirical sample, type-7 interpolation (the R default).
double sample_quantile(std::vector<double> sample, double p);

double mean(std::span<const double> xs);
// Unbiased sample variance (divisor n-1).
double sample_variance(std::span<const double> xs);
double sample_covariance(std::span<const double> xs, std::span<const double> ys);

// Engine for one logical stream, derived from (seed, stream ids...).
std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Worker threads to use: CRPLUS_THREADS overrides, otherwise
// hardware_concurrency (at least 1). `requested` > 0 wins over both.
unsigned worker_count(unsigned requested = 0);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
// exactly once; results must be written to per-index storage.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

} // namespace crplus::numerics
