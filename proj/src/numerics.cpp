#include "crplus/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace crplus::numerics {

double log_gamma(double x) {
#if defined(__GLIBC__)
    int sign = 0;
    return ::lgamma_r(x, &sign);
#else
    return boost::math::lgamma(x);
#endif
}

double digamma(double x) { return boost::math::digamma(x); }

double gamma_cdf(double x, double shape, double scale) {
    if (x <= 0.0)
        return 0.0;
    if (std::isinf(x))
        return 1.0;
    return boost::math::gamma_p(shape, x / scale);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

double students_t_sf(double t, double dof) {
    return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(dof), t));
}

double chi_squared_sf(double x, double dof) {
    if (x <= 0.0)
        return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(dof), x));
}

double kolmogorov_sf(double x) {
    if (x <= 0.0)
        return 1.0;
    if (x < 0.2) {
        // Jacobi-transformed series, accurate where the alternating one is slow.
        // Q = 1 - sqrt(2π)/x Σ exp(-(2j-1)² π² / (8x²))
        double s = 0.0;
        const double c = M_PI * M_PI / (8.0 * x * x);
        for (int j = 1; j <= 20; ++j) {
            const double term = std::exp(-(2.0 * j - 1) * (2.0 * j - 1) * c);
            s += term;
            if (term < 1e-300)
                break;
        }
        return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / x * s, 0.0, 1.0);
    }
    double s = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * x * x);
        s += (j % 2 == 1 ? term : -term);
        if (term < 1e-17)
            break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

double stable_sum(std::span<const double> values) {
    double sum = 0.0;
    double c = 0.0;
    for (double v : values) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            c += (sum - t) + v;
        else
            c += (v - t) + sum;
        sum = t;
    }
    return sum + c;
}

double sample_quantile(std::vector<double> sample, double p) {
    if (sample.empty())
        throw std::invalid_argument("sample_quantile: empty sample");
    std::sort(sample.begin(), sample.end());
    const double h = (static_cast<double>(sample.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    return sample[lo] + (h - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

double mean(std::span<const double> xs) {
    if (xs.empty())
        return 0.0;
    double s = 0.0;
    for (double x : xs)
        s += x;
    return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) { return sample_covariance(xs, xs); }

double sample_covariance(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("sample_covariance: need two equally long series of length >= 2");
    const double mx = mean(xs);
    const double my = mean(ys);
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        s += (xs[i] - mx) * (ys[i] - my);
    return s / static_cast<double>(xs.size() - 1);
}

std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

unsigned worker_count(unsigned requested) {
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("CRPLUS_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0)
                return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace crplus::numerics
