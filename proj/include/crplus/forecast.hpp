#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "crplus/aggregation.hpp"
#include "crplus/domain.hpp"
#include "crplus/estimation.hpp"
#include "crplus/trends.hpp"

namespace crplus {

// Age at which death is certain when closing a life table.
inline constexpr int kTerminalAge = 121;

struct ForecastConfig {
    int last_year = 0;      // T, the last observed year
    int horizon = 0;        // S > T, the last year that may be forecast
    double inflation = 0.0; // d in σ̃²(t) = σ² (1 + d (t - T))²
    // Exposure m_{a,g}(t) keyed by (year, cell_index). Cells and years not
    // listed keep the exposure of year T.
    std::map<std::pair<int, std::size_t>, double> population;
    // Pool over chain samples; otherwise use the chain mean only.
    bool include_parameter_uncertainty = true;
    // Chain samples used for bands, evenly spaced; 0 keeps all of them.
    std::size_t max_samples = 1000;
    PanjerOptions panjer;
    unsigned threads = 0;

    // Throws std::invalid_argument unless d >= 0 and horizon > T.
    void validate() const;
};

// (1 + d (t - T))² for t > T, 1 otherwise.
double variance_multiplier(double d, int t, int last_year);

// One distribution per year: counts n with P(rate = n / exposure).
struct RateForecast {
    int year = 0;
    double exposure = 0.0;
    LossDistribution counts;

    double rate_quantile(double p) const;
    double mean_rate() const { return counts.mean() / exposure; }
};

// Deaths of one cell of `exposure` heads in year t, with the risk factor
// variances inflated for t > T. Throws std::invalid_argument when t is past
// the horizon.
RateForecast forecast_death_rate(int a, Gender g, int t, const ParamVector& params, double exposure,
                                 const ForecastConfig& cfg);
// Exposure taken from the configured population path or m_{a,g}(T) of `panel`.
RateForecast forecast_death_rate(const CohortPanel& panel, int a, Gender g, int t, const ParamVector& params,
                                 const ForecastConfig& cfg);
double forecast_exposure(const CohortPanel& panel, int a, Gender g, int t, const ForecastConfig& cfg);

struct ForecastBand {
    int year = 0;
    double exposure = 0.0;
    std::vector<double> probs;
    std::vector<double> rates; // rate quantiles at probs
    double mean_rate = 0.0;
};

// Quantiles of the equal-weight mixture of per-sample count laws.
// Throws std::invalid_argument for an empty chain.
std::vector<ForecastBand> forecast_bands(const CohortPanel& panel, int a, Gender g, std::span<const int> years,
                                         const McmcChain& chain, const ForecastConfig& cfg,
                                         std::span<const double> probs);
// Same, for an explicit list of parameter samples.
std::vector<ForecastBand> forecast_bands(const CohortPanel& panel, int a, Gender g, std::span<const int> years,
                                         std::span<const ParamVector> samples, const ForecastConfig& cfg,
                                         std::span<const double> probs);

// q as a function of (exact age, calendar year).
using DeathProbFn = std::function<double(int age, int year)>;

// q from the trend family for the cohort aged `age` in `year`, closed with
// q = 1 from terminal_age on.
double cohort_death_prob(int age, Gender g, int year, const TrendParams& params, int terminal_age = kTerminalAge);

// Curtate expectation Σ_{k>=1} Π_{j<k} (1 - q(age + j, year + j)), with q = 1
// from terminal_age on.
double life_expectancy(int age, int year, const DeathProbFn& q, int terminal_age = kTerminalAge);
double life_expectancy(int age, Gender g, int year, const TrendParams& params, int terminal_age = kTerminalAge);

// Variance q (1 - q) / (1/σ²_1 + 1) of the beta-distributed share Q for which
// Q Λ_1 is again gamma with mean one. Throws for q outside (0, 1) or σ² <= 0.
double beta_mixing_variance(double q, double sigma1_sq);

struct InflationFit {
    double d = 0.0;
    double log_likelihood = 0.0;
};

// Maximises the likelihood over d in [0, d_max] with every other parameter
// fixed; years after `last_fit_year` get the inflated variances.
InflationFit estimate_inflation(const CohortPanel& panel, const ParamVector& params, int last_fit_year,
                                double d_max = 10.0);

} // namespace crplus
