#include "crplus/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "crplus/numerics.hpp"

namespace crplus {

void ForecastConfig::validate() const {
    if (!(inflation >= 0.0) || !std::isfinite(inflation))
        throw std::invalid_argument("forecast: inflation d must be >= 0");
    if (horizon <= last_year)
        throw std::invalid_argument("forecast: horizon " + std::to_string(horizon) + " must exceed the last year " +
                                    std::to_string(last_year));
    for (const auto& [key, m] : population)
        if (!(m >= 0.0) || !std::isfinite(m))
            throw std::invalid_argument("forecast: negative exposure in population path for year " +
                                        std::to_string(key.first));
}

double variance_multiplier(double d, int t, int last_year) {
    if (t <= last_year)
        return 1.0;
    const double f = 1.0 + d * static_cast<double>(t - last_year);
    return f * f;
}

double RateForecast::rate_quantile(double p) const { return quantile(counts, p) / exposure; }

RateForecast forecast_death_rate(int a, Gender g, int t, const ParamVector& params, double exposure,
                                 const ForecastConfig& cfg) {
    cfg.validate();
    if (t > cfg.horizon)
        throw std::invalid_argument("forecast: year " + std::to_string(t) + " is past the horizon " +
                                    std::to_string(cfg.horizon));
    if (!(exposure > 0.0))
        throw std::invalid_argument("forecast: exposure must be positive");
    const TrendParams& trend = params.trend;
    const double q = death_prob(a, g, t, trend);
    const auto portfolio =
        homogeneous_portfolio(exposure, q, cause_weights(a, g, t, trend), LatticeSeverity::point(1.0, 1));
    const double mult = variance_multiplier(cfg.inflation, t, cfg.last_year);
    std::vector<RiskFactorSpec> factors;
    for (std::size_t k = 1; k <= trend.risk_factors; ++k)
        factors.push_back({static_cast<int>(k), params.sigma_sq.at(k - 1) * mult, {}});
    RateForecast out;
    out.year = t;
    out.exposure = exposure;
    out.counts = aggregate_portfolio(portfolio, factors, 1.0, cfg.panjer);
    return out;
}

double forecast_exposure(const CohortPanel& panel, int a, Gender g, int t, const ForecastConfig& cfg) {
    const auto it = cfg.population.find({t, cell_index(a, g)});
    if (it != cfg.population.end())
        return it->second;
    const auto& years = panel.years();
    const auto pos = std::find(years.begin(), years.end(), cfg.last_year);
    if (pos == years.end())
        throw std::invalid_argument("forecast: panel has no year " + std::to_string(cfg.last_year));
    return static_cast<double>(panel.exposure(static_cast<std::size_t>(pos - years.begin()), a, g));
}

RateForecast forecast_death_rate(const CohortPanel& panel, int a, Gender g, int t, const ParamVector& params,
                                 const ForecastConfig& cfg) {
    return forecast_death_rate(a, g, t, params, forecast_exposure(panel, a, g, t, cfg), cfg);
}

std::vector<ForecastBand> forecast_bands(const CohortPanel& panel, int a, Gender g, std::span<const int> years,
                                         std::span<const ParamVector> samples, const ForecastConfig& cfg,
                                         std::span<const double> probs) {
    if (samples.empty())
        throw std::invalid_argument("forecast_bands: no parameter samples");
    cfg.validate();
    std::vector<ForecastBand> bands(years.size());
    const std::vector<double> weights(samples.size(), 1.0 / static_cast<double>(samples.size()));
    for (std::size_t y = 0; y < years.size(); ++y) {
        const int t = years[y];
        const double m = forecast_exposure(panel, a, g, t, cfg);
        std::vector<LossDistribution> laws(samples.size());
        numerics::parallel_for(samples.size(), numerics::worker_count(cfg.threads), [&](std::size_t h) {
            laws[h] = forecast_death_rate(a, g, t, samples[h], m, cfg).counts;
        });
        const LossDistribution pooled = laws.size() == 1 ? laws.front() : mix(laws, weights);
        ForecastBand& band = bands[y];
        band.year = t;
        band.exposure = m;
        band.probs.assign(probs.begin(), probs.end());
        for (double p : probs)
            band.rates.push_back(quantile(pooled, p) / m);
        band.mean_rate = pooled.mean() / m;
    }
    return bands;
}

std::vector<ForecastBand> forecast_bands(const CohortPanel& panel, int a, Gender g, std::span<const int> years,
                                         const McmcChain& chain, const ForecastConfig& cfg,
                                         std::span<const double> probs) {
    if (chain.empty())
        throw std::invalid_argument("forecast_bands: empty chain");
    std::vector<ParamVector> samples;
    if (!cfg.include_parameter_uncertainty) {
        samples.push_back(chain.mean());
    } else {
        const std::size_t n = chain.samples.size();
        const std::size_t keep = cfg.max_samples == 0 ? n : std::min(n, cfg.max_samples);
        for (std::size_t i = 0; i < keep; ++i)
            samples.push_back(chain.at(i * n / keep));
    }
    return forecast_bands(panel, a, g, years, samples, cfg, probs);
}

double cohort_death_prob(int age, Gender g, int year, const TrendParams& params, int terminal_age) {
    if (age >= terminal_age)
        return 1.0;
    return death_prob_at_age(age, g, year, params);
}

double life_expectancy(int age, int year, const DeathProbFn& q, int terminal_age) {
    if (age >= terminal_age)
        return 0.0;
    // Stops once the survival probability can no longer move the sum.
    double e = 0.0, survival = 1.0;
    for (int j = 0; age + j < terminal_age; ++j) {
        const double qj = q(age + j, year + j);
        if (!(qj >= 0.0 && qj <= 1.0))
            throw std::invalid_argument("life_expectancy: q(" + std::to_string(age + j) + ", " +
                                        std::to_string(year + j) + ") outside [0, 1]");
        survival *= 1.0 - qj;
        if (survival <= 0.0 || survival < 1e-18 * e)
            break;
        e += survival;
    }
    return e;
}

double life_expectancy(int age, Gender g, int year, const TrendParams& params, int terminal_age) {
    return life_expectancy(
        age, year, [&](int x, int t) { return cohort_death_prob(x, g, t, params, terminal_age); }, terminal_age);
}

double beta_mixing_variance(double q, double sigma1_sq) {
    if (!(q > 0.0 && q < 1.0))
        throw std::invalid_argument("beta_mixing_variance: q must lie in (0, 1)");
    if (!(sigma1_sq > 0.0))
        throw std::invalid_argument("beta_mixing_variance: sigma1_sq must be positive");
    return q * (1.0 - q) / (1.0 / sigma1_sq + 1.0);
}

InflationFit estimate_inflation(const CohortPanel& panel, const ParamVector& params, int last_fit_year,
                                double d_max) {
    if (!(d_max > 0.0))
        throw std::invalid_argument("estimate_inflation: d_max must be positive");
    const auto& years = panel.years();
    if (std::none_of(years.begin(), years.end(), [&](int y) { return y > last_fit_year; }))
        throw std::invalid_argument("estimate_inflation: panel has no year after " + std::to_string(last_fit_year));
    const LikelihoodEvaluator ll(panel);
    std::vector<double> mult(years.size());
    auto negative_ll = [&](double d) {
        for (std::size_t t = 0; t < years.size(); ++t)
            mult[t] = variance_multiplier(d, years[t], last_fit_year);
        return -ll(params, mult);
    };
    const auto [d, value] = boost::math::tools::brent_find_minima(negative_ll, 0.0, d_max, 40);
    // the interval end points are not visited by Brent's method
    InflationFit best{d, -value};
    for (double edge : {0.0, d_max}) {
        const double l = -negative_ll(edge);
        if (l > best.log_likelihood)
            best = {edge, l};
    }
    return best;
}

} // namespace crplus
