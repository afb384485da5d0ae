#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "crplus/forecast.hpp"
#include "crplus/mc_oracle.hpp"
#include "crplus/numerics.hpp"
#include "oracles.hpp"

using namespace crplus;

namespace {

ParamVector cell_params(std::size_t K, double alpha, double beta = 0.0) {
    ParamVector p;
    p.trend = TrendParams::defaults(AgeGroups::parse("60-69,70+"), K, 2010);
    p.trend.alpha.assign(p.trend.cells(), alpha);
    p.trend.beta.assign(p.trend.cells(), beta);
    for (std::size_t i = 0; i < p.trend.u.size(); ++i)
        p.trend.u[i] = 0.3 * static_cast<double>(i % (K + 1));
    p.sigma_sq.assign(K, 0.05);
    return p;
}

ForecastConfig config(double d) {
    ForecastConfig cfg;
    cfg.last_year = 2010;
    cfg.horizon = 2040;
    cfg.inflation = d;
    return cfg;
}

} // namespace

TEST_CASE("variance multiplier") {
    CHECK(variance_multiplier(0.22, 2010, 2010) == 1.0);
    CHECK(variance_multiplier(0.22, 2000, 2010) == 1.0);
    CHECK(variance_multiplier(0.22, 2013, 2010) == doctest::Approx(1.66 * 1.66).epsilon(1e-14));
    CHECK(variance_multiplier(0.0, 2030, 2010) == 1.0);
}

TEST_CASE("forecast without inflation is the in-sample engine output") {
    const auto p = cell_params(2, -3.5, -0.4);
    const auto f = forecast_death_rate(1, Gender::male, 2011, p, 40000, config(0.0));
    const double q = death_prob(1, Gender::male, 2011, p.trend);
    const auto portfolio = homogeneous_portfolio(40000, q, cause_weights(1, Gender::male, 2011, p.trend),
                                                 LatticeSeverity::point(1.0, 1));
    const std::vector<RiskFactorSpec> factors{{1, 0.05, {}}, {2, 0.05, {}}};
    CHECK(f.counts.pmf == aggregate_portfolio(portfolio, factors, 1.0).pmf);
    CHECK(f.exposure == 40000);
    CHECK(f.rate_quantile(0.5) == quantile(f.counts, 0.5) / 40000);
}

TEST_CASE("inflated variances enter per factor") {
    const auto p = cell_params(2, -3.5);
    const double m = 40000;
    for (int t : {2011, 2015, 2030}) {
        const auto f = forecast_death_rate(0, Gender::female, t, p, m, config(0.22));
        const double q = death_prob(0, Gender::female, t, p.trend);
        const auto w = cause_weights(0, Gender::female, t, p.trend);
        const double mult = std::pow(1.0 + 0.22 * (t - 2010), 2);
        double var = m * q;
        for (std::size_t k = 1; k <= 2; ++k)
            var += 0.05 * mult * std::pow(m * q * w[k], 2);
        CHECK(f.counts.mass() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(f.counts.mean() == doctest::Approx(m * q).epsilon(1e-9));
        CHECK(f.counts.variance() == doctest::Approx(var).epsilon(1e-7));
    }
}

TEST_CASE("no common factors: Poisson counts") {
    const auto p = cell_params(0, -4.0);
    const auto f = forecast_death_rate(0, Gender::male, 2020, p, 5000, config(0.5));
    const double q = death_prob(0, Gender::male, 2020, p.trend);
    const auto ref = oracle::poisson_pmf(5000 * q, f.counts.pmf.size() - 1);
    for (std::size_t n = 0; n < ref.size(); ++n)
        CHECK(f.counts.pmf[n] == doctest::Approx(ref[n]).epsilon(1e-9));
}

TEST_CASE("forecast configuration errors") {
    const auto p = cell_params(1, -3.0);
    CHECK_THROWS_AS(forecast_death_rate(0, Gender::male, 2041, p, 100, config(0.1)), std::invalid_argument);
    auto bad = config(-0.1);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = config(0.1);
    bad.horizon = 2010;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("uncertainty widens with the horizon when d > 0") {
    // flat mortality level so that only the inflation moves the spread
    const auto p = cell_params(2, -3.0);
    double previous = 0.0;
    for (int t = 2011; t <= 2040; ++t) {
        const auto f = forecast_death_rate(1, Gender::female, t, p, 20000, config(0.1));
        const double spread = quantile(f.counts, 0.99) - quantile(f.counts, 0.01);
        CHECK(spread >= previous);
        previous = spread;
    }
}

TEST_CASE("forecast bands over parameter samples") {
    const auto p = cell_params(1, -3.2);
    auto panel = constant_exposure_panel({2008, 2009, 2010}, p.trend.groups, {"i", "r"}, 30000);
    const std::vector<int> years{2012, 2020};
    const std::vector<double> probs{0.01, 0.5, 0.99};
    auto cfg = config(0.2);

    const std::vector<ParamVector> one{p};
    const auto single = forecast_bands(panel, 0, Gender::male, years, one, cfg, probs);
    for (std::size_t y = 0; y < years.size(); ++y) {
        const auto f = forecast_death_rate(panel, 0, Gender::male, years[y], p, cfg);
        for (std::size_t i = 0; i < probs.size(); ++i)
            CHECK(single[y].rates[i] == f.rate_quantile(probs[i]));
    }
    const std::vector<ParamVector> same(4, p);
    const auto repeated = forecast_bands(panel, 0, Gender::male, years, same, cfg, probs);
    for (std::size_t y = 0; y < years.size(); ++y)
        CHECK(repeated[y].rates == single[y].rates);

    auto low = p, high = p;
    low.trend.alpha.assign(4, -3.6);
    high.trend.alpha.assign(4, -2.8);
    const std::vector<ParamVector> pair{low, high};
    const auto pooled = forecast_bands(panel, 0, Gender::male, years, pair, cfg, probs);
    for (std::size_t y = 0; y < years.size(); ++y) {
        const double m_low = forecast_death_rate(panel, 0, Gender::male, years[y], low, cfg).rate_quantile(0.5);
        const double m_high = forecast_death_rate(panel, 0, Gender::male, years[y], high, cfg).rate_quantile(0.5);
        CHECK(pooled[y].rates[0] <= m_low);
        CHECK(pooled[y].rates[2] >= m_high);
    }

    // population path overrides the constant-at-T exposure
    cfg.population[{2020, cell_index(0, Gender::male)}] = 60000;
    CHECK(forecast_exposure(panel, 0, Gender::male, 2020, cfg) == 60000);
    CHECK(forecast_exposure(panel, 0, Gender::male, 2012, cfg) == 30000);

    // chain interface: identical samples, and the point-estimate switch
    ParamVector base = p;
    base.fixed.insert(Family::u);
    base.fixed.insert(Family::v);
    McmcChain chain;
    chain.base = base;
    chain.layout = ParameterLayout(base);
    chain.samples.assign(3, chain.layout.encode(base));
    chain.log_posterior.assign(3, 0.0);
    chain.steps = {1, 2, 3};
    const auto from_chain = forecast_bands(panel, 0, Gender::male, years, chain, config(0.2), probs);
    for (std::size_t y = 0; y < years.size(); ++y)
        for (std::size_t i = 0; i < probs.size(); ++i)
            CHECK(from_chain[y].rates[i] == doctest::Approx(single[y].rates[i]).epsilon(1e-12));
    CHECK_THROWS_AS(forecast_bands(panel, 0, Gender::male, years, McmcChain{}, cfg, probs), std::invalid_argument);
}

TEST_CASE("life expectancy closed forms") {
    CHECK(life_expectancy(0, 2013, [](int, int) { return 0.5; }) == 1.0);
    CHECK(life_expectancy(40, 2013, [](int, int) { return 0.5; }) == 1.0);
    for (int omega : {90, 100, 121})
        for (int a : {0, 30, 60}) {
            const auto q = [omega](int age, int) { return age >= omega ? 1.0 : 0.0; };
            CHECK(life_expectancy(a, 2013, q, 200) == static_cast<double>(omega - a));
        }
    CHECK(life_expectancy(130, 2013, [](int, int) { return 0.0; }) == 0.0);
    CHECK(life_expectancy(120, 2013, [](int, int) { return 0.0; }) == 1.0);
    CHECK_THROWS_AS(life_expectancy(0, 2013, [](int, int) { return 1.5; }), std::invalid_argument);
}

TEST_CASE("life expectancy falls when mortality rises") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double base = 0.001 + 0.05 * u(rng);
        const double growth = 1.05 + 0.1 * u(rng);
        const double bump = 1.0 + 0.5 * u(rng);
        const auto q = [&](int age, int) { return std::min(1.0, base * std::pow(growth, age / 2.0)); };
        const auto q_up = [&](int age, int year) { return std::min(1.0, bump * q(age, year)); };
        const int a = static_cast<int>(100 * u(rng));
        CHECK(life_expectancy(a, 2000, q_up) <= life_expectancy(a, 2000, q));
    }

    auto trend = TrendParams::defaults(AgeGroups::parse("0-49,50-79,80+"), 0, 2013);
    trend.alpha = {-7.0, -7.0, -4.0, -4.0, -1.5, -1.5};
    trend.beta.assign(6, -0.2);
    const double e = life_expectancy(0, Gender::female, 2013, trend);
    CHECK(e > 0.0);
    CHECK(e < kTerminalAge);
    auto worse = trend;
    for (auto& x : worse.alpha)
        x += 0.3;
    CHECK(life_expectancy(0, Gender::female, 2013, worse) < e);
    // improving mortality raises the cohort expectation above the static one
    auto flat = trend;
    flat.beta.assign(6, 0.0);
    CHECK(e > life_expectancy(0, Gender::female, 2013, flat));
}

TEST_CASE("beta mixing variance") {
    CHECK(beta_mixing_variance(0.5, 1.0) == doctest::Approx(0.125));
    CHECK(beta_mixing_variance(0.5, 1e-12) < 1e-12);
    CHECK(beta_mixing_variance(1e-12, 0.3) < 1e-12);
    CHECK_THROWS_AS(beta_mixing_variance(0.0, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(beta_mixing_variance(1.0, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(beta_mixing_variance(0.3, 0.0), std::invalid_argument);

    // Q ~ Beta(q s, (1-q) s) with s = 1/σ², Λ ~ Gamma(s, 1/s) independent:
    // Var Q is the threshold variance and Q Λ has variance q σ²
    const double q = 0.3, s2 = 0.2;
    const double s = 1.0 / s2;
    std::mt19937_64 rng(12);
    std::gamma_distribution<double> ga(q * s, 1.0), gb((1.0 - q) * s, 1.0);
    std::vector<double> share, product;
    for (int i = 0; i < 200000; ++i) {
        const double x = ga(rng), y = gb(rng);
        share.push_back(x / (x + y));
        product.push_back(x / s);
    }
    CHECK(numerics::sample_variance(share) == doctest::Approx(beta_mixing_variance(q, s2)).epsilon(0.02));
    CHECK(numerics::sample_variance(product) == doctest::Approx(q * s2).epsilon(0.02));
}

TEST_CASE("inflation estimate from held-out years") {
    const double d_true = 0.5;
    auto truth = cell_params(3, -3.0);
    truth.sigma_sq = {0.03, 0.03, 0.03};
    std::vector<int> years;
    for (int y = 1991; y <= 2030; ++y)
        years.push_back(y);
    // simulate year by year with the inflated variance after 2010
    const auto layout = constant_exposure_panel(years, truth.trend.groups, {"i", "a", "b", "c"}, 200000);
    CohortPanel panel = layout;
    for (std::size_t t = 0; t < years.size(); ++t) {
        const double mult = variance_multiplier(d_true, years[t], 2010);
        std::vector<double> s2;
        for (double s : truth.sigma_sq)
            s2.push_back(s * mult);
        const auto one = simulate_panel(layout.only_year(t), truth.trend, s2, 900 + t);
        for (int a = 0; a < 2; ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k < 4; ++k)
                    panel.set_deaths(t, a, g, k, one.panel.deaths(0, a, g, k));
    }
    const auto fit = estimate_inflation(panel, truth, 2010);
    CHECK(fit.d == doctest::Approx(d_true).epsilon(0.4));
    CHECK(std::isfinite(fit.log_likelihood));
    CHECK_THROWS_AS(estimate_inflation(panel, truth, 2030), std::invalid_argument);
}
