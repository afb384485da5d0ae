#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "crplus/errors.hpp"
#include "crplus/estimation.hpp"
#include "crplus/mc_oracle.hpp"
#include "crplus/numerics.hpp"
#include "crplus/param_io.hpp"

using namespace crplus;

namespace {

ParamVector make_params(const AgeGroups& groups, std::size_t K, double alpha, double t0 = 2000.0) {
    ParamVector p;
    p.trend = TrendParams::defaults(groups, K, t0);
    p.trend.alpha.assign(p.trend.alpha.size(), alpha);
    p.sigma_sq.assign(K, 0.05);
    return p;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string without_created_line(const std::string& text) {
    std::stringstream in(text);
    std::string line, out;
    while (std::getline(in, line))
        if (line.rfind("#created", 0) != 0)
            out += line + "\n";
    return out;
}

} // namespace

TEST_CASE("likelihood: empty counts reduce to -Σρ") {
    const auto groups = AgeGroups::parse("60-69,70+");
    auto p = make_params(groups, 0, -3.0);
    p.trend.beta.assign(p.trend.beta.size(), -0.4);
    const auto panel = constant_exposure_panel({2000, 2001, 2002}, groups, {"all"}, 1000);
    double expected = 0.0;
    for (std::size_t t = 0; t < 3; ++t)
        for (int a = 0; a < 2; ++a)
            for (Gender g : kAllGenders)
                expected -= 1000.0 * death_prob(a, g, panel.year(t), p.trend);
    CHECK(log_likelihood(panel, p) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("likelihood: single cell hand evaluation") {
    // male cell with m = 4, q = 0.5, w = (0.5, 0.5): ρ_0 = ρ_1 = 1; σ² = 1, n_1 = 1
    const auto groups = AgeGroups::parse("60+");
    auto p = make_params(groups, 1, 0.0);
    p.sigma_sq = {1.0};
    CohortPanel panel({2000}, groups, {"idio", "rf"});
    panel.set_exposure(0, 0, Gender::male, 4);
    panel.set_deaths(0, 0, Gender::male, 1, 1);
    // Poisson term exp(-1) for n_0 = 0, sector term Γ(2)/(Γ(1) 1 2²)
    CHECK(log_likelihood(panel, p) == doctest::Approx(-1.0 - std::log(4.0)).epsilon(1e-14));

    p.sigma_sq = {0.0};
    CHECK_THROWS_AS(log_likelihood(panel, p), std::invalid_argument);
    p.sigma_sq = {1.0};
    p.trend.alpha[0] = NAN;
    CHECK_THROWS_AS(log_likelihood(panel, p), std::invalid_argument);
}

TEST_CASE("likelihood: gamma ratio is stable for tiny variances") {
    // As σ² -> 0 the sector term tends to the Poisson log-likelihood
    const auto groups = AgeGroups::parse("60+");
    auto p = make_params(groups, 1, -2.0);
    CohortPanel panel({2000, 2001}, groups, {"idio", "rf"});
    for (std::size_t t = 0; t < 2; ++t)
        for (Gender g : kAllGenders) {
            panel.set_exposure(t, 0, g, 100000);
            panel.set_deaths(t, 0, g, 0, 3300);
            panel.set_deaths(t, 0, g, 1, 3400 + 10 * static_cast<int>(t));
        }
    // long-double reference: Π ρ^n / n! times the gamma-mixed factor per year
    auto reference = [&](long double x) {
        long double total = 0.0L;
        for (std::size_t t = 0; t < 2; ++t) {
            const auto rho = expected_deaths(panel, p.trend, t);
            long double n1 = 0, r1 = 0;
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k < 2; ++k) {
                    const long double n = panel.deaths(t, 0, g, k);
                    const long double r = rho[p.trend.weight_index(0, g, k)];
                    total += n * std::log(r) - std::lgamma(n + 1.0L) - (k == 0 ? r : 0.0L);
                    if (k == 1) {
                        n1 += n;
                        r1 += r;
                    }
                }
            if (x == 0.0L)
                total -= r1;
            else
                total += std::lgamma(x + n1) - std::lgamma(x) - n1 * std::log(x) - (x + n1) * std::log1p(r1 / x);
        }
        return static_cast<double>(total);
    };
    p.sigma_sq = {1e-12};
    CHECK(log_likelihood(panel, p) == doctest::Approx(reference(0.0L)).epsilon(1e-9));
    // both sides of the switch between direct and asymptotic log-gamma ratios
    for (double x : {5.0, 60.0, 99.9, 100.1, 150.0, 1e4}) {
        p.sigma_sq = {1.0 / x};
        CHECK(log_likelihood(panel, p) == doctest::Approx(reference(x)).epsilon(1e-11));
    }
}

TEST_CASE("likelihood prefers the generating parameters") {
    const auto groups = AgeGroups::parse("60-64,65-69,70+");
    auto truth = make_params(groups, 2, -3.5);
    for (std::size_t c = 0; c < truth.trend.cells(); ++c) {
        truth.trend.alpha[c] = -3.8 + 0.3 * static_cast<double>(c / 2);
        truth.trend.beta[c] = -0.3;
    }
    truth.sigma_sq = {0.02, 0.05};
    const auto layout = constant_exposure_panel({1995, 1996, 1997, 1998, 1999, 2000, 2001, 2002}, groups,
                                                {"a", "b", "c"}, 200000);
    const auto sim = simulate_panel(layout, truth.trend, truth.sigma_sq, 11);
    const LikelihoodEvaluator ll(sim.panel);
    const double at_truth = ll(truth);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.05);
    int wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto other = truth;
        for (auto& a : other.trend.alpha)
            a += n(rng);
        for (auto& b : other.trend.beta)
            b += n(rng);
        wins += at_truth >= ll(other) ? 1 : 0;
    }
    CHECK(wins > 50);
}

TEST_CASE("Bernoulli likelihood") {
    const auto groups = AgeGroups::parse("60+");
    auto p = make_params(groups, 0, 0.0); // q = 0.5
    CohortPanel panel({2000}, groups, {"all"});
    panel.set_exposure(0, 0, Gender::female, 2);
    panel.set_deaths(0, 0, Gender::female, 0, 1);
    CHECK(log_likelihood_bernoulli(panel, p.trend) == doctest::Approx(std::log(0.5)).epsilon(1e-14));

    panel.set_deaths(0, 0, Gender::female, 0, 0);
    p.trend.alpha.assign(2, -2.0);
    const double q = laplace_cdf(-2.0);
    CHECK(log_likelihood_bernoulli(panel, p.trend) == doctest::Approx(2.0 * std::log1p(-q)).epsilon(1e-14));

    panel.set_deaths(0, 0, Gender::female, 0, 2);
    double previous = -INFINITY;
    for (double alpha : {1.0, 3.0, 6.0, 12.0}) {
        p.trend.alpha.assign(2, alpha);
        const double l = log_likelihood_bernoulli(panel, p.trend);
        CHECK(l <= 0.0);
        CHECK(l > previous);
        previous = l;
    }
    panel.set_deaths(0, 0, Gender::female, 0, 3);
    CHECK_THROWS_AS(log_likelihood_bernoulli(panel, p.trend), DataError);
}

TEST_CASE("Gaussian smoothing prior") {
    const auto groups = AgeGroups::standard();
    auto p = make_params(groups, 0, 0.0);
    PriorSpec prior;
    prior.blocks[Family::alpha] = {50.0, 1e-2, 1};
    const double log_d = 2.0 * prior_log_normaliser(8, prior.blocks[Family::alpha]);
    CHECK(log_prior(p, prior) == doctest::Approx(log_d));

    // ε = 0: constant rows are free under order 1, straight lines under order 2
    prior.blocks[Family::alpha] = {50.0, 0.0, 1};
    p.trend.alpha.assign(16, -3.0);
    CHECK(log_prior(p, prior) == 0.0);
    prior.blocks[Family::alpha] = {50.0, 0.0, 2};
    for (int a = 0; a < 8; ++a)
        for (Gender g : kAllGenders)
            p.trend.alpha[cell_index(a, g)] = -5.0 + 0.4 * a;
    CHECK(std::abs(log_prior(p, prior)) < 1e-10);
    prior.blocks[Family::alpha] = {50.0, 0.0, 3};
    for (int a = 0; a < 8; ++a)
        for (Gender g : kAllGenders)
            p.trend.alpha[cell_index(a, g)] = 0.1 * a * a - a;
    CHECK(std::abs(log_prior(p, prior)) < 1e-9);

    // normaliser makes a proper density: compare with a direct Gaussian log-density
    const BlockPrior bp{3.0, 0.5, 1};
    const auto P = prior_precision(3, bp);
    const double expected = 0.5 * std::log(P.determinant()) - 1.5 * std::log(2.0 * M_PI);
    CHECK(prior_log_normaliser(3, bp) == doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(prior_precision(3, BlockPrior{1.0, 0.1, 4}), std::invalid_argument);
}

TEST_CASE("prior correlation is positive and decays with age distance") {
    const Eigen::MatrixXd cov = prior_precision(10, BlockPrior{1.0, 1e-2, 1}).inverse();
    for (int i = 0; i < 10; ++i)
        for (int j = i + 1; j < 10; ++j) {
            const double r = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
            CHECK(r > 0.0);
            if (j + 1 < 10) {
                const double next = cov(i, j + 1) / std::sqrt(cov(i, i) * cov(j + 1, j + 1));
                CHECK(next < r);
            }
        }
}

TEST_CASE("MAP risk factor closed form") {
    CHECK(map_risk_factor(1.0, 10.0, 10.0) == doctest::Approx(10.0 / 11.0).epsilon(1e-15));
    CHECK(map_risk_factor(0.5, 0.0, 3.0) == doctest::Approx(1.0 / 5.0).epsilon(1e-15));
    CHECK(map_risk_factor(1e-9, 500.0, 500.0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK_THROWS_AS(map_risk_factor(1.0, 0.0, 3.0), DataError);
    CHECK_THROWS_AS(map_risk_factor(0.0, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("MAP risk factor is stationary for the conditional posterior") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const double s2 = 0.01 + u(rng);
        const double rho = 1.0 + 1e4 * u(rng);
        const double n = std::floor(rho * (0.5 + u(rng)));
        const double lambda = map_risk_factor(s2, n, rho);
        const double h = 1e-5 * lambda;
        const double grad = (map_conditional_log_posterior(lambda + h, s2, n, rho) -
                             map_conditional_log_posterior(lambda - h, s2, n, rho)) /
                            (2.0 * h);
        CHECK(std::abs(grad) / (1.0 / s2 + rho) < 1e-6);
    }
}

TEST_CASE("MAP variance equation") {
    const std::vector<double> lambdas{0.5, 1.5};
    const double sigma = map_sigma(lambdas);
    const double rhs = map_sigma_rhs(lambdas);
    CHECK(rhs < 0.0);
    CHECK(std::abs(map_sigma_lhs(sigma) - rhs) < 1e-9);
    // dense grid scan: one sign change, located at the root
    int changes = 0;
    double previous = map_sigma_lhs(1e-3) - rhs;
    double prev_lhs = map_sigma_lhs(1e-3);
    for (double s = 1.01e-3; s < 20.0; s *= 1.01) {
        const double lhs = map_sigma_lhs(s);
        CHECK(lhs < prev_lhs);
        prev_lhs = lhs;
        const double f = lhs - rhs;
        if ((f > 0) != (previous > 0)) {
            ++changes;
            CHECK(std::abs(s - sigma) < 0.011 * s);
        }
        previous = f;
    }
    CHECK(changes == 1);

    const std::vector<double> ones(5, 1.0);
    CHECK(map_sigma_rhs(ones) == 0.0);
    CHECK_THROWS_AS(map_sigma(ones), NumericalError);

    std::mt19937_64 rng(4);
    std::gamma_distribution<double> gamma(10.0, 0.1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> series(20);
        for (auto& x : series)
            x = gamma(rng);
        CHECK(map_sigma_rhs(series) < 0.0);
        const double s = map_sigma(series);
        CHECK(std::abs(map_sigma_lhs(s) - map_sigma_rhs(series)) < 1e-9);
    }
    // nearly constant series: root close to zero
    const std::vector<double> close{1.0 + 1e-5, 1.0 - 1e-5};
    const double tiny = map_sigma(close);
    CHECK(std::abs(map_sigma_lhs(tiny) - map_sigma_rhs(close)) < 1e-15);
}

TEST_CASE("MAP approximations") {
    CHECK(map_risk_factor_approx(10.0, 10.0) == doctest::Approx(0.9));
    CHECK(map_risk_factor_approx(1.0, 7.0) == 0.0);
    CHECK_THROWS_AS(map_risk_factor_approx(3.0, 0.0), std::invalid_argument);
    const std::vector<double> ones(4, 1.0);
    CHECK(map_sigma_approx(ones) == 0.0);
    const std::vector<double> two{0.5, 1.5};
    CHECK(map_sigma_approx(two) == doctest::Approx(0.5));
}

TEST_CASE("joint MAP estimates recover simulated risk factors") {
    const auto groups = AgeGroups::parse("60-69,70+");
    auto truth = make_params(groups, 1, -3.0);
    truth.sigma_sq = {0.04};
    std::vector<int> years;
    for (int y = 1980; y < 2010; ++y)
        years.push_back(y);
    const auto layout = constant_exposure_panel(years, groups, {"idio", "rf"}, 500000);
    const auto sim = simulate_panel(layout, truth.trend, truth.sigma_sq, 5);
    const auto est = map_risk_factors(sim.panel, truth);
    CHECK(est.converged);
    for (std::size_t t = 0; t < years.size(); ++t)
        CHECK(est.lambda[0][t] == doctest::Approx(sim.factors[t][0]).epsilon(0.05));
    CHECK(est.sigma[0] * est.sigma[0] == doctest::Approx(0.04).epsilon(0.6));
    const auto approx = map_risk_factors_approx(sim.panel, truth);
    CHECK(approx.sigma[0] == doctest::Approx(est.sigma[0]).epsilon(0.1));
}

TEST_CASE("matching-of-moments transform") {
    const auto groups = AgeGroups::parse("60+");
    auto p = make_params(groups, 1, -3.0);
    auto panel = constant_exposure_panel({2000, 2001, 2002}, groups, {"i", "r"}, 1000);
    for (std::size_t t = 0; t < 3; ++t)
        panel.set_deaths(t, 0, Gender::female, 1, 7 + static_cast<int>(t));
    CHECK(mom_transform(panel, p.trend) == panel);

    // doubled population in the last year doubles earlier counts
    panel.set_exposure(2, 0, Gender::female, 2000);
    const auto doubled = mom_transform(panel, p.trend);
    CHECK(doubled.deaths(0, 0, Gender::female, 1) == 14);
    CHECK(doubled.deaths(1, 0, Gender::female, 1) == 16);
    CHECK(doubled.deaths(2, 0, Gender::female, 1) == 9);
    CHECK(doubled.deaths(0, 0, Gender::male, 1) == 0);

    // 0.1 * 30 = 3 exactly despite floating point
    auto tiny = constant_exposure_panel({2000, 2001}, groups, {"i", "r"}, 10);
    tiny.set_exposure(1, 0, Gender::male, 1);
    tiny.set_deaths(0, 0, Gender::male, 0, 30);
    CHECK(mom_transform(tiny, p.trend).deaths(0, 0, Gender::male, 0) == 3);
}

TEST_CASE("matching of moments on noiseless data") {
    const auto groups = AgeGroups::parse("60-69,70+");
    auto shape = TrendParams::defaults(groups, 1, 2000);
    CohortPanel panel({2000, 2001, 2002, 2003}, groups, {"i", "r"});
    for (std::size_t t = 0; t < 4; ++t)
        for (int a = 0; a < 2; ++a)
            for (Gender g : kAllGenders) {
                panel.set_exposure(t, a, g, 100000);
                panel.set_deaths(t, a, g, 0, 500);
                panel.set_deaths(t, a, g, 1, 500);
            }
    const auto fit = mom_fit(panel, shape);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(fit.params.trend.alpha[c] == doctest::Approx(std::log(0.02)).epsilon(1e-12));
        CHECK(std::abs(fit.params.trend.beta[c]) < 1e-12);
    }
    for (int a = 0; a < 2; ++a)
        for (Gender g : kAllGenders) {
            CHECK(death_prob(a, g, 2003, fit.params.trend) == doctest::Approx(0.01).epsilon(1e-12));
            const auto w = cause_weights(a, g, 2001, fit.params.trend);
            CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-12));
        }
    // constant counts: no excess variance
    CHECK(fit.params.sigma_sq[0] == 0.0);

    CohortPanel one = panel.only_year(0);
    CHECK_THROWS_AS(mom_fit(one, shape), std::invalid_argument);
}

TEST_CASE("matching-of-moments variance is unbiased on simulated panels") {
    const auto groups = AgeGroups::parse("60-64,65-69,70+");
    auto truth = make_params(groups, 1, -3.2, 2005);
    for (auto& b : truth.trend.beta)
        b = -0.2;
    truth.sigma_sq = {0.03};
    std::vector<int> years;
    for (int y = 1995; y < 2015; ++y)
        years.push_back(y);
    const auto layout = constant_exposure_panel(years, groups, {"i", "r"}, 100000);
    double total = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        const auto sim = simulate_panel(layout, truth.trend, truth.sigma_sq, 1000 + r);
        total += mom_fit(sim.panel, truth.trend).params.sigma_sq[0];
    }
    CHECK(total / reps == doctest::Approx(0.03).epsilon(0.10));

    // a cause without deaths gets σ̂ = 0
    auto quiet = layout;
    for (std::size_t t = 0; t < quiet.years_count(); ++t)
        for (int a = 0; a < 3; ++a)
            for (Gender g : kAllGenders)
                quiet.set_deaths(t, a, g, 0, 2000);
    CHECK(mom_fit(quiet, truth.trend).params.sigma_sq[0] == 0.0);
}

TEST_CASE("parameter layout and JSON round trip") {
    auto p = make_params(AgeGroups::standard(), 2, -3.0);
    p.trend.kappa[1930] = 0.1;
    p.fixed = {Family::zeta, Family::phi, Family::psi};
    const ParameterLayout layout(p);
    // α, β, η: 16 each; κ: 1; u, v: 32 each; σ²: 2
    CHECK(layout.size() == 16 * 3 + 1 + 32 * 2 + 2);
    CHECK(layout.blocks().size() == 2 * 5 + 2);
    auto x = layout.encode(p);
    for (auto& v : x)
        v += 0.25;
    ParamVector q = p;
    layout.decode(x, q);
    CHECK(layout.encode(q) == x);
    CHECK(q.trend.kappa.at(1930) == doctest::Approx(0.35));
    CHECK(q.sigma_sq[0] == doctest::Approx(0.05 * std::exp(0.25)));

    const auto back = param_vector_from_json(nlohmann::json::parse(to_json(q).dump()));
    CHECK(to_json(back) == to_json(q));
    CHECK(back.fixed == q.fixed);
}

TEST_CASE("Metropolis acceptance satisfies detailed balance on a two-state target") {
    // π(0) = 0.3, π(1) = 0.7, symmetric flip proposal
    const double pi[2] = {0.3, 0.7};
    std::mt19937_64 rng(9);
    int state = 0;
    std::size_t visits[2] = {0, 0};
    const std::size_t n = 400'000;
    for (std::size_t i = 0; i < n; ++i) {
        const int proposal = 1 - state;
        if (mh_accept(std::log(pi[proposal]) - std::log(pi[state]), rng))
            state = proposal;
        ++visits[state];
    }
    CHECK(static_cast<double>(visits[1]) / n == doctest::Approx(0.7).epsilon(0.01));
}

TEST_CASE("MCMC: zero proposal scales leave the chain at its start") {
    const auto groups = AgeGroups::parse("60+");
    auto init = make_params(groups, 0, -3.0);
    const auto panel = simulate_panel(constant_exposure_panel({2000, 2001}, groups, {"all"}, 10000), init.trend,
                                      init.sigma_sq, 2)
                           .panel;
    McmcConfig cfg;
    cfg.n_steps = 300;
    cfg.burn_in = 100;
    for (auto& [f, s] : cfg.proposal_scales)
        s = 0.0;
    const auto chain = mcmc_sample(panel, init, PriorSpec{}, cfg);
    REQUIRE(chain.samples.size() == 200);
    for (const auto& s : chain.samples)
        CHECK(s == chain.samples.front());
    CHECK(chain.at(0).trend.alpha == init.trend.alpha);
}

TEST_CASE("MCMC: posterior concentrates at the truth") {
    const auto groups = AgeGroups::parse("60+");
    auto truth = make_params(groups, 0, -3.0, 2005);
    truth.trend.beta.assign(2, -0.05);
    std::vector<int> years;
    for (int y = 2000; y <= 2010; ++y)
        years.push_back(y);
    const auto sim = simulate_panel(constant_exposure_panel(years, groups, {"all"}, 1'000'000), truth.trend, {}, 21);
    auto init = truth;
    init.trend.alpha.assign(2, -2.9);
    init.trend.beta.assign(2, 0.0);
    McmcConfig cfg;
    cfg.n_steps = 40000;
    cfg.burn_in = 5000;
    cfg.seed = 8;
    const auto chain = mcmc_sample(sim.panel, init, PriorSpec{}, cfg);
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> alpha, beta;
        for (std::size_t i = 0; i < chain.samples.size(); ++i) {
            const auto p = chain.at(i);
            alpha.push_back(p.trend.alpha[c]);
            beta.push_back(p.trend.beta[c]);
        }
        const double sd = std::sqrt(numerics::sample_variance(alpha));
        CHECK(std::abs(numerics::mean(alpha) - truth.trend.alpha[c]) < 3.0 * sd);
        CHECK(std::abs(numerics::mean(beta) - truth.trend.beta[c]) < 3.0 * std::sqrt(numerics::sample_variance(beta)));
    }
    for (const auto& s : chain.stats) {
        CHECK(s.rate() > 0.1);
        CHECK(s.rate() < 0.6);
    }
}

TEST_CASE("MCMC: flat-prior mode is at least as likely as the moment fit") {
    const auto groups = AgeGroups::parse("60+");
    auto truth = make_params(groups, 0, -3.0, 2005);
    truth.trend.beta.assign(2, -0.1);
    std::vector<int> years;
    for (int y = 2000; y <= 2010; ++y)
        years.push_back(y);
    for (std::uint64_t seed : {31u, 32u, 33u}) {
        const auto sim =
            simulate_panel(constant_exposure_panel(years, groups, {"all"}, 2000), truth.trend, {}, seed);
        const auto mom = mom_fit(sim.panel, truth.trend);
        McmcConfig cfg;
        cfg.n_steps = 60000;
        cfg.burn_in = 5000;
        cfg.seed = seed;
        const auto chain = mcmc_sample(sim.panel, mom.params, PriorSpec{}, cfg);
        CHECK(log_likelihood(sim.panel, chain.mode()) >= log_likelihood(sim.panel, mom.params));
    }
}

TEST_CASE("MCMC: chain file resume is bit-identical") {
    const auto groups = AgeGroups::parse("60-69,70+");
    auto init = make_params(groups, 1, -3.0, 2002);
    init.sigma_sq = {0.05};
    std::vector<int> years{2000, 2001, 2002, 2003, 2004, 2005};
    const auto panel = simulate_panel(constant_exposure_panel(years, groups, {"i", "r"}, 50000), init.trend,
                                      init.sigma_sq, 4)
                           .panel;
    McmcConfig cfg;
    cfg.n_steps = 700;
    cfg.burn_in = 300;
    cfg.seed = 77;
    const auto dir = std::filesystem::temp_directory_path() / "crplus_chain_test";
    std::filesystem::create_directories(dir);
    const auto full_path = dir / "full.csv";
    const auto part_path = dir / "part.csv";
    std::filesystem::remove(full_path);
    std::filesystem::remove(part_path);

    const auto full = mcmc_sample(panel, init, PriorSpec{}, cfg, 0, full_path);
    CHECK(full.samples.size() == 400);
    const std::string full_text = read_file(full_path);

    // simulate an interrupted run: keep the header and 150 records plus half a line
    {
        std::stringstream in(full_text);
        std::string line, kept;
        int records = 0;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) {
                kept += line + "\n";
                continue;
            }
            if (records++ == 150) {
                kept += line.substr(0, line.size() / 2);
                break;
            }
            kept += line + "\n";
        }
        std::ofstream out(part_path, std::ios::binary);
        out << kept;
    }
    const auto resumed = mcmc_sample(panel, init, PriorSpec{}, cfg, 0, part_path);
    CHECK(without_created_line(read_file(part_path)) == without_created_line(full_text));
    CHECK(resumed.samples == full.samples);
    CHECK(resumed.log_posterior == full.log_posterior);

    const auto loaded = read_chain_file(full_path);
    CHECK(loaded.samples == full.samples);
    CHECK(to_json(loaded.mean()) == to_json(full.mean()));

    // a different seed must not silently reuse the file
    cfg.seed = 78;
    CHECK_THROWS_AS(mcmc_sample(panel, init, PriorSpec{}, cfg, 0, full_path), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

TEST_CASE("MCMC: configuration and start validation") {
    McmcConfig cfg;
    cfg.burn_in = cfg.n_steps;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    const auto groups = AgeGroups::parse("60+");
    auto init = make_params(groups, 0, -3.0);
    CohortPanel panel({2000}, groups, {"all"});
    panel.set_exposure(0, 0, Gender::female, 0);
    panel.set_deaths(0, 0, Gender::female, 0, 5); // deaths without exposure: ρ = 0
    McmcConfig ok;
    ok.n_steps = 10;
    ok.burn_in = 5;
    CHECK_THROWS_AS(mcmc_sample(panel, init, PriorSpec{}, ok), std::invalid_argument);
}

TEST_CASE("parallel chains and information criteria") {
    const auto groups = AgeGroups::parse("60+");
    auto init = make_params(groups, 0, -3.0);
    const auto panel = simulate_panel(constant_exposure_panel({2000, 2001, 2002, 2003}, groups, {"all"}, 100000),
                                      init.trend, {}, 1)
                           .panel;
    McmcConfig cfg;
    cfg.n_steps = 1500;
    cfg.burn_in = 500;
    cfg.n_chains = 3;
    const auto chains = mcmc_sample_chains(panel, init, PriorSpec{}, cfg);
    REQUIRE(chains.size() == 3);
    CHECK(chains[0].samples != chains[1].samples);
    const auto ic = information_criteria(panel, chains[0]);
    CHECK(ic.parameters == 4);
    CHECK(ic.observations == 8);
    CHECK(ic.aic == doctest::Approx(8.0 - 2.0 * ic.log_likelihood_at_mode));
    CHECK(ic.effective_parameters > 0.5);
    CHECK(ic.effective_parameters < 8.0);
}

TEST_CASE("cross-validation picks a finite grid point") {
    const auto groups = AgeGroups::parse("60-64,65-69,70+");
    auto init = make_params(groups, 0, -3.0);
    const auto panel =
        simulate_panel(constant_exposure_panel({2000, 2001, 2002}, groups, {"all"}, 20000), init.trend, {}, 3).panel;
    McmcConfig cfg;
    cfg.n_steps = 400;
    cfg.burn_in = 200;
    const std::vector<double> grid{0.0, 10.0};
    const auto cv = cross_validate_prior(panel, init, [](double c) { return PriorSpec::smoothing(c, c); }, grid, cfg);
    CHECK(cv.scores.size() == 2);
    CHECK(std::isfinite(cv.scores[0]));
    CHECK((cv.best == 0.0 || cv.best == 10.0));
}
