#include <doctest.h>

#include <random>
#include <stdexcept>

#include "crplus/domain.hpp"
#include "crplus/trends.hpp"

using namespace crplus;

namespace {
Policyholder holder(double q, std::vector<double> w) {
    Policyholder p;
    p.death_prob = q;
    p.weights = std::move(w);
    return p;
}
} // namespace

TEST_CASE("pairwise death covariance") {
    const std::vector<RiskFactorSpec> one{{1, 0.1, "rf"}};
    CHECK(pairwise_death_covariance(holder(0.05, {0, 1}), holder(0.05, {0, 1}), one) ==
          doctest::Approx(2.5e-4).epsilon(1e-14));
    CHECK(pairwise_death_covariance(holder(0.05, {1, 0}), holder(0.05, {1, 0}), one) == 0.0);
    CHECK(pairwise_death_covariance(holder(0.0, {0, 1}), holder(0.05, {0, 1}), one) == 0.0);

    const std::vector<RiskFactorSpec> two{{1, 0.1, "a"}, {2, 0.2, "b"}};
    CHECK_THROWS_AS(pairwise_death_covariance(holder(0.1, {0, 1}), holder(0.1, {0, 1}), two), std::invalid_argument);
}

TEST_CASE("pairwise covariance is symmetric") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<RiskFactorSpec> rf{{1, 0.3, ""}, {2, 0.05, ""}, {3, 1.2, ""}};
    for (int trial = 0; trial < 200; ++trial) {
        auto random_weights = [&] {
            std::vector<double> w(4);
            double s = 0;
            for (auto& x : w)
                s += (x = u(rng));
            for (auto& x : w)
                x /= s;
            return w;
        };
        const auto a = holder(u(rng), random_weights());
        const auto b = holder(u(rng), random_weights());
        CHECK(pairwise_death_covariance(a, b, rf) == pairwise_death_covariance(b, a, rf));
    }
}

TEST_CASE("age groups") {
    const auto groups = AgeGroups::standard();
    CHECK(groups.size() == 8);
    CHECK(groups.group_of_age(50) == 0);
    CHECK(groups.group_of_age(84) == 6);
    CHECK(groups.group_of_age(103) == 7);
    CHECK(groups.band(0).midpoint() == 52);
    CHECK(groups.index_of("85+") == 7);
    CHECK_THROWS_AS(groups.group_of_age(49), std::out_of_range);
    CHECK_THROWS_AS(AgeGroups::parse("50-54,56-59"), std::invalid_argument);
    CHECK(AgeGroups::parse(groups.spec()) == groups);
}

TEST_CASE("build_portfolio expands cells") {
    auto trends = TrendParams::defaults(AgeGroups::standard(), 2);
    for (std::size_t i = 0; i < trends.alpha.size(); ++i)
        trends.alpha[i] = -4.0 + 0.3 * static_cast<double>(i / 2);
    std::vector<PortfolioCellSpec> cells;
    for (int a = 0; a < 8; ++a)
        for (Gender g : kAllGenders)
            cells.push_back({"c", a, g, 100.0, LatticeSeverity::deterministic(1.0), LatticeSeverity::deterministic(1.0)});
    const auto portfolio = build_portfolio(cells, trends, 2012);
    CHECK(portfolio.holders.size() == 16);
    CHECK(portfolio.heads() == doctest::Approx(1600.0));
    double expected = 0.0;
    for (const auto& h : portfolio.holders) {
        double s = 0;
        for (double w : h.weights)
            s += w;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(h.death_prob == doctest::Approx(death_prob(h.age_group, h.gender, 2012, trends)));
        expected += 100.0 * h.death_prob;
    }
    CHECK(portfolio.expected_death_payments() == doctest::Approx(expected));

    CHECK(build_portfolio(std::span<const PortfolioCellSpec>{}, trends, 2012).empty());

    cells.push_back({"bad", 9, Gender::male, 1.0, {}, {}});
    CHECK_THROWS_AS(build_portfolio(cells, trends, 2012), std::invalid_argument);
}

TEST_CASE("homogeneous Table-1 portfolio") {
    const auto p = homogeneous_portfolio(10000, 0.05, {1.0, 0.0}, LatticeSeverity::deterministic(1.0));
    CHECK(p.heads() == 10000.0);
    CHECK(p.expected_death_payments() == doctest::Approx(500.0));
    CHECK_THROWS_AS(homogeneous_portfolio(1, 0.05, {0.5, 0.6}, LatticeSeverity{}), std::invalid_argument);
    CHECK_THROWS_AS(homogeneous_portfolio(1, 1.5, {1.0}, LatticeSeverity{}), std::invalid_argument);
}

TEST_CASE("cohort panel accessors and warnings") {
    CohortPanel panel({2000, 2001}, AgeGroups::parse("60-64,65+"), {"idio", "neo"});
    panel.set_exposure(0, 1, Gender::male, 10);
    panel.set_deaths(0, 1, Gender::male, 0, 7);
    panel.set_deaths(0, 1, Gender::male, 1, 5);
    CHECK(panel.total_deaths(0, 1, Gender::male) == 12);
    CHECK(panel.warnings().size() == 1);
    CHECK_THROWS_AS(panel.set_deaths(0, 0, Gender::female, 0, -1), std::invalid_argument);
    const auto reduced = panel.without_year(1);
    CHECK(reduced.years_count() == 1);
    CHECK(reduced.deaths(0, 1, Gender::male, 1) == 5);
    CHECK(panel.only_year(1).year(0) == 2001);
}

TEST_CASE("lattice severity validation") {
    LatticeSeverity s;
    s.pmf = {0.5, 0.4};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    CHECK(LatticeSeverity::deterministic(15.0).mean() == 15.0);
    CHECK_THROWS_AS(LatticeSeverity::deterministic(1.5, 1.0), std::invalid_argument);
}
