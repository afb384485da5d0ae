#include "crplus/validation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "crplus/errors.hpp"
#include "crplus/numerics.hpp"
#include "crplus/trends.hpp"

namespace crplus {

std::size_t TestReport::informative() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const TestEntry& e) { return !e.degenerate; }));
}

double TestReport::acceptance_fraction() const {
    std::size_t used = 0, accepted = 0;
    for (const auto& e : entries)
        if (!e.degenerate) {
            ++used;
            accepted += e.accepted ? 1 : 0;
        }
    return used == 0 ? 1.0 : static_cast<double>(accepted) / static_cast<double>(used);
}

void TestReport::append(const TestReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

double model_count_variance(double mu, double sigma_sq) { return mu + sigma_sq * mu * mu; }

double model_count_covariance(double mu_1, double mu_2, double sigma_sq) { return sigma_sq * mu_1 * mu_2; }

std::vector<double> transformed_means(const CohortPanel& panel, const TrendParams& trend) {
    if (panel.years_count() == 0)
        throw std::invalid_argument("transformed_means: empty panel");
    return expected_deaths(panel, trend, panel.years_count() - 1);
}

// ---------------------------------------------------------------------------
// Moment bounds

namespace {

struct MomentLayout {
    std::size_t cells = 0, causes = 0;
    // statistic s covers cells (c1[s], c2[s]) of cause k[s]
    std::vector<std::size_t> c1, c2, k;
};

MomentLayout moment_layout(std::size_t cells, std::size_t causes) {
    MomentLayout l{cells, causes, {}, {}, {}};
    for (std::size_t k = 0; k < causes; ++k)
        for (std::size_t i = 0; i < cells; ++i)
            for (std::size_t j = i; j < cells; ++j) {
                l.c1.push_back(i);
                l.c2.push_back(j);
                l.k.push_back(k);
            }
    return l;
}

// counts[t][c * causes + k]
std::vector<double> moment_statistics(const MomentLayout& l, const std::vector<std::vector<double>>& counts) {
    const std::size_t T = counts.size();
    std::vector<double> mean(l.cells * l.causes, 0.0);
    for (const auto& row : counts)
        for (std::size_t i = 0; i < row.size(); ++i)
            mean[i] += row[i] / static_cast<double>(T);
    std::vector<double> out(l.k.size(), 0.0);
    for (std::size_t s = 0; s < l.k.size(); ++s) {
        const std::size_t i = l.c1[s] * l.causes + l.k[s];
        const std::size_t j = l.c2[s] * l.causes + l.k[s];
        double acc = 0.0;
        for (const auto& row : counts)
            acc += (row[i] - mean[i]) * (row[j] - mean[j]);
        out[s] = acc / static_cast<double>(T - 1);
    }
    return out;
}

std::string moment_label(const CohortPanel& panel, const MomentLayout& l, std::size_t s) {
    auto cell = [&](std::size_t c) {
        return panel.groups().band(c / kGenders).label + ":" +
               std::string(to_string(static_cast<Gender>(c % kGenders)));
    };
    const std::string cause = panel.causes()[l.k[s]];
    if (l.c1[s] == l.c2[s])
        return "var:" + cause + ":" + cell(l.c1[s]);
    return "cov:" + cause + ":" + cell(l.c1[s]) + "~" + cell(l.c2[s]);
}

} // namespace

TestReport moment_bounds_test(const CohortPanel& panel, const ParamVector& params,
                              std::span<const ParamVector> samples, const MomentBoundsOptions& options) {
    const std::size_t T = panel.years_count();
    if (T < 3)
        throw std::invalid_argument("moment_bounds_test: need at least 3 years, got " + std::to_string(T));
    if (samples.empty())
        throw std::invalid_argument("moment_bounds_test: no parameter samples");
    if (!(options.lower >= 0.0 && options.lower < options.upper && options.upper <= 1.0) || options.draws < 2)
        throw std::invalid_argument("moment_bounds_test: invalid band or draw count");
    const std::size_t causes = panel.cause_count();
    const std::size_t cells = panel.age_groups() * kGenders;
    const auto layout = moment_layout(cells, causes);

    const CohortPanel transformed = mom_transform(panel, params.trend);
    std::vector<std::vector<double>> observed(T, std::vector<double>(cells * causes));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < cells; ++c)
            for (std::size_t k = 0; k < causes; ++k)
                observed[t][c * causes + k] = static_cast<double>(
                    transformed.deaths(t, static_cast<int>(c / kGenders), static_cast<Gender>(c % kGenders), k));
    const auto stats = moment_statistics(layout, observed);

    std::vector<std::vector<double>> mus(samples.size());
    for (std::size_t h = 0; h < samples.size(); ++h)
        mus[h] = transformed_means(panel, samples[h].trend);

    // predictive[s][r]
    std::vector<std::vector<double>> predictive(layout.k.size(), std::vector<double>(options.draws));
    numerics::parallel_for(options.draws, numerics::worker_count(options.threads), [&](std::size_t r) {
        const std::size_t h = r % samples.size();
        const auto& p = samples[h];
        auto rng = numerics::stream_engine(options.seed, r);
        std::vector<std::vector<double>> sim(T, std::vector<double>(cells * causes));
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> lambda(causes, 1.0);
            for (std::size_t k = 1; k < causes; ++k) {
                const double s2 = p.sigma_sq.at(k - 1);
                lambda[k] = std::gamma_distribution<double>(1.0 / s2, s2)(rng);
            }
            for (std::size_t c = 0; c < cells; ++c)
                for (std::size_t k = 0; k < causes; ++k) {
                    const double rate = mus[h][c * causes + k] * lambda[k];
                    sim[t][c * causes + k] =
                        rate > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(rate)(rng)) : 0.0;
                }
        }
        const auto s = moment_statistics(layout, sim);
        for (std::size_t i = 0; i < s.size(); ++i)
            predictive[i][r] = s[i];
    });

    TestReport report;
    report.name = "moment_bounds";
    report.level = 1.0 - (options.upper - options.lower);
    for (std::size_t s = 0; s < layout.k.size(); ++s) {
        TestEntry e;
        e.label = moment_label(panel, layout, s);
        e.statistic = stats[s];
        e.lower = numerics::sample_quantile(predictive[s], options.lower);
        e.upper = numerics::sample_quantile(predictive[s], options.upper);
        e.accepted = stats[s] >= e.lower && stats[s] <= e.upper;
        e.degenerate = e.lower == e.upper && e.accepted;
        report.entries.push_back(std::move(e));
    }
    return report;
}

TestReport moment_bounds_test(const CohortPanel& panel, const ParamVector& params, const McmcChain& chain,
                              const MomentBoundsOptions& options) {
    if (chain.empty())
        throw std::invalid_argument("moment_bounds_test: empty chain");
    std::vector<ParamVector> samples;
    const std::size_t n = chain.samples.size();
    const std::size_t keep = std::min(n, options.draws);
    for (std::size_t i = 0; i < keep; ++i)
        samples.push_back(chain.at(i * n / keep));
    return moment_bounds_test(panel, params, samples, options);
}

// ---------------------------------------------------------------------------
// Residuals

ResidualArray::ResidualArray(std::size_t years, std::size_t age_groups, std::size_t causes)
    : years_(years), groups_(age_groups), causes_(causes), data_(years * age_groups * kGenders * causes, 0.0) {}

std::vector<double> ResidualArray::series(int a, Gender g, std::size_t k) const {
    std::vector<double> out(years_);
    for (std::size_t t = 0; t < years_; ++t)
        out[t] = at(t, a, g, k);
    return out;
}

ResidualArray standardized_residuals(const CohortPanel& panel, const ParamVector& params,
                                     const std::vector<std::vector<double>>& lambda_hats) {
    const std::size_t T = panel.years_count();
    const std::size_t K = panel.risk_factors();
    if (lambda_hats.size() != K)
        throw std::invalid_argument("standardized_residuals: need one lambda series per risk factor");
    for (const auto& series : lambda_hats)
        if (series.size() != T)
            throw std::invalid_argument("standardized_residuals: lambda series length differs from panel years");
    const CohortPanel transformed = mom_transform(panel, params.trend);
    const auto mu = transformed_means(panel, params.trend);
    ResidualArray out(T, panel.age_groups(), K + 1);
    for (std::size_t t = 0; t < T; ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k <= K; ++k) {
                    const double lambda = k == 0 ? 1.0 : lambda_hats[k - 1][t];
                    if (!(lambda > 0.0))
                        throw std::invalid_argument("standardized_residuals: lambda_" + std::to_string(k) +
                                                    " must be positive in year " + std::to_string(panel.year(t)));
                    const double mean = mu[params.trend.weight_index(a, g, k)] * lambda;
                    if (!(mean > 0.0))
                        throw std::invalid_argument("standardized_residuals: zero intensity in cell " +
                                                    panel.groups().band(static_cast<std::size_t>(a)).label + ":" +
                                                    std::string(to_string(g)) + ", cause " + panel.causes()[k]);
                    const double n = static_cast<double>(transformed.deaths(t, a, g, k));
                    out.at(t, a, g, k) = (n - mean) / std::sqrt(mean);
                }
    return out;
}

TestEntry correlation_ttest(std::span<const double> x, std::span<const double> y, double level) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3)
        throw std::invalid_argument("correlation_ttest: need at least 3 paired observations");
    const double vx = numerics::sample_variance(x);
    const double vy = numerics::sample_variance(y);
    if (!(vx > 0.0) || !(vy > 0.0))
        throw std::invalid_argument("correlation_ttest: constant residual series");
    const double r = std::clamp(numerics::sample_covariance(x, y) / std::sqrt(vx * vy), -1.0, 1.0);
    TestEntry e;
    const double dof = static_cast<double>(n) - 2.0;
    if (std::abs(r) >= 1.0) {
        e.statistic = r > 0 ? INFINITY : -INFINITY;
        e.p_value = 0.0;
    } else {
        e.statistic = r * std::sqrt(dof / (1.0 - r * r));
        e.p_value = std::min(1.0, 2.0 * numerics::students_t_sf(std::abs(e.statistic), dof));
    }
    e.accepted = e.p_value >= level;
    return e;
}

TestReport cross_correlation_ttest(const ResidualArray& residuals, double level) {
    if (residuals.years() < 3)
        throw std::invalid_argument("cross_correlation_ttest: need at least 3 years");
    TestReport report;
    report.name = "cross_correlation";
    report.level = level;
    for (int a = 0; a < static_cast<int>(residuals.age_groups()); ++a)
        for (Gender g : kAllGenders)
            for (std::size_t k = 0; k < residuals.causes(); ++k)
                for (std::size_t l = k + 1; l < residuals.causes(); ++l) {
                    auto e = correlation_ttest(residuals.series(a, g, k), residuals.series(a, g, l), level);
                    e.label = std::to_string(a) + ":" + std::string(to_string(g)) + ":" + std::to_string(k) + "~" +
                              std::to_string(l);
                    report.entries.push_back(std::move(e));
                }
    return report;
}

// ---------------------------------------------------------------------------
// Serial correlation

TestReport breusch_godfrey(std::span<const double> series, std::size_t max_order, double level) {
    const std::size_t n = series.size();
    if (max_order == 0 || n <= max_order + 2)
        throw std::invalid_argument("breusch_godfrey: series of length " + std::to_string(n) +
                                    " is too short for order " + std::to_string(max_order));
    const double m = numerics::mean(series);
    Eigen::VectorXd e(static_cast<Eigen::Index>(n));
    double sst = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        e(static_cast<Eigen::Index>(t)) = series[t];
        sst += (series[t] - m) * (series[t] - m);
    }
    if (!(sst > 0.0))
        throw std::invalid_argument("breusch_godfrey: constant series");
    TestReport report;
    report.name = "breusch_godfrey";
    report.level = level;
    for (std::size_t p = 1; p <= max_order; ++p) {
        // constant plus p lags, pre-sample lags set to zero
        Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p + 1));
        for (std::size_t t = 0; t < n; ++t) {
            X(static_cast<Eigen::Index>(t), 0) = 1.0;
            for (std::size_t j = 1; j <= p && j <= t; ++j)
                X(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = series[t - j];
        }
        const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(e);
        const double ssr = (e - X * beta).squaredNorm();
        const double r2 = std::clamp(1.0 - ssr / sst, 0.0, 1.0);
        TestEntry entry;
        entry.label = "order " + std::to_string(p);
        entry.statistic = static_cast<double>(n) * r2;
        entry.p_value = numerics::chi_squared_sf(entry.statistic, static_cast<double>(p));
        entry.accepted = entry.p_value >= level;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

TestReport breusch_godfrey(const ResidualArray& residuals, std::size_t max_order, double level) {
    TestReport report;
    report.name = "breusch_godfrey";
    report.level = level;
    for (int a = 0; a < static_cast<int>(residuals.age_groups()); ++a)
        for (Gender g : kAllGenders)
            for (std::size_t k = 0; k < residuals.causes(); ++k) {
                auto one = breusch_godfrey(residuals.series(a, g, k), max_order, level);
                for (auto& e : one.entries)
                    e.label = std::to_string(a) + ":" + std::string(to_string(g)) + ":" + std::to_string(k) + ":" +
                              e.label;
                report.append(one);
            }
    return report;
}

// ---------------------------------------------------------------------------
// Gamma goodness of fit

namespace {

double ks_statistic(std::vector<double> xs, double sigma_sq) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = numerics::gamma_cdf(xs[i], 1.0 / sigma_sq, sigma_sq);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

} // namespace

TestEntry ks_gamma_test(std::span<const double> lambdas, double sigma_sq, const KsOptions& options) {
    if (!(sigma_sq > 0.0))
        throw std::invalid_argument("ks_gamma_test: sigma_sq must be positive");
    if (lambdas.size() < 5)
        throw std::invalid_argument("ks_gamma_test: need at least 5 values");
    const std::size_t n = lambdas.size();
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    TestEntry e;
    e.statistic = ks_statistic({lambdas.begin(), lambdas.end()}, sigma_sq);
    // small-sample correction of the Kolmogorov limit
    e.p_value = numerics::kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * e.statistic);
    if (options.bootstrap > 0) {
        std::size_t exceed = 0, used = 0;
        for (std::size_t b = 0; b < options.bootstrap; ++b) {
            auto rng = numerics::stream_engine(options.seed, b);
            std::gamma_distribution<double> gamma(1.0 / sigma_sq, sigma_sq);
            std::vector<double> draw(n);
            for (auto& x : draw)
                x = gamma(rng);
            double s2 = 0.0;
            try {
                const double s = map_sigma(draw);
                s2 = s * s;
            } catch (const NumericalError&) {
                continue;
            }
            if (!(s2 > 0.0))
                continue;
            ++used;
            exceed += ks_statistic(std::move(draw), s2) >= e.statistic ? 1 : 0;
        }
        if (used > 0)
            e.p_value_bootstrap = static_cast<double>(exceed + 1) / static_cast<double>(used + 1);
    }
    const double decisive = std::isnan(e.p_value_bootstrap) ? e.p_value : e.p_value_bootstrap;
    e.accepted = decisive >= options.level;
    return e;
}

TestReport ks_gamma_test(const RiskFactorEstimates& estimates, const KsOptions& options) {
    TestReport report;
    report.name = "ks_gamma";
    report.level = options.level;
    for (std::size_t k = 0; k < estimates.lambda.size(); ++k) {
        const double s = estimates.sigma.at(k);
        if (!(s > 0.0)) {
            TestEntry e;
            e.label = "factor " + std::to_string(k + 1);
            e.degenerate = true;
            report.entries.push_back(std::move(e));
            continue;
        }
        auto e = ks_gamma_test(estimates.lambda[k], s * s, options);
        e.label = "factor " + std::to_string(k + 1);
        report.entries.push_back(std::move(e));
    }
    return report;
}

} // namespace crplus
