#include "crplus/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/math/tools/roots.hpp>

#include "crplus/errors.hpp"
#include "crplus/numerics.hpp"

namespace crplus {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const char* const kFamilyNames[] = {"alpha", "beta", "zeta", "eta", "kappa", "u", "v", "phi", "psi", "sigma"};

// log Γ(x + n) - log Γ(x) - n log x, accurate for large x.
double log_rising_ratio(double x, double n) {
    if (n == 0.0)
        return 0.0;
    if (x < 100.0)
        return numerics::log_gamma(x + n) - numerics::log_gamma(x) - n * std::log(x);
    auto corr = [](double y) {
        const double y2 = y * y;
        return 1.0 / (12.0 * y) - 1.0 / (360.0 * y * y2) + 1.0 / (1260.0 * y * y2 * y2);
    };
    return (x + n - 0.5) * std::log1p(n / x) - n + corr(x + n) - corr(x);
}

void check_compatible(const CohortPanel& panel, const TrendParams& trend) {
    if (panel.years_count() == 0)
        throw std::invalid_argument("panel has no years");
    if (trend.risk_factors != panel.risk_factors())
        throw std::invalid_argument("panel has K = " + std::to_string(panel.risk_factors()) +
                                    " but parameters have K = " + std::to_string(trend.risk_factors));
    if (!(trend.groups == panel.groups()))
        throw std::invalid_argument("age groups of panel (" + panel.groups().spec() + ") and parameters (" +
                                    trend.groups.spec() + ") differ");
}

double laplace_inverse_clamped(double rate) { return laplace_cdf_inv(std::clamp(rate, 1e-300, 1.0 - 1e-16)); }

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
};

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
    const double mx = numerics::mean(x);
    const double my = numerics::mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0))
        return {my, 0.0};
    const double slope = sxy / sxx;
    return {my - slope * mx, slope};
}

} // namespace

std::string_view to_string(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Family parse_family(std::string_view name) {
    for (Family f : kAllFamilies)
        if (to_string(f) == name)
            return f;
    if (name == "sigma_sq")
        return Family::sigma;
    throw std::invalid_argument("unknown parameter family '" + std::string(name) + "'");
}

void ParamVector::validate() const {
    trend.validate();
    if (sigma_sq.size() != trend.risk_factors)
        throw std::invalid_argument("ParamVector: need one variance per risk factor");
    for (double s : sigma_sq)
        if (!(s > 0.0) || !std::isfinite(s))
            throw std::invalid_argument("ParamVector: risk factor variances must be positive and finite");
    auto finite = [](const std::vector<double>& xs, const char* what) {
        for (double x : xs)
            if (!std::isfinite(x))
                throw std::invalid_argument(std::string("ParamVector: non-finite ") + what);
    };
    finite(trend.alpha, "alpha");
    finite(trend.beta, "beta");
    finite(trend.zeta, "zeta");
    finite(trend.eta, "eta");
    finite(trend.u, "u");
    finite(trend.v, "v");
    finite(trend.phi, "phi");
    finite(trend.psi, "psi");
    for (const auto& [year, value] : trend.kappa)
        if (!std::isfinite(value))
            throw std::invalid_argument("ParamVector: non-finite kappa for birth year " + std::to_string(year));
}

// ---------------------------------------------------------------------------
// Priors

const BlockPrior* PriorSpec::find(Family f) const {
    const auto it = blocks.find(f);
    return it == blocks.end() ? nullptr : &it->second;
}

PriorSpec PriorSpec::smoothing(double c_alpha, double c_beta, double c_zeta, double c_eta, double c_kappa) {
    PriorSpec p;
    p.blocks[Family::alpha] = {c_alpha, 1e-2, 1};
    p.blocks[Family::beta] = {c_beta, 1e-2, 1};
    p.blocks[Family::zeta] = {c_zeta, 1e-4, 1};
    p.blocks[Family::eta] = {c_eta, 1e-4, 1};
    p.blocks[Family::kappa] = {c_kappa, 1e-4, 1};
    return p;
}

namespace {

std::vector<double> difference_coefficients(int order) {
    if (order < 1 || order > 3)
        throw std::invalid_argument("prior difference order must be 1, 2 or 3");
    std::vector<double> c(static_cast<std::size_t>(order) + 1);
    double binom = 1.0;
    for (int nu = 0; nu <= order; ++nu) {
        c[static_cast<std::size_t>(nu)] = (nu % 2 == 0 ? 1.0 : -1.0) * binom;
        binom = binom * (order - nu) / (nu + 1);
    }
    return c;
}

double row_log_prior(std::span<const double> x, const BlockPrior& prior) {
    if (prior.c == 0.0)
        return 0.0;
    const auto coef = difference_coefficients(prior.order);
    double diff = 0.0;
    for (std::size_t i = 0; i + coef.size() <= x.size(); ++i) {
        double d = 0.0;
        for (std::size_t nu = 0; nu < coef.size(); ++nu)
            d += coef[nu] * x[i + nu];
        diff += d * d;
    }
    double level = 0.0;
    for (double v : x)
        level += v * v;
    return -prior.c * (diff + prior.epsilon * level) + prior_log_normaliser(x.size(), prior);
}

} // namespace

Eigen::MatrixXd prior_precision(std::size_t n, const BlockPrior& prior) {
    const auto coef = difference_coefficients(prior.order);
    const std::size_t rows = n >= coef.size() ? n - coef.size() + 1 : 0;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t nu = 0; nu < coef.size(); ++nu)
            D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + nu)) = coef[nu];
    Eigen::MatrixXd P = D.transpose() * D;
    P.diagonal().array() += prior.epsilon;
    return 2.0 * prior.c * P;
}

double prior_log_normaliser(std::size_t n, const BlockPrior& prior) {
    if (prior.c < 0.0 || prior.epsilon < 0.0)
        throw std::invalid_argument("prior needs c >= 0 and epsilon >= 0");
    if (prior.c == 0.0 || prior.epsilon == 0.0 || n == 0)
        return 0.0;
    const Eigen::LLT<Eigen::MatrixXd> llt(prior_precision(n, prior));
    if (llt.info() != Eigen::Success)
        throw NumericalError("prior precision matrix is not positive definite");
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

double log_prior(const ParamVector& params, const PriorSpec& prior) {
    const auto& p = params.trend;
    const std::size_t A = p.groups.size();
    const std::size_t K = p.risk_factors;
    double total = 0.0;
    std::vector<double> row;
    for (const auto& [family, spec] : prior.blocks) {
        if (spec.c == 0.0)
            continue;
        switch (family) {
        case Family::alpha:
        case Family::beta:
        case Family::zeta:
        case Family::eta: {
            const auto& arr = family == Family::alpha  ? p.alpha
                              : family == Family::beta ? p.beta
                              : family == Family::zeta ? p.zeta
                                                       : p.eta;
            for (Gender g : kAllGenders) {
                row.clear();
                for (std::size_t a = 0; a < A; ++a)
                    row.push_back(arr[cell_index(static_cast<int>(a), g)]);
                total += row_log_prior(row, spec);
            }
            break;
        }
        case Family::u:
        case Family::v: {
            const auto& arr = family == Family::u ? p.u : p.v;
            for (Gender g : kAllGenders)
                for (std::size_t k = 1; k <= K; ++k) {
                    row.clear();
                    for (std::size_t a = 0; a < A; ++a)
                        row.push_back(arr[p.weight_index(static_cast<int>(a), g, k)]);
                    total += row_log_prior(row, spec);
                }
            break;
        }
        case Family::kappa:
            row.clear();
            for (const auto& [year, value] : p.kappa)
                row.push_back(value);
            total += row_log_prior(row, spec);
            break;
        case Family::phi:
        case Family::psi: {
            const auto& arr = family == Family::phi ? p.phi : p.psi;
            row.assign(arr.begin() + 1, arr.end());
            total += row_log_prior(row, spec);
            break;
        }
        case Family::sigma:
            break;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Likelihoods

std::vector<double> expected_deaths(const CohortPanel& panel, const TrendParams& trend, std::size_t t) {
    const std::size_t causes = trend.cause_count();
    std::vector<double> rho(trend.cells() * causes);
    const double year = panel.year(t);
    for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
        for (Gender g : kAllGenders) {
            const double m = static_cast<double>(panel.exposure(t, a, g));
            const double q = death_prob(a, g, year, trend);
            const std::span<double> w(rho.data() + cell_index(a, g) * causes, causes);
            cause_weights(a, g, year, trend, w);
            for (double& x : w)
                x *= m * q;
        }
    return rho;
}

namespace {

double log_factorial_sum(const CohortPanel& panel) {
    double total = 0.0;
    for (std::size_t t = 0; t < panel.years_count(); ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k < panel.cause_count(); ++k)
                    total += numerics::log_gamma(static_cast<double>(panel.deaths(t, a, g, k)) + 1.0);
    return total;
}

// Eq. (5) without the data-only Σ log n! term.
double likelihood_kernel(const CohortPanel& panel, const ParamVector& params,
                         std::span<const double> variance_multiplier) {
    const auto& trend = params.trend;
    const std::size_t K = trend.risk_factors;
    if (!variance_multiplier.empty() && variance_multiplier.size() != panel.years_count())
        throw std::invalid_argument("log_likelihood: need one variance multiplier per year");
    double total = 0.0;
    std::vector<double> nk(K + 1), rk(K + 1);
    for (std::size_t t = 0; t < panel.years_count(); ++t) {
        const auto rho = expected_deaths(panel, trend, t);
        std::fill(nk.begin(), nk.end(), 0.0);
        std::fill(rk.begin(), rk.end(), 0.0);
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k <= K; ++k) {
                    const double n = static_cast<double>(panel.deaths(t, a, g, k));
                    const double r = rho[trend.weight_index(a, g, k)];
                    if (!(r > 0.0)) {
                        if (n > 0.0)
                            return kNegInf;
                        continue;
                    }
                    if (n > 0.0)
                        total += n * std::log(r);
                    if (k == 0)
                        total -= r;
                    nk[k] += n;
                    rk[k] += r;
                }
        for (std::size_t k = 1; k <= K; ++k) {
            const double s2 = params.sigma_sq[k - 1] * (variance_multiplier.empty() ? 1.0 : variance_multiplier[t]);
            if (!(s2 > 0.0))
                throw std::invalid_argument("log_likelihood: risk factor variance must be positive");
            const double inv = 1.0 / s2;
            total += log_rising_ratio(inv, nk[k]) - (inv + nk[k]) * std::log1p(rk[k] / inv);
        }
    }
    return std::isnan(total) ? kNegInf : total;
}

} // namespace

LikelihoodEvaluator::LikelihoodEvaluator(const CohortPanel& panel)
    : panel_(&panel), log_factorials_(log_factorial_sum(panel)) {}

double LikelihoodEvaluator::operator()(const ParamVector& params, std::span<const double> variance_multiplier) const {
    check_compatible(*panel_, params.trend);
    if (params.sigma_sq.size() != params.trend.risk_factors)
        throw std::invalid_argument("log_likelihood: need one variance per risk factor");
    for (double s : params.sigma_sq)
        if (!(s > 0.0))
            throw std::invalid_argument("log_likelihood: risk factor variance must be positive");
    return likelihood_kernel(*panel_, params, variance_multiplier) - log_factorials_;
}

double log_likelihood(const CohortPanel& panel, const ParamVector& params, std::span<const double> variance_multiplier) {
    params.validate();
    return LikelihoodEvaluator(panel)(params, variance_multiplier);
}

double log_likelihood_bernoulli(const CohortPanel& panel, const TrendParams& trend) {
    check_compatible(panel, trend);
    if (panel.risk_factors() != 0)
        throw std::invalid_argument("log_likelihood_bernoulli: needs a panel without common risk factors");
    double total = 0.0;
    for (std::size_t t = 0; t < panel.years_count(); ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders) {
                const auto m = panel.exposure(t, a, g);
                const auto n = panel.deaths(t, a, g, 0);
                if (n > m)
                    throw DataError("deaths exceed exposure in year " + std::to_string(panel.year(t)) +
                                    ", age group " + panel.groups().band(static_cast<std::size_t>(a)).label +
                                    ", gender " + std::string(to_string(g)));
                const double q = death_prob(a, g, panel.year(t), trend);
                const double dn = static_cast<double>(n), dm = static_cast<double>(m);
                total += numerics::log_gamma(dm + 1.0) - numerics::log_gamma(dn + 1.0) -
                         numerics::log_gamma(dm - dn + 1.0);
                if (n > 0)
                    total += q > 0.0 ? dn * std::log(q) : kNegInf;
                if (m > n)
                    total += q < 1.0 ? (dm - dn) * std::log1p(-q) : kNegInf;
            }
    return total;
}

// ---------------------------------------------------------------------------
// MAP estimates of risk factors

namespace {

struct SectorTotals {
    double deaths = 0.0;
    double rho = 0.0;
};

SectorTotals sector_totals(const CohortPanel& panel, const TrendParams& trend, std::size_t k, std::size_t t) {
    check_compatible(panel, trend);
    if (k < 1 || k > trend.risk_factors)
        throw std::out_of_range("risk factor index " + std::to_string(k) + " out of range");
    if (t >= panel.years_count())
        throw std::out_of_range("year index out of range");
    const auto rho = expected_deaths(panel, trend, t);
    SectorTotals s;
    for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
        for (Gender g : kAllGenders) {
            s.deaths += static_cast<double>(panel.deaths(t, a, g, k));
            s.rho += rho[trend.weight_index(a, g, k)];
        }
    return s;
}

} // namespace

double map_risk_factor(double sigma_sq, double deaths, double rho) {
    if (!(sigma_sq > 0.0))
        throw std::invalid_argument("map_risk_factor: variance must be positive");
    const double inv = 1.0 / sigma_sq;
    const double numerator = inv - 1.0 + deaths;
    if (!(numerator > 0.0))
        throw DataError("insufficient data for a MAP risk factor estimate (1/sigma^2 - 1 + n <= 0)");
    return numerator / (inv + rho);
}

double map_risk_factor(const CohortPanel& panel, const ParamVector& params, std::size_t k, std::size_t t) {
    const auto s = sector_totals(panel, params.trend, k, t);
    return map_risk_factor(params.sigma_sq.at(k - 1), s.deaths, s.rho);
}

double map_conditional_log_posterior(double lambda, double sigma_sq, double deaths, double rho) {
    const double inv = 1.0 / sigma_sq;
    return (inv - 1.0 + deaths) * std::log(lambda) - (inv + rho) * lambda;
}

double map_sigma_lhs(double sigma) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("map_sigma_lhs: sigma must be positive");
    const double x = 1.0 / (sigma * sigma);
    if (x > 1e3) {
        // asymptotic expansion of ψ(x) - log x
        const double x2 = x * x;
        return -1.0 / (2.0 * x) - 1.0 / (12.0 * x2) + 1.0 / (120.0 * x2 * x2) - 1.0 / (252.0 * x2 * x2 * x2);
    }
    return 2.0 * std::log(sigma) + numerics::digamma(x);
}

double map_sigma_rhs(std::span<const double> lambdas) {
    if (lambdas.empty())
        throw std::invalid_argument("map_sigma: empty risk factor series");
    std::vector<double> terms;
    terms.reserve(lambdas.size());
    for (double l : lambdas) {
        if (!(l > 0.0))
            throw std::invalid_argument("map_sigma: risk factor estimates must be positive");
        // 1 + log λ - λ, with the cancellation near λ = 1 handled by log1p
        const double d = l - 1.0;
        terms.push_back(std::log1p(d) - d);
    }
    return numerics::stable_sum(terms) / static_cast<double>(lambdas.size());
}

double map_sigma(std::span<const double> lambdas) {
    const double rhs = map_sigma_rhs(lambdas);
    if (!(rhs < 0.0))
        throw NumericalError("map_sigma: degenerate series (all estimates equal 1), root at sigma -> 0");
    auto f = [rhs](double s) { return map_sigma_lhs(std::exp(s)) - rhs; };
    double lo = 0.5 * std::log(-2.0 * rhs) - 1.0;
    while (f(lo) <= 0.0) {
        lo -= 1.0;
        if (lo < -700.0)
            throw NumericalError("map_sigma: no lower bracket");
    }
    double hi = lo + 1.0;
    while (f(hi) >= 0.0) {
        hi += 1.0;
        if (hi > 700.0)
            throw NumericalError("map_sigma: no upper bracket");
    }
    std::uintmax_t iterations = 300;
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                           iterations);
    const double root = 0.5 * (a + b);
    return std::exp(root);
}

double map_risk_factor_approx(double deaths, double rho) {
    if (!(rho > 0.0))
        throw std::invalid_argument("map_risk_factor_approx: expected deaths must be positive");
    return (deaths - 1.0) / rho;
}

double map_risk_factor_approx(const CohortPanel& panel, const ParamVector& params, std::size_t k, std::size_t t) {
    const auto s = sector_totals(panel, params.trend, k, t);
    return map_risk_factor_approx(s.deaths, s.rho);
}

double map_sigma_approx(std::span<const double> lambdas) {
    if (lambdas.empty())
        throw std::invalid_argument("map_sigma_approx: empty series");
    double s = 0.0;
    for (double l : lambdas)
        s += (l - 1.0) * (l - 1.0);
    return std::sqrt(s / static_cast<double>(lambdas.size()));
}

RiskFactorEstimates map_risk_factors(const CohortPanel& panel, const ParamVector& params,
                                     std::size_t max_iterations, double tolerance) {
    params.validate();
    const std::size_t K = params.trend.risk_factors;
    const std::size_t T = panel.years_count();
    std::vector<std::vector<SectorTotals>> totals(K, std::vector<SectorTotals>(T));
    for (std::size_t t = 0; t < T; ++t) {
        const auto rho = expected_deaths(panel, params.trend, t);
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 1; k <= K; ++k) {
                    totals[k - 1][t].deaths += static_cast<double>(panel.deaths(t, a, g, k));
                    totals[k - 1][t].rho += rho[params.trend.weight_index(a, g, k)];
                }
    }
    RiskFactorEstimates out;
    out.lambda.assign(K, std::vector<double>(T));
    out.sigma.assign(K, 0.0);
    out.converged = true;
    for (std::size_t k = 0; k < K; ++k) {
        double s2 = params.sigma_sq[k];
        bool done = false;
        std::size_t it = 0;
        while (!done && it < max_iterations) {
            ++it;
            for (std::size_t t = 0; t < T; ++t)
                out.lambda[k][t] = map_risk_factor(s2, totals[k][t].deaths, totals[k][t].rho);
            const double sigma = map_sigma(out.lambda[k]);
            const double next = sigma * sigma;
            done = std::abs(next - s2) <= tolerance * std::max(1.0, s2);
            s2 = next;
        }
        for (std::size_t t = 0; t < T; ++t)
            out.lambda[k][t] = map_risk_factor(s2, totals[k][t].deaths, totals[k][t].rho);
        out.sigma[k] = std::sqrt(s2);
        out.iterations = std::max(out.iterations, it);
        out.converged = out.converged && done;
    }
    return out;
}

RiskFactorEstimates map_risk_factors_approx(const CohortPanel& panel, const ParamVector& params) {
    const std::size_t K = params.trend.risk_factors;
    RiskFactorEstimates out;
    out.lambda.assign(K, std::vector<double>(panel.years_count()));
    for (std::size_t k = 1; k <= K; ++k) {
        for (std::size_t t = 0; t < panel.years_count(); ++t)
            out.lambda[k - 1][t] = map_risk_factor_approx(panel, params, k, t);
        out.sigma.push_back(map_sigma_approx(out.lambda[k - 1]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matching of moments

CohortPanel mom_transform(const CohortPanel& panel, const TrendParams& trend) {
    check_compatible(panel, trend);
    const std::size_t last = panel.years_count() - 1;
    const auto rho_T = expected_deaths(panel, trend, last);
    CohortPanel out = panel;
    for (std::size_t t = 0; t < panel.years_count(); ++t) {
        const auto rho_t = expected_deaths(panel, trend, t);
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k < panel.cause_count(); ++k) {
                    const auto n = panel.deaths(t, a, g, k);
                    if (n == 0)
                        continue;
                    const std::size_t i = trend.weight_index(a, g, k);
                    if (!(rho_t[i] > 0.0) || !(rho_T[i] > 0.0))
                        throw DataError("matching of moments: zero expected deaths in year " +
                                        std::to_string(panel.year(t)) + ", age group " +
                                        panel.groups().band(static_cast<std::size_t>(a)).label + ", gender " +
                                        std::string(to_string(g)) + ", cause " + std::to_string(k));
                    const double x = rho_T[i] / rho_t[i] * static_cast<double>(n);
                    out.set_deaths(t, a, g, k, static_cast<std::int64_t>(std::floor(x + 1e-12 * std::max(1.0, x))));
                }
    }
    return out;
}

MomFit mom_fit(const CohortPanel& panel, const TrendParams& shape, const MomOptions& options) {
    check_compatible(panel, shape);
    shape.validate();
    const std::size_t T = panel.years_count();
    if (T < 2)
        throw std::invalid_argument("matching of moments needs at least two years");
    const std::size_t K = panel.risk_factors();
    const std::size_t causes = K + 1;
    const double corr = options.zero_count_correction;

    MomFit fit;
    fit.params.trend = shape;
    auto& p = fit.params.trend;
    std::vector<double> x(T), y(T);

    for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
        for (Gender g : kAllGenders) {
            const std::size_t c = cell_index(a, g);
            for (std::size_t t = 0; t < T; ++t) {
                const double m = static_cast<double>(panel.exposure(t, a, g));
                if (!(m > 0.0))
                    throw DataError("matching of moments: zero exposure in year " + std::to_string(panel.year(t)) +
                                    ", age group " + panel.groups().band(static_cast<std::size_t>(a)).label);
                const double n = static_cast<double>(panel.total_deaths(t, a, g));
                double rate = (n > 0.0 ? n : corr) / m;
                if (rate >= 1.0)
                    rate = std::max(m - corr, 0.5) / m;
                x[t] = trend_time(panel.year(t), p.zeta[c], p.eta[c], p.t0);
                y[t] = laplace_inverse_clamped(rate) - p.kappa_at(p.birth_year(a, panel.year(t)));
            }
            const auto line = least_squares(x, y);
            p.alpha[c] = line.intercept;
            p.beta[c] = line.slope;
        }

    for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
        for (Gender g : kAllGenders)
            for (std::size_t k = 0; k < causes; ++k) {
                for (std::size_t t = 0; t < T; ++t) {
                    const double m = static_cast<double>(panel.exposure(t, a, g));
                    const double q = death_prob(a, g, panel.year(t), p);
                    const double n = static_cast<double>(panel.deaths(t, a, g, k));
                    x[t] = trend_time(panel.year(t), p.phi[k], p.psi[k], p.t0);
                    y[t] = std::log((n > 0.0 ? n : corr) / (m * q));
                }
                const auto line = least_squares(x, y);
                const std::size_t i = p.weight_index(a, g, k);
                p.u[i] = line.intercept;
                p.v[i] = line.slope;
            }

    fit.transformed = mom_transform(panel, p);
    fit.cell_variance.assign(p.cells() * causes, 0.0);
    fit.params.sigma_sq.assign(K, 0.0);
    const std::size_t last = T - 1;
    std::vector<double> w_T(causes), series(T);
    for (std::size_t k = 1; k <= K; ++k) {
        double numerator = 0.0, denominator = 0.0;
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders) {
                const double m_T = static_cast<double>(panel.exposure(last, a, g));
                const double q_T = death_prob(a, g, panel.year(last), p);
                cause_weights(a, g, panel.year(last), p, w_T);
                for (std::size_t t = 0; t < T; ++t)
                    series[t] = static_cast<double>(fit.transformed.deaths(t, a, g, k)) / (m_T * q_T);
                const double var = numerics::sample_variance(series);
                fit.cell_variance[p.weight_index(a, g, k)] = var;
                numerator += var - w_T[k] / (m_T * q_T);
                denominator += w_T[k] * w_T[k];
            }
        fit.params.sigma_sq[k - 1] = denominator > 0.0 ? std::max(0.0, numerator / denominator) : 0.0;
    }
    return fit;
}

} // namespace crplus
