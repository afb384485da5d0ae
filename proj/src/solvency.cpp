#include "crplus/solvency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

#include "crplus/errors.hpp"
#include "crplus/numerics.hpp"

namespace crplus {

void Scenario::validate(std::size_t risk_factors) const {
    for (const auto& [k, lambda] : fixed_factors) {
        if (k < 1 || static_cast<std::size_t>(k) > risk_factors)
            throw std::invalid_argument("scenario: risk factor " + std::to_string(k) + " outside 1.." +
                                        std::to_string(risk_factors));
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw std::invalid_argument("scenario: lambda_" + std::to_string(k) + " must be positive");
    }
}

namespace {

LossDistribution conditional_s(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                               const std::map<int, double>& fixed, double unit, const PanjerOptions& options) {
    auto sectors = build_sectors(portfolio, factors, unit);
    for (auto& s : sectors) {
        const auto it = fixed.find(s.k);
        if (it != fixed.end())
            s.count_law = PoissonLaw{s.intensity * it->second};
    }
    std::vector<LossDistribution> laws(sectors.size());
    for (std::size_t i = 0; i < sectors.size(); ++i)
        laws[i] = panjer_compound(sectors[i], options);
    auto out = convolve_sectors(laws);
    out.unit = unit;
    return out;
}

} // namespace

ScenarioResult scenario_loss(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                             const Scenario& scenario, double unit, const PanjerOptions& options) {
    scenario.validate(std::max<std::size_t>(portfolio.causes(), factors.size()));
    ScenarioResult out;
    out.s = conditional_s(portfolio, factors, scenario.fixed_factors, unit, options);
    out.loss = loss_from_annuity(survival_payment_distribution(portfolio, unit), out.s);
    return out;
}

GammaQuadrature gamma_quadrature(double shape, double scale, std::size_t n) {
    if (!(shape > 0.0) || !(scale > 0.0) || n == 0)
        throw std::invalid_argument("gamma_quadrature: shape, scale and n must be positive");
    // Golub-Welsch on the Jacobi matrix of the generalised Laguerre weight x^(shape-1) e^-x
    const double alpha = shape - 1.0;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        J(ii, ii) = 2.0 * static_cast<double>(i) + alpha + 1.0;
        if (i + 1 < n) {
            const double b = std::sqrt(static_cast<double>(i + 1) * (static_cast<double>(i + 1) + alpha));
            J(ii, ii + 1) = J(ii + 1, ii) = b;
        }
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    if (eig.info() != Eigen::Success)
        throw NumericalError("gamma_quadrature: eigenvalue iteration failed");
    GammaQuadrature q;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double v0 = eig.eigenvectors()(0, ii);
        q.nodes.push_back(std::max(eig.eigenvalues()(ii), 0.0) * scale);
        q.weights.push_back(v0 * v0);
        total += v0 * v0;
    }
    for (auto& w : q.weights)
        w /= total;
    return q;
}

LossDistribution mix_over_factor(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors, int k,
                                 double unit, std::size_t nodes, const PanjerOptions& options) {
    const auto spec = std::find_if(factors.begin(), factors.end(), [&](const RiskFactorSpec& f) { return f.k == k; });
    if (spec == factors.end())
        throw std::invalid_argument("mix_over_factor: no risk factor " + std::to_string(k));
    const auto rule = gamma_quadrature(1.0 / spec->variance, spec->variance, nodes);
    std::vector<LossDistribution> laws;
    std::vector<double> weights;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        if (!(rule.weights[i] > 0.0) || !(rule.nodes[i] > 0.0))
            continue;
        laws.push_back(conditional_s(portfolio, factors, {{k, rule.nodes[i]}}, unit, options));
        weights.push_back(rule.weights[i]);
    }
    const double total = numerics::stable_sum(weights);
    for (auto& w : weights)
        w /= total;
    return mix(laws, weights);
}

// ---------------------------------------------------------------------------
// Liabilities

double DiscountCurve::at(int t) const {
    if (t == 0)
        return 1.0;
    const auto it = factors.find(t);
    if (it == factors.end())
        throw DataError("discount curve has no factor for t = " + std::to_string(t));
    return it->second;
}

DiscountCurve DiscountCurve::forward(int s) const {
    const double base = at(s);
    DiscountCurve out;
    for (const auto& [t, d] : factors)
        if (t > s)
            out.factors[t - s] = d / base;
    return out;
}

DiscountCurve DiscountCurve::flat(double rate, int years) {
    if (!(rate > -1.0))
        throw std::invalid_argument("flat discount curve needs rate > -1");
    DiscountCurve c;
    for (int t = 1; t <= years; ++t)
        c.factors[t] = std::pow(1.0 + rate, -t);
    return c;
}

void DiscountCurve::validate() const {
    for (const auto& [t, d] : factors) {
        if (t < 1)
            throw std::invalid_argument("discount curve: maturities start at 1");
        if (!(d > 0.0 && d <= 1.0))
            throw std::invalid_argument("discount curve: D(" + std::to_string(t) + ") outside (0, 1]");
    }
}

double term_life_bel(int age, int year, int d, const DiscountCurve& curve, const DeathProbFn& q) {
    if (d < 0)
        throw std::invalid_argument("term_life_bel: negative term");
    double survival = 1.0;
    double value = 0.0;
    for (int t = 0; t <= d; ++t) {
        const double qt = q(age + t, year + t);
        if (!(qt >= 0.0 && qt <= 1.0))
            throw std::invalid_argument("term_life_bel: q outside [0, 1]");
        value += curve.at(t + 1) * survival * qt;
        survival *= 1.0 - qt;
    }
    return value;
}

double term_life_bel(int age, Gender g, int year, int d, const DiscountCurve& curve, const TrendParams& params,
                     int terminal_age) {
    return term_life_bel(age, year, d, curve,
                         [&](int x, int t) { return cohort_death_prob(x, g, t, params, terminal_age); });
}

DeltaBofResult delta_bof_distribution(std::span<const TermPolicy> policies, const BondAsset& asset,
                                      const DiscountCurve& curve, int year, std::span<const TrendParams> samples,
                                      const TrendParams& mean_params, const DeltaBofOptions& options) {
    if (samples.empty())
        throw std::invalid_argument("delta_bof_distribution: no parameter samples");
    if (!(asset.coupon > -1.0))
        throw std::invalid_argument("delta_bof_distribution: coupon must exceed -1");
    if (options.lattice_points == 0)
        throw std::invalid_argument("delta_bof_distribution: lattice_points must be positive");
    for (const auto& p : policies) {
        if (!(p.sum_insured > 0.0))
            throw std::invalid_argument("delta_bof_distribution: sums insured must be positive");
        if (p.term < 1 || !(p.count >= 0.0))
            throw std::invalid_argument("delta_bof_distribution: policies need term >= 1 and count >= 0");
    }
    curve.validate();
    const double d1 = curve.at(1);
    const DiscountCurve next = curve.forward(1);
    const int omega = options.terminal_age;

    DeltaBofResult out;
    for (const auto& p : policies)
        out.bel0 += p.count * p.sum_insured *
                    term_life_bel(p.age, p.gender, year, p.term - 1, curve, mean_params, omega);
    out.deterministic_part = asset.nominal * (1.0 - d1 * (1.0 + asset.coupon)) - out.bel0;

    // A¹ per sample and policy, with one year less to run
    const std::size_t m = samples.size();
    std::vector<std::vector<double>> a1(m, std::vector<double>(policies.size(), 0.0));
    numerics::parallel_for(m, numerics::worker_count(options.threads), [&](std::size_t h) {
        for (std::size_t i = 0; i < policies.size(); ++i) {
            const auto& p = policies[i];
            if (p.term >= 2)
                a1[h][i] = term_life_bel(p.age + 1, p.gender, year + 1, p.term - 2, next, samples[h], omega);
        }
    });
    double largest = 0.0;
    for (std::size_t h = 0; h < m; ++h)
        for (std::size_t i = 0; i < policies.size(); ++i)
            largest = std::max(largest, policies[i].sum_insured * (1.0 - a1[h][i]));
    const double unit = largest > 0.0 ? largest / static_cast<double>(options.lattice_points) : 1.0;
    out.unit = unit;

    std::vector<LossDistribution> laws(m);
    numerics::parallel_for(m, numerics::worker_count(options.threads), [&](std::size_t h) {
        Portfolio portfolio;
        double kept = 0.0;
        for (std::size_t i = 0; i < policies.size(); ++i) {
            const auto& p = policies[i];
            kept += p.count * p.sum_insured * a1[h][i];
            Policyholder holder;
            holder.id = "policy-" + std::to_string(i);
            holder.gender = p.gender;
            holder.death_prob = cohort_death_prob(p.age, p.gender, year, samples[h], omega);
            holder.multiplicity = p.count;
            const SeverityAtom strain{p.sum_insured * (1.0 - a1[h][i]), 1.0};
            holder.payment = stochastic_round(std::span<const SeverityAtom>(&strain, 1), unit);
            holder.survival_payment = LatticeSeverity::point(unit, 0);
            portfolio.holders.push_back(std::move(holder));
        }
        LossDistribution law = aggregate_portfolio(portfolio, {}, unit, options.panjer);
        law.unit = unit * d1;
        law.origin = d1 * kept;
        laws[h] = std::move(law);
    });
    const std::vector<double> weights(m, 1.0 / static_cast<double>(m));
    LossDistribution pooled = m == 1 ? laws.front() : mix(laws, weights);
    out.delta_bof = shift_by(pooled, out.deterministic_part);
    out.samples = m;
    return out;
}

DeltaBofResult delta_bof_distribution(std::span<const TermPolicy> policies, const BondAsset& asset,
                                      const DiscountCurve& curve, int year, const McmcChain& chain,
                                      const DeltaBofOptions& options) {
    if (chain.empty())
        throw std::invalid_argument("delta_bof_distribution: empty chain");
    const TrendParams mean = chain.mean().trend;
    std::vector<TrendParams> samples;
    if (!options.parameter_uncertainty) {
        samples.push_back(mean);
    } else {
        const std::size_t n = chain.samples.size();
        const std::size_t keep = options.max_samples == 0 ? n : std::min(n, options.max_samples);
        for (std::size_t i = 0; i < keep; ++i)
            samples.push_back(chain.at(i * n / keep).trend);
    }
    return delta_bof_distribution(policies, asset, curve, year, samples, mean, options);
}

double scr(const LossDistribution& delta_bof) {
    if (delta_bof.truncation_mass >= 0.005)
        throw NumericalError("scr: truncated tail mass " + std::to_string(delta_bof.truncation_mass) +
                             " reaches the 0.5% level");
    return quantile(delta_bof, 0.995);
}

LossSummary summarize(const LossDistribution& dist) {
    LossSummary s;
    for (double p : s.probs) {
        try {
            s.quantiles.push_back(quantile(dist, p));
        } catch (const NumericalError&) {
            s.quantiles.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    s.mean = dist.mean();
    s.sd = std::sqrt(std::max(0.0, dist.variance()));
    s.truncation_mass = dist.truncation_mass;
    return s;
}

} // namespace crplus
