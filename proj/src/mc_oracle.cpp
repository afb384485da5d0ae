#include "crplus/mc_oracle.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "crplus/errors.hpp"
#include "crplus/numerics.hpp"

namespace crplus {

namespace {

const char* kGenerator = "mt19937_64 seeded by seed_seq(seed, chunk), libstdc++ distributions";

struct Head {
    const Policyholder* holder;
    std::uint64_t count;
    std::vector<double> rates; // q w_k
    LatticeSeverity payment;
    std::discrete_distribution<std::size_t> payment_draw;
    bool fixed_payment;
    std::size_t payment_multiple;
    LatticeSeverity survival;
    std::discrete_distribution<std::size_t> survival_draw;
    bool fixed_survival;
    std::size_t survival_multiple;
};

bool single_atom(const LatticeSeverity& s, std::size_t& where) {
    std::size_t atoms = 0;
    for (std::size_t n = 0; n < s.pmf.size(); ++n)
        if (s.pmf[n] > 0.0) {
            ++atoms;
            where = n;
        }
    return atoms <= 1;
}

std::vector<Head> prepare(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors, double unit) {
    if (!(unit > 0.0))
        throw std::invalid_argument("simulation unit must be positive");
    const std::size_t K = factors.size();
    std::vector<Head> heads;
    for (const auto& h : portfolio.holders) {
        h.validate();
        if (h.causes() != K)
            throw std::invalid_argument("policyholder '" + h.id + "' has " + std::to_string(h.causes()) +
                                        " risk factors, expected " + std::to_string(K));
        const double m = std::round(h.multiplicity);
        if (std::abs(m - h.multiplicity) > 1e-9)
            throw std::invalid_argument("policyholder '" + h.id + "' has a non-integer multiplicity");
        Head head{&h, static_cast<std::uint64_t>(m), {}, stochastic_round(h.payment, unit), {}, false, 0,
                  stochastic_round(h.survival_payment, unit), {}, false, 0};
        for (double w : h.weights)
            head.rates.push_back(h.death_prob * w);
        head.fixed_payment = single_atom(head.payment, head.payment_multiple);
        head.payment_draw = std::discrete_distribution<std::size_t>(head.payment.pmf.begin(), head.payment.pmf.end());
        head.fixed_survival = single_atom(head.survival, head.survival_multiple);
        head.survival_draw =
            std::discrete_distribution<std::size_t>(head.survival.pmf.begin(), head.survival.pmf.end());
        heads.push_back(std::move(head));
    }
    for (const auto& f : factors)
        if (!(f.variance > 0.0))
            throw std::invalid_argument("risk factor variance must be positive");
    return heads;
}

std::uint64_t payments(Head& head, std::uint64_t deaths, std::mt19937_64& rng) {
    if (head.fixed_payment)
        return deaths * head.payment_multiple;
    std::uint64_t total = 0;
    for (std::uint64_t j = 0; j < deaths; ++j)
        total += head.payment_draw(rng);
    return total;
}

std::uint64_t survival_total(Head& head, std::mt19937_64& rng) {
    if (head.fixed_survival)
        return head.count * head.survival_multiple;
    std::uint64_t total = 0;
    for (std::uint64_t j = 0; j < head.count; ++j)
        total += head.survival_draw(rng);
    return total;
}

double draw_factor(std::gamma_distribution<double>& gamma, double cap, std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 1'000'000; ++attempt) {
        const double x = gamma(rng);
        if (x <= cap)
            return x;
    }
    throw NumericalError("truncated gamma sampler: acceptance probability is too small");
}

LossDistribution histogram(const std::vector<std::int64_t>& values, double unit) {
    LossDistribution d;
    d.unit = unit;
    if (values.empty()) {
        d.pmf = {1.0};
        return d;
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    d.origin = static_cast<double>(*lo) * unit;
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(*hi - *lo) + 1, 0);
    for (auto v : values)
        ++counts[static_cast<std::size_t>(v - *lo)];
    d.pmf.resize(counts.size());
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        d.pmf[i] = static_cast<double>(counts[i]) / n;
    return d;
}

// One simulated (S, ΣX) pair per call.
using Simulator = std::function<std::pair<std::uint64_t, std::uint64_t>(std::vector<Head>&, std::mt19937_64&)>;

SimResult run(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors, const SimConfig& cfg, double unit,
              const Simulator& simulate) {
    if (cfg.n_sims < 1)
        throw std::invalid_argument("SimConfig: n_sims must be at least 1");
    const auto prototype = prepare(portfolio, factors, unit);
    const std::size_t chunks = (cfg.n_sims + kSimChunk - 1) / kSimChunk;
    std::vector<std::int64_t> s(cfg.n_sims), loss(cfg.n_sims);
    numerics::parallel_for(chunks, numerics::worker_count(cfg.threads), [&](std::size_t c) {
        auto heads = prototype;
        auto rng = numerics::stream_engine(cfg.seed, c);
        const std::size_t end = std::min(cfg.n_sims, (c + 1) * kSimChunk);
        for (std::size_t i = c * kSimChunk; i < end; ++i) {
            const auto [paid, survival] = simulate(heads, rng);
            s[i] = static_cast<std::int64_t>(paid);
            loss[i] = static_cast<std::int64_t>(survival) - static_cast<std::int64_t>(paid);
        }
    });
    SimResult r;
    r.s = histogram(s, unit);
    r.loss = histogram(loss, unit);
    r.generator = kGenerator;
    r.seed = cfg.seed;
    r.n_sims = cfg.n_sims;
    return r;
}

} // namespace

SimResult simulate_bernoulli(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                             const SimConfig& cfg, double unit) {
    double q_max = 0.0;
    for (const auto& h : portfolio.holders)
        q_max = std::max(q_max, h.death_prob);
    const double cap = cfg.truncate_factors && q_max > 0.0 ? 1.0 / q_max : INFINITY;
    const std::vector<RiskFactorSpec> rf(factors.begin(), factors.end());

    return run(portfolio, factors, cfg, unit, [rf, cap](std::vector<Head>& heads, std::mt19937_64& rng) {
        std::vector<double> lambda(rf.size() + 1, 1.0);
        for (std::size_t k = 0; k < rf.size(); ++k) {
            std::gamma_distribution<double> gamma(1.0 / rf[k].variance, rf[k].variance);
            lambda[k + 1] = draw_factor(gamma, cap, rng);
        }
        std::uint64_t paid = 0, survival = 0;
        for (auto& head : heads) {
            double p = 0.0;
            for (std::size_t k = 0; k < lambda.size(); ++k)
                p += head.rates[k] * lambda[k];
            if (p > 1.0 + 1e-12)
                throw std::invalid_argument("simulate_bernoulli: death probability of policyholder '" +
                                            head.holder->id + "' exceeds one (" + std::to_string(p) +
                                            "); enable factor truncation");
            p = std::min(p, 1.0);
            std::binomial_distribution<std::uint64_t> deaths(head.count, p);
            paid += payments(head, deaths(rng), rng);
            survival += survival_total(head, rng);
        }
        return std::pair{paid, survival};
    });
}

SimResult simulate_poisson_model(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                 const SimConfig& cfg, double unit) {
    const std::vector<RiskFactorSpec> rf(factors.begin(), factors.end());
    return run(portfolio, factors, cfg, unit, [rf](std::vector<Head>& heads, std::mt19937_64& rng) {
        std::vector<double> lambda(rf.size() + 1, 1.0);
        for (std::size_t k = 0; k < rf.size(); ++k) {
            std::gamma_distribution<double> gamma(1.0 / rf[k].variance, rf[k].variance);
            lambda[k + 1] = gamma(rng);
        }
        std::uint64_t paid = 0, survival = 0;
        for (auto& head : heads) {
            for (std::size_t k = 0; k < lambda.size(); ++k) {
                const double mean = static_cast<double>(head.count) * head.rates[k] * lambda[k];
                if (mean <= 0.0)
                    continue;
                std::poisson_distribution<std::uint64_t> deaths(mean);
                paid += payments(head, deaths(rng), rng);
            }
            survival += survival_total(head, rng);
        }
        return std::pair{paid, survival};
    });
}

PanelSimulation simulate_panel(const CohortPanel& layout, const TrendParams& params,
                               std::span<const double> sigma_sq, std::uint64_t seed) {
    params.validate();
    const std::size_t K = layout.risk_factors();
    if (params.risk_factors != K || sigma_sq.size() != K)
        throw std::invalid_argument("simulate_panel: panel, trend parameters and variances disagree on K");
    if (!(params.groups == layout.groups()))
        throw std::invalid_argument("simulate_panel: age groups of panel and parameters differ");
    for (double s : sigma_sq)
        if (!(s > 0.0))
            throw std::invalid_argument("simulate_panel: variances must be positive");

    PanelSimulation out{layout, std::vector<std::vector<double>>(layout.years_count(), std::vector<double>(K))};
    std::vector<double> w(K + 1);
    for (std::size_t t = 0; t < layout.years_count(); ++t) {
        auto rng = numerics::stream_engine(seed, t);
        for (std::size_t k = 0; k < K; ++k) {
            std::gamma_distribution<double> gamma(1.0 / sigma_sq[k], sigma_sq[k]);
            out.factors[t][k] = gamma(rng);
        }
        const double year = layout.year(t);
        for (int a = 0; a < static_cast<int>(layout.age_groups()); ++a)
            for (Gender g : kAllGenders) {
                const double m = static_cast<double>(layout.exposure(t, a, g));
                const double q = death_prob(a, g, year, params);
                cause_weights(a, g, year, params, w);
                for (std::size_t k = 0; k <= K; ++k) {
                    const double mean = m * q * w[k] * (k == 0 ? 1.0 : out.factors[t][k - 1]);
                    std::int64_t n = 0;
                    if (mean > 0.0) {
                        std::poisson_distribution<std::int64_t> draw(mean);
                        n = draw(rng);
                    }
                    out.panel.set_deaths(t, a, g, k, n);
                }
            }
    }
    return out;
}

CohortPanel constant_exposure_panel(std::vector<int> years, AgeGroups groups, std::vector<std::string> causes,
                                    std::int64_t m) {
    CohortPanel panel(std::move(years), std::move(groups), std::move(causes));
    for (std::size_t t = 0; t < panel.years_count(); ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                panel.set_exposure(t, a, g, m);
    return panel;
}

} // namespace crplus
