#include "crplus/trends.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace crplus {

namespace {
constexpr double kLaplaceClamp = 700.0;
}

double laplace_cdf(double x) {
    const double z = std::clamp(x, -kLaplaceClamp, kLaplaceClamp);
    if (z < 0.0)
        return 0.5 * std::exp(z);
    return 1.0 - 0.5 * std::exp(-z);
}

double laplace_cdf_inv(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("laplace_cdf_inv: p must lie in (0, 1), got " + std::to_string(p));
    if (p < 0.5)
        return std::log(2.0 * p);
    return -std::log(2.0 * (1.0 - p));
}

double trend_time(double t, double zeta, double eta, double t0) {
    if (!(eta > 0.0))
        throw std::invalid_argument("trend_time: eta must be positive");
    auto raw = [&](double s) { return std::atan(eta * (s - zeta)) / eta; };
    const double at_t0 = raw(t0);
    return (raw(t) - at_t0) / (at_t0 - raw(t0 - 1.0));
}

TrendParams TrendParams::defaults(AgeGroups groups, std::size_t risk_factors, double t0) {
    TrendParams p;
    p.groups = std::move(groups);
    p.risk_factors = risk_factors;
    p.t0 = t0;
    const std::size_t cells = p.cells();
    p.alpha.assign(cells, 0.0);
    p.beta.assign(cells, 0.0);
    p.zeta.assign(cells, 0.0);
    p.eta.assign(cells, 1.0 / 150.0);
    p.u.assign(cells * p.cause_count(), 0.0);
    p.v.assign(cells * p.cause_count(), 0.0);
    p.phi.assign(p.cause_count(), 0.0);
    p.psi.assign(p.cause_count(), 1.0 / 150.0);
    return p;
}

double TrendParams::kappa_at(int birth_year) const {
    const auto it = kappa.find(birth_year);
    return it == kappa.end() ? 0.0 : it->second;
}

int TrendParams::birth_year(int a, int t) const { return t - groups.band(static_cast<std::size_t>(a)).midpoint(); }

void TrendParams::validate() const {
    const std::size_t n = cells();
    if (alpha.size() != n || beta.size() != n || zeta.size() != n || eta.size() != n)
        throw std::invalid_argument("TrendParams: per-cell arrays must have one entry per (age group, gender)");
    if (u.size() != n * cause_count() || v.size() != n * cause_count())
        throw std::invalid_argument("TrendParams: u/v must have one entry per (age group, gender, cause)");
    if (phi.size() != cause_count() || psi.size() != cause_count())
        throw std::invalid_argument("TrendParams: phi/psi must have one entry per cause");
    for (double e : eta)
        if (!(e > 0.0))
            throw std::invalid_argument("TrendParams: eta must be positive");
    for (double s : psi)
        if (!(s > 0.0))
            throw std::invalid_argument("TrendParams: psi must be positive");
}

namespace {
void check_cell(int a, const TrendParams& params) {
    if (a < 0 || static_cast<std::size_t>(a) >= params.groups.size() ||
        params.alpha.size() != params.cells())
        throw std::out_of_range("trend parameters have no cell for age group " + std::to_string(a));
}
} // namespace

double death_prob(int a, Gender g, double t, const TrendParams& params) {
    check_cell(a, params);
    const std::size_t c = cell_index(a, g);
    const int z = params.birth_year(a, static_cast<int>(std::floor(t)));
    const double trend = trend_time(t, params.zeta[c], params.eta[c], params.t0);
    return laplace_cdf(params.alpha[c] + params.beta[c] * trend + params.kappa_at(z));
}

double death_prob_at_age(int age, Gender g, int t, const TrendParams& params) {
    const int a = params.groups.group_of_age(age);
    check_cell(a, params);
    const std::size_t c = cell_index(a, g);
    const double trend = trend_time(t, params.zeta[c], params.eta[c], params.t0);
    return laplace_cdf(params.alpha[c] + params.beta[c] * trend + params.kappa_at(t - age));
}

void softmax(std::span<const double> scores, std::span<double> out) {
    const double top = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        out[k] = std::exp(scores[k] - top);
        total += out[k];
    }
    for (std::size_t k = 0; k < scores.size(); ++k)
        out[k] /= total;
}

void cause_weights(int a, Gender g, double t, const TrendParams& params, std::span<double> out) {
    check_cell(a, params);
    const std::size_t causes = params.cause_count();
    if (out.size() != causes || params.u.size() != params.cells() * causes || params.phi.size() != causes)
        throw std::out_of_range("trend parameters are missing cause weights for age group " + std::to_string(a));
    std::vector<double> scores(causes);
    for (std::size_t k = 0; k < causes; ++k) {
        const std::size_t i = params.weight_index(a, g, k);
        scores[k] = params.u[i] + params.v[i] * trend_time(t, params.phi[k], params.psi[k], params.t0);
    }
    softmax(scores, out);
}

std::vector<double> cause_weights(int a, Gender g, double t, const TrendParams& params) {
    std::vector<double> w(params.cause_count());
    cause_weights(a, g, t, params, w);
    return w;
}

} // namespace crplus
