#pragma once

#include <map>
#include <span>
#include <vector>

#include "crplus/domain.hpp"

namespace crplus {

// Laplace distribution function with mean 0 and variance 2.
double laplace_cdf(double x);
// Exact inverse of laplace_cdf; p must lie in (0, 1).
double laplace_cdf_inv(double p);

// Normalised arctan trend: T(t0) = 0, T(t0 - 1) = -1, bounded as t -> ±inf.
// zeta locates the switch from trend acceleration to trend reduction, eta > 0
// is the speed of the reduction; eta -> 0 recovers the linear trend t - t0.
double trend_time(double t, double zeta, double eta, double t0);

// Parameters of the death-probability and cause-weight families.
//
//   q_{a,g}(t)   = F_Lap(alpha + beta T_{zeta,eta}(t) + kappa_z)
//   w_{a,g,k}(t) = softmax_k(u_{a,g,k} + v_{a,g,k} T_{phi_k,psi_k}(t))
//
// Per-cell arrays are indexed by cell_index(a, g), per-cause-cell arrays by
// cell_index(a, g) * (K + 1) + k.
struct TrendParams {
    AgeGroups groups;
    std::size_t risk_factors = 0; // K
    double t0 = 1987.0;

    std::vector<double> alpha, beta, zeta, eta;
    std::map<int, double> kappa; // birth year -> cohort effect; absent years are 0
    std::vector<double> u, v;
    std::vector<double> phi, psi;

    // Fixed trend shape used in the Australian fit: zeta = phi = 0,
    // eta = psi = 1/150, no cohort effects, alpha = beta = u = v = 0.
    static TrendParams defaults(AgeGroups groups, std::size_t risk_factors, double t0 = 1987.0);

    std::size_t cells() const { return groups.size() * kGenders; }
    std::size_t cause_count() const { return risk_factors + 1; }
    std::size_t weight_index(int a, Gender g, std::size_t k) const { return cell_index(a, g) * cause_count() + k; }

    double kappa_at(int birth_year) const;
    // Birth year of the representative member of age group `a` in year t.
    int birth_year(int a, int t) const;

    // Throws std::invalid_argument on size mismatches or eta/psi <= 0.
    void validate() const;
};

// q for age group a in year t. Throws std::out_of_range for a missing cell.
double death_prob(int a, Gender g, double t, const TrendParams& params);
// q for exact age `age` (mapped to its group) and the cohort born in t - age.
double death_prob_at_age(int age, Gender g, int t, const TrendParams& params);

// Cause weights (w_0, ..., w_K); strictly positive, summing to 1.
std::vector<double> cause_weights(int a, Gender g, double t, const TrendParams& params);
void cause_weights(int a, Gender g, double t, const TrendParams& params, std::span<double> out);

// Softmax of `scores` into `out` (same length), stable under large inputs.
void softmax(std::span<const double> scores, std::span<double> out);

} // namespace crplus
