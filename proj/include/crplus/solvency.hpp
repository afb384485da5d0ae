#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crplus/aggregation.hpp"
#include "crplus/domain.hpp"
#include "crplus/estimation.hpp"
#include "crplus/forecast.hpp"

namespace crplus {

// Risk factor realisations held fixed, k -> λ_k.
struct Scenario {
    std::map<int, double> fixed_factors;
    std::string description;

    // Throws std::invalid_argument for λ <= 0 or k outside 1..K.
    void validate(std::size_t risk_factors) const;
};

struct ScenarioResult {
    LossDistribution s;    // death payments given the scenario
    LossDistribution loss; // L = ΣX - S
};

// Sectors with a fixed λ_k become Poisson(μ_k λ_k) compounds, the others stay
// negative binomial.
ScenarioResult scenario_loss(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                             const Scenario& scenario, double unit, const PanjerOptions& options = {});

// Generalised Gauss-Laguerre rule for Gamma(shape, scale): nodes x_i and
// probability weights w_i with Σ w_i f(x_i) ≈ E f(Λ).
struct GammaQuadrature {
    std::vector<double> nodes;
    std::vector<double> weights;
};
GammaQuadrature gamma_quadrature(double shape, double scale, std::size_t n = 200);

// Law of S obtained by conditioning factor k on the quadrature nodes of its
// gamma law and mixing; reproduces the unconditional law up to quadrature error.
LossDistribution mix_over_factor(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors, int k,
                                 double unit, std::size_t nodes = 200, const PanjerOptions& options = {});

// D(T, T + t) for t = 1, 2, ...; D(T, T) = 1.
struct DiscountCurve {
    std::map<int, double> factors;

    // Throws DataError when t is not covered.
    double at(int t) const;
    // D(T + s, T + s + t) = D(T, T + s + t) / D(T, T + s).
    DiscountCurve forward(int s) const;
    // (1 + rate)^-t for t = 1..years.
    static DiscountCurve flat(double rate, int years);
    // Throws std::invalid_argument unless every factor lies in (0, 1].
    void validate() const;
};

// Present value of a term life contract paying 1 at the end of the year of
// death during years T..T+d:
//   D(1) q(a, T) + Σ_{t=1..d} D(t + 1) ₜp q(a + t, T + t).
double term_life_bel(int age, int year, int d, const DiscountCurve& curve, const DeathProbFn& q);
double term_life_bel(int age, Gender g, int year, int d, const DiscountCurve& curve, const TrendParams& params,
                     int terminal_age = kTerminalAge);

struct TermPolicy {
    int age = 0;
    Gender gender = Gender::female;
    double sum_insured = 0.0; // C_i > 0
    int term = 1;             // years covered from time 0
    double count = 1.0;       // identical policies
};

struct BondAsset {
    double nominal = 0.0; // A_0
    double coupon = 0.0;  // c > -1
};

struct DeltaBofOptions {
    // Lattice points spanned by the largest C_i (1 - A_i).
    std::size_t lattice_points = 200'000;
    // Chain samples used, evenly spaced; 0 keeps all.
    std::size_t max_samples = 0;
    // false: a single sample at the chain mean.
    bool parameter_uncertainty = true;
    int terminal_age = kTerminalAge;
    PanjerOptions panjer;
    unsigned threads = 0;
};

struct DeltaBofResult {
    LossDistribution delta_bof;
    double deterministic_part = 0.0; // A_0 (1 - D(1)(1+c)) - Σ C_i A⁰_i(θ̂)
    double bel0 = 0.0;               // Σ C_i A⁰_i(θ̂)
    std::size_t samples = 0;
    double unit = 0.0; // severity lattice unit before discounting
};

// ΔBOF_1 for term policies backed by a one-year bond. `year` is calendar
// time 0. Each sample contributes the compound Poisson law of the death
// strain Σ_i Σ_{j<=N_i} C_i (1 - A¹_i); samples are mixed with equal weight.
DeltaBofResult delta_bof_distribution(std::span<const TermPolicy> policies, const BondAsset& asset,
                                      const DiscountCurve& curve, int year, std::span<const TrendParams> samples,
                                      const TrendParams& mean_params, const DeltaBofOptions& options = {});
DeltaBofResult delta_bof_distribution(std::span<const TermPolicy> policies, const BondAsset& asset,
                                      const DiscountCurve& curve, int year, const McmcChain& chain,
                                      const DeltaBofOptions& options = {});

// 99.5% quantile. Throws NumericalError when the truncated tail holds 0.5% or more.
double scr(const LossDistribution& delta_bof);

struct LossSummary {
    std::vector<double> probs{0.01, 0.05, 0.5, 0.95, 0.99, 0.995};
    std::vector<double> quantiles;
    double mean = 0.0;
    double sd = 0.0;
    double truncation_mass = 0.0;
};
// Quantiles past the truncated tail are reported as NaN.
LossSummary summarize(const LossDistribution& dist);

} // namespace crplus
