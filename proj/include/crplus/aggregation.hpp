#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "crplus/domain.hpp"

namespace crplus {

enum class TailSide { upper, lower };

// Probability mass function on the lattice {origin + n * unit : n = 0..pmf.size()-1}.
// Mass that was not enumerated is kept in truncation_mass and sits beyond the
// last lattice point (upper tail) or before the first one (lower tail, e.g.
// after reflecting an upper-truncated law).
struct LossDistribution {
    double unit = 1.0;
    double origin = 0.0;
    std::vector<double> pmf;
    double truncation_mass = 0.0;
    TailSide truncated_tail = TailSide::upper;

    static LossDistribution point_mass(double unit, std::size_t multiple, double origin = 0.0);

    double value_at(std::size_t n) const { return origin + static_cast<double>(n) * unit; }
    std::size_t size() const { return pmf.size(); }
    double mass() const;
    // Moments of the enumerated part.
    double mean() const;
    double variance() const;
};

// A real-valued payment atom: P(Y = value) = prob.
struct SeverityAtom {
    double value = 0.0;
    double prob = 0.0;
};

// Mean-preserving split of each atom y = (n + f) u onto n u (mass 1 - f) and
// (n + 1) u (mass f). Throws std::invalid_argument for negative atoms.
LatticeSeverity stochastic_round(std::span<const SeverityAtom> atoms, double unit);
// Re-expresses a lattice severity on a different unit (mean preserved).
LatticeSeverity stochastic_round(const LatticeSeverity& severity, double unit);

struct PoissonLaw {
    double lambda = 0.0;
};

// Number of failures before r successes with success probability p:
// mean r (1 - p) / p.
struct NegativeBinomialLaw {
    double r = 1.0;
    double p = 1.0;
    double mean() const { return r * (1.0 - p) / p; }
};

using CountLaw = std::variant<PoissonLaw, NegativeBinomialLaw>;

double count_mean(const CountLaw& law);
double count_variance(const CountLaw& law);

// Compound sum attached to one risk factor (k = 0: idiosyncratic).
struct SectorCompound {
    int k = 0;
    CountLaw count_law = PoissonLaw{0.0};
    LatticeSeverity severity;
    double intensity = 0.0; // mu_k = Σ_i q_i w_{i,k}

    bool degenerate() const { return !(intensity > 0.0); }
    double mean() const;
    double variance() const;
};

// Splits a portfolio into K + 1 independent sectors. Payments are
// stochastic-rounded to `unit` where their lattice differs. Sectors with
// zero intensity are returned as point masses at 0.
std::vector<SectorCompound> build_sectors(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                          double unit);

struct PanjerOptions {
    // Last lattice point to compute. When unset the recursion runs to
    // ceil(mean + 12 sd) and keeps going while the remaining mass exceeds
    // tail_tolerance, up to hard_limit points.
    std::optional<std::size_t> n_max;
    double tail_tolerance = 1e-12;
    std::size_t hard_limit = 50'000'000;
};

// (a, b, 0) Panjer recursion for a Poisson or negative binomial compound.
LossDistribution panjer_compound(const SectorCompound& sector, const PanjerOptions& options = {});

// Exact discrete convolution of two laws on a common unit.
LossDistribution convolve(const LossDistribution& a, const LossDistribution& b);
// Convolution of all sectors; the empty list gives a point mass at 0 (unit 1).
LossDistribution convolve_sectors(std::span<const LossDistribution> sectors);

// Law of S for the whole portfolio: sectors, Panjer, convolution.
LossDistribution aggregate_portfolio(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                     double unit, const PanjerOptions& options = {});

// Law of L = ΣX - S for a deterministic total of survival payments.
LossDistribution loss_from_annuity(double total_survival_payments, const LossDistribution& s);
// Law of L = X - S for a random total X assumed independent of S.
LossDistribution loss_from_annuity(const LossDistribution& total_survival_payments, const LossDistribution& s);

// Law of Σ_i X_i (independent heads, multiplicities as convolution powers).
LossDistribution survival_payment_distribution(const Portfolio& portfolio, double unit);

// Smallest lattice value v with P(value <= v) >= p. Throws NumericalError
// when p falls inside the truncated tail.
double quantile(const LossDistribution& dist, double p);

// Total variation distance; the laws must share a unit and aligned origins.
// The two truncated tails count as two extra atoms.
double tv_distance(const LossDistribution& a, const LossDistribution& b);

// Mixes laws with the given weights (which must sum to 1). Origins are
// aligned on the common lattice; fractional offsets are stochastic-rounded.
LossDistribution mix(std::span<const LossDistribution> laws, std::span<const double> weights);

// Moves the law by `shift` (a real number), splitting mass onto the lattice
// when the shift is not a multiple of the unit.
LossDistribution shift_by(const LossDistribution& dist, double shift);

} // namespace crplus
