#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crplus/aggregation.hpp"
#include "crplus/domain.hpp"
#include "crplus/trends.hpp"

namespace crplus {

struct SimConfig {
    std::size_t n_sims = 50'000;
    std::uint64_t seed = 20170101;
    // Condition every Λ_k on Λ_k <= 1 / max_i q_i so that all Bernoulli
    // probabilities q_i Σ_k w_{i,k} Λ_k stay <= 1.
    bool truncate_factors = true;
    unsigned threads = 0;
};

// Simulations are split into chunks of kSimChunk; chunk c draws from
// stream_engine(seed, c), so results do not depend on the thread count.
inline constexpr std::size_t kSimChunk = 4096;

struct SimResult {
    LossDistribution s;    // empirical law of S
    LossDistribution loss; // empirical law of L = ΣX - S
    std::string generator;
    std::uint64_t seed = 0;
    std::size_t n_sims = 0;
};

// Mixed Bernoulli model: given Λ, N_i ~ Bernoulli(q_i Σ_k w_{i,k} Λ_k).
// Holders with multiplicity m draw Binomial(m, ·). Throws
// std::invalid_argument naming the holder when an untruncated draw pushes
// a probability above one.
SimResult simulate_bernoulli(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                             const SimConfig& cfg, double unit = 1.0);

// Mixed Poisson model, the one the Panjer engine computes exactly:
// N_{i,k} ~ Poisson(q_i w_{i,k} Λ_k), Λ_0 = 1. No truncation.
SimResult simulate_poisson_model(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                 const SimConfig& cfg, double unit = 1.0);

struct PanelSimulation {
    CohortPanel panel;
    std::vector<std::vector<double>> factors; // factors[t][k-1] = Λ_k(t)
};

// Deaths n_{a,g,k}(t) ~ Poisson(m q w_k Λ_k(t)) with Λ_k(t) ~ Gamma(1/σ²_k, σ²_k)
// i.i.d. over years. Exposures, years and cause labels come from `layout`;
// its deaths are ignored. Year t uses stream_engine(seed, t).
PanelSimulation simulate_panel(const CohortPanel& layout, const TrendParams& params,
                               std::span<const double> sigma_sq, std::uint64_t seed);

// Panel with constant exposure m in every cell and year, no deaths.
CohortPanel constant_exposure_panel(std::vector<int> years, AgeGroups groups, std::vector<std::string> causes,
                                    std::int64_t m);

} // namespace crplus
