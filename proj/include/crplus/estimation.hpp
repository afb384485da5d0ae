#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "crplus/domain.hpp"
#include "crplus/trends.hpp"

namespace crplus {

enum class Family { alpha, beta, zeta, eta, kappa, u, v, phi, psi, sigma };
inline constexpr Family kAllFamilies[] = {Family::alpha, Family::beta, Family::zeta, Family::eta, Family::kappa,
                                          Family::u,     Family::v,    Family::phi,  Family::psi, Family::sigma};

std::string_view to_string(Family f);
Family parse_family(std::string_view name);

// Trend and weight parameters together with the risk factor variances.
// Families in `fixed` are held constant by the sampler.
struct ParamVector {
    TrendParams trend;
    std::vector<double> sigma_sq; // σ²_1..σ²_K
    std::set<Family> fixed{Family::zeta, Family::eta, Family::kappa, Family::phi, Family::psi};

    bool is_fixed(Family f) const { return fixed.count(f) > 0; }
    // Throws std::invalid_argument on non-finite entries, σ² <= 0 or size mismatches.
    void validate() const;
};

// Gaussian smoothing prior for one parameter family:
//   log π = -c Σ_rows (|D_k x|² + ε |x|²) + log d
// with D_k the k-th order difference operator along ages. c = 0 means flat.
struct BlockPrior {
    double c = 0.0;
    double epsilon = 0.0;
    int order = 1;
};

struct PriorSpec {
    std::map<Family, BlockPrior> blocks;

    const BlockPrior* find(Family f) const;
    // Smoothing across ages as used for the trend families:
    // ε = 1e-2 for α, β and 1e-4 for ζ, η, κ.
    static PriorSpec smoothing(double c_alpha, double c_beta, double c_zeta = 0.0, double c_eta = 0.0,
                               double c_kappa = 0.0);
};

// Precision matrix 2c(DᵀD + εI) of one prior row of length n.
Eigen::MatrixXd prior_precision(std::size_t n, const BlockPrior& prior);
// log d for one row: ½ log det(precision) - (n/2) log 2π; 0 when the prior
// is improper (c = 0 or ε = 0).
double prior_log_normaliser(std::size_t n, const BlockPrior& prior);
double log_prior(const ParamVector& params, const PriorSpec& prior);

// ρ_{a,g,k}(t) = m q w_k for every cell and cause of year t, laid out as
// weight_index(a, g, k).
std::vector<double> expected_deaths(const CohortPanel& panel, const TrendParams& trend, std::size_t t);

// Log of the mixed-Poisson likelihood with the risk factors integrated out.
// `variance_multiplier` (one entry per year, optional) scales σ²_k in that
// year, as used for forecast inflation.
double log_likelihood(const CohortPanel& panel, const ParamVector& params,
                      std::span<const double> variance_multiplier = {});

// Evaluator caching the data-only terms Σ log n! for repeated calls.
class LikelihoodEvaluator {
public:
    explicit LikelihoodEvaluator(const CohortPanel& panel);
    double operator()(const ParamVector& params, std::span<const double> variance_multiplier = {}) const;
    const CohortPanel& panel() const { return *panel_; }

private:
    const CohortPanel* panel_;
    double log_factorials_ = 0.0;
};

// Binomial likelihood for K = 0 panels. Throws DataError when deaths exceed
// exposure.
double log_likelihood_bernoulli(const CohortPanel& panel, const TrendParams& trend);

// (1/σ² - 1 + n) / (1/σ² + ρ). Throws DataError when the numerator is <= 0.
double map_risk_factor(double sigma_sq, double deaths, double rho);
double map_risk_factor(const CohortPanel& panel, const ParamVector& params, std::size_t k, std::size_t t);
// Conditional log posterior of λ given counts, up to a constant:
// (1/σ² - 1 + n) log λ - (1/σ² + ρ) λ.
double map_conditional_log_posterior(double lambda, double sigma_sq, double deaths, double rho);

// 2 log σ + ψ(1/σ²); strictly decreasing from 0⁻ (σ → 0) to -∞.
double map_sigma_lhs(double sigma);
// Right-hand side (1/T) Σ (1 + log λ - λ) <= 0.
double map_sigma_rhs(std::span<const double> lambdas);
// Unique positive root σ̂ of lhs(σ) = rhs. Throws NumericalError when the
// series is constant at 1 (root at the boundary σ → 0).
double map_sigma(std::span<const double> lambdas);

// (-1 + n) / ρ; throws std::invalid_argument for ρ <= 0.
double map_risk_factor_approx(double deaths, double rho);
double map_risk_factor_approx(const CohortPanel& panel, const ParamVector& params, std::size_t k, std::size_t t);
// sqrt((1/T) Σ (λ - 1)²)
double map_sigma_approx(std::span<const double> lambdas);

struct RiskFactorEstimates {
    std::vector<std::vector<double>> lambda; // lambda[k-1][t]
    std::vector<double> sigma;               // σ̂_k
    std::size_t iterations = 0;
    bool converged = true;
};

// Alternates Eq. (6) and Eq. (7) to their joint fixed point, starting from
// the variances in `params`.
RiskFactorEstimates map_risk_factors(const CohortPanel& panel, const ParamVector& params,
                                     std::size_t max_iterations = 500, double tolerance = 1e-12);
// λ̂ and σ̂ from the rough approximations.
RiskFactorEstimates map_risk_factors_approx(const CohortPanel& panel, const ParamVector& params);

// n'(t) = floor(m(T) q(T) w(T) / (m(t) q(t) w(t)) n(t)), T the last year.
CohortPanel mom_transform(const CohortPanel& panel, const TrendParams& trend);

struct MomOptions {
    // Rate used in place of a zero count, in deaths (0.5 deaths ≙ 0.5 / m).
    double zero_count_correction = 0.5;
};

struct MomFit {
    ParamVector params;
    // Σ̂²_{a,g,k}, laid out as weight_index(a, g, k); k = 0 entries unused.
    std::vector<double> cell_variance;
    CohortPanel transformed;
};

// Matching-of-moments fit. ζ, η, κ, φ, ψ and t0 are taken from `shape`;
// α, β, u, v and σ² are estimated.
MomFit mom_fit(const CohortPanel& panel, const TrendParams& shape, const MomOptions& options = {});

// ---------------------------------------------------------------------------
// MCMC

struct Coordinate {
    Family family;
    std::size_t index = 0; // position in the family's array; birth year for κ
    bool log_scale = false;
    std::string name;
};

struct Block {
    std::string name;
    std::vector<std::size_t> members; // coordinate indices
};

// Maps the free parameters of a ParamVector to a flat coordinate vector and
// groups them into Gibbs blocks (one per family and gender). With
// `joint_block` a last block spans every coordinate.
class ParameterLayout {
public:
    ParameterLayout() = default;
    explicit ParameterLayout(const ParamVector& params, bool joint_block = false);

    const std::vector<Coordinate>& coordinates() const { return coords_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    std::size_t size() const { return coords_.size(); }
    std::vector<std::string> names() const;

    std::vector<double> encode(const ParamVector& params) const;
    void decode(std::span<const double> x, ParamVector& params) const;

private:
    std::vector<Coordinate> coords_;
    std::vector<Block> blocks_;
};

struct McmcConfig {
    std::size_t n_steps = 40'000;
    std::size_t burn_in = 10'000;
    std::size_t n_chains = 1;
    std::uint64_t seed = 1;
    // Initial random-walk standard deviations (log scale for η, ψ, σ²).
    std::map<Family, double> proposal_scales{{Family::alpha, 0.01}, {Family::beta, 0.01}, {Family::zeta, 1.0},
                                             {Family::eta, 0.05},   {Family::kappa, 0.01}, {Family::u, 0.01},
                                             {Family::v, 0.01},     {Family::phi, 1.0},   {Family::psi, 0.05},
                                             {Family::sigma, 0.1}};
    bool adapt = true;
    double target_acceptance = 0.3;
    // Adds a block over all free coordinates. The family blocks alone move
    // slowly along directions that shift a whole cause's level (q and w
    // together); the joint block learns that correlation during burn-in.
    bool joint_block = true;
    // Keep every thin-th post-burn-in state in memory (the chain file gets all).
    std::size_t thin = 1;
    unsigned threads = 0;

    void validate() const;
};

struct BlockProposal {
    double scale = 1.0;
    Eigen::MatrixXd covariance; // proposal covariance before scaling
};

struct BlockStats {
    std::string name;
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct McmcChain {
    ParamVector base;
    ParameterLayout layout;
    std::vector<std::size_t> steps;
    std::vector<std::vector<double>> samples;
    std::vector<double> log_posterior;
    std::vector<BlockProposal> proposals; // frozen after burn-in
    std::vector<BlockStats> stats;        // post-burn-in acceptance
    std::vector<std::string> warnings;

    bool empty() const { return samples.empty(); }
    ParamVector at(std::size_t i) const;
    ParamVector mean() const;
    // Sample of maximal posterior density.
    ParamVector mode() const;
};

// Metropolis acceptance for a symmetric proposal.
bool mh_accept(double log_ratio, std::mt19937_64& rng);

// Random-walk Metropolis-Hastings within Gibbs, chain number `chain`.
// Step s draws from stream_engine(seed, chain, s). With `chain_file` set,
// the header and frozen proposals are written at the end of burn-in and
// every post-burn-in state is appended; an existing file for the same run
// is resumed from its last record.
McmcChain mcmc_sample(const CohortPanel& panel, const ParamVector& init, const PriorSpec& prior,
                      const McmcConfig& cfg, std::size_t chain = 0,
                      const std::optional<std::filesystem::path>& chain_file = std::nullopt);

// cfg.n_chains chains in parallel; chain c > 0 starts from `init` jittered
// by its proposal scales. Chain files get a ".c<index>" suffix when set.
std::vector<McmcChain> mcmc_sample_chains(const CohortPanel& panel, const ParamVector& init,
                                          const PriorSpec& prior, const McmcConfig& cfg,
                                          const std::optional<std::filesystem::path>& chain_file = std::nullopt);

// Reads a chain file written by mcmc_sample.
McmcChain read_chain_file(const std::filesystem::path& path);

struct InformationCriteria {
    double log_likelihood_at_mode = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    double dic = 0.0;
    double effective_parameters = 0.0;
    std::size_t parameters = 0;
    std::size_t observations = 0;
};

InformationCriteria information_criteria(const CohortPanel& panel, const McmcChain& chain);

struct CrossValidationResult {
    std::vector<double> grid;
    std::vector<double> scores; // held-out log-likelihood summed over years
    double best = 0.0;
};

// Leave-one-year-out cross-validation of a prior scale. For each c in the
// grid, `make_prior(c)` gives the prior; the posterior mean of a short chain
// fitted without year t scores that year.
CrossValidationResult cross_validate_prior(const CohortPanel& panel, const ParamVector& init,
                                           const std::function<PriorSpec(double)>& make_prior,
                                           std::span<const double> grid, const McmcConfig& cfg);

} // namespace crplus
