#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crplus/domain.hpp"
#include "crplus/estimation.hpp"

namespace crplus {

struct TestEntry {
    std::string label;
    double statistic = 0.0;
    double p_value = std::numeric_limits<double>::quiet_NaN();
    double p_value_bootstrap = std::numeric_limits<double>::quiet_NaN();
    // Acceptance band, for band-type tests.
    double lower = std::numeric_limits<double>::quiet_NaN();
    double upper = std::numeric_limits<double>::quiet_NaN();
    bool accepted = true;
    // No information (e.g. zero-width band hit exactly); left out of the fraction.
    bool degenerate = false;
};

struct TestReport {
    std::string name;
    double level = 0.05;
    std::vector<TestEntry> entries;

    std::size_t informative() const;
    // Share of informative entries accepted; 1 when there are none.
    double acceptance_fraction() const;
    void append(const TestReport& other);
};

// Model moments of transformed counts N' ~ Poisson(μ Λ_k), Λ_k i.i.d. over years.
double model_count_variance(double mu, double sigma_sq);
double model_count_covariance(double mu_1, double mu_2, double sigma_sq);

// μ_{a,g,k} = m(T) q(T) w_k(T) at the last panel year, laid out as weight_index.
std::vector<double> transformed_means(const CohortPanel& panel, const TrendParams& trend);

struct MomentBoundsOptions {
    double lower = 0.05;
    double upper = 0.95;
    std::size_t draws = 1000; // predictive panels, cycling through the samples
    std::uint64_t seed = 7;
    unsigned threads = 0;
};

// Sample variances and covariances (over years) of the transformed counts of
// each cause, against the quantile band of the same statistics on panels
// simulated from the parameter samples. `panel` is untransformed; the
// transform uses `params`. Throws std::invalid_argument for fewer than 3
// years or no samples.
TestReport moment_bounds_test(const CohortPanel& panel, const ParamVector& params,
                              std::span<const ParamVector> samples, const MomentBoundsOptions& options = {});
TestReport moment_bounds_test(const CohortPanel& panel, const ParamVector& params, const McmcChain& chain,
                              const MomentBoundsOptions& options = {});

// N* indexed by (t, a, g, k).
class ResidualArray {
public:
    ResidualArray() = default;
    ResidualArray(std::size_t years, std::size_t age_groups, std::size_t causes);

    double& at(std::size_t t, int a, Gender g, std::size_t k) { return data_[index(t, a, g, k)]; }
    double at(std::size_t t, int a, Gender g, std::size_t k) const { return data_[index(t, a, g, k)]; }
    std::vector<double> series(int a, Gender g, std::size_t k) const;

    std::size_t years() const { return years_; }
    std::size_t age_groups() const { return groups_; }
    std::size_t causes() const { return causes_; }

private:
    std::size_t index(std::size_t t, int a, Gender g, std::size_t k) const {
        return ((t * groups_ + static_cast<std::size_t>(a)) * kGenders + gender_index(g)) * causes_ + k;
    }
    std::size_t years_ = 0, groups_ = 0, causes_ = 0;
    std::vector<double> data_;
};

// N* = (N' - μ λ) / sqrt(μ λ) on the transformed panel, λ_0 = 1 and
// λ_k(t) = lambda_hats[k-1][t]. Throws std::invalid_argument for a zero
// intensity or λ <= 0.
ResidualArray standardized_residuals(const CohortPanel& panel, const ParamVector& params,
                                     const std::vector<std::vector<double>>& lambda_hats);

// Correlation test between causes k != k' within each (a, g), over years.
// Throws std::invalid_argument for fewer than 3 years or a constant series.
TestReport cross_correlation_ttest(const ResidualArray& residuals, double level = 0.05);
// Two-sided t-test of zero correlation for one pair of series.
TestEntry correlation_ttest(std::span<const double> x, std::span<const double> y, double level = 0.05);

// LM statistics n R² of the auxiliary regressions on 1..max_order lags.
// Throws std::invalid_argument when the series has max_order + 2 or fewer points.
TestReport breusch_godfrey(std::span<const double> series, std::size_t max_order = 10, double level = 0.05);
// All residual series of every (a, g, k).
TestReport breusch_godfrey(const ResidualArray& residuals, std::size_t max_order = 10, double level = 0.05);

struct KsOptions {
    std::size_t bootstrap = 500; // 0 disables the parametric bootstrap
    std::uint64_t seed = 11;
    double level = 0.05;
};

// KS test of a risk factor series against Gamma(1/σ², σ²). The decision uses
// the bootstrap p-value when available (σ² re-estimated on each resample),
// otherwise the asymptotic one. Throws for σ² <= 0 or fewer than 5 values.
TestEntry ks_gamma_test(std::span<const double> lambdas, double sigma_sq, const KsOptions& options = {});
TestReport ks_gamma_test(const RiskFactorEstimates& estimates, const KsOptions& options = {});

} // namespace crplus
