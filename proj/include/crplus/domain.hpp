#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crplus {

enum class Gender : int { female = 0, male = 1 };
inline constexpr int kGenders = 2;
inline constexpr Gender kAllGenders[] = {Gender::female, Gender::male};

std::string_view to_string(Gender g);
// Accepts f/m/female/male (case-insensitive).
Gender parse_gender(std::string_view text);

inline int gender_index(Gender g) { return static_cast<int>(g); }

// Index of an (age group, gender) cell in flat per-cell arrays.
inline std::size_t cell_index(int age_group, Gender g) {
    return static_cast<std::size_t>(age_group) * kGenders + static_cast<std::size_t>(g);
}

struct AgeBand {
    std::string label;
    int lower = 0;
    std::optional<int> upper; // inclusive; empty for an open band such as "85+"

    // Representative age used to map a calendar year to a birth year.
    int midpoint() const;
    bool contains(int age) const { return age >= lower && (!upper || age <= *upper); }
};

// Ordered, contiguous age bands. The last band may be open.
class AgeGroups {
public:
    AgeGroups() = default;
    explicit AgeGroups(std::vector<AgeBand> bands);

    // Comma separated bands, e.g. "50-54,55-59,85+" or single ages "60,61,62+".
    static AgeGroups parse(std::string_view spec);
    // Eight five-year bands 50-54 ... 80-84 and 85+.
    static AgeGroups standard();
    // Single-year groups first..last-1 and an open group "last+".
    static AgeGroups single_years(int first, int last);

    std::size_t size() const { return bands_.size(); }
    const AgeBand& band(std::size_t i) const { return bands_.at(i); }
    const std::vector<AgeBand>& bands() const { return bands_; }

    // Group containing `age`; ages above an open last band map to it.
    // Throws std::out_of_range for uncovered ages.
    int group_of_age(int age) const;
    // Throws std::out_of_range for unknown labels.
    int index_of(std::string_view label) const;
    std::string spec() const;

private:
    std::vector<AgeBand> bands_;
};

// Payment law on the lattice {0, u, 2u, ...}: pmf[n] = P(Y = n u).
struct LatticeSeverity {
    double unit = 1.0;
    std::vector<double> pmf{1.0};

    static LatticeSeverity point(double unit, std::size_t multiple);
    // Deterministic payment `value`, which must be a multiple of `unit`.
    static LatticeSeverity deterministic(double value, double unit = 1.0);

    double mean() const;
    double second_moment() const;
    std::size_t max_multiple() const { return pmf.empty() ? 0 : pmf.size() - 1; }
    // Throws std::invalid_argument unless unit > 0, entries >= 0 and mass is 1 within 1e-12.
    void validate() const;
};

struct Policyholder {
    std::string id;
    int age_group = 0;
    Gender gender = Gender::female;
    int birth_year = 0;
    double death_prob = 0.0;
    std::vector<double> weights{1.0}; // w_0 (idiosyncratic), w_1..w_K
    LatticeSeverity payment;          // Y, paid on death
    LatticeSeverity survival_payment; // X, paid on survival (annuity view)
    double multiplicity = 1.0;        // identical heads represented by this entry

    std::size_t causes() const { return weights.empty() ? 0 : weights.size() - 1; }
    void validate() const;
};

struct RiskFactorSpec {
    int k = 1;
    double variance = 0.1;
    std::string label;
};

struct Portfolio {
    std::vector<Policyholder> holders;

    double heads() const;
    bool empty() const { return holders.empty(); }
    // Number of common risk factors K; 0 for an empty portfolio.
    std::size_t causes() const;
    // E[S] = Σ_i multiplicity q_i E[Y_i].
    double expected_death_payments() const;
};

// Exact model covariance cov(N_i, N_j) = q_i q_j Σ_k w_{i,k} w_{j,k} σ²_k for i ≠ j.
double pairwise_death_covariance(const Policyholder& i, const Policyholder& j,
                                 std::span<const RiskFactorSpec> factors);

struct TrendParams;

// One line of a portfolio definition: `heads` identical policyholders.
struct PortfolioCellSpec {
    std::string id;
    int age_group = 0;
    Gender gender = Gender::female;
    double heads = 1.0;
    LatticeSeverity payment;
    LatticeSeverity survival_payment;
};

// Evaluates q and w for each cell at calendar year `year`.
Portfolio build_portfolio(std::span<const PortfolioCellSpec> cells, const TrendParams& trends, int year);

// `heads` identical policyholders with given q, weights and payment.
Portfolio homogeneous_portfolio(double heads, double death_prob, std::vector<double> weights,
                                LatticeSeverity payment);

// Observed deaths n_{a,g,k}(t) and exposures m_{a,g}(t).
class CohortPanel {
public:
    CohortPanel() = default;
    CohortPanel(std::vector<int> years, AgeGroups groups, std::vector<std::string> causes);

    std::size_t years_count() const { return years_.size(); }
    std::size_t age_groups() const { return groups_.size(); }
    // Total number of causes K+1, cause 0 being idiosyncratic.
    std::size_t cause_count() const { return causes_.size(); }
    std::size_t risk_factors() const { return causes_.empty() ? 0 : causes_.size() - 1; }

    const std::vector<int>& years() const { return years_; }
    int year(std::size_t t) const { return years_.at(t); }
    const AgeGroups& groups() const { return groups_; }
    const std::vector<std::string>& causes() const { return causes_; }

    std::int64_t deaths(std::size_t t, int a, Gender g, std::size_t k) const {
        return deaths_[death_index(t, a, g, k)];
    }
    void set_deaths(std::size_t t, int a, Gender g, std::size_t k, std::int64_t n);
    std::int64_t exposure(std::size_t t, int a, Gender g) const { return exposure_[exposure_index(t, a, g)]; }
    void set_exposure(std::size_t t, int a, Gender g, std::int64_t m);

    // Σ_k n_{a,g,k}(t)
    std::int64_t total_deaths(std::size_t t, int a, Gender g) const;

    // Cells where total deaths exceed exposure (allowed under the Poisson
    // reading, but suspicious).
    std::vector<std::string> warnings() const;

    CohortPanel without_year(std::size_t t) const;
    CohortPanel only_year(std::size_t t) const;

    bool operator==(const CohortPanel&) const = default;

private:
    std::size_t death_index(std::size_t t, int a, Gender g, std::size_t k) const {
        return ((t * groups_.size() + static_cast<std::size_t>(a)) * kGenders + gender_index(g)) * causes_.size() + k;
    }
    std::size_t exposure_index(std::size_t t, int a, Gender g) const {
        return (t * groups_.size() + static_cast<std::size_t>(a)) * kGenders + gender_index(g);
    }
    CohortPanel select_years(const std::vector<std::size_t>& keep) const;

    std::vector<int> years_;
    AgeGroups groups_;
    std::vector<std::string> causes_;
    std::vector<std::int64_t> deaths_;
    std::vector<std::int64_t> exposure_;
};

inline bool operator==(const AgeBand& a, const AgeBand& b) {
    return a.label == b.label && a.lower == b.lower && a.upper == b.upper;
}
inline bool operator==(const AgeGroups& a, const AgeGroups& b) { return a.bands() == b.bands(); }

} // namespace crplus
