#include "crplus/domain.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "crplus/trends.hpp"

namespace crplus {

std::string_view to_string(Gender g) { return g == Gender::female ? "f" : "m"; }

Gender parse_gender(std::string_view text) {
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "f" || s == "female")
        return Gender::female;
    if (s == "m" || s == "male")
        return Gender::male;
    throw std::invalid_argument("unknown gender '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Age groups

int AgeBand::midpoint() const {
    if (upper)
        return (lower + *upper) / 2;
    return lower + 2;
}

AgeGroups::AgeGroups(std::vector<AgeBand> bands) : bands_(std::move(bands)) {
    for (std::size_t i = 0; i < bands_.size(); ++i) {
        const auto& b = bands_[i];
        if (b.upper && *b.upper < b.lower)
            throw std::invalid_argument("age band '" + b.label + "' has upper < lower");
        if (!b.upper && i + 1 != bands_.size())
            throw std::invalid_argument("only the last age band may be open");
        if (i > 0 && (!bands_[i - 1].upper || *bands_[i - 1].upper + 1 != b.lower))
            throw std::invalid_argument("age bands must be contiguous and ascending at '" + b.label + "'");
    }
}

namespace {
int parse_int(std::string_view s, std::string_view context) {
    int value = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw std::invalid_argument("cannot parse integer '" + std::string(s) + "' in " + std::string(context));
    return value;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}
} // namespace

AgeGroups AgeGroups::parse(std::string_view spec) {
    std::vector<AgeBand> bands;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string_view item = trim(spec.substr(pos, comma == std::string_view::npos ? spec.npos : comma - pos));
        if (!item.empty()) {
            AgeBand band;
            band.label = std::string(item);
            if (item.back() == '+') {
                band.lower = parse_int(item.substr(0, item.size() - 1), "age band");
            } else if (const auto dash = item.find('-'); dash != std::string_view::npos) {
                band.lower = parse_int(trim(item.substr(0, dash)), "age band");
                band.upper = parse_int(trim(item.substr(dash + 1)), "age band");
            } else {
                band.lower = parse_int(item, "age band");
                band.upper = band.lower;
            }
            bands.push_back(std::move(band));
        }
        if (comma == std::string_view::npos)
            break;
        pos = comma + 1;
    }
    if (bands.empty())
        throw std::invalid_argument("age group specification is empty");
    return AgeGroups(std::move(bands));
}

AgeGroups AgeGroups::standard() { return parse("50-54,55-59,60-64,65-69,70-74,75-79,80-84,85+"); }

AgeGroups AgeGroups::single_years(int first, int last) {
    std::vector<AgeBand> bands;
    for (int age = first; age < last; ++age)
        bands.push_back({std::to_string(age), age, age});
    bands.push_back({std::to_string(last) + "+", last, std::nullopt});
    return AgeGroups(std::move(bands));
}

int AgeGroups::group_of_age(int age) const {
    for (std::size_t i = 0; i < bands_.size(); ++i)
        if (bands_[i].contains(age))
            return static_cast<int>(i);
    throw std::out_of_range("age " + std::to_string(age) + " is not covered by the age groups");
}

int AgeGroups::index_of(std::string_view label) const {
    for (std::size_t i = 0; i < bands_.size(); ++i)
        if (bands_[i].label == label)
            return static_cast<int>(i);
    throw std::out_of_range("unknown age group '" + std::string(label) + "'");
}

std::string AgeGroups::spec() const {
    std::string out;
    for (std::size_t i = 0; i < bands_.size(); ++i) {
        if (i)
            out += ',';
        out += bands_[i].label;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Severities and policyholders

LatticeSeverity LatticeSeverity::point(double unit, std::size_t multiple) {
    LatticeSeverity s;
    s.unit = unit;
    s.pmf.assign(multiple + 1, 0.0);
    s.pmf[multiple] = 1.0;
    return s;
}

LatticeSeverity LatticeSeverity::deterministic(double value, double unit) {
    if (!(unit > 0.0) || value < 0.0)
        throw std::invalid_argument("deterministic payment needs unit > 0 and value >= 0");
    const double n = value / unit;
    const double rounded = std::round(n);
    if (std::abs(n - rounded) > 1e-9 * std::max(1.0, n))
        throw std::invalid_argument("payment " + std::to_string(value) + " is not a multiple of the loss unit");
    return point(unit, static_cast<std::size_t>(rounded));
}

double LatticeSeverity::mean() const {
    double m = 0.0;
    for (std::size_t n = 0; n < pmf.size(); ++n)
        m += static_cast<double>(n) * pmf[n];
    return m * unit;
}

double LatticeSeverity::second_moment() const {
    double m = 0.0;
    for (std::size_t n = 0; n < pmf.size(); ++n)
        m += static_cast<double>(n) * static_cast<double>(n) * pmf[n];
    return m * unit * unit;
}

void LatticeSeverity::validate() const {
    if (!(unit > 0.0))
        throw std::invalid_argument("severity unit must be positive");
    double total = 0.0;
    for (double p : pmf) {
        if (!(p >= 0.0))
            throw std::invalid_argument("severity probabilities must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("severity probabilities must sum to 1, got " + std::to_string(total));
}

void Policyholder::validate() const {
    if (!(death_prob >= 0.0 && death_prob <= 1.0))
        throw std::invalid_argument("policyholder '" + id + "': death probability outside [0, 1]");
    if (weights.empty())
        throw std::invalid_argument("policyholder '" + id + "': no weights");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0))
            throw std::invalid_argument("policyholder '" + id + "': weight outside [0, 1]");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("policyholder '" + id + "': weights must sum to 1");
    if (!(multiplicity >= 0.0))
        throw std::invalid_argument("policyholder '" + id + "': negative multiplicity");
    payment.validate();
    survival_payment.validate();
}

double Portfolio::heads() const {
    double total = 0.0;
    for (const auto& h : holders)
        total += h.multiplicity;
    return total;
}

std::size_t Portfolio::causes() const { return holders.empty() ? 0 : holders.front().causes(); }

double Portfolio::expected_death_payments() const {
    double total = 0.0;
    for (const auto& h : holders)
        total += h.multiplicity * h.death_prob * h.payment.mean();
    return total;
}

double pairwise_death_covariance(const Policyholder& i, const Policyholder& j,
                                 std::span<const RiskFactorSpec> factors) {
    if (i.causes() != factors.size() || j.causes() != factors.size())
        throw std::invalid_argument("pairwise_death_covariance: weights and risk factors disagree on K");
    double s = 0.0;
    for (std::size_t k = 1; k <= factors.size(); ++k)
        s += i.weights[k] * j.weights[k] * factors[k - 1].variance;
    return i.death_prob * j.death_prob * s;
}

Portfolio build_portfolio(std::span<const PortfolioCellSpec> cells, const TrendParams& trends, int year) {
    Portfolio out;
    out.holders.reserve(cells.size());
    for (const auto& cell : cells) {
        if (cell.age_group < 0 || static_cast<std::size_t>(cell.age_group) >= trends.groups.size())
            throw std::invalid_argument("portfolio cell '" + cell.id + "' has unknown age group");
        Policyholder p;
        p.id = cell.id;
        p.age_group = cell.age_group;
        p.gender = cell.gender;
        p.birth_year = trends.birth_year(cell.age_group, year);
        p.death_prob = death_prob(cell.age_group, cell.gender, year, trends);
        p.weights = cause_weights(cell.age_group, cell.gender, year, trends);
        p.payment = cell.payment;
        p.survival_payment = cell.survival_payment;
        p.multiplicity = cell.heads;
        out.holders.push_back(std::move(p));
    }
    return out;
}

Portfolio homogeneous_portfolio(double heads, double death_prob, std::vector<double> weights,
                                LatticeSeverity payment) {
    Policyholder p;
    p.id = "homogeneous";
    p.death_prob = death_prob;
    p.weights = std::move(weights);
    p.survival_payment = payment;
    p.payment = std::move(payment);
    p.multiplicity = heads;
    p.validate();
    return Portfolio{{std::move(p)}};
}

// ---------------------------------------------------------------------------
// Cohort panel

CohortPanel::CohortPanel(std::vector<int> years, AgeGroups groups, std::vector<std::string> causes)
    : years_(std::move(years)), groups_(std::move(groups)), causes_(std::move(causes)) {
    if (causes_.empty())
        throw std::invalid_argument("a cohort panel needs at least the idiosyncratic cause");
    deaths_.assign(years_.size() * groups_.size() * kGenders * causes_.size(), 0);
    exposure_.assign(years_.size() * groups_.size() * kGenders, 0);
}

void CohortPanel::set_deaths(std::size_t t, int a, Gender g, std::size_t k, std::int64_t n) {
    if (n < 0)
        throw std::invalid_argument("death counts must be non-negative");
    deaths_.at(death_index(t, a, g, k)) = n;
}

void CohortPanel::set_exposure(std::size_t t, int a, Gender g, std::int64_t m) {
    if (m < 0)
        throw std::invalid_argument("exposures must be non-negative");
    exposure_.at(exposure_index(t, a, g)) = m;
}

std::int64_t CohortPanel::total_deaths(std::size_t t, int a, Gender g) const {
    std::int64_t n = 0;
    for (std::size_t k = 0; k < causes_.size(); ++k)
        n += deaths(t, a, g, k);
    return n;
}

std::vector<std::string> CohortPanel::warnings() const {
    std::vector<std::string> out;
    for (std::size_t t = 0; t < years_.size(); ++t)
        for (std::size_t a = 0; a < groups_.size(); ++a)
            for (Gender g : kAllGenders) {
                const auto n = total_deaths(t, static_cast<int>(a), g);
                const auto m = exposure(t, static_cast<int>(a), g);
                if (n > m)
                    out.push_back("year " + std::to_string(years_[t]) + ", age group " + groups_.band(a).label +
                                  ", gender " + std::string(to_string(g)) + ": " + std::to_string(n) +
                                  " deaths exceed exposure " + std::to_string(m));
            }
    return out;
}

CohortPanel CohortPanel::select_years(const std::vector<std::size_t>& keep) const {
    std::vector<int> years;
    for (auto t : keep)
        years.push_back(years_.at(t));
    CohortPanel out(std::move(years), groups_, causes_);
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t a = 0; a < groups_.size(); ++a)
            for (Gender g : kAllGenders) {
                const int ai = static_cast<int>(a);
                out.set_exposure(i, ai, g, exposure(keep[i], ai, g));
                for (std::size_t k = 0; k < causes_.size(); ++k)
                    out.set_deaths(i, ai, g, k, deaths(keep[i], ai, g, k));
            }
    return out;
}

CohortPanel CohortPanel::without_year(std::size_t t) const {
    std::vector<std::size_t> keep;
    for (std::size_t s = 0; s < years_.size(); ++s)
        if (s != t)
            keep.push_back(s);
    return select_years(keep);
}

CohortPanel CohortPanel::only_year(std::size_t t) const { return select_years({t}); }

} // namespace crplus
