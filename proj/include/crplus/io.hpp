#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "crplus/aggregation.hpp"
#include "crplus/domain.hpp"
#include "crplus/solvency.hpp"
#include "crplus/validation.hpp"

namespace crplus {

// CSV with a mandatory header row. Blank lines and lines starting with '#'
// are skipped; every row keeps its 1-based line number for error messages.
struct CsvTable {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;

    std::optional<std::size_t> find_column(std::string_view name) const;
    // Throws DataError naming the file when the column is missing.
    std::size_t column(std::string_view name) const;
    // "<file>:<line>" of row i.
    std::string where(std::size_t row) const;
    double number(std::size_t row, std::size_t col) const;
    long long integer(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
// Shortest decimal text that reads back to the same double.
std::string format_number(double x);

struct IngestSpec {
    std::filesystem::path population; // year, age_group, gender, count
    std::filesystem::path deaths;     // year, age_group, gender, cause, count
    std::optional<std::filesystem::path> factors; // cause, factor, applies_before_year
    // Empty: the bands found in the population file, in order of appearance.
    AgeGroups groups;
    // Source cause -> target cause; targets may be new or existing labels.
    std::map<std::string, std::string> cause_merge;
    // Label of cause 0. A file with a single cause uses that cause instead.
    std::string idiosyncratic = "idiosyncratic";
    std::optional<int> first_year;
    std::optional<int> last_year;
};

// Reads and checks the panel: comparability factors scale deaths of years
// before their cut-over, causes are merged, then counts are rounded to the
// nearest integer. Throws DataError with file and line for malformed rows,
// duplicates and negative counts, and a list of gaps for missing cells.
CohortPanel ingest(const IngestSpec& spec);

void write_population_csv(const std::filesystem::path& path, const CohortPanel& panel);
void write_deaths_csv(const std::filesystem::path& path, const CohortPanel& panel);

// Portfolio file. Either explicit columns
//   id, heads, death_prob, payment, survival_payment, w0, w1, ..., wK
// or cell columns
//   id, age_group, gender, heads, payment, survival_payment
// with q and w taken from `trend` in `year`. Payments are stochastic-rounded
// onto `unit` when they are not multiples of it.
Portfolio read_portfolio(const std::filesystem::path& path, double unit, const TrendParams* trend = nullptr,
                         int year = 0);

// age, gender, sum_insured, term, count
std::vector<TermPolicy> read_policies(const std::filesystem::path& path);
// t, discount
DiscountCurve read_discount_curve(const std::filesystem::path& path);
// year, age_group, gender, count -> exposure keyed by (year, cell_index)
std::map<std::pair<int, std::size_t>, double> read_population_path(const std::filesystem::path& path,
                                                                   const AgeGroups& groups);

// value, probability
void write_distribution_csv(const std::filesystem::path& path, const LossDistribution& dist);

nlohmann::json to_json(const LossSummary& s);
nlohmann::json to_json(const TestReport& r, bool with_entries = true);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// INI-style configuration: [section] headers and key = value lines.
class Config {
public:
    Config() = default;
    static Config load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double number_or(const std::string& key, double fallback) const;
    long long integer_or(const std::string& key, long long fallback) const;
    bool flag_or(const std::string& key, bool fallback) const;
    // Comma separated list; empty when the key is absent.
    std::vector<std::string> list(const std::string& key) const;
    std::vector<double> numbers(const std::string& key) const;
    // "a:b, c:d" pairs.
    std::vector<std::pair<std::string, std::string>> pairs(const std::string& key) const;

    // "section.key=value"
    void set(const std::string& assignment);
    void put(const std::string& key, const std::string& value);
    // Paths in the file are relative to its directory.
    std::filesystem::path path(const std::string& key) const;
    std::optional<std::filesystem::path> optional_path(const std::string& key) const;

private:
    boost::property_tree::ptree tree_;
    std::filesystem::path base_;
};

} // namespace crplus
