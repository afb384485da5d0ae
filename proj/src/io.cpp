#include "crplus/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/tokenizer.hpp>

#include "crplus/errors.hpp"
#include "crplus/trends.hpp"

namespace crplus {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV

std::optional<std::size_t> CsvTable::find_column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    return std::nullopt;
}

std::size_t CsvTable::column(std::string_view name) const {
    if (const auto c = find_column(name))
        return *c;
    throw DataError(source + ": missing required column '" + std::string(name) + "'");
}

std::string CsvTable::where(std::size_t row) const { return source + ":" + std::to_string(lines.at(row)); }

double CsvTable::number(std::size_t row, std::size_t col) const {
    const std::string& text = rows.at(row).at(col);
    double x = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(x))
        throw DataError(where(row) + ": column '" + header.at(col) + "': '" + text + "' is not a number");
    return x;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const {
    const std::string& text = rows.at(row).at(col);
    long long x = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc() || end != text.data() + text.size())
        throw DataError(where(row) + ": column '" + header.at(col) + "': '" + text + "' is not an integer");
    return x;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    CsvTable table;
    table.source = path.string();
    std::string line;
    std::size_t number = 0;
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (boost::algorithm::trim_copy(line).empty() || line[0] == '#')
            continue;
        std::vector<std::string> fields;
        try {
            for (const auto& tok : Tokenizer(line))
                fields.push_back(boost::algorithm::trim_copy(tok));
        } catch (const boost::escaped_list_error& e) {
            throw DataError(table.source + ":" + std::to_string(number) + ": " + e.what());
        }
        if (table.header.empty()) {
            table.header = std::move(fields);
            continue;
        }
        if (fields.size() != table.header.size())
            throw DataError(table.source + ":" + std::to_string(number) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " + std::to_string(fields.size()));
        table.rows.push_back(std::move(fields));
        table.lines.push_back(number);
    }
    if (table.header.empty())
        throw DataError(table.source + ": missing header row");
    return table;
}

namespace {
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += "\\";
        out += c;
    }
    return out + "\"";
}
} // namespace

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    auto emit = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i)
            out << (i ? "," : "") << csv_field(r[i]);
        out << '\n';
    };
    emit(header);
    for (const auto& r : rows)
        emit(r);
}

std::string format_number(double x) {
    if (std::isnan(x))
        return "nan";
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return ec == std::errc() ? std::string(buf, end) : std::to_string(x);
}

// ---------------------------------------------------------------------------
// Panel ingestion

namespace {

int group_index(const AgeGroups& groups, const CsvTable& t, std::size_t row, std::size_t col) {
    try {
        return groups.index_of(t.rows[row][col]);
    } catch (const std::out_of_range&) {
        throw DataError(t.where(row) + ": unknown age group '" + t.rows[row][col] + "'");
    }
}

Gender gender_at(const CsvTable& t, std::size_t row, std::size_t col) {
    try {
        return parse_gender(t.rows[row][col]);
    } catch (const std::exception&) {
        throw DataError(t.where(row) + ": unknown gender '" + t.rows[row][col] + "'");
    }
}

std::string gap_list(const std::vector<std::string>& gaps) {
    std::string out;
    const std::size_t shown = std::min<std::size_t>(gaps.size(), 20);
    for (std::size_t i = 0; i < shown; ++i)
        out += "\n  " + gaps[i];
    if (gaps.size() > shown)
        out += "\n  ... and " + std::to_string(gaps.size() - shown) + " more";
    return out;
}

} // namespace

CohortPanel ingest(const IngestSpec& spec) {
    const CsvTable pop = read_csv(spec.population);
    const CsvTable deaths = read_csv(spec.deaths);
    const std::size_t p_year = pop.column("year"), p_group = pop.column("age_group"), p_gender = pop.column("gender"),
                      p_count = pop.column("count");
    const std::size_t d_year = deaths.column("year"), d_group = deaths.column("age_group"),
                      d_gender = deaths.column("gender"), d_cause = deaths.column("cause"),
                      d_count = deaths.column("count");

    AgeGroups groups = spec.groups;
    if (groups.size() == 0) {
        std::vector<std::string> labels;
        for (const auto& r : pop.rows)
            if (std::find(labels.begin(), labels.end(), r[p_group]) == labels.end())
                labels.push_back(r[p_group]);
        if (labels.empty())
            throw DataError(pop.source + ": no rows");
        try {
            groups = AgeGroups::parse(boost::algorithm::join(labels, ","));
        } catch (const std::exception& e) {
            throw DataError(pop.source + ": cannot derive age groups: " + e.what());
        }
    }
    auto in_range = [&](long long y) {
        return (!spec.first_year || y >= *spec.first_year) && (!spec.last_year || y <= *spec.last_year);
    };

    std::map<std::tuple<int, int, int>, double> exposure;
    std::set<int> year_set;
    for (std::size_t i = 0; i < pop.rows.size(); ++i) {
        const long long y = pop.integer(i, p_year);
        if (!in_range(y))
            continue;
        const int a = group_index(groups, pop, i, p_group);
        const Gender g = gender_at(pop, i, p_gender);
        const double m = pop.number(i, p_count);
        if (m < 0.0)
            throw DataError(pop.where(i) + ": negative population count");
        if (!exposure.emplace(std::tuple{static_cast<int>(y), a, gender_index(g)}, m).second)
            throw DataError(pop.where(i) + ": duplicate row for year " + std::to_string(y) + ", " +
                            pop.rows[i][p_group] + ", " + pop.rows[i][p_gender]);
        year_set.insert(static_cast<int>(y));
    }
    if (year_set.empty())
        throw DataError(pop.source + ": no population rows in the selected year range");

    struct Factor {
        double value;
        long long before;
    };
    std::map<std::string, std::vector<Factor>> factors;
    if (spec.factors) {
        const CsvTable f = read_csv(*spec.factors);
        const std::size_t f_cause = f.column("cause"), f_factor = f.column("factor"),
                          f_before = f.column("applies_before_year");
        for (std::size_t i = 0; i < f.rows.size(); ++i) {
            const double v = f.number(i, f_factor);
            if (!(v > 0.0))
                throw DataError(f.where(i) + ": comparability factor must be positive");
            factors[f.rows[i][f_cause]].push_back({v, f.integer(i, f_before)});
        }
    }

    std::vector<std::string> cause_order;
    std::map<std::tuple<int, int, int, std::string>, double> counts;
    std::set<std::tuple<int, int, int, std::string>> seen;
    for (std::size_t i = 0; i < deaths.rows.size(); ++i) {
        const long long y = deaths.integer(i, d_year);
        if (!in_range(y))
            continue;
        if (!year_set.count(static_cast<int>(y)))
            throw DataError(deaths.where(i) + ": year " + std::to_string(y) + " has no population data");
        const int a = group_index(groups, deaths, i, d_group);
        const Gender g = gender_at(deaths, i, d_gender);
        const std::string& source = deaths.rows[i][d_cause];
        double n = deaths.number(i, d_count);
        if (n < 0.0)
            throw DataError(deaths.where(i) + ": negative death count");
        if (!seen.emplace(static_cast<int>(y), a, gender_index(g), source).second)
            throw DataError(deaths.where(i) + ": duplicate row for year " + std::to_string(y) + ", " +
                            deaths.rows[i][d_group] + ", " + deaths.rows[i][d_gender] + ", cause " + source);
        if (const auto it = factors.find(source); it != factors.end())
            for (const auto& f : it->second)
                if (y < f.before)
                    n *= f.value;
        const auto merged = spec.cause_merge.find(source);
        const std::string cause = merged == spec.cause_merge.end() ? source : merged->second;
        if (std::find(cause_order.begin(), cause_order.end(), cause) == cause_order.end())
            cause_order.push_back(cause);
        counts[{static_cast<int>(y), a, gender_index(g), cause}] += n;
    }
    if (cause_order.empty())
        throw DataError(deaths.source + ": no death rows in the selected year range");

    std::vector<std::string> causes;
    if (std::find(cause_order.begin(), cause_order.end(), spec.idiosyncratic) != cause_order.end()) {
        causes.push_back(spec.idiosyncratic);
        for (const auto& c : cause_order)
            if (c != spec.idiosyncratic)
                causes.push_back(c);
    } else if (cause_order.size() == 1) {
        causes = cause_order;
    } else {
        throw DataError(deaths.source + ": no idiosyncratic cause '" + spec.idiosyncratic + "' among " +
                        boost::algorithm::join(cause_order, ", "));
    }

    const std::vector<int> years(year_set.begin(), year_set.end());
    CohortPanel panel(years, groups, causes);
    std::vector<std::string> gaps;
    for (std::size_t t = 0; t < years.size(); ++t)
        for (int a = 0; a < static_cast<int>(groups.size()); ++a)
            for (Gender g : kAllGenders) {
                const std::string cell = std::to_string(years[t]) + " " +
                                         groups.band(static_cast<std::size_t>(a)).label + " " +
                                         std::string(to_string(g));
                const auto e = exposure.find({years[t], a, gender_index(g)});
                if (e == exposure.end())
                    gaps.push_back("population " + cell);
                else
                    panel.set_exposure(t, a, g, std::llround(e->second));
                for (std::size_t k = 0; k < causes.size(); ++k) {
                    const auto c = counts.find({years[t], a, gender_index(g), causes[k]});
                    if (c == counts.end())
                        gaps.push_back("deaths " + cell + " " + causes[k]);
                    else
                        panel.set_deaths(t, a, g, k, std::llround(c->second));
                }
            }
    if (!gaps.empty())
        throw DataError("panel has " + std::to_string(gaps.size()) + " missing cells:" + gap_list(gaps));
    return panel;
}

void write_population_csv(const fs::path& path, const CohortPanel& panel) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t t = 0; t < panel.years_count(); ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                rows.push_back({std::to_string(panel.year(t)), panel.groups().band(static_cast<std::size_t>(a)).label,
                                std::string(to_string(g)), std::to_string(panel.exposure(t, a, g))});
    write_csv(path, {"year", "age_group", "gender", "count"}, rows);
}

void write_deaths_csv(const fs::path& path, const CohortPanel& panel) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t t = 0; t < panel.years_count(); ++t)
        for (int a = 0; a < static_cast<int>(panel.age_groups()); ++a)
            for (Gender g : kAllGenders)
                for (std::size_t k = 0; k < panel.cause_count(); ++k)
                    rows.push_back({std::to_string(panel.year(t)),
                                    panel.groups().band(static_cast<std::size_t>(a)).label,
                                    std::string(to_string(g)), panel.causes()[k],
                                    std::to_string(panel.deaths(t, a, g, k))});
    write_csv(path, {"year", "age_group", "gender", "cause", "count"}, rows);
}

// ---------------------------------------------------------------------------
// Portfolios, policies, curves

namespace {

LatticeSeverity payment_on(double value, double unit, const CsvTable& t, std::size_t row) {
    if (value < 0.0)
        throw DataError(t.where(row) + ": negative payment");
    const double n = value / unit;
    if (std::abs(n - std::round(n)) <= 1e-9 * std::max(1.0, n))
        return LatticeSeverity::point(unit, static_cast<std::size_t>(std::llround(n)));
    const SeverityAtom atom{value, 1.0};
    return stochastic_round(std::span<const SeverityAtom>(&atom, 1), unit);
}

} // namespace

Portfolio read_portfolio(const fs::path& path, double unit, const TrendParams* trend, int year) {
    if (!(unit > 0.0))
        throw std::invalid_argument("read_portfolio: unit must be positive");
    const CsvTable t = read_csv(path);
    const std::size_t c_id = t.column("id"), c_heads = t.column("heads"), c_pay = t.column("payment");
    const auto c_surv = t.find_column("survival_payment");
    auto heads_at = [&](std::size_t i) {
        const double h = t.number(i, c_heads);
        if (h < 0.0)
            throw DataError(t.where(i) + ": negative head count");
        return h;
    };
    auto survival_at = [&](std::size_t i) {
        return c_surv ? payment_on(t.number(i, *c_surv), unit, t, i) : LatticeSeverity::point(unit, 0);
    };

    if (const auto c_q = t.find_column("death_prob")) {
        std::vector<std::size_t> wcols;
        for (std::size_t k = 0;; ++k) {
            const auto c = t.find_column("w" + std::to_string(k));
            if (!c)
                break;
            wcols.push_back(*c);
        }
        if (wcols.empty())
            throw DataError(t.source + ": explicit portfolios need weight columns w0, w1, ...");
        Portfolio p;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            Policyholder h;
            h.id = t.rows[i][c_id];
            h.death_prob = t.number(i, *c_q);
            h.weights.clear();
            for (std::size_t c : wcols)
                h.weights.push_back(t.number(i, c));
            h.payment = payment_on(t.number(i, c_pay), unit, t, i);
            h.survival_payment = survival_at(i);
            h.multiplicity = heads_at(i);
            try {
                h.validate();
            } catch (const std::invalid_argument& e) {
                throw DataError(t.where(i) + ": " + e.what());
            }
            p.holders.push_back(std::move(h));
        }
        return p;
    }

    if (!trend)
        throw DataError(t.source + ": cell portfolios need fitted parameters (or give death_prob and w0..wK)");
    const std::size_t c_group = t.column("age_group"), c_gender = t.column("gender");
    std::vector<PortfolioCellSpec> cells;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        PortfolioCellSpec c;
        c.id = t.rows[i][c_id];
        c.age_group = group_index(trend->groups, t, i, c_group);
        c.gender = gender_at(t, i, c_gender);
        c.heads = heads_at(i);
        c.payment = payment_on(t.number(i, c_pay), unit, t, i);
        c.survival_payment = survival_at(i);
        cells.push_back(std::move(c));
    }
    return build_portfolio(cells, *trend, year);
}

std::vector<TermPolicy> read_policies(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t c_age = t.column("age"), c_gender = t.column("gender"), c_sum = t.column("sum_insured"),
                      c_term = t.column("term");
    const auto c_count = t.find_column("count");
    std::vector<TermPolicy> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        TermPolicy p;
        p.age = static_cast<int>(t.integer(i, c_age));
        p.gender = gender_at(t, i, c_gender);
        p.sum_insured = t.number(i, c_sum);
        p.term = static_cast<int>(t.integer(i, c_term));
        p.count = c_count ? t.number(i, *c_count) : 1.0;
        if (!(p.sum_insured > 0.0))
            throw DataError(t.where(i) + ": sum insured must be positive");
        if (p.term < 1 || p.count < 0.0 || p.age < 0)
            throw DataError(t.where(i) + ": need age >= 0, term >= 1 and count >= 0");
        out.push_back(p);
    }
    return out;
}

DiscountCurve read_discount_curve(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const std::size_t c_t = t.column("t"), c_d = t.column("discount");
    DiscountCurve c;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const long long s = t.integer(i, c_t);
        const double d = t.number(i, c_d);
        if (s < 1 || !(d > 0.0 && d <= 1.0))
            throw DataError(t.where(i) + ": need t >= 1 and a discount factor in (0, 1]");
        if (!c.factors.emplace(static_cast<int>(s), d).second)
            throw DataError(t.where(i) + ": duplicate maturity " + std::to_string(s));
    }
    return c;
}

std::map<std::pair<int, std::size_t>, double> read_population_path(const fs::path& path, const AgeGroups& groups) {
    const CsvTable t = read_csv(path);
    const std::size_t c_year = t.column("year"), c_group = t.column("age_group"), c_gender = t.column("gender"),
                      c_count = t.column("count");
    std::map<std::pair<int, std::size_t>, double> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const double m = t.number(i, c_count);
        if (!(m > 0.0))
            throw DataError(t.where(i) + ": population must be positive");
        const auto key = std::pair{static_cast<int>(t.integer(i, c_year)),
                                   cell_index(group_index(groups, t, i, c_group), gender_at(t, i, c_gender))};
        if (!out.emplace(key, m).second)
            throw DataError(t.where(i) + ": duplicate population row");
    }
    return out;
}

void write_distribution_csv(const fs::path& path, const LossDistribution& dist) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t n = 0; n < dist.pmf.size(); ++n)
        if (dist.pmf[n] > 0.0)
            rows.push_back({format_number(dist.value_at(n)), format_number(dist.pmf[n])});
    write_csv(path, {"value", "probability"}, rows);
}

// ---------------------------------------------------------------------------
// JSON

namespace {
nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }
} // namespace

nlohmann::json to_json(const LossSummary& s) {
    nlohmann::json q = nlohmann::json::object();
    for (std::size_t i = 0; i < s.probs.size(); ++i)
        q[format_number(s.probs[i])] = number_or_null(s.quantiles[i]);
    return {{"quantiles", q}, {"mean", s.mean}, {"sd", s.sd}, {"truncation_mass", s.truncation_mass}};
}

nlohmann::json to_json(const TestReport& r, bool with_entries) {
    nlohmann::json j{{"test", r.name},
                     {"level", r.level},
                     {"entries", r.entries.size()},
                     {"informative", r.informative()},
                     {"acceptance_fraction", r.acceptance_fraction()}};
    if (with_entries) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& e : r.entries)
            list.push_back({{"label", e.label},
                            {"statistic", number_or_null(e.statistic)},
                            {"p_value", number_or_null(e.p_value)},
                            {"p_value_bootstrap", number_or_null(e.p_value_bootstrap)},
                            {"lower", number_or_null(e.lower)},
                            {"upper", number_or_null(e.upper)},
                            {"accepted", e.accepted},
                            {"degenerate", e.degenerate}});
        j["detail"] = list;
    }
    return j;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Config

Config Config::load(const fs::path& path) {
    Config c;
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open config " + path.string());
    try {
        boost::property_tree::ini_parser::read_ini(in, c.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw DataError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    c.base_ = path.parent_path();
    return c;
}

bool Config::has(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> Config::get(const std::string& key) const {
    const auto v = tree_.get_optional<std::string>(key);
    if (!v)
        return std::nullopt;
    const std::string s = boost::algorithm::trim_copy(*v);
    if (s.empty())
        return std::nullopt;
    return s;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double Config::number_or(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v)
        return fallback;
    double x = 0.0;
    const auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size())
        throw DataError("config " + key + ": '" + *v + "' is not a number");
    return x;
}

long long Config::integer_or(const std::string& key, long long fallback) const {
    const auto v = get(key);
    if (!v)
        return fallback;
    long long x = 0;
    const auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size())
        throw DataError("config " + key + ": '" + *v + "' is not an integer");
    return x;
}

bool Config::flag_or(const std::string& key, bool fallback) const {
    const auto v = get(key);
    if (!v)
        return fallback;
    const std::string s = boost::algorithm::to_lower_copy(*v);
    if (s == "true" || s == "yes" || s == "1" || s == "on")
        return true;
    if (s == "false" || s == "no" || s == "0" || s == "off")
        return false;
    throw DataError("config " + key + ": '" + *v + "' is not a boolean");
}

std::vector<std::string> Config::list(const std::string& key) const {
    std::vector<std::string> out;
    const auto v = get(key);
    if (!v)
        return out;
    boost::algorithm::split(out, *v, boost::is_any_of(","));
    for (auto& s : out)
        boost::algorithm::trim(s);
    out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
    return out;
}

std::vector<double> Config::numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(key)) {
        double x = 0.0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || end != s.data() + s.size())
            throw DataError("config " + key + ": '" + s + "' is not a number");
        out.push_back(x);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> Config::pairs(const std::string& key) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : list(key)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw DataError("config " + key + ": '" + item + "' is not of the form a:b");
        out.emplace_back(boost::algorithm::trim_copy(item.substr(0, colon)),
                         boost::algorithm::trim_copy(item.substr(colon + 1)));
    }
    return out;
}

void Config::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || assignment.find('.') > eq)
        throw std::invalid_argument("--set expects section.key=value, got '" + assignment + "'");
    put(boost::algorithm::trim_copy(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void Config::put(const std::string& key, const std::string& value) { tree_.put(key, value); }

fs::path Config::path(const std::string& key) const {
    const auto p = optional_path(key);
    if (!p)
        throw std::invalid_argument("missing setting " + key);
    return *p;
}

std::optional<fs::path> Config::optional_path(const std::string& key) const {
    const auto v = get(key);
    if (!v)
        return std::nullopt;
    fs::path p(*v);
    if (p.is_relative() && !base_.empty())
        p = base_ / p;
    return p;
}

} // namespace crplus
