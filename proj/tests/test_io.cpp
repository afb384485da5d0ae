#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

#include "crplus/errors.hpp"
#include "crplus/io.hpp"

using namespace crplus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("crplus_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return path / name;
    }
};

const char* kPopulation = "year,age_group,gender,count\n"
                          "1996,60-69,f,1000\n1996,60-69,m,1000\n1996,70+,f,500\n1996,70+,m,400\n"
                          "1997,60-69,f,1000\n1997,60-69,m,1000\n1997,70+,f,500\n1997,70+,m,400\n";

std::string deaths_csv(const std::vector<std::string>& causes) {
    std::string s = "year,age_group,gender,cause,count\n";
    int n = 100;
    for (int y : {1996, 1997})
        for (const char* a : {"60-69", "70+"})
            for (const char* g : {"f", "m"})
                for (const auto& c : causes)
                    s += std::to_string(y) + "," + a + "," + g + "," + c + "," + std::to_string(n++) + "\n";
    return s;
}

IngestSpec basic(const TempDir& dir, const std::vector<std::string>& causes) {
    IngestSpec spec;
    spec.population = dir.write("population.csv", kPopulation);
    spec.deaths = dir.write("deaths.csv", deaths_csv(causes));
    return spec;
}

template <class F>
std::string data_error(F&& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("csv reader handles quoting, comments and field counts") {
    TempDir dir;
    const auto t = read_csv(dir.write("a.csv", "# note\nx, y\n1,\"a,b\"\n\n2 , c\r\n"));
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == "a,b");
    CHECK(t.rows[1][0] == "2");
    CHECK(t.where(1) == t.source + ":5");
    CHECK(t.number(1, t.column("x")) == 2.0);
    CHECK_THROWS_AS(t.column("z"), DataError);
    CHECK_THROWS_AS(t.number(0, 1), DataError);
    CHECK(data_error([&] { read_csv(dir.write("b.csv", "x,y\n1,2\n3\n")); }).find("b.csv:3") != std::string::npos);
}

TEST_CASE("ingest: unit factors leave counts unchanged") {
    TempDir dir;
    IngestSpec spec = basic(dir, {"idiosyncratic", "cancer"});
    const CohortPanel plain = ingest(spec);
    spec.factors = dir.write("factors.csv", "cause,factor,applies_before_year\ncancer,1,1997\nidiosyncratic,1.0,2000\n");
    CHECK(ingest(spec) == plain);
    CHECK(plain.risk_factors() == 1);
    CHECK(plain.causes()[0] == "idiosyncratic");
    CHECK(plain.deaths(0, 0, Gender::female, 1) == 101);
}

TEST_CASE("ingest: comparability factor scales pre-cutover years and rounds") {
    TempDir dir;
    IngestSpec spec;
    spec.population = dir.write("population.csv", kPopulation);
    std::string d = "year,age_group,gender,cause,count\n";
    for (int y : {1996, 1997})
        for (const char* a : {"60-69", "70+"})
            for (const char* g : {"f", "m"}) {
                d += std::to_string(y) + "," + a + "," + g + ",idiosyncratic,10\n";
                d += std::to_string(y) + "," + a + "," + g + ",heart,100\n";
                d += std::to_string(y) + "," + a + "," + g + ",lung,3\n";
            }
    spec.deaths = dir.write("deaths.csv", d);
    spec.factors = dir.write("factors.csv", "cause,factor,applies_before_year\nheart,1.25,1997\nlung,1.1,1997\n");
    const CohortPanel p = ingest(spec);
    CHECK(p.deaths(0, 1, Gender::male, 1) == 125);
    CHECK(p.deaths(1, 1, Gender::male, 1) == 100);
    CHECK(p.deaths(0, 0, Gender::female, 2) == 3); // 3.3 rounds to 3
    CHECK(p.deaths(0, 0, Gender::female, 0) == 10);
}

TEST_CASE("ingest: cause merge sums counts and reduces K") {
    TempDir dir;
    IngestSpec spec = basic(dir, {"idiosyncratic", "a", "b", "c"});
    const CohortPanel full = ingest(spec);
    spec.cause_merge = {{"b", "idiosyncratic"}};
    const CohortPanel merged = ingest(spec);
    CHECK(merged.risk_factors() == full.risk_factors() - 1);
    REQUIRE(merged.causes() == std::vector<std::string>{"idiosyncratic", "a", "c"});
    for (std::size_t t = 0; t < 2; ++t)
        for (int a = 0; a < 2; ++a)
            for (Gender g : kAllGenders) {
                CHECK(merged.deaths(t, a, g, 0) == full.deaths(t, a, g, 0) + full.deaths(t, a, g, 2));
                CHECK(merged.deaths(t, a, g, 2) == full.deaths(t, a, g, 3));
                CHECK(merged.total_deaths(t, a, g) == full.total_deaths(t, a, g));
            }
}

TEST_CASE("ingest: round trip through the writers reproduces the panel") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        TempDir dir;
        CohortPanel panel({2000, 2001, 2002}, AgeGroups::parse("50-54,55-59,60+"), {"other", "x", "y"});
        std::uniform_int_distribution<int> n(0, 5000);
        for (std::size_t t = 0; t < 3; ++t)
            for (int a = 0; a < 3; ++a)
                for (Gender g : kAllGenders) {
                    panel.set_exposure(t, a, g, 10000 + n(rng));
                    for (std::size_t k = 0; k < 3; ++k)
                        panel.set_deaths(t, a, g, k, n(rng));
                }
        IngestSpec spec;
        spec.population = dir.path / "p.csv";
        spec.deaths = dir.path / "d.csv";
        spec.idiosyncratic = "other";
        write_population_csv(spec.population, panel);
        write_deaths_csv(spec.deaths, panel);
        CHECK(ingest(spec) == panel);
    }
}

TEST_CASE("ingest: data errors carry locations") {
    TempDir dir;
    IngestSpec spec = basic(dir, {"idiosyncratic", "cancer"});

    std::string d = deaths_csv({"idiosyncratic", "cancer"});
    d.replace(d.find(",101\n"), 5, ",-1\n");
    spec.deaths = dir.write("neg.csv", d);
    CHECK(data_error([&] { ingest(spec); }).find("neg.csv:3") != std::string::npos);

    std::string gap = deaths_csv({"idiosyncratic", "cancer"});
    gap.erase(gap.rfind("1997,70+,m,cancer"));
    spec.deaths = dir.write("gap.csv", gap);
    const std::string msg = data_error([&] { ingest(spec); });
    CHECK(msg.find("missing") != std::string::npos);
    CHECK(msg.find("1997 70+ m cancer") != std::string::npos);

    spec.deaths = dir.write("dup.csv", deaths_csv({"idiosyncratic", "cancer"}) + "1996,70+,m,cancer,1\n");
    CHECK(data_error([&] { ingest(spec); }).find("duplicate") != std::string::npos);

    spec.deaths = dir.write("year.csv", deaths_csv({"idiosyncratic", "cancer"}) + "1998,70+,m,cancer,1\n");
    CHECK(data_error([&] { ingest(spec); }).find("1998") != std::string::npos);

    spec.deaths = dir.write("noidio.csv", deaths_csv({"a", "b"}));
    CHECK(!data_error([&] { ingest(spec); }).empty());

    spec.deaths = dir.write("bad.csv", "year,age_group,gender,cause,count\n1996,60-69,x,a,1\n");
    CHECK(data_error([&] { ingest(spec); }).find("bad.csv:2") != std::string::npos);

    // year range filters rows from both files
    spec = basic(dir, {"idiosyncratic", "cancer"});
    spec.last_year = 1996;
    CHECK(ingest(spec).years() == std::vector<int>{1996});
}

TEST_CASE("portfolio, policy, curve and population readers") {
    TempDir dir;
    const Portfolio p = read_portfolio(
        dir.write("pf.csv", "id,heads,death_prob,payment,w0,w1\na,10,0.01,2,0.5,0.5\nb,5,0.02,1.5,1,0\n"), 1.0);
    REQUIRE(p.holders.size() == 2);
    CHECK(p.holders[0].weights == std::vector<double>{0.5, 0.5});
    CHECK(p.holders[0].multiplicity == 10.0);
    CHECK(p.expected_death_payments() == doctest::Approx(10 * 0.01 * 2 + 5 * 0.02 * 1.5).epsilon(1e-12));
    CHECK(read_portfolio(dir.write("empty.csv", "id,heads,death_prob,payment,w0\n"), 1.0).empty());
    CHECK_THROWS_AS(read_portfolio(dir.write("nw.csv", "id,heads,death_prob,payment\na,1,0.1,1\n"), 1.0), DataError);
    CHECK_THROWS_AS(read_portfolio(dir.write("cell.csv", "id,heads,payment,age_group,gender\na,1,1,60-69,f\n"), 1.0),
                    DataError);

    const auto pol = read_policies(dir.write("pol.csv", "age,gender,sum_insured,term,count\n40,m,100000,10,3\n"));
    REQUIRE(pol.size() == 1);
    CHECK(pol[0].gender == Gender::male);
    CHECK(pol[0].count == 3.0);
    CHECK_THROWS_AS(read_policies(dir.write("pol2.csv", "age,gender,sum_insured,term\n40,m,-1,10\n")), DataError);

    const DiscountCurve c = read_discount_curve(dir.write("c.csv", "t,discount\n1,0.99\n2,0.97\n"));
    CHECK(c.at(2) == 0.97);
    CHECK_THROWS_AS(read_discount_curve(dir.write("c2.csv", "t,discount\n1,1.5\n")), DataError);

    const auto path = read_population_path(dir.write("pp.csv", "year,age_group,gender,count\n2020,70+,m,12\n"),
                                           AgeGroups::parse("60-69,70+"));
    CHECK(path.at({2020, cell_index(1, Gender::male)}) == 12.0);
}

TEST_CASE("config parsing, overrides and errors") {
    TempDir dir;
    const auto file = dir.write("run.ini", "[data]\npopulation = pop.csv\ngroups = 50-54, 55+\n"
                                           "[mcmc]\nsteps = 400\nflag = yes\nscale = 0.5\nmerge = a:b, c : d\n");
    Config c = Config::load(file);
    CHECK(c.integer_or("mcmc.steps", 1) == 400);
    CHECK(c.number_or("mcmc.scale", 1) == 0.5);
    CHECK(c.number_or("mcmc.missing", 2.5) == 2.5);
    CHECK(c.flag_or("mcmc.flag", false));
    CHECK(c.list("data.groups") == std::vector<std::string>{"50-54", "55+"});
    CHECK(c.pairs("mcmc.merge") == std::vector<std::pair<std::string, std::string>>{{"a", "b"}, {"c", "d"}});
    CHECK(c.path("data.population") == dir.path / "pop.csv");
    c.set("mcmc.steps=900");
    CHECK(c.integer_or("mcmc.steps", 1) == 900);
    CHECK_THROWS_AS(c.set("steps"), std::invalid_argument);
    CHECK_THROWS_AS(c.integer_or("mcmc.scale", 1), DataError);
    CHECK_THROWS_AS(c.path("data.deaths"), std::invalid_argument);

    const auto bad = dir.write("bad.ini", "[a]\nx = 1\n[b\n");
    CHECK(data_error([&] { Config::load(bad); }).find("bad.ini:3") != std::string::npos);
}

TEST_CASE("distribution writer and json summaries") {
    TempDir dir;
    LossDistribution d = LossDistribution::point_mass(2.0, 3);
    write_distribution_csv(dir.path / "d.csv", d);
    const auto t = read_csv(dir.path / "d.csv");
    REQUIRE(t.rows.size() == 1);
    CHECK(t.number(0, 0) == 6.0);
    CHECK(t.number(0, 1) == 1.0);
    CHECK(format_number(0.1) == "0.1");

    TestReport r;
    r.name = "ks";
    r.level = 0.05;
    TestEntry e;
    e.label = "k1";
    e.accepted = true;
    r.entries.push_back(e);
    const auto j = to_json(r, true);
    CHECK(j["acceptance_fraction"] == 1.0);
    CHECK(j["detail"][0]["label"] == "k1");
}
