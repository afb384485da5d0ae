#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>

#include <boost/algorithm/string/join.hpp>

#include "crplus/aggregation.hpp"
#include "crplus/errors.hpp"
#include "crplus/estimation.hpp"
#include "crplus/forecast.hpp"
#include "crplus/mc_oracle.hpp"
#include "crplus/numerics.hpp"
#include "crplus/param_io.hpp"
#include "crplus/solvency.hpp"
#include "crplus/validation.hpp"

namespace crplus::app {

namespace fs = std::filesystem;
using nlohmann::json;

void Context::wrote(const fs::path& p) const {
    if (log)
        *log << "wrote " << p.string() << '\n';
}

unsigned Context::threads() const { return static_cast<unsigned>(cfg.integer_or("run.threads", 0)); }

namespace {

// ---------------------------------------------------------------------------
// Loading

CohortPanel load_panel(const Context& ctx) {
    const Config& c = ctx.cfg;
    IngestSpec spec;
    spec.population = c.path("data.population");
    spec.deaths = c.path("data.deaths");
    spec.factors = c.optional_path("data.factors");
    const auto groups = c.list("data.groups");
    if (groups.size() == 1 && groups[0] == "standard")
        spec.groups = AgeGroups::standard();
    else if (!groups.empty())
        spec.groups = AgeGroups::parse(boost::algorithm::join(groups, ","));
    for (const auto& [from, to] : c.pairs("data.merge"))
        spec.cause_merge[from] = to;
    spec.idiosyncratic = c.get_or("data.idiosyncratic", spec.idiosyncratic);
    if (c.has("data.first_year"))
        spec.first_year = static_cast<int>(c.integer_or("data.first_year", 0));
    if (c.has("data.last_year"))
        spec.last_year = static_cast<int>(c.integer_or("data.last_year", 0));
    CohortPanel panel = ingest(spec);
    if (ctx.log)
        for (const auto& w : panel.warnings())
            *ctx.log << "warning: " << w << '\n';
    return panel;
}

std::set<Family> fixed_families(const Config& c, const std::set<Family>& fallback) {
    if (!c.has("model.fixed"))
        return fallback;
    std::set<Family> out;
    for (const auto& name : c.list("model.fixed"))
        if (name != "none")
            out.insert(parse_family(name));
    return out;
}

TrendParams model_shape(const Config& c, const CohortPanel& panel) {
    const double mid = std::floor(0.5 * (panel.years().front() + panel.years().back()));
    TrendParams t = TrendParams::defaults(panel.groups(), panel.risk_factors(), c.number_or("model.t0", mid));
    auto fill = [&](const char* key, std::vector<double>& v) {
        if (c.has(key))
            std::fill(v.begin(), v.end(), c.number_or(key, 0.0));
    };
    fill("model.zeta", t.zeta);
    fill("model.eta", t.eta);
    fill("model.phi", t.phi);
    fill("model.psi", t.psi);
    return t;
}

std::optional<McmcChain> load_chain(const Context& ctx) {
    if (const auto p = ctx.cfg.optional_path("model.chain"))
        return read_chain_file(*p);
    return std::nullopt;
}

std::optional<ParamVector> maybe_params(const Context& ctx, const std::optional<McmcChain>& chain) {
    if (const auto p = ctx.cfg.optional_path("model.params"))
        return read_params(*p);
    if (chain)
        return chain->mean();
    return std::nullopt;
}

ParamVector load_params(const Context& ctx, const std::optional<McmcChain>& chain) {
    if (auto p = maybe_params(ctx, chain))
        return *p;
    throw std::invalid_argument("fitted parameters are required: pass --params or --chain");
}

PriorSpec load_prior(const Config& c) {
    PriorSpec p = PriorSpec::smoothing(c.number_or("prior.alpha", 0.0), c.number_or("prior.beta", 0.0),
                                       c.number_or("prior.zeta", 0.0), c.number_or("prior.eta", 0.0),
                                       c.number_or("prior.kappa", 0.0));
    for (Family f : kAllFamilies) {
        if (f == Family::sigma)
            continue;
        const std::string key = "prior." + std::string(to_string(f));
        const auto it = p.blocks.find(f);
        BlockPrior b = it == p.blocks.end() ? BlockPrior{0.0, 1e-2, 1} : it->second;
        b.c = c.number_or(key, b.c);
        b.epsilon = c.number_or(key + "_epsilon", b.epsilon);
        b.order = static_cast<int>(c.integer_or(key + "_order", b.order));
        if (b.c < 0.0 || b.epsilon < 0.0)
            throw std::invalid_argument(key + ": prior scales must be non-negative");
        if (b.c != 0.0 || it != p.blocks.end())
            p.blocks[f] = b;
    }
    return p;
}

McmcConfig load_mcmc(const Context& ctx) {
    const Config& c = ctx.cfg;
    McmcConfig m;
    m.n_steps = static_cast<std::size_t>(c.integer_or("mcmc.steps", static_cast<long long>(m.n_steps)));
    m.burn_in = static_cast<std::size_t>(c.integer_or("mcmc.burn_in", static_cast<long long>(m.burn_in)));
    m.n_chains = static_cast<std::size_t>(c.integer_or("mcmc.chains", 1));
    m.seed = static_cast<std::uint64_t>(c.integer_or("mcmc.seed", 1));
    m.thin = static_cast<std::size_t>(c.integer_or("mcmc.thin", 1));
    m.adapt = c.flag_or("mcmc.adapt", m.adapt);
    m.joint_block = c.flag_or("mcmc.joint_block", m.joint_block);
    m.target_acceptance = c.number_or("mcmc.target_acceptance", m.target_acceptance);
    m.threads = ctx.threads();
    for (auto& [family, scale] : m.proposal_scales)
        scale = c.number_or("mcmc.scale_" + std::string(to_string(family)), scale);
    m.validate();
    return m;
}

PanjerOptions load_panjer(const Config& c) {
    PanjerOptions p;
    p.tail_tolerance = c.number_or("panjer.tail_tolerance", p.tail_tolerance);
    p.hard_limit = static_cast<std::size_t>(c.integer_or("panjer.hard_limit", static_cast<long long>(p.hard_limit)));
    if (c.has("panjer.n_max"))
        p.n_max = static_cast<std::size_t>(c.integer_or("panjer.n_max", 0));
    return p;
}

struct LoadedPortfolio {
    Portfolio portfolio;
    std::vector<RiskFactorSpec> factors;
    double unit = 1.0;
};

LoadedPortfolio load_portfolio(const Context& ctx, const std::optional<ParamVector>& params) {
    const Config& c = ctx.cfg;
    LoadedPortfolio out;
    out.unit = c.number_or("portfolio.unit", 1.0);
    if (params && !c.has("portfolio.year"))
        throw std::invalid_argument("portfolio.year is required together with fitted parameters");
    const int year = static_cast<int>(c.integer_or("portfolio.year", 0));
    out.portfolio = read_portfolio(c.path("portfolio.file"), out.unit, params ? &params->trend : nullptr, year);
    const std::size_t K = out.portfolio.causes();
    const std::vector<double> sigma = params ? params->sigma_sq : c.numbers("portfolio.sigma_sq");
    if (sigma.size() < K)
        throw DataError("portfolio has " + std::to_string(K) + " risk factors but " + std::to_string(sigma.size()) +
                        " variances are given (portfolio.sigma_sq or --params)");
    for (std::size_t k = 1; k <= K; ++k)
        out.factors.push_back({static_cast<int>(k), sigma[k - 1], "factor " + std::to_string(k)});
    return out;
}

LossDistribution death_payments(const LoadedPortfolio& p, const PanjerOptions& opts) {
    if (p.portfolio.empty())
        return LossDistribution::point_mass(p.unit, 0);
    return aggregate_portfolio(p.portfolio, p.factors, p.unit, opts);
}

LossDistribution annuity_loss(const LoadedPortfolio& p, const LossDistribution& s) {
    if (p.portfolio.empty())
        return LossDistribution::point_mass(p.unit, 0);
    return loss_from_annuity(survival_payment_distribution(p.portfolio, p.unit), s);
}

McmcChain pool(const std::vector<McmcChain>& chains) {
    McmcChain all = chains.front();
    for (std::size_t c = 1; c < chains.size(); ++c) {
        all.steps.insert(all.steps.end(), chains[c].steps.begin(), chains[c].steps.end());
        all.samples.insert(all.samples.end(), chains[c].samples.begin(), chains[c].samples.end());
        all.log_posterior.insert(all.log_posterior.end(), chains[c].log_posterior.begin(),
                                 chains[c].log_posterior.end());
    }
    return all;
}

std::vector<int> parse_int_ranges(const std::vector<std::string>& items) {
    std::vector<int> out;
    for (const auto& s : items) {
        const auto dash = s.find('-', 1);
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoi(s));
            } else {
                const int lo = std::stoi(s.substr(0, dash)), hi = std::stoi(s.substr(dash + 1));
                for (int x = lo; x <= hi; ++x)
                    out.push_back(x);
            }
        } catch (const std::logic_error&) {
            throw DataError("'" + s + "' is not an integer or range a-b");
        }
    }
    return out;
}

std::vector<Gender> genders(const Config& c, const std::string& key) {
    std::vector<Gender> out;
    for (const auto& s : c.list(key))
        out.push_back(parse_gender(s));
    if (out.empty())
        out.assign(std::begin(kAllGenders), std::end(kAllGenders));
    return out;
}

std::string column_for(double p) { return "q" + format_number(p); }

// ---------------------------------------------------------------------------

json summary_json(const RiskFactorEstimates& e) {
    json j = json::array();
    for (std::size_t k = 0; k < e.sigma.size(); ++k)
        j.push_back({{"k", k + 1}, {"sigma", e.sigma[k]}, {"sigma_sq", e.sigma[k] * e.sigma[k]}});
    return j;
}

double binomial_log_pmf(std::size_t n, std::size_t k, double p) {
    using numerics::log_gamma;
    const double dn = static_cast<double>(n), dk = static_cast<double>(k);
    return log_gamma(dn + 1) - log_gamma(dk + 1) - log_gamma(dn - dk + 1) + dk * std::log(p) +
           (dn - dk) * std::log1p(-p);
}

template <class F>
double seconds(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

// ---------------------------------------------------------------------------
// Estimation

void fit_mom(Context& ctx) {
    const CohortPanel panel = load_panel(ctx);
    MomOptions opts;
    opts.zero_count_correction = ctx.cfg.number_or("model.zero_count_correction", opts.zero_count_correction);
    MomFit fit = mom_fit(panel, model_shape(ctx.cfg, panel), opts);
    fit.params.fixed = fixed_families(ctx.cfg, fit.params.fixed);

    write_params(ctx.output("params.json"), fit.params);
    ctx.wrote(ctx.output("params.json"));
    write_deaths_csv(ctx.output("transformed_deaths.csv"), fit.transformed);
    ctx.wrote(ctx.output("transformed_deaths.csv"));
    json s{{"method", "matching of moments"},
           {"years", {panel.years().front(), panel.years().back()}},
           {"causes", panel.causes()},
           {"sigma_sq", fit.params.sigma_sq},
           {"log_likelihood", log_likelihood(panel, fit.params)}};
    write_json(ctx.output("fit_summary.json"), s);
    ctx.wrote(ctx.output("fit_summary.json"));
}

void fit_mcmc(Context& ctx) {
    const CohortPanel panel = load_panel(ctx);
    ParamVector init;
    if (const auto p = ctx.cfg.optional_path("model.params")) {
        init = read_params(*p);
    } else {
        init = mom_fit(panel, model_shape(ctx.cfg, panel)).params;
        if (ctx.log)
            *ctx.log << "starting from the matching-of-moments fit\n";
    }
    init.fixed = fixed_families(ctx.cfg, init.fixed);
    const McmcConfig cfg = load_mcmc(ctx);
    const fs::path chain_path = ctx.output("chain.csv");
    const auto chains = mcmc_sample_chains(panel, init, load_prior(ctx.cfg), cfg, chain_path);
    const McmcChain all = pool(chains);

    json summary{{"steps", cfg.n_steps}, {"burn_in", cfg.burn_in}, {"seed", cfg.seed}};
    json list = json::array();
    for (std::size_t c = 0; c < chains.size(); ++c) {
        json acc = json::object();
        for (const auto& s : chains[c].stats)
            acc[s.name] = s.rate();
        list.push_back({{"chain", c},
                        {"records", chains[c].samples.size()},
                        {"acceptance", acc},
                        {"warnings", chains[c].warnings}});
        for (const auto& w : chains[c].warnings)
            if (ctx.log)
                *ctx.log << "warning (chain " << c << "): " << w << '\n';
    }
    summary["chains"] = list;
    const InformationCriteria ic = information_criteria(panel, all);
    summary["information_criteria"] = {{"log_likelihood_at_mode", ic.log_likelihood_at_mode},
                                       {"aic", ic.aic},
                                       {"bic", ic.bic},
                                       {"dic", ic.dic},
                                       {"effective_parameters", ic.effective_parameters},
                                       {"parameters", ic.parameters},
                                       {"observations", ic.observations}};
    write_params(ctx.output("posterior_mean.json"), all.mean());
    write_params(ctx.output("posterior_mode.json"), all.mode());
    write_json(ctx.output("mcmc_summary.json"), summary);
    for (const char* f : {"posterior_mean.json", "posterior_mode.json", "mcmc_summary.json"})
        ctx.wrote(ctx.output(f));
    ctx.wrote(chain_path);
}

void map_factors(Context& ctx) {
    const CohortPanel panel = load_panel(ctx);
    const ParamVector params = load_params(ctx, load_chain(ctx));
    const RiskFactorEstimates est =
        map_risk_factors(panel, params, static_cast<std::size_t>(ctx.cfg.integer_or("map.max_iterations", 500)),
                         ctx.cfg.number_or("map.tolerance", 1e-12));
    const RiskFactorEstimates approx = map_risk_factors_approx(panel, params);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < est.lambda.size(); ++k)
        for (std::size_t t = 0; t < panel.years_count(); ++t)
            rows.push_back({std::to_string(panel.year(t)), panel.causes()[k + 1], format_number(est.lambda[k][t]),
                            format_number(approx.lambda[k][t])});
    write_csv(ctx.output("risk_factors.csv"), {"year", "cause", "lambda", "lambda_approx"}, rows);
    json s{{"converged", est.converged}, {"iterations", est.iterations}, {"factors", summary_json(est)}};
    for (std::size_t k = 0; k < est.sigma.size(); ++k) {
        s["factors"][k]["cause"] = panel.causes()[k + 1];
        s["factors"][k]["sigma_approx"] = approx.sigma[k];
    }
    write_json(ctx.output("risk_factor_summary.json"), s);
    ctx.wrote(ctx.output("risk_factors.csv"));
    ctx.wrote(ctx.output("risk_factor_summary.json"));
    if (!est.converged && ctx.log)
        *ctx.log << "warning: MAP iteration did not converge\n";
}

// ---------------------------------------------------------------------------
// Portfolio laws

void aggregate(Context& ctx) {
    const auto params = maybe_params(ctx, load_chain(ctx));
    const LoadedPortfolio p = load_portfolio(ctx, params);
    const LossDistribution s = death_payments(p, load_panjer(ctx.cfg));
    const LossDistribution loss = annuity_loss(p, s);
    write_distribution_csv(ctx.output("aggregate_distribution.csv"), s);
    write_distribution_csv(ctx.output("loss_distribution.csv"), loss);
    json j{{"heads", p.portfolio.heads()},
           {"risk_factors", p.factors.size()},
           {"unit", p.unit},
           {"expected_death_payments", p.portfolio.expected_death_payments()},
           {"death_payments", to_json(summarize(s))},
           {"loss", to_json(summarize(loss))}};
    write_json(ctx.output("aggregate_summary.json"), j);
    for (const char* f : {"aggregate_distribution.csv", "loss_distribution.csv", "aggregate_summary.json"})
        ctx.wrote(ctx.output(f));
}

void scenario(Context& ctx) {
    const auto params = maybe_params(ctx, load_chain(ctx));
    const LoadedPortfolio p = load_portfolio(ctx, params);
    Scenario sc;
    sc.description = ctx.cfg.get_or("scenario.description", "");
    for (const auto& [k, lambda] : ctx.cfg.pairs("scenario.factors")) {
        try {
            sc.fixed_factors[std::stoi(k)] = std::stod(lambda);
        } catch (const std::logic_error&) {
            throw DataError("scenario.factors: '" + k + ":" + lambda + "' is not of the form k:lambda");
        }
    }
    if (sc.fixed_factors.empty())
        throw std::invalid_argument("scenario.factors is empty (expected k:lambda pairs)");
    const PanjerOptions opts = load_panjer(ctx.cfg);
    if (p.portfolio.empty())
        throw std::invalid_argument("scenario: the portfolio is empty");
    const ScenarioResult r = scenario_loss(p.portfolio, p.factors, sc, p.unit, opts);
    const LossDistribution base_s = death_payments(p, opts);
    const LossDistribution base_loss = annuity_loss(p, base_s);

    write_distribution_csv(ctx.output("scenario_distribution.csv"), r.s);
    write_distribution_csv(ctx.output("scenario_loss.csv"), r.loss);
    json fixed = json::object();
    for (const auto& [k, v] : sc.fixed_factors)
        fixed[std::to_string(k)] = v;
    json j{{"description", sc.description},
           {"fixed_factors", fixed},
           {"scenario", {{"death_payments", to_json(summarize(r.s))}, {"loss", to_json(summarize(r.loss))}}},
           {"baseline", {{"death_payments", to_json(summarize(base_s))}, {"loss", to_json(summarize(base_loss))}}}};
    write_json(ctx.output("scenario_summary.json"), j);
    for (const char* f : {"scenario_distribution.csv", "scenario_loss.csv", "scenario_summary.json"})
        ctx.wrote(ctx.output(f));
}

// ---------------------------------------------------------------------------
// Projection

void forecast(Context& ctx) {
    const Config& c = ctx.cfg;
    const CohortPanel panel = load_panel(ctx);
    const auto chain = load_chain(ctx);
    const ParamVector params = load_params(ctx, chain);

    ForecastConfig f;
    f.last_year = panel.years().back();
    f.horizon = static_cast<int>(c.integer_or("forecast.horizon", f.last_year + 30));
    f.inflation = c.number_or("forecast.inflation", 0.0);
    json meta = json::object();
    if (c.has("forecast.estimate_inflation_after")) {
        const int last_fit = static_cast<int>(c.integer_or("forecast.estimate_inflation_after", 0));
        const InflationFit fit = estimate_inflation(panel, params, last_fit, c.number_or("forecast.inflation_max", 10.0));
        f.inflation = fit.d;
        meta["inflation_fit"] = {{"after", last_fit}, {"d", fit.d}, {"log_likelihood", fit.log_likelihood}};
    }
    if (const auto path = c.optional_path("forecast.population"))
        f.population = read_population_path(*path, params.trend.groups);
    f.include_parameter_uncertainty = c.flag_or("forecast.parameter_uncertainty", chain.has_value());
    f.max_samples = static_cast<std::size_t>(c.integer_or("forecast.max_samples", 1000));
    f.panjer = load_panjer(c);
    f.threads = ctx.threads();
    f.validate();

    std::vector<double> probs = c.numbers("forecast.probs");
    if (probs.empty())
        probs = {0.05, 0.5, 0.95};
    const int from = static_cast<int>(c.integer_or("forecast.from_year", f.last_year + 1));
    std::vector<int> years;
    for (int t = from; t <= f.horizon; ++t)
        years.push_back(t);
    std::vector<int> groups;
    for (const auto& label : c.list("forecast.age_groups"))
        groups.push_back(params.trend.groups.index_of(label));
    if (groups.empty())
        for (std::size_t a = 0; a < params.trend.groups.size(); ++a)
            groups.push_back(static_cast<int>(a));

    std::vector<std::string> header{"age_group", "gender", "year", "exposure", "mean_rate"};
    for (double p : probs)
        header.push_back(column_for(p));
    std::vector<std::vector<std::string>> rows;
    const ParamVector single[] = {params};
    for (int a : groups)
        for (Gender g : genders(c, "forecast.genders")) {
            const auto bands = chain && f.include_parameter_uncertainty
                                   ? forecast_bands(panel, a, g, years, *chain, f, probs)
                                   : forecast_bands(panel, a, g, years, std::span<const ParamVector>(single), f, probs);
            for (const auto& b : bands) {
                std::vector<std::string> r{params.trend.groups.band(static_cast<std::size_t>(a)).label,
                                           std::string(to_string(g)), std::to_string(b.year),
                                           format_number(b.exposure), format_number(b.mean_rate)};
                for (double q : b.rates)
                    r.push_back(format_number(q));
                rows.push_back(std::move(r));
            }
        }
    write_csv(ctx.output("forecast.csv"), header, rows);
    meta["last_year"] = f.last_year;
    meta["horizon"] = f.horizon;
    meta["inflation"] = f.inflation;
    meta["probs"] = probs;
    meta["parameter_uncertainty"] = f.include_parameter_uncertainty && chain.has_value();
    write_json(ctx.output("forecast.json"), meta);
    ctx.wrote(ctx.output("forecast.csv"));
    ctx.wrote(ctx.output("forecast.json"));
}

void life_table(Context& ctx) {
    const Config& c = ctx.cfg;
    const ParamVector params = load_params(ctx, load_chain(ctx));
    const int terminal = static_cast<int>(c.integer_or("life_table.terminal_age", kTerminalAge));
    std::vector<int> ages = parse_int_ranges(c.list("life_table.ages"));
    if (ages.empty())
        for (const auto& b : params.trend.groups.bands())
            ages.push_back(b.lower);
    std::vector<int> years = parse_int_ranges(c.list("life_table.years"));
    if (years.empty())
        years.push_back(static_cast<int>(params.trend.t0));

    std::vector<std::vector<std::string>> rows;
    for (Gender g : genders(c, "life_table.genders"))
        for (int year : years)
            for (int age : ages)
                rows.push_back({std::to_string(age), std::string(to_string(g)), std::to_string(year),
                                format_number(cohort_death_prob(age, g, year, params.trend, terminal)),
                                format_number(life_expectancy(age, g, year, params.trend, terminal))});
    write_csv(ctx.output("life_table.csv"), {"age", "gender", "year", "death_prob", "life_expectancy"}, rows);
    ctx.wrote(ctx.output("life_table.csv"));
}

// ---------------------------------------------------------------------------
// Solvency

void scr(Context& ctx) {
    const Config& c = ctx.cfg;
    const auto chain = load_chain(ctx);
    const ParamVector params = load_params(ctx, chain);
    const std::vector<TermPolicy> policies = read_policies(c.path("solvency.policies"));
    if (!c.has("solvency.year"))
        throw std::invalid_argument("solvency.year (calendar year of time 0) is required");
    const int year = static_cast<int>(c.integer_or("solvency.year", 0));

    DiscountCurve curve;
    if (const auto path = c.optional_path("solvency.curve")) {
        curve = read_discount_curve(*path);
    } else {
        int longest = 1;
        for (const auto& p : policies)
            longest = std::max(longest, p.term);
        curve = DiscountCurve::flat(c.number_or("solvency.rate", 0.0), longest + 1);
    }
    curve.validate();

    DeltaBofOptions opts;
    opts.lattice_points =
        static_cast<std::size_t>(c.integer_or("solvency.lattice_points", static_cast<long long>(opts.lattice_points)));
    opts.max_samples = static_cast<std::size_t>(c.integer_or("solvency.max_samples", 0));
    opts.parameter_uncertainty = c.flag_or("solvency.parameter_uncertainty", chain.has_value());
    opts.terminal_age = static_cast<int>(c.integer_or("solvency.terminal_age", kTerminalAge));
    opts.panjer = load_panjer(c);
    opts.threads = ctx.threads();

    BondAsset asset;
    asset.coupon = c.number_or("solvency.coupon", 0.0);
    if (c.has("solvency.nominal")) {
        asset.nominal = c.number_or("solvency.nominal", 0.0);
    } else {
        // Back the best-estimate liability exactly.
        for (const auto& p : policies)
            asset.nominal += p.count * p.sum_insured *
                             term_life_bel(p.age, p.gender, year, p.term - 1, curve, params.trend, opts.terminal_age);
    }

    DeltaBofResult r;
    if (chain && opts.parameter_uncertainty) {
        r = delta_bof_distribution(policies, asset, curve, year, *chain, opts);
    } else {
        const TrendParams one[] = {params.trend};
        r = delta_bof_distribution(policies, asset, curve, year, one, params.trend, opts);
    }
    const double capital = crplus::scr(r.delta_bof);
    write_distribution_csv(ctx.output("delta_bof.csv"), r.delta_bof);
    json j{{"scr", capital},
           {"bel0", r.bel0},
           {"asset_nominal", asset.nominal},
           {"deterministic_part", r.deterministic_part},
           {"samples", r.samples},
           {"unit", r.unit},
           {"delta_bof", to_json(summarize(r.delta_bof))}};
    write_json(ctx.output("scr.json"), j);
    ctx.wrote(ctx.output("delta_bof.csv"));
    ctx.wrote(ctx.output("scr.json"));
    if (ctx.log)
        *ctx.log << "SCR = " << format_number(capital) << '\n';
}

// ---------------------------------------------------------------------------
// Validation

void validate(Context& ctx) {
    const Config& c = ctx.cfg;
    const CohortPanel panel = load_panel(ctx);
    const auto chain = load_chain(ctx);
    const ParamVector params = load_params(ctx, chain);
    const double level = c.number_or("validate.level", 0.05);

    MomentBoundsOptions mb;
    mb.lower = c.number_or("validate.lower", mb.lower);
    mb.upper = c.number_or("validate.upper", mb.upper);
    mb.draws = static_cast<std::size_t>(c.integer_or("validate.draws", static_cast<long long>(mb.draws)));
    mb.seed = static_cast<std::uint64_t>(c.integer_or("validate.seed", static_cast<long long>(mb.seed)));
    mb.threads = ctx.threads();
    std::vector<TestReport> reports;
    if (chain) {
        reports.push_back(moment_bounds_test(panel, params, *chain, mb));
    } else {
        const ParamVector one[] = {params};
        reports.push_back(moment_bounds_test(panel, params, one, mb));
    }

    const RiskFactorEstimates est = map_risk_factors(panel, params);
    const ResidualArray res = standardized_residuals(panel, params, est.lambda);
    reports.push_back(cross_correlation_ttest(res, level));
    const std::size_t T = panel.years_count();
    const std::size_t order = std::min<std::size_t>(static_cast<std::size_t>(c.integer_or("validate.bg_order", 10)),
                                                    T > 3 ? T - 3 : 0);
    if (order >= 1)
        reports.push_back(breusch_godfrey(res, order, level));
    else if (ctx.log)
        *ctx.log << "skipping Breusch-Godfrey: too few years\n";
    if (T >= 5 && !est.sigma.empty()) {
        KsOptions ks;
        ks.level = level;
        ks.bootstrap = static_cast<std::size_t>(c.integer_or("validate.ks_bootstrap", static_cast<long long>(ks.bootstrap)));
        ks.seed = static_cast<std::uint64_t>(c.integer_or("validate.ks_seed", static_cast<long long>(ks.seed)));
        reports.push_back(ks_gamma_test(est, ks));
    } else if (ctx.log) {
        *ctx.log << "skipping Kolmogorov-Smirnov: too few years or no risk factors\n";
    }

    json tests = json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        tests.push_back(to_json(r, false));
        for (const auto& e : r.entries)
            rows.push_back({r.name, e.label, format_number(e.statistic), format_number(e.p_value),
                            format_number(e.p_value_bootstrap), format_number(e.lower), format_number(e.upper),
                            e.accepted ? "1" : "0", e.degenerate ? "1" : "0"});
        if (ctx.log)
            *ctx.log << r.name << ": " << format_number(100.0 * r.acceptance_fraction()) << "% accepted ("
                     << r.informative() << " informative)\n";
    }
    write_json(ctx.output("validation.json"), json{{"level", level}, {"tests", tests}});
    write_csv(ctx.output("validation_entries.csv"),
              {"test", "label", "statistic", "p_value", "p_value_bootstrap", "lower", "upper", "accepted",
               "degenerate"},
              rows);
    ctx.wrote(ctx.output("validation.json"));
    ctx.wrote(ctx.output("validation_entries.csv"));
}

// ---------------------------------------------------------------------------
// Reference benchmark: homogeneous portfolio, unit payments.

void benchmark(Context& ctx) {
    const Config& c = ctx.cfg;
    const auto heads = static_cast<std::size_t>(c.integer_or("benchmark.heads", 10000));
    const double q = c.number_or("benchmark.death_prob", 0.05);
    const double sigma_sq = c.number_or("benchmark.sigma_sq", 0.1);
    const auto sims = static_cast<std::size_t>(c.integer_or("benchmark.sims", 1'000'000));
    const auto paths = static_cast<std::size_t>(c.integer_or("benchmark.mc_paths", 50'000));
    const auto seed = static_cast<std::uint64_t>(c.integer_or("benchmark.seed", 20170101));
    const std::vector<double> probs{0.01, 0.10, 0.50, 0.90, 0.99};
    const LatticeSeverity one = LatticeSeverity::point(1.0, 1);
    const PanjerOptions opts = load_panjer(c);

    const Portfolio idio = homogeneous_portfolio(static_cast<double>(heads), q, {1.0}, one);
    const Portfolio mixed = homogeneous_portfolio(static_cast<double>(heads), q, {0.0, 1.0}, one);
    const RiskFactorSpec factor[] = {{1, sigma_sq, "factor 1"}};

    LossDistribution p_idio, p_mixed;
    const double t_idio = seconds([&] { p_idio = aggregate_portfolio(idio, {}, 1.0, opts); });
    const double t_mixed = seconds([&] { p_mixed = aggregate_portfolio(mixed, factor, 1.0, opts); });

    LossDistribution binom;
    binom.pmf.resize(heads + 1);
    for (std::size_t n = 0; n <= heads; ++n)
        binom.pmf[n] = std::exp(binomial_log_pmf(heads, n, q));

    SimConfig sc;
    sc.n_sims = sims;
    sc.seed = seed;
    sc.threads = ctx.threads();
    const SimResult mc_idio = simulate_bernoulli(idio, {}, sc);
    const SimResult mc_mixed = simulate_bernoulli(mixed, factor, sc);
    SimConfig timed = sc;
    timed.n_sims = paths;
    const double t_mc = seconds([&] { (void)simulate_bernoulli(mixed, factor, timed); });

    auto quantiles = [&](const LossDistribution& d) {
        std::vector<double> out;
        for (double p : probs)
            out.push_back(quantile(d, p));
        return out;
    };
    json j{{"portfolio", {{"heads", heads}, {"death_prob", q}, {"payment", 1.0}}},
           {"probs", probs},
           {"simulations", sims},
           {"seed", seed},
           {"idiosyncratic",
            {{"panjer", quantiles(p_idio)},
             {"binomial", quantiles(binom)},
             {"monte_carlo", quantiles(mc_idio.s)},
             {"reference", {449, 471, 500, 529, 553}},
             {"tv_panjer_binomial", tv_distance(p_idio, binom)},
             {"tv_panjer_monte_carlo", tv_distance(p_idio, mc_idio.s)}}},
           {"mixed",
            {{"sigma_sq", sigma_sq},
             {"panjer", quantiles(p_mixed)},
             {"monte_carlo", quantiles(mc_mixed.s)},
             {"reference", {204, 309, 483, 712, 944}},
             {"tv_panjer_monte_carlo", tv_distance(p_mixed, mc_mixed.s)}}}};
    write_json(ctx.output("benchmark.json"), j);
    json timings{{"panjer_idiosyncratic_seconds", t_idio},
                 {"panjer_mixed_seconds", t_mixed},
                 {"monte_carlo_paths", paths},
                 {"monte_carlo_mixed_seconds", t_mc},
                 {"speedup", t_mixed > 0.0 ? t_mc / t_mixed : 0.0}};
    write_json(ctx.output("benchmark_timings.json"), timings);
    ctx.wrote(ctx.output("benchmark.json"));
    ctx.wrote(ctx.output("benchmark_timings.json"));
    if (ctx.log) {
        *ctx.log << "panjer idiosyncratic:";
        for (double v : quantiles(p_idio))
            *ctx.log << ' ' << v;
        *ctx.log << "\npanjer mixed:";
        for (double v : quantiles(p_mixed))
            *ctx.log << ' ' << v;
        *ctx.log << '\n';
    }
}

} // namespace crplus::app
