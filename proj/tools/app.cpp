#include "app.hpp"

#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>

#include "commands.hpp"
#include "crplus/errors.hpp"

namespace crplus::app {

namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::vector<std::string> sets;
    std::string params;
    std::string chain;
    std::optional<long long> threads;
};

struct Command {
    const char* name;
    const char* help;
    void (*fn)(Context&);
};

constexpr Command kCommands[] = {
    {"fit-mom", "fit trend and weight parameters by matching of moments", fit_mom},
    {"fit-mcmc", "sample the posterior (resumes an existing chain file)", fit_mcmc},
    {"map-factors", "MAP estimates of the yearly risk factors and their variances", map_factors},
    {"aggregate", "distribution of death payments and annuity losses of a portfolio", aggregate},
    {"forecast", "death-rate forecasts with quantile bands", forecast},
    {"life-table", "cohort death probabilities and curtate life expectancies", life_table},
    {"scenario", "portfolio loss with some risk factors held fixed", scenario},
    {"scr", "one-year change in own funds and its 99.5% quantile", scr},
    {"validate", "moment bounds, residual correlation, serial correlation and KS tests", validate},
    {"benchmark", "Panjer recursion against exact and simulated laws on the reference portfolio", benchmark},
};

// Stores a command-line path relative to the working directory.
std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App cli{"Mortality risk modelling with extended CreditRisk+", "crplus"};
    cli.require_subcommand(1);
    Flags f;
    cli.add_option("-c,--config", f.config, "INI configuration file");
    cli.add_option("-o,--out", f.out, "output directory (default: output.dir or .)");
    cli.add_option("-s,--set", f.sets, "override a setting, section.key=value")->take_all();
    cli.add_option("--params", f.params, "fitted parameters (JSON)");
    cli.add_option("--chain", f.chain, "MCMC chain file");
    cli.add_option("--threads", f.threads, "worker threads (CRPLUS_THREADS otherwise)");

    // Explicit flags for the settings most often changed; each is a shortcut
    // for --set.
    std::map<std::string, std::string> shortcuts;
    auto shortcut = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(
            flag, [&shortcuts, key](const std::string& v) { shortcuts[key] = v; }, help);
    };

    const Command* chosen = nullptr;
    for (const auto& cmd : kCommands) {
        CLI::App* sub = cli.add_subcommand(cmd.name, cmd.help);
        sub->fallthrough();
        sub->callback([&chosen, &cmd] { chosen = &cmd; });
        const std::string name = cmd.name;
        if (name == "fit-mcmc") {
            shortcut(sub, "--steps", "mcmc.steps", "MCMC steps including burn-in");
            shortcut(sub, "--burn-in", "mcmc.burn_in", "burn-in steps");
            shortcut(sub, "--chains", "mcmc.chains", "parallel chains");
            shortcut(sub, "--seed", "mcmc.seed", "random seed");
        } else if (name == "forecast") {
            shortcut(sub, "--horizon", "forecast.horizon", "last forecast year");
            shortcut(sub, "--inflation", "forecast.inflation", "variance inflation d");
        } else if (name == "life-table") {
            shortcut(sub, "--year", "life_table.years", "calendar years (list or a-b)");
            shortcut(sub, "--ages", "life_table.ages", "ages (list or a-b)");
        } else if (name == "aggregate" || name == "scenario") {
            shortcut(sub, "--portfolio", "portfolio.file", "portfolio CSV");
            shortcut(sub, "--unit", "portfolio.unit", "lattice unit");
        } else if (name == "scr") {
            shortcut(sub, "--policies", "solvency.policies", "policies CSV");
            shortcut(sub, "--year", "solvency.year", "calendar year of time 0");
        } else if (name == "validate") {
            shortcut(sub, "--draws", "validate.draws", "predictive panels for the moment bounds");
            shortcut(sub, "--seed", "validate.seed", "random seed");
        } else if (name == "benchmark") {
            shortcut(sub, "--sims", "benchmark.sims", "Monte Carlo simulations for the quantiles");
            shortcut(sub, "--seed", "benchmark.seed", "random seed");
        }
    }

    std::vector<std::string> argv_store{"crplus"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store)
        argv.push_back(a.data());
    try {
        cli.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        Context ctx;
        ctx.log = &out;
        if (!f.config.empty())
            ctx.cfg = Config::load(f.config);
        for (const auto& s : f.sets)
            ctx.cfg.set(s);
        for (const auto& [key, value] : shortcuts)
            ctx.cfg.put(key, key.ends_with("file") || key.ends_with("policies") ? absolute(value) : value);
        if (!f.params.empty())
            ctx.cfg.put("model.params", absolute(f.params));
        if (!f.chain.empty())
            ctx.cfg.put("model.chain", absolute(f.chain));
        if (f.threads)
            ctx.cfg.put("run.threads", std::to_string(*f.threads));
        ctx.out = !f.out.empty() ? fs::path(f.out) : ctx.cfg.optional_path("output.dir").value_or(".");
        fs::create_directories(ctx.out);
        chosen->fn(ctx);
        return kOk;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    } catch (const std::exception& e) {
        err << "failure: " << e.what() << '\n';
        return kNumericalError;
    }
}

} // namespace crplus::app
