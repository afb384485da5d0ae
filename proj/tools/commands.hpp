#pragma once

#include <filesystem>
#include <ostream>
#include <string>

#include "crplus/io.hpp"

namespace crplus::app {

// Everything a subcommand reads: the merged configuration (file, then
// --set overrides, then explicit flags) and the output directory.
struct Context {
    Config cfg;
    std::filesystem::path out = ".";
    std::ostream* log = nullptr;

    std::filesystem::path output(const std::string& name) const { return out / name; }
    void wrote(const std::filesystem::path& p) const;
    unsigned threads() const;
};

void fit_mom(Context& ctx);
void fit_mcmc(Context& ctx);
void map_factors(Context& ctx);
void aggregate(Context& ctx);
void forecast(Context& ctx);
void life_table(Context& ctx);
void scenario(Context& ctx);
void scr(Context& ctx);
void validate(Context& ctx);
void benchmark(Context& ctx);

} // namespace crplus::app
