#include "crplus/param_io.hpp"

#include <fstream>
#include <string>

#include "crplus/errors.hpp"

namespace crplus {

using nlohmann::json;

json to_json(const TrendParams& p) {
    json kappa = json::object();
    for (const auto& [year, value] : p.kappa)
        kappa[std::to_string(year)] = value;
    return json{{"age_groups", p.groups.spec()}, {"risk_factors", p.risk_factors}, {"t0", p.t0},
                {"alpha", p.alpha},           {"beta", p.beta},                 {"zeta", p.zeta},
                {"eta", p.eta},               {"kappa", kappa},                 {"u", p.u},
                {"v", p.v},                   {"phi", p.phi},                   {"psi", p.psi}};
}

TrendParams trend_params_from_json(const json& j) {
    try {
        auto p = TrendParams::defaults(AgeGroups::parse(j.at("age_groups").get<std::string>()),
                                       j.at("risk_factors").get<std::size_t>(), j.value("t0", 1987.0));
        auto read = [&](const char* key, std::vector<double>& out) {
            if (j.contains(key))
                out = j.at(key).get<std::vector<double>>();
        };
        read("alpha", p.alpha);
        read("beta", p.beta);
        read("zeta", p.zeta);
        read("eta", p.eta);
        read("u", p.u);
        read("v", p.v);
        read("phi", p.phi);
        read("psi", p.psi);
        if (j.contains("kappa"))
            for (const auto& [year, value] : j.at("kappa").items())
                p.kappa[std::stoi(year)] = value.get<double>();
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw DataError(std::string("parameter file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("parameter file: ") + e.what());
    }
}

json to_json(const ParamVector& p) {
    json j = to_json(p.trend);
    j["sigma_sq"] = p.sigma_sq;
    json fixed = json::array();
    for (Family f : p.fixed)
        fixed.push_back(std::string(to_string(f)));
    j["fixed"] = fixed;
    return j;
}

ParamVector param_vector_from_json(const json& j) {
    ParamVector p;
    p.trend = trend_params_from_json(j);
    try {
        p.sigma_sq = j.value("sigma_sq", std::vector<double>(p.trend.risk_factors, 0.1));
        if (j.contains("fixed")) {
            p.fixed.clear();
            for (const auto& f : j.at("fixed"))
                p.fixed.insert(parse_family(f.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("parameter file: ") + e.what());
    }
    return p;
}

void write_params(const std::filesystem::path& path, const ParamVector& p) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << to_json(p).dump(2) << '\n';
}

ParamVector read_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot read " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return param_vector_from_json(j);
}

} // namespace crplus
