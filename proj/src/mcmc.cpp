#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "crplus/errors.hpp"
#include "crplus/estimation.hpp"
#include "crplus/numerics.hpp"
#include "crplus/param_io.hpp"

namespace crplus {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr const char* kChainMagic = "#crplus-chain 1";

std::vector<double>& family_array(TrendParams& p, Family f) {
    switch (f) {
    case Family::alpha:
        return p.alpha;
    case Family::beta:
        return p.beta;
    case Family::zeta:
        return p.zeta;
    case Family::eta:
        return p.eta;
    case Family::u:
        return p.u;
    case Family::v:
        return p.v;
    case Family::phi:
        return p.phi;
    case Family::psi:
        return p.psi;
    default:
        throw std::logic_error("family has no flat array");
    }
}

double& coordinate_ref(ParamVector& p, const Coordinate& c) {
    if (c.family == Family::sigma)
        return p.sigma_sq.at(c.index);
    if (c.family == Family::kappa)
        return p.trend.kappa[static_cast<int>(c.index)];
    return family_array(p.trend, c.family).at(c.index);
}

bool positive_family(Family f) { return f == Family::eta || f == Family::psi || f == Family::sigma; }

} // namespace

// ---------------------------------------------------------------------------
// Layout

ParameterLayout::ParameterLayout(const ParamVector& params, bool joint_block) {
    const auto& p = params.trend;
    const std::size_t A = p.groups.size();
    const std::size_t K = p.risk_factors;
    auto add = [&](Block& block, Family f, std::size_t index, std::string name) {
        const bool log_scale = positive_family(f);
        block.members.push_back(coords_.size());
        coords_.push_back({f, index, log_scale, (log_scale ? "log_" : "") + name});
    };
    auto close = [&](Block block) {
        if (!block.members.empty())
            blocks_.push_back(std::move(block));
    };
    for (Family f : kAllFamilies) {
        if (params.is_fixed(f))
            continue;
        const std::string fam(to_string(f));
        switch (f) {
        case Family::alpha:
        case Family::beta:
        case Family::zeta:
        case Family::eta:
            for (Gender g : kAllGenders) {
                Block b{fam + ":" + std::string(to_string(g)), {}};
                for (std::size_t a = 0; a < A; ++a)
                    add(b, f, cell_index(static_cast<int>(a), g),
                        fam + ":" + p.groups.band(a).label + ":" + std::string(to_string(g)));
                close(std::move(b));
            }
            break;
        case Family::u:
        case Family::v:
            for (Gender g : kAllGenders) {
                Block b{fam + ":" + std::string(to_string(g)), {}};
                for (std::size_t a = 0; a < A; ++a)
                    for (std::size_t k = 1; k <= K; ++k)
                        add(b, f, p.weight_index(static_cast<int>(a), g, k),
                            fam + ":" + p.groups.band(a).label + ":" + std::string(to_string(g)) + ":" +
                                std::to_string(k));
                close(std::move(b));
            }
            break;
        case Family::kappa: {
            Block b{fam, {}};
            for (const auto& [year, value] : p.kappa)
                add(b, f, static_cast<std::size_t>(year), fam + ":" + std::to_string(year));
            close(std::move(b));
            break;
        }
        case Family::phi:
        case Family::psi: {
            Block b{fam, {}};
            for (std::size_t k = 1; k <= K; ++k)
                add(b, f, k, fam + ":" + std::to_string(k));
            close(std::move(b));
            break;
        }
        case Family::sigma: {
            Block b{"sigma_sq", {}};
            for (std::size_t k = 0; k < K; ++k)
                add(b, f, k, "sigma_sq:" + std::to_string(k + 1));
            close(std::move(b));
            break;
        }
        }
    }
    if (joint_block && blocks_.size() > 1) {
        Block all{"joint", {}};
        for (std::size_t i = 0; i < coords_.size(); ++i)
            all.members.push_back(i);
        blocks_.push_back(std::move(all));
    }
}

std::vector<std::string> ParameterLayout::names() const {
    std::vector<std::string> out;
    for (const auto& c : coords_)
        out.push_back(c.name);
    return out;
}

std::vector<double> ParameterLayout::encode(const ParamVector& params) const {
    ParamVector copy = params;
    std::vector<double> x;
    x.reserve(coords_.size());
    for (const auto& c : coords_) {
        const double v = coordinate_ref(copy, c);
        x.push_back(c.log_scale ? std::log(v) : v);
    }
    return x;
}

void ParameterLayout::decode(std::span<const double> x, ParamVector& params) const {
    if (x.size() != coords_.size())
        throw std::invalid_argument("ParameterLayout::decode: wrong number of coordinates");
    for (std::size_t i = 0; i < coords_.size(); ++i)
        coordinate_ref(params, coords_[i]) = coords_[i].log_scale ? std::exp(x[i]) : x[i];
}

// ---------------------------------------------------------------------------
// Chain summaries

ParamVector McmcChain::at(std::size_t i) const {
    ParamVector p = base;
    layout.decode(samples.at(i), p);
    return p;
}

ParamVector McmcChain::mean() const {
    if (samples.empty())
        throw std::invalid_argument("McmcChain::mean: empty chain");
    const auto& coords = layout.coordinates();
    std::vector<double> acc(coords.size(), 0.0);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < coords.size(); ++i)
            acc[i] += coords[i].log_scale ? std::exp(s[i]) : s[i];
    ParamVector p = base;
    for (std::size_t i = 0; i < coords.size(); ++i)
        acc[i] /= static_cast<double>(samples.size());
    for (std::size_t i = 0; i < coords.size(); ++i)
        if (coords[i].log_scale)
            acc[i] = std::log(acc[i]);
    layout.decode(acc, p);
    return p;
}

ParamVector McmcChain::mode() const {
    if (samples.empty())
        throw std::invalid_argument("McmcChain::mode: empty chain");
    const auto it = std::max_element(log_posterior.begin(), log_posterior.end());
    return at(static_cast<std::size_t>(it - log_posterior.begin()));
}

void McmcConfig::validate() const {
    if (n_steps == 0)
        throw std::invalid_argument("McmcConfig: n_steps must be positive");
    if (burn_in >= n_steps)
        throw std::invalid_argument("McmcConfig: burn_in must be smaller than n_steps");
    if (n_chains == 0)
        throw std::invalid_argument("McmcConfig: n_chains must be positive");
    if (thin == 0)
        throw std::invalid_argument("McmcConfig: thin must be positive");
    for (const auto& [f, s] : proposal_scales)
        if (!(s >= 0.0))
            throw std::invalid_argument("McmcConfig: proposal scales must be non-negative");
}

bool mh_accept(double log_ratio, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (std::isnan(log_ratio))
        return false;
    return log_ratio >= 0.0 || std::log(u) < log_ratio;
}

// ---------------------------------------------------------------------------
// Chain file

namespace {

std::string format_record(std::size_t step, double lp, std::span<const double> x) {
    std::string line = std::to_string(step);
    char buf[32];
    std::snprintf(buf, sizeof buf, ",%.17g", lp);
    line += buf;
    for (double v : x) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        line += buf;
    }
    line += '\n';
    return line;
}

json proposals_json(const ParameterLayout& layout, const std::vector<BlockProposal>& proposals) {
    json blocks = json::array();
    for (std::size_t b = 0; b < layout.blocks().size(); ++b) {
        const auto& cov = proposals[b].covariance;
        json rows = json::array();
        for (Eigen::Index i = 0; i < cov.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index j = 0; j < cov.cols(); ++j)
                row.push_back(cov(i, j));
            rows.push_back(row);
        }
        blocks.push_back({{"name", layout.blocks()[b].name}, {"scale", proposals[b].scale}, {"covariance", rows}});
    }
    return blocks;
}

json run_meta(const ParamVector& init, const ParameterLayout& layout, const McmcConfig& cfg, std::size_t chain,
              const std::vector<BlockProposal>& proposals) {
    return json{{"seed", cfg.seed},           {"chain", chain},
                {"n_steps", cfg.n_steps},     {"burn_in", cfg.burn_in},
                {"joint_block", cfg.joint_block},
                {"params", to_json(init)},    {"coordinates", layout.names()},
                {"proposals", proposals_json(layout, proposals)}};
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ParsedChainFile {
    json meta;
    std::vector<std::string> columns;
    std::vector<std::size_t> steps;
    std::vector<double> log_post;
    std::vector<std::vector<double>> records;
    std::uintmax_t valid_bytes = 0; // length of the file up to the last complete record
};

std::optional<ParsedChainFile> parse_chain_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return std::nullopt;
    ParsedChainFile out;
    std::string line;
    std::size_t line_no = 0;
    std::uintmax_t offset = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        ++line_no;
        const bool complete = !in.eof();
        if (!complete)
            break; // a record cut short by an interruption
        const std::uintmax_t next = offset + line.size() + 1;
        if (line_no == 1) {
            if (line != kChainMagic)
                throw DataError(path.string() + ": not a chain file");
        } else if (line.rfind("#meta ", 0) == 0) {
            try {
                out.meta = json::parse(line.substr(6));
            } catch (const json::exception& e) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad metadata: " + e.what());
            }
        } else if (line.rfind('#', 0) == 0) {
            // comment or timestamp
        } else if (!header_done) {
            std::stringstream ss(line);
            std::string col;
            while (std::getline(ss, col, ','))
                out.columns.push_back(col);
            header_done = true;
        } else {
            std::vector<double> values;
            std::stringstream ss(line);
            std::string cell;
            std::size_t step = 0;
            double lp = 0.0;
            std::size_t col = 0;
            try {
                while (std::getline(ss, cell, ',')) {
                    if (col == 0)
                        step = std::stoull(cell);
                    else if (col == 1)
                        lp = std::stod(cell);
                    else
                        values.push_back(std::stod(cell));
                    ++col;
                }
            } catch (const std::exception&) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
            }
            if (col != out.columns.size())
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                std::to_string(out.columns.size()) + " fields, found " + std::to_string(col));
            out.steps.push_back(step);
            out.log_post.push_back(lp);
            out.records.push_back(std::move(values));
        }
        offset = next;
        out.valid_bytes = offset;
    }
    if (out.meta.is_null() || !header_done)
        return std::nullopt;
    return out;
}

std::vector<BlockProposal> proposals_from_json(const json& j, const ParameterLayout& layout) {
    std::vector<BlockProposal> out;
    const auto& blocks = j.at("proposals");
    if (blocks.size() != layout.blocks().size())
        throw DataError("chain file: proposal blocks do not match the parameter layout");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        BlockProposal p;
        p.scale = blocks[b].at("scale").get<double>();
        const auto& rows = blocks[b].at("covariance");
        const auto d = static_cast<Eigen::Index>(rows.size());
        p.covariance.resize(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index k = 0; k < d; ++k)
                p.covariance(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
        out.push_back(std::move(p));
    }
    return out;
}

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& cov) {
    if (cov.size() == 0 || cov.isZero(0.0))
        return Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success)
        return llt.matrixL();
    // fall back to the diagonal when adaptation produced a singular matrix
    return cov.diagonal().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Running mean and co-moment of one block's coordinates during burn-in.
struct Welford {
    std::size_t n = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd m2;

    void add(const Eigen::VectorXd& x) {
        if (n == 0) {
            mean = Eigen::VectorXd::Zero(x.size());
            m2 = Eigen::MatrixXd::Zero(x.size(), x.size());
        }
        ++n;
        const Eigen::VectorXd delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean).transpose();
    }
    Eigen::MatrixXd covariance() const { return m2 / static_cast<double>(n - 1); }
};

} // namespace

McmcChain read_chain_file(const std::filesystem::path& path) {
    const auto parsed = parse_chain_file(path);
    if (!parsed)
        throw DataError(path.string() + ": chain file has no metadata or header");
    McmcChain chain;
    chain.base = param_vector_from_json(parsed->meta.at("params"));
    chain.layout = ParameterLayout(chain.base, parsed->meta.value("joint_block", false));
    const auto names = chain.layout.names();
    if (parsed->columns.size() != names.size() + 2 ||
        !std::equal(names.begin(), names.end(), parsed->columns.begin() + 2))
        throw DataError(path.string() + ": columns do not match the parameter layout");
    chain.proposals = proposals_from_json(parsed->meta, chain.layout);
    chain.steps = parsed->steps;
    chain.log_posterior = parsed->log_post;
    chain.samples = parsed->records;
    return chain;
}

// ---------------------------------------------------------------------------
// Sampler

McmcChain mcmc_sample(const CohortPanel& panel, const ParamVector& init, const PriorSpec& prior,
                      const McmcConfig& cfg, std::size_t chain_index,
                      const std::optional<std::filesystem::path>& chain_file) {
    cfg.validate();
    init.validate();
    const LikelihoodEvaluator likelihood(panel);

    McmcChain chain;
    chain.base = init;
    chain.layout = ParameterLayout(init, cfg.joint_block);
    const auto& layout = chain.layout;
    const auto& coords = layout.coordinates();
    const auto& blocks = layout.blocks();

    ParamVector work = init;
    auto log_post = [&](std::span<const double> x) {
        for (double v : x)
            if (!std::isfinite(v))
                return kNegInf;
        layout.decode(x, work);
        for (std::size_t i = 0; i < coords.size(); ++i)
            if (coords[i].log_scale && !(std::exp(x[i]) > 0.0 && std::isfinite(std::exp(x[i]))))
                return kNegInf;
        double lp = likelihood(work) + log_prior(work, prior);
        for (std::size_t i = 0; i < coords.size(); ++i)
            if (coords[i].log_scale)
                lp += x[i]; // Jacobian of the log transform
        return std::isfinite(lp) ? lp : kNegInf;
    };

    std::vector<double> x = layout.encode(init);
    double lp = log_post(x);
    if (!std::isfinite(lp))
        throw std::invalid_argument("mcmc_sample: log-posterior is -inf at the initial parameters");

    chain.proposals.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto d = static_cast<Eigen::Index>(blocks[b].members.size());
        chain.proposals[b].scale = blocks[b].name == "joint" ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
        chain.proposals[b].covariance = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto it = cfg.proposal_scales.find(coords[blocks[b].members[static_cast<std::size_t>(i)]].family);
            const double s = it == cfg.proposal_scales.end() ? 0.01 : it->second;
            chain.proposals[b].covariance(i, i) = s * s;
        }
    }
    std::vector<Eigen::MatrixXd> factors(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b)
        factors[b] = cholesky_factor(chain.proposals[b].covariance);

    chain.stats.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b)
        chain.stats[b].name = blocks[b].name;

    std::ofstream out;
    std::size_t start = 0;
    auto keep = [&](std::size_t step, double value, const std::vector<double>& state) {
        if ((step - cfg.burn_in) % cfg.thin != 0)
            return;
        chain.steps.push_back(step);
        chain.log_posterior.push_back(value);
        chain.samples.push_back(state);
    };
    auto write_header = [&] {
        out.open(*chain_file, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write chain file " + chain_file->string());
        out << kChainMagic << '\n'
            << "#created " << timestamp() << '\n'
            << "#meta " << run_meta(init, layout, cfg, chain_index, chain.proposals).dump() << '\n'
            << "step,log_posterior";
        for (const auto& n : layout.names())
            out << ',' << n;
        out << '\n';
        out.flush();
    };

    if (chain_file) {
        const auto parsed = parse_chain_file(*chain_file);
        if (parsed && !parsed->records.empty()) {
            json expected = run_meta(init, layout, cfg, chain_index, chain.proposals);
            for (const char* key : {"seed", "chain", "n_steps", "burn_in", "joint_block", "params", "coordinates"})
                if (parsed->meta.value(key, json()) != expected.at(key))
                    throw std::invalid_argument("chain file " + chain_file->string() +
                                                " belongs to a different run (" + key + " differs)");
            chain.proposals = proposals_from_json(parsed->meta, layout);
            for (std::size_t b = 0; b < blocks.size(); ++b)
                factors[b] = cholesky_factor(chain.proposals[b].covariance);
            for (std::size_t r = 0; r < parsed->records.size(); ++r)
                keep(parsed->steps[r], parsed->log_post[r], parsed->records[r]);
            x = parsed->records.back();
            lp = log_post(x);
            start = parsed->steps.back() + 1;
            std::filesystem::resize_file(*chain_file, parsed->valid_bytes);
            out.open(*chain_file, std::ios::binary | std::ios::app);
        } else if (cfg.burn_in == 0) {
            // nothing usable to resume from; the run is deterministic, so start over
            write_header();
        }
    }

    std::vector<Welford> history(blocks.size());
    std::vector<double> log_scale(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b)
        log_scale[b] = std::log(chain.proposals[b].scale);
    std::vector<double> proposal(x.size());

    for (std::size_t step = start; step < cfg.n_steps; ++step) {
        auto rng = numerics::stream_engine(cfg.seed, chain_index, step);
        const bool adapting = cfg.adapt && step < cfg.burn_in;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& members = blocks[b].members;
            const auto d = static_cast<Eigen::Index>(members.size());
            std::normal_distribution<double> normal(0.0, 1.0);
            Eigen::VectorXd z(d);
            for (Eigen::Index i = 0; i < d; ++i)
                z(i) = normal(rng);
            const double scale = chain.proposals[b].scale;
            const Eigen::VectorXd delta = scale * (factors[b] * z);
            proposal = x;
            for (Eigen::Index i = 0; i < d; ++i)
                proposal[members[static_cast<std::size_t>(i)]] += delta(i);
            const double candidate = log_post(proposal);
            const bool accepted = mh_accept(candidate - lp, rng);
            if (accepted) {
                x.swap(proposal);
                lp = candidate;
            }
            if (step >= cfg.burn_in) {
                ++chain.stats[b].proposed;
                chain.stats[b].accepted += accepted ? 1 : 0;
            }
            if (adapting) {
                // Robbins-Monro on the log scale, Haario covariance every 100 steps
                const double gain = 1.0 / std::pow(static_cast<double>(step) + 1.0, 0.6);
                log_scale[b] += gain * ((accepted ? 1.0 : 0.0) - cfg.target_acceptance);
                log_scale[b] = std::clamp(log_scale[b], -30.0, 30.0);
                chain.proposals[b].scale = std::exp(log_scale[b]);
                Eigen::VectorXd state(d);
                for (Eigen::Index i = 0; i < d; ++i)
                    state(i) = x[members[static_cast<std::size_t>(i)]];
                history[b].add(state);
                const auto n = history[b].n;
                if (n >= static_cast<std::size_t>(std::max<Eigen::Index>(200, 10 * d)) && n % 100 == 0) {
                    Eigen::MatrixXd cov = history[b].covariance();
                    const double jitter = 1e-10 * std::max(cov.diagonal().maxCoeff(), 0.0);
                    cov.diagonal().array() += jitter;
                    if (cov.diagonal().maxCoeff() > 0.0) {
                        chain.proposals[b].covariance = (2.38 * 2.38 / static_cast<double>(d)) * cov;
                        factors[b] = cholesky_factor(chain.proposals[b].covariance);
                    }
                }
            }
        }
        if (step + 1 == cfg.burn_in) {
            // freeze proposals: the rest of the run is a time-homogeneous chain
            for (std::size_t b = 0; b < blocks.size(); ++b)
                factors[b] = cholesky_factor(chain.proposals[b].covariance);
            if (chain_file)
                write_header();
        }
        if (step >= cfg.burn_in) {
            keep(step, lp, x);
            if (out.is_open()) {
                out << format_record(step, lp, x);
                out.flush();
            }
        }
    }

    for (const auto& s : chain.stats)
        if (s.proposed > 0 && s.accepted == 0)
            chain.warnings.push_back("block " + s.name + " rejected every proposal after burn-in");
    return chain;
}

std::vector<McmcChain> mcmc_sample_chains(const CohortPanel& panel, const ParamVector& init, const PriorSpec& prior,
                                          const McmcConfig& cfg,
                                          const std::optional<std::filesystem::path>& chain_file) {
    cfg.validate();
    std::vector<McmcChain> chains(cfg.n_chains);
    const ParameterLayout layout(init);
    const LikelihoodEvaluator likelihood(panel);
    std::vector<ParamVector> starts(cfg.n_chains, init);
    for (std::size_t c = 1; c < cfg.n_chains; ++c) {
        auto rng = numerics::stream_engine(cfg.seed, c, std::numeric_limits<std::uint64_t>::max());
        std::normal_distribution<double> normal(0.0, 1.0);
        const auto base = layout.encode(init);
        for (double spread = 1.0; spread > 1e-3; spread *= 0.5) {
            auto x = base;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const auto it = cfg.proposal_scales.find(layout.coordinates()[i].family);
                x[i] += spread * (it == cfg.proposal_scales.end() ? 0.01 : it->second) * normal(rng);
            }
            ParamVector candidate = init;
            layout.decode(x, candidate);
            if (std::isfinite(likelihood(candidate) + log_prior(candidate, prior))) {
                starts[c] = candidate;
                break;
            }
        }
    }
    auto file_for = [&](std::size_t c) -> std::optional<std::filesystem::path> {
        if (!chain_file)
            return std::nullopt;
        if (cfg.n_chains == 1)
            return chain_file;
        auto p = *chain_file;
        p += ".c" + std::to_string(c);
        return p;
    };
    numerics::parallel_for(cfg.n_chains, numerics::worker_count(cfg.threads), [&](std::size_t c) {
        chains[c] = mcmc_sample(panel, starts[c], prior, cfg, c, file_for(c));
    });
    return chains;
}

// ---------------------------------------------------------------------------
// Model comparison

InformationCriteria information_criteria(const CohortPanel& panel, const McmcChain& chain) {
    if (chain.empty())
        throw std::invalid_argument("information_criteria: empty chain");
    const LikelihoodEvaluator likelihood(panel);
    InformationCriteria ic;
    ic.parameters = chain.layout.size();
    ic.observations = panel.years_count() * panel.age_groups() * kGenders * panel.cause_count();
    ic.log_likelihood_at_mode = likelihood(chain.mode());
    const double k = static_cast<double>(ic.parameters);
    ic.aic = 2.0 * k - 2.0 * ic.log_likelihood_at_mode;
    ic.bic = k * std::log(static_cast<double>(ic.observations)) - 2.0 * ic.log_likelihood_at_mode;
    double mean_deviance = 0.0;
    for (std::size_t i = 0; i < chain.samples.size(); ++i)
        mean_deviance += -2.0 * likelihood(chain.at(i));
    mean_deviance /= static_cast<double>(chain.samples.size());
    const double deviance_at_mean = -2.0 * likelihood(chain.mean());
    ic.effective_parameters = mean_deviance - deviance_at_mean;
    ic.dic = mean_deviance + ic.effective_parameters;
    return ic;
}

CrossValidationResult cross_validate_prior(const CohortPanel& panel, const ParamVector& init,
                                           const std::function<PriorSpec(double)>& make_prior,
                                           std::span<const double> grid, const McmcConfig& cfg) {
    if (grid.empty())
        throw std::invalid_argument("cross_validate_prior: empty grid");
    if (panel.years_count() < 2)
        throw std::invalid_argument("cross_validate_prior: need at least two years");
    CrossValidationResult result;
    result.grid.assign(grid.begin(), grid.end());
    result.scores.assign(grid.size(), 0.0);
    const std::size_t T = panel.years_count();
    std::vector<double> per_job(grid.size() * T, 0.0);
    numerics::parallel_for(per_job.size(), numerics::worker_count(cfg.threads), [&](std::size_t job) {
        const std::size_t g = job / T, t = job % T;
        McmcConfig local = cfg;
        local.threads = 1;
        const auto fit = mcmc_sample(panel.without_year(t), init, make_prior(grid[g]), local);
        per_job[job] = log_likelihood(panel.only_year(t), fit.mean());
    });
    for (std::size_t g = 0; g < grid.size(); ++g)
        for (std::size_t t = 0; t < T; ++t)
            result.scores[g] += per_job[g * T + t];
    const auto best = std::max_element(result.scores.begin(), result.scores.end());
    result.best = result.grid[static_cast<std::size_t>(best - result.scores.begin())];
    return result;
}

} // namespace crplus
