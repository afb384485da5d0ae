#include "crplus/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/FFT>

#include "crplus/errors.hpp"
#include "crplus/numerics.hpp"

namespace crplus {

namespace {

bool same_unit(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); }

// Splits `mass` at lattice position x >= 0 onto floor(x) and floor(x) + 1.
void deposit(std::vector<double>& pmf, double x, double mass) {
    double n = std::floor(x);
    double f = x - n;
    if (f < 1e-12) {
        f = 0.0;
    } else if (f > 1.0 - 1e-12) {
        n += 1.0;
        f = 0.0;
    }
    const auto i = static_cast<std::size_t>(n);
    const std::size_t needed = f > 0.0 ? i + 2 : i + 1;
    if (pmf.size() < needed)
        pmf.resize(needed, 0.0);
    pmf[i] += mass * (1.0 - f);
    if (f > 0.0)
        pmf[i + 1] += mass * f;
}

} // namespace

// ---------------------------------------------------------------------------
// LossDistribution

LossDistribution LossDistribution::point_mass(double unit, std::size_t multiple, double origin) {
    LossDistribution d;
    d.unit = unit;
    d.origin = origin;
    d.pmf.assign(multiple + 1, 0.0);
    d.pmf[multiple] = 1.0;
    return d;
}

double LossDistribution::mass() const { return numerics::stable_sum(pmf); }

double LossDistribution::mean() const {
    double m = 0.0;
    for (std::size_t n = 0; n < pmf.size(); ++n)
        m += pmf[n] * value_at(n);
    return m;
}

double LossDistribution::variance() const {
    const double mu = mean();
    double v = 0.0;
    for (std::size_t n = 0; n < pmf.size(); ++n) {
        const double d = value_at(n) - mu;
        v += pmf[n] * d * d;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Stochastic rounding

LatticeSeverity stochastic_round(std::span<const SeverityAtom> atoms, double unit) {
    if (!(unit > 0.0))
        throw std::invalid_argument("stochastic_round: unit must be positive");
    LatticeSeverity out;
    out.unit = unit;
    out.pmf.clear();
    for (const auto& atom : atoms) {
        if (atom.value < 0.0)
            throw std::invalid_argument("stochastic_round: negative payment atom " + std::to_string(atom.value));
        if (atom.prob < 0.0)
            throw std::invalid_argument("stochastic_round: negative probability");
        if (atom.prob == 0.0)
            continue;
        deposit(out.pmf, atom.value / unit, atom.prob);
    }
    if (out.pmf.empty())
        out.pmf = {1.0};
    return out;
}

LatticeSeverity stochastic_round(const LatticeSeverity& severity, double unit) {
    if (same_unit(severity.unit, unit))
        return severity;
    std::vector<SeverityAtom> atoms;
    for (std::size_t n = 0; n < severity.pmf.size(); ++n)
        if (severity.pmf[n] > 0.0)
            atoms.push_back({static_cast<double>(n) * severity.unit, severity.pmf[n]});
    return stochastic_round(atoms, unit);
}

// ---------------------------------------------------------------------------
// Sectors

double count_mean(const CountLaw& law) {
    if (const auto* p = std::get_if<PoissonLaw>(&law))
        return p->lambda;
    return std::get<NegativeBinomialLaw>(law).mean();
}

double count_variance(const CountLaw& law) {
    if (const auto* p = std::get_if<PoissonLaw>(&law))
        return p->lambda;
    const auto& nb = std::get<NegativeBinomialLaw>(law);
    return nb.r * (1.0 - nb.p) / (nb.p * nb.p);
}

double SectorCompound::mean() const { return count_mean(count_law) * severity.mean(); }

double SectorCompound::variance() const {
    const double ey = severity.mean();
    const double ey2 = severity.second_moment();
    const double en = count_mean(count_law);
    const double vn = count_variance(count_law);
    return en * (ey2 - ey * ey) + vn * ey * ey;
}

std::vector<SectorCompound> build_sectors(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                          double unit) {
    if (!(unit > 0.0))
        throw std::invalid_argument("build_sectors: unit must be positive");
    const std::size_t K = portfolio.empty() ? factors.size() : portfolio.causes();
    if (factors.size() != K)
        throw std::invalid_argument("build_sectors: portfolio has " + std::to_string(K) + " risk factors but " +
                                    std::to_string(factors.size()) + " specs were given");
    for (const auto& f : factors)
        if (!(f.variance > 0.0))
            throw std::invalid_argument("build_sectors: risk factor variance must be positive");

    std::vector<double> intensity(K + 1, 0.0);
    std::vector<std::vector<double>> weighted(K + 1);
    for (const auto& holder : portfolio.holders) {
        holder.validate();
        if (holder.causes() != K)
            throw std::invalid_argument("build_sectors: policyholder '" + holder.id + "' has a different K");
        const LatticeSeverity sev = stochastic_round(holder.payment, unit);
        for (std::size_t k = 0; k <= K; ++k) {
            const double rate = holder.multiplicity * holder.death_prob * holder.weights[k];
            if (rate <= 0.0)
                continue;
            intensity[k] += rate;
            auto& acc = weighted[k];
            if (acc.size() < sev.pmf.size())
                acc.resize(sev.pmf.size(), 0.0);
            for (std::size_t n = 0; n < sev.pmf.size(); ++n)
                acc[n] += rate * sev.pmf[n];
        }
    }

    std::vector<SectorCompound> sectors;
    sectors.reserve(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        SectorCompound s;
        s.k = static_cast<int>(k);
        s.intensity = intensity[k];
        if (!(intensity[k] > 0.0)) {
            s.intensity = 0.0;
            s.count_law = PoissonLaw{0.0};
            s.severity = LatticeSeverity::point(unit, 0);
        } else {
            s.severity.unit = unit;
            s.severity.pmf = std::move(weighted[k]);
            for (auto& p : s.severity.pmf)
                p /= intensity[k];
            if (k == 0) {
                s.count_law = PoissonLaw{intensity[k]};
            } else {
                const double var = factors[k - 1].variance;
                s.count_law = NegativeBinomialLaw{1.0 / var, 1.0 / (1.0 + var * intensity[k])};
            }
        }
        sectors.push_back(std::move(s));
    }
    return sectors;
}

// ---------------------------------------------------------------------------
// Panjer recursion

LossDistribution panjer_compound(const SectorCompound& sector, const PanjerOptions& options) {
    const double unit = sector.severity.unit;
    const auto& f = sector.severity.pmf;
    const double f0 = f.empty() ? 1.0 : f[0];
    if (sector.degenerate() || f.size() <= 1 || f0 >= 1.0)
        return LossDistribution::point_mass(unit, 0);

    // Zero-modification: thin the count law by P(Y > 0) and recurse on the
    // severity conditioned on Y > 0, so that f_0 = 0 below.
    const double keep = 1.0 - f0;
    double a = 0.0;
    double b = 0.0;
    double log_g0 = 0.0;
    double count_m = 0.0;
    double count_v = 0.0;
    if (const auto* poisson = std::get_if<PoissonLaw>(&sector.count_law)) {
        const double lambda = poisson->lambda * keep;
        b = lambda;
        log_g0 = -lambda;
        count_m = count_v = lambda;
    } else {
        const auto& nb = std::get<NegativeBinomialLaw>(sector.count_law);
        const double thinned_mean = nb.mean() * keep;
        const double p = nb.r / (nb.r + thinned_mean);
        a = 1.0 - p;
        b = (nb.r - 1.0) * a;
        log_g0 = nb.r * std::log(p);
        count_m = thinned_mean;
        count_v = thinned_mean / p;
    }
    if (!(1.0 - a > 0.0) || !std::isfinite(log_g0))
        throw NumericalError("panjer_compound: recursion diverges (corrupted severity or count law)");

    const std::size_t J = f.size() - 1;
    std::vector<double> af(J + 1, 0.0), bf(J + 1, 0.0);
    double ey = 0.0, ey2 = 0.0;
    for (std::size_t j = 1; j <= J; ++j) {
        const double fj = f[j] / keep;
        af[j] = a * fj;
        bf[j] = b * static_cast<double>(j) * fj;
        ey += static_cast<double>(j) * fj;
        ey2 += static_cast<double>(j) * static_cast<double>(j) * fj;
    }
    // severities with few atoms on a long lattice: loop over the atoms only
    std::vector<std::size_t> support;
    for (std::size_t j = 1; j <= J; ++j)
        if (f[j] > 0.0)
            support.push_back(j);
    const bool sparse = support.size() * 4 < J;
    const double mean = count_m * ey;
    const double sd = std::sqrt(count_m * (ey2 - ey * ey) + count_v * ey * ey);
    const std::size_t target = options.n_max ? *options.n_max
                                             : static_cast<std::size_t>(std::ceil(mean + 12.0 * sd));
    const std::size_t limit = options.n_max ? *options.n_max
                                            : std::min(options.hard_limit, std::max<std::size_t>(4 * target, 64));

    // g_tilde[n] * exp(log_g0) * 2^exponent is P(S = n). Scaling only kicks in
    // when exp(log_g0) would underflow.
    const bool scaled = log_g0 < -700.0;
    int exponent = 0;
    std::vector<double> g;
    g.reserve(std::min(limit, target) + 1);
    g.push_back(scaled ? 1.0 : std::exp(log_g0));
    double mass_sum = g[0];
    double mass_comp = 0.0;
    auto actual_mass = [&]() {
        const double s = mass_sum + mass_comp;
        return scaled ? std::exp(std::log(s) + log_g0 + exponent * M_LN2) : s;
    };
    constexpr int kRescaleBits = 600;
    const double rescale_threshold = std::ldexp(1.0, kRescaleBits);

    for (std::size_t n = 1; n <= limit; ++n) {
        if (n > target && 1.0 - actual_mass() <= options.tail_tolerance)
            break;
        double sa = 0.0, sb = 0.0;
        if (sparse) {
            for (std::size_t j : support) {
                if (j > n)
                    break;
                const double gj = g[n - j];
                sa += af[j] * gj;
                sb += bf[j] * gj;
            }
        } else {
            const std::size_t jmax = std::min(n, J);
            for (std::size_t j = 1; j <= jmax; ++j) {
                const double gj = g[n - j];
                sa += af[j] * gj;
                sb += bf[j] * gj;
            }
        }
        double gn = sa + sb / static_cast<double>(n);
        if (!std::isfinite(gn) || gn < 0.0)
            throw NumericalError("panjer_compound: non-finite or negative probability at n = " + std::to_string(n));
        g.push_back(gn);
        // Neumaier accumulation of the enumerated mass
        const double t = mass_sum + gn;
        mass_comp += (std::abs(mass_sum) >= gn) ? (mass_sum - t) + gn : (gn - t) + mass_sum;
        mass_sum = t;
        if (scaled && gn > rescale_threshold) {
            for (auto& x : g)
                x = std::ldexp(x, -kRescaleBits);
            mass_sum = std::ldexp(mass_sum, -kRescaleBits);
            mass_comp = std::ldexp(mass_comp, -kRescaleBits);
            exponent += kRescaleBits;
        }
    }

    LossDistribution out;
    out.unit = unit;
    if (scaled) {
        for (auto& x : g) {
            x = x > 0.0 ? std::exp(std::log(x) + log_g0 + exponent * M_LN2) : 0.0;
        }
    }
    out.pmf = std::move(g);
    out.truncation_mass = std::max(0.0, 1.0 - out.mass());
    return out;
}

// ---------------------------------------------------------------------------
// Convolution, reflection

namespace {

// Both inputs at least this long: convolve by FFT. Rounding leaves absolute
// errors around 1e-16 relative to the largest probability; negative results
// are clipped.
constexpr std::size_t kFftMinSize = 512;

std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size() + b.size() - 1;
    std::size_t m = 1;
    while (m < n)
        m <<= 1;
    std::vector<double> x(a), y(b);
    x.resize(m, 0.0);
    y.resize(m, 0.0);
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> fx, fy;
    fft.fwd(fx, x);
    fft.fwd(fy, y);
    for (std::size_t i = 0; i < fx.size(); ++i)
        fx[i] *= fy[i];
    std::vector<double> z;
    fft.inv(z, fx);
    z.resize(n);
    for (double& v : z)
        v = std::max(v, 0.0);
    return z;
}

} // namespace

LossDistribution convolve(const LossDistribution& a, const LossDistribution& b) {
    if (!same_unit(a.unit, b.unit))
        throw std::invalid_argument("convolve: loss units differ (" + std::to_string(a.unit) + " vs " +
                                    std::to_string(b.unit) + ")");
    LossDistribution out;
    out.unit = a.unit;
    out.origin = a.origin + b.origin;
    if (a.pmf.empty() || b.pmf.empty()) {
        out.truncation_mass = 1.0;
        return out;
    }
    if (std::min(a.pmf.size(), b.pmf.size()) >= kFftMinSize) {
        out.pmf = fft_convolve(a.pmf, b.pmf);
    } else {
        out.pmf.assign(a.pmf.size() + b.pmf.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.pmf.size(); ++i) {
            const double ai = a.pmf[i];
            if (ai == 0.0)
                continue;
            double* dst = out.pmf.data() + i;
            for (std::size_t j = 0; j < b.pmf.size(); ++j)
                dst[j] += ai * b.pmf[j];
        }
    }
    out.truncation_mass = std::max(0.0, 1.0 - out.mass());
    if (a.truncated_tail == b.truncated_tail)
        out.truncated_tail = a.truncated_tail;
    else
        out.truncated_tail = a.truncation_mass >= b.truncation_mass ? a.truncated_tail : b.truncated_tail;
    return out;
}

LossDistribution convolve_sectors(std::span<const LossDistribution> sectors) {
    if (sectors.empty())
        return LossDistribution::point_mass(1.0, 0);
    LossDistribution acc = sectors.front();
    for (std::size_t i = 1; i < sectors.size(); ++i)
        acc = convolve(acc, sectors[i]);
    return acc;
}

LossDistribution aggregate_portfolio(const Portfolio& portfolio, std::span<const RiskFactorSpec> factors,
                                     double unit, const PanjerOptions& options) {
    const auto sectors = build_sectors(portfolio, factors, unit);
    std::vector<LossDistribution> laws(sectors.size());
    numerics::parallel_for(sectors.size(), numerics::worker_count(),
                           [&](std::size_t k) { laws[k] = panjer_compound(sectors[k], options); });
    auto out = convolve_sectors(laws);
    out.unit = unit;
    return out;
}

namespace {
LossDistribution reflect(const LossDistribution& s) {
    LossDistribution out;
    out.unit = s.unit;
    out.pmf.assign(s.pmf.rbegin(), s.pmf.rend());
    out.origin = -(s.origin + static_cast<double>(s.pmf.empty() ? 0 : s.pmf.size() - 1) * s.unit);
    out.truncation_mass = s.truncation_mass;
    out.truncated_tail = s.truncated_tail == TailSide::upper ? TailSide::lower : TailSide::upper;
    return out;
}
} // namespace

LossDistribution loss_from_annuity(double total_survival_payments, const LossDistribution& s) {
    auto out = reflect(s);
    out.origin += total_survival_payments;
    return out;
}

LossDistribution loss_from_annuity(const LossDistribution& total_survival_payments, const LossDistribution& s) {
    return convolve(total_survival_payments, reflect(s));
}

namespace {
LossDistribution convolution_power(LossDistribution base, std::uint64_t power, double unit) {
    LossDistribution result = LossDistribution::point_mass(unit, 0);
    while (power > 0) {
        if (power & 1u)
            result = convolve(result, base);
        power >>= 1u;
        if (power > 0)
            base = convolve(base, base);
    }
    return result;
}
} // namespace

LossDistribution survival_payment_distribution(const Portfolio& portfolio, double unit) {
    LossDistribution total = LossDistribution::point_mass(unit, 0);
    double deterministic = 0.0;
    for (const auto& h : portfolio.holders) {
        const LatticeSeverity x = stochastic_round(h.survival_payment, unit);
        const double heads = std::round(h.multiplicity);
        if (std::abs(heads - h.multiplicity) > 1e-9)
            throw std::invalid_argument("survival_payment_distribution: multiplicity of '" + h.id +
                                        "' is not an integer");
        std::size_t atoms = 0, where = 0;
        for (std::size_t n = 0; n < x.pmf.size(); ++n)
            if (x.pmf[n] > 0.0) {
                ++atoms;
                where = n;
            }
        if (atoms <= 1) {
            deterministic += heads * static_cast<double>(where);
            continue;
        }
        LossDistribution single;
        single.unit = unit;
        single.pmf = x.pmf;
        total = convolve(total, convolution_power(std::move(single), static_cast<std::uint64_t>(heads), unit));
    }
    total.origin += deterministic * unit;
    return total;
}

// ---------------------------------------------------------------------------
// Extraction

double quantile(const LossDistribution& dist, double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("quantile: p must lie in (0, 1)");
    double cum = 0.0, comp = 0.0;
    if (dist.truncated_tail == TailSide::lower) {
        if (p <= dist.truncation_mass)
            throw NumericalError("quantile: p = " + std::to_string(p) + " lies inside the truncated lower tail");
        cum = dist.truncation_mass;
    } else if (p > 1.0 - dist.truncation_mass) {
        throw NumericalError("quantile: p = " + std::to_string(p) + " lies inside the truncated upper tail");
    }
    for (std::size_t n = 0; n < dist.pmf.size(); ++n) {
        const double x = dist.pmf[n];
        const double t = cum + x;
        comp += (std::abs(cum) >= x) ? (cum - t) + x : (x - t) + cum;
        cum = t;
        if (cum + comp >= p)
            return dist.value_at(n);
    }
    if (dist.pmf.empty())
        throw NumericalError("quantile: empty distribution");
    return dist.value_at(dist.pmf.size() - 1);
}

namespace {
// Integer lattice offset of b relative to a.
long lattice_offset(const LossDistribution& a, const LossDistribution& b, const char* what) {
    if (!same_unit(a.unit, b.unit))
        throw std::invalid_argument(std::string(what) + ": loss units differ");
    const double off = (b.origin - a.origin) / a.unit;
    const double r = std::round(off);
    if (std::abs(off - r) > 1e-9 * std::max(1.0, std::abs(off)))
        throw std::invalid_argument(std::string(what) + ": lattices are not aligned");
    return static_cast<long>(r);
}
} // namespace

double tv_distance(const LossDistribution& a, const LossDistribution& b) {
    const long off = lattice_offset(a, b, "tv_distance");
    const long lo = std::min(0L, off);
    const long hi = std::max(static_cast<long>(a.pmf.size()), off + static_cast<long>(b.pmf.size()));
    double sum = 0.0;
    for (long i = lo; i < hi; ++i) {
        const double pa = (i >= 0 && i < static_cast<long>(a.pmf.size())) ? a.pmf[static_cast<std::size_t>(i)] : 0.0;
        const long j = i - off;
        const double pb = (j >= 0 && j < static_cast<long>(b.pmf.size())) ? b.pmf[static_cast<std::size_t>(j)] : 0.0;
        sum += std::abs(pa - pb);
    }
    return std::min(1.0, 0.5 * sum + 0.5 * std::abs(a.truncation_mass - b.truncation_mass));
}

LossDistribution shift_by(const LossDistribution& dist, double shift) {
    LossDistribution out = dist;
    out.origin += shift;
    return out;
}

LossDistribution mix(std::span<const LossDistribution> laws, std::span<const double> weights) {
    if (laws.empty() || laws.size() != weights.size())
        throw std::invalid_argument("mix: need one weight per law and at least one law");
    const double unit = laws.front().unit;
    double base = laws.front().origin;
    for (const auto& l : laws) {
        if (!same_unit(l.unit, unit))
            throw std::invalid_argument("mix: loss units differ");
        base = std::min(base, l.origin);
    }
    LossDistribution out;
    out.unit = unit;
    out.origin = base;
    std::size_t upper = 0, lower = 0;
    for (std::size_t i = 0; i < laws.size(); ++i) {
        const auto& l = laws[i];
        const double w = weights[i];
        const double start = (l.origin - base) / unit;
        for (std::size_t n = 0; n < l.pmf.size(); ++n)
            if (l.pmf[n] > 0.0)
                deposit(out.pmf, start + static_cast<double>(n), w * l.pmf[n]);
        out.truncation_mass += w * l.truncation_mass;
        if (l.truncation_mass > 0.0)
            (l.truncated_tail == TailSide::upper ? upper : lower) += 1;
    }
    out.truncated_tail = lower > upper ? TailSide::lower : TailSide::upper;
    return out;
}

} // namespace crplus
