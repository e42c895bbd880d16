#pragma once

// Noise sensitivity and dynamical percolation: noise correlations, the
// dynamical time correlation through both the noise equivalence and explicit
// Poisson clocks, switch statistics, the energy integral, and small-scale
// spectral diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "arms.hpp"
#include "bitmask.hpp"
#include "boolfn.hpp"
#include "coupled.hpp"
#include "lattice.hpp"
#include "random.hpp"
#include "replicas.hpp"
#include "stats.hpp"

namespace spectral_perc {

enum class NoiseMode { uniform, selective, block };

/// Which bits get resampled. Uniform: each bit with probability eps.
/// Selective: exactly the bits of `resample_set`. Block: each block of the
/// partition, wholesale, with probability eps.
struct NoiseSpec {
    NoiseMode mode = NoiseMode::uniform;
    double eps = 0.0;
    BitMask resample_set;
    std::vector<std::vector<std::size_t>> blocks;

    static NoiseSpec uniform(double eps) { return {NoiseMode::uniform, eps, {}, {}}; }
    static NoiseSpec selective(BitMask set) { return {NoiseMode::selective, 0.0, std::move(set), {}}; }
    static NoiseSpec block(std::vector<std::vector<std::size_t>> partition, double eps)
    {
        return {NoiseMode::block, eps, {}, std::move(partition)};
    }

    void validate(std::size_t n) const
    {
        if (mode != NoiseMode::selective && !(eps >= 0.0 && eps <= 1.0))
            throw std::invalid_argument("NoiseSpec: eps outside [0,1]");
        if (mode == NoiseMode::selective && resample_set.size() != n)
            throw std::invalid_argument("NoiseSpec: resample set does not match the bits");
        if (mode == NoiseMode::block) {
            std::vector<char> seen(n, 0);
            for (const auto& b : blocks)
                for (auto i : b) {
                    if (i >= n || seen[i]) throw std::invalid_argument("NoiseSpec: blocks are not a partition of the bits");
                    seen[i] = 1;
                }
            if (std::find(seen.begin(), seen.end(), 0) != seen.end())
                throw std::invalid_argument("NoiseSpec: blocks are not a partition of the bits");
        }
    }
};

namespace detail {

// Visits i in [0, n) independently with probability p, by geometric skips.
template <class Visit>
void for_each_bernoulli(std::size_t n, double p, Rng& rng, Visit&& visit)
{
    if (p <= 0.0 || n == 0) return;
    if (p >= 1.0) {
        for (std::size_t i = 0; i < n; ++i) visit(i);
        return;
    }
    const double log_q = std::log1p(-p);
    std::size_t i = 0;
    while (true) {
        const double u = 1.0 - uniform01(rng); // (0, 1]
        const double skip = std::floor(std::log(u) / log_q);
        if (skip >= static_cast<double>(n - i)) return;
        i += static_cast<std::size_t>(skip);
        visit(i);
        if (++i >= n) return;
    }
}

inline void apply_noise_inplace(std::span<std::int8_t> bits, const NoiseSpec& spec, Rng& rng)
{
    switch (spec.mode) {
    case NoiseMode::uniform:
        for_each_bernoulli(bits.size(), spec.eps, rng, [&](std::size_t i) { bits[i] = fair_coin(rng) ? 1 : -1; });
        break;
    case NoiseMode::selective:
        for (auto i : spec.resample_set.ids()) bits[i] = fair_coin(rng) ? 1 : -1;
        break;
    case NoiseMode::block:
        for (const auto& b : spec.blocks)
            if (bernoulli(rng, spec.eps))
                for (auto i : b) bits[i] = fair_coin(rng) ? 1 : -1;
        break;
    }
}

inline void fill_fair(std::span<std::int8_t> bits, Rng& rng)
{
    BitStream bs(rng);
    for (auto& b : bits) b = bs.next() ? 1 : -1;
}

} // namespace detail

inline Configuration apply_noise(const Configuration& w, const NoiseSpec& spec, std::uint64_t seed)
{
    spec.validate(w.size());
    std::vector<std::int8_t> bits(w.bits().begin(), w.bits().end());
    Rng rng(seed);
    detail::apply_noise_inplace(bits, spec, rng);
    return Configuration(w.region_ptr(), std::move(bits));
}

/// Bits of the square-bond lattice that are vertical (or horizontal) edges.
inline BitMask edge_bits(const LatticeRegion& region, bool vertical)
{
    if (region.kind() != LatticeKind::square_bond) throw std::invalid_argument("edge_bits: square-bond lattice only");
    BitMask m(region.bit_count());
    for (std::size_t b = 0; b < region.bit_count(); ++b) {
        const Tile& t = region.tile(region.tile_of_bit(b));
        const bool is_vertical = t.a % 2 == 0; // a even, b odd
        if (is_vertical == vertical) m.set(b);
    }
    return m;
}

/// Cells of a coarse grid as a block partition.
inline std::vector<std::vector<std::size_t>> grid_blocks(const CoarseGrid& grid)
{
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
        auto m = grid.members(c);
        if (!m.empty()) out.emplace_back(m.begin(), m.end());
    }
    return out;
}

struct NoiseCorrelation {
    Estimate correlation; // E[f(x) f(y)]
    Estimate psi;         // E[f(x) f(y)] - E[f(x)] E[f(y)]
    Estimate mean_x, mean_y;
};

/// (x, y) pairs with y a noised copy of x.
template <BooleanFunction F>
NoiseCorrelation noise_correlation(const F& f, const NoiseSpec& spec, std::uint64_t n_samples, std::uint64_t seed,
                                   unsigned workers = 0)
{
    const auto n = f.bit_count();
    spec.validate(n);
    if (n_samples < 2) throw std::invalid_argument("noise_correlation: need at least two samples");
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> x, y;
    };
    auto acc = run_replicas_with<CovarianceAccumulator<3>>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n)}; },
        [&](CovarianceAccumulator<3>& a, State& s, Rng& rng, std::uint64_t) {
            detail::fill_fair(s.x, rng);
            s.y = s.x;
            detail::apply_noise_inplace(s.y, spec, rng);
            const double fx = f(std::span<const std::int8_t>(s.x));
            const double fy = f(std::span<const std::int8_t>(s.y));
            a.add({fx * fy, fx, fy});
        },
        workers);
    const auto ms = clock.elapsed_ms();
    auto est = [&](std::size_t k) {
        return Estimate{acc.mean(k), std::sqrt(acc.mean_covariance(k, k)), acc.count, seed, ms};
    };
    NoiseCorrelation out;
    out.correlation = est(0);
    out.mean_x = est(1);
    out.mean_y = est(2);
    const double m1 = acc.mean(1), m2 = acc.mean(2);
    const std::array<double, 3> g{1.0, -m2, -m1};
    double var = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k) var += g[i] * g[k] * acc.mean_covariance(i, k);
    out.psi = Estimate{acc.mean(0) - m1 * m2, std::sqrt(std::max(0.0, var)), acc.count, seed, ms};
    return out;
}

/// Exact E[f(x) f(y)] from the spectrum for any noise mode.
inline double exact_noise_correlation(const SpectralDistribution& d, const NoiseSpec& spec)
{
    spec.validate(d.n);
    switch (spec.mode) {
    case NoiseMode::uniform: return noise_stability(d, spec.eps);
    case NoiseMode::selective: {
        const auto U = spec.resample_set.to_u64();
        return spectral_probability(d, [U](std::uint64_t S) { return (S & U) == 0; }, SpectralWeight::unnormalized);
    }
    case NoiseMode::block: {
        std::vector<std::uint64_t> masks;
        for (const auto& b : spec.blocks) {
            std::uint64_t m = 0;
            for (auto i : b) m |= std::uint64_t{1} << i;
            masks.push_back(m);
        }
        double s = 0.0;
        for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
            int hit = 0;
            for (auto m : masks) hit += (S & m) != 0;
            s += d.weight(S) * std::pow(1.0 - spec.eps, hit);
        }
        return s;
    }
    }
    return 0.0;
}

struct CluelessDecisive {
    Estimate clueless;   // Q[empty != S subset of U]
    Estimate undecided;  // Q[S not subset of U]
};

/// Both spectral masses through the coupled paired estimator.
template <BooleanFunction F>
CluelessDecisive clueless_decisive_probe(const F& f, const BitMask& U, std::uint64_t n_samples, std::uint64_t seed,
                                         unsigned workers = 0)
{
    const BitMask Uc = U.complement();
    return {estimate_S_hits_B_avoids_W(f, U, Uc, n_samples, seed, workers),
            estimate_S_hits_B_avoids_W(f, Uc, BitMask(U.size()), n_samples, derive_seed(seed, 1, 1), workers)};
}

struct DynamicalEvent {
    double time;
    std::uint32_t bit;
    std::int8_t value;
};

/// Stationary dynamical percolation on [0, T]: every bit is resampled at
/// the rings of its own rate-1 Poisson clock.
struct DynamicalTrace {
    RegionPtr region;
    double horizon = 0.0;
    Configuration initial;
    std::vector<DynamicalEvent> events;

    Configuration at(double t) const
    {
        std::vector<std::int8_t> bits(initial.bits().begin(), initial.bits().end());
        for (const auto& e : events) {
            if (e.time > t) break;
            bits[e.bit] = e.value;
        }
        return Configuration(region, std::move(bits));
    }
};

inline DynamicalTrace simulate_dynamics(const RegionPtr& region, double T, std::uint64_t seed)
{
    if (!(T >= 0)) throw std::invalid_argument("simulate_dynamics: horizon must be non-negative");
    Rng rng(seed);
    const auto n = region->bit_count();
    std::vector<std::int8_t> bits(n);
    detail::fill_fair(bits, rng);
    DynamicalTrace tr{region, T, Configuration(region, std::move(bits)), {}};
    if (n == 0) return tr;
    std::exponential_distribution<double> gap(static_cast<double>(n));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (double t = gap(rng); t <= T; t += gap(rng))
        tr.events.push_back({t, static_cast<std::uint32_t>(pick(rng)), static_cast<std::int8_t>(fair_coin(rng) ? 1 : -1)});
    return tr;
}

enum class DynamicsPath { noise, clock };

/// E[f(w_0) f(w_t)]. The noise path resamples each bit with probability
/// 1 - e^{-t}; the clock path runs the Poisson clocks event by event.
template <BooleanFunction F>
Estimate dynamical_correlation(const F& f, double t, std::uint64_t n_samples, std::uint64_t seed,
                               DynamicsPath path = DynamicsPath::noise, unsigned workers = 0)
{
    if (!(t >= 0)) throw std::invalid_argument("dynamical_correlation: t must be non-negative");
    if (n_samples < 1) throw std::invalid_argument("dynamical_correlation: need at least one sample");
    const auto n = f.bit_count();
    const double eps = -std::expm1(-t);
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> x, y;
    };
    auto acc = run_replicas_with<MeanAccumulator>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n)}; },
        [&](MeanAccumulator& a, State& s, Rng& rng, std::uint64_t) {
            detail::fill_fair(s.x, rng);
            s.y = s.x;
            if (path == DynamicsPath::noise) {
                detail::for_each_bernoulli(n, eps, rng, [&](std::size_t i) { s.y[i] = fair_coin(rng) ? 1 : -1; });
            } else if (n > 0) {
                std::exponential_distribution<double> gap(static_cast<double>(n));
                std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                for (double u = gap(rng); u <= t; u += gap(rng)) s.y[pick(rng)] = fair_coin(rng) ? 1 : -1;
            }
            a.add(static_cast<double>(f(std::span<const std::int8_t>(s.x))) * f(std::span<const std::int8_t>(s.y)));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

struct CorrelationPoint {
    double t = 0.0;
    Estimate correlation;  // E[f(w_0) f(w_t)]
    double ratio = 0.0;    // E[f(w_0) f(w_t)] / E[f]^2 - 1
    double ratio_stderr = 0.0;
};

struct CorrelationCurve {
    Estimate mean;   // E[f]
    Estimate second; // E[f^2]
    std::vector<CorrelationPoint> points;
};

namespace detail {

// One replica of the dynamics observed at every time of an increasing grid:
// each bit's first ring time is Exp(1) and after it the bit holds a fresh
// value. The pair (w_0, w_t) has the stationary law for each t separately.
template <class F, class Emit>
void correlation_sweep(const F& f, std::span<const double> times, std::vector<std::int8_t>& x,
                       std::vector<std::int8_t>& y, std::vector<std::pair<double, std::uint32_t>>& rings, Rng& rng,
                       Emit&& emit)
{
    const auto n = x.size();
    fill_fair(x, rng);
    y = x;
    const double t_max = times.empty() ? 0.0 : times.back();
    const double p = -std::expm1(-t_max);
    rings.clear();
    for_each_bernoulli(n, p, rng, [&](std::size_t i) {
        // Exp(1) conditioned below t_max
        const double tau = -std::log1p(-uniform01(rng) * p);
        rings.emplace_back(std::min(tau, t_max), static_cast<std::uint32_t>(i));
    });
    std::sort(rings.begin(), rings.end());
    const int f0 = f(std::span<const std::int8_t>(x));
    int ft = f0;
    std::size_t next = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        bool changed = false;
        while (next < rings.size() && rings[next].first <= times[k]) {
            const auto b = rings[next++].second;
            const std::int8_t v = fair_coin(rng) ? 1 : -1;
            changed = changed || v != y[b];
            y[b] = v;
        }
        if (changed) ft = f(std::span<const std::int8_t>(y));
        emit(k, f0, ft);
    }
}

struct CurveAcc {
    std::vector<CovarianceAccumulator<2>> per; // (f0 ft, f0)
    MeanAccumulator f0, f0sq;
    void merge(const CurveAcc& o)
    {
        if (per.size() < o.per.size()) per.resize(o.per.size());
        for (std::size_t k = 0; k < o.per.size(); ++k) per[k].merge(o.per[k]);
        f0.merge(o.f0);
        f0sq.merge(o.f0sq);
    }
};

} // namespace detail

/// E[f(w_0) f(w_t)] on an increasing time grid, every time observed on the
/// same replicas, with the normalized ratio E[f f_t]/E[f]^2 - 1.
template <BooleanFunction F>
CorrelationCurve correlation_curve(const F& f, std::vector<double> times, std::uint64_t n_samples, std::uint64_t seed,
                                   unsigned workers = 0)
{
    if (!std::is_sorted(times.begin(), times.end()) || (!times.empty() && times.front() < 0))
        throw std::invalid_argument("correlation_curve: times must be non-negative and increasing");
    if (n_samples < 2) throw std::invalid_argument("correlation_curve: need at least two samples");
    const auto n = f.bit_count();
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> x, y;
        std::vector<std::pair<double, std::uint32_t>> rings;
    };
    auto acc = run_replicas_with<detail::CurveAcc>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n), {}}; },
        [&](detail::CurveAcc& a, State& s, Rng& rng, std::uint64_t) {
            if (a.per.size() < times.size()) a.per.resize(times.size());
            int first = 0;
            detail::correlation_sweep(f, times, s.x, s.y, s.rings, rng, [&](std::size_t k, int f0, int ft) {
                a.per[k].add({static_cast<double>(f0) * ft, static_cast<double>(f0)});
                first = f0;
            });
            if (times.empty()) first = f(std::span<const std::int8_t>(s.x));
            a.f0.add(first);
            a.f0sq.add(static_cast<double>(first) * first);
        },
        workers);
    const auto ms = clock.elapsed_ms();
    CorrelationCurve out;
    out.mean = acc.f0.estimate(seed);
    out.second = acc.f0sq.estimate(seed);
    out.mean.wall_ms = out.second.wall_ms = ms;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const auto& c = acc.per[k];
        CorrelationPoint p;
        p.t = times[k];
        p.correlation = Estimate{c.mean(0), std::sqrt(c.mean_covariance(0, 0)), c.count, seed, ms};
        const double m = c.mean(1);
        if (m != 0.0) {
            p.ratio = c.mean(0) / (m * m) - 1.0;
            const double g0 = 1.0 / (m * m), g1 = -2.0 * c.mean(0) / (m * m * m);
            const double var = g0 * g0 * c.mean_covariance(0, 0) + 2 * g0 * g1 * c.mean_covariance(0, 1) +
                               g1 * g1 * c.mean_covariance(1, 1);
            p.ratio_stderr = std::sqrt(std::max(0.0, var));
        } else {
            p.ratio = std::numeric_limits<double>::quiet_NaN();
        }
        out.points.push_back(p);
    }
    return out;
}

struct SwitchStatistics {
    std::uint64_t switches = 0;
    std::vector<double> sojourns;           // completed and final intervals of constant f
    std::vector<std::uint64_t> histogram;   // sojourn counts in equal bins over [0, T]
};

/// Sign changes of f along a trace, re-evaluating f only when a ring
/// actually changes a bit.
template <BooleanFunction F>
SwitchStatistics switch_statistics(const F& f, const DynamicalTrace& trace, std::size_t bins = 10)
{
    if (f.bit_count() != trace.initial.size()) throw std::invalid_argument("switch_statistics: trace does not cover f's bits");
    if (bins == 0) throw std::invalid_argument("switch_statistics: need at least one bin");
    SwitchStatistics st;
    std::vector<std::int8_t> bits(trace.initial.bits().begin(), trace.initial.bits().end());
    int cur = f(std::span<const std::int8_t>(bits));
    double since = 0.0;
    for (const auto& e : trace.events) {
        if (bits[e.bit] == e.value) continue;
        bits[e.bit] = e.value;
        const int v = f(std::span<const std::int8_t>(bits));
        if (v != cur) {
            ++st.switches;
            st.sojourns.push_back(e.time - since);
            since = e.time;
            cur = v;
        }
    }
    st.sojourns.push_back(trace.horizon - since);
    st.histogram.assign(bins, 0);
    for (double s : st.sojourns) {
        const double w = trace.horizon > 0 ? s / trace.horizon : 0.0;
        auto b = static_cast<std::size_t>(w * static_cast<double>(bins));
        ++st.histogram[std::min(b, bins - 1)];
    }
    return st;
}

inline constexpr double kEnergyUMin = 1e-4;

/// Log-spaced grid from u_min to 1.
inline std::vector<double> energy_grid(double u_min = kEnergyUMin, int points_per_decade = 4)
{
    if (!(u_min > 0 && u_min < 1) || points_per_decade < 1) throw std::invalid_argument("energy_grid: bad parameters");
    const double decades = -std::log10(u_min);
    const int steps = static_cast<int>(std::ceil(decades * points_per_decade));
    std::vector<double> g;
    for (int k = 0; k <= steps; ++k) g.push_back(u_min * std::pow(1.0 / u_min, static_cast<double>(k) / steps));
    g.back() = 1.0;
    return g;
}

/// Weights w_k with sum_k w_k g(u_k) = integral of 2(1-u) u^{-gamma} g(u)
/// over [u_0, u_K] for g piecewise linear on the grid.
inline std::vector<double> energy_weights(std::span<const double> grid, double gamma)
{
    if (!(gamma < 1)) throw std::invalid_argument("energy_weights: gamma must be below 1");
    std::vector<double> w(grid.size(), 0.0);
    auto I = [gamma](double a, double lo, double hi) {
        const double e = a + 1.0 - gamma;
        return (std::pow(hi, e) - std::pow(lo, e)) / e;
    };
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double lo = grid[k], hi = grid[k + 1], h = hi - lo;
        if (!(h > 0)) throw std::invalid_argument("energy_weights: grid must be increasing");
        const double i0 = I(0, lo, hi), i1 = I(1, lo, hi), i2 = I(2, lo, hi);
        // (hi - u)(1 - u) and (u - lo)(1 - u), times 2
        w[k] += 2.0 * (hi * i0 - (1.0 + hi) * i1 + i2) / h;
        w[k + 1] += 2.0 * (-lo * i0 + (1.0 + lo) * i1 - i2) / h;
    }
    return w;
}

/// Integral of 2(1-u) u^{-gamma} over [0, u_min].
inline double energy_cutoff_weight(double u_min, double gamma)
{
    return 2.0 * (std::pow(u_min, 1.0 - gamma) / (1.0 - gamma) - std::pow(u_min, 2.0 - gamma) / (2.0 - gamma));
}

struct EnergyReport {
    double gamma = 0.0;
    double u_min = 0.0;
    Estimate value;                 // M_gamma
    double cutoff_part = 0.0;       // contribution of [0, u_min], ratio taken at u = 0
    std::vector<double> grid;
    std::vector<double> ratio;      // E[f f_u] / E[f]^2 on the grid
    std::vector<double> partial;    // cumulative integral up to each grid point, cutoff part included
};

/// M_gamma = int int E[f(w_s) f(w_t)] / (E[f]^2 |t - s|^gamma) ds dt over
/// [0,1]^2, reduced to u = |t - s| with weight 2(1 - u).
template <BooleanFunction F>
EnergyReport energy_integral(const F& f, double gamma, std::vector<double> grid, std::uint64_t n_samples,
                             std::uint64_t seed, unsigned workers = 0)
{
    if (!(gamma >= 0) || gamma >= 1) throw std::invalid_argument("energy_integral: gamma must lie in [0, 1)");
    if (grid.size() < 2 || !(grid.front() > 0) || grid.back() != 1.0 || !std::is_sorted(grid.begin(), grid.end()))
        throw std::invalid_argument("energy_integral: grid must increase from u_min > 0 to 1");
    if (n_samples < 2) throw std::invalid_argument("energy_integral: need at least two samples");
    const auto w = energy_weights(grid, gamma);
    const double w0 = energy_cutoff_weight(grid.front(), gamma);
    const auto n = f.bit_count();
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> x, y;
        std::vector<std::pair<double, std::uint32_t>> rings;
    };
    struct Acc {
        CovarianceAccumulator<2> yf; // (sum_k w_k f0 f_k + w0 f0^2, f0)
        std::vector<MeanAccumulator> per;
        void merge(const Acc& o)
        {
            yf.merge(o.yf);
            if (per.size() < o.per.size()) per.resize(o.per.size());
            for (std::size_t k = 0; k < o.per.size(); ++k) per[k].merge(o.per[k]);
        }
    };
    auto acc = run_replicas_with<Acc>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n), {}}; },
        [&](Acc& a, State& s, Rng& rng, std::uint64_t) {
            if (a.per.size() < grid.size()) a.per.resize(grid.size());
            double Y = 0.0;
            int first = 0;
            detail::correlation_sweep(f, grid, s.x, s.y, s.rings, rng, [&](std::size_t k, int f0, int ft) {
                const double c = static_cast<double>(f0) * ft;
                Y += w[k] * c;
                a.per[k].add(c);
                first = f0;
            });
            Y += w0 * static_cast<double>(first) * first;
            a.yf.add({Y, static_cast<double>(first)});
        },
        workers);
    EnergyReport rep;
    rep.gamma = gamma;
    rep.u_min = grid.front();
    rep.grid = grid;
    const double m = acc.yf.mean(1);
    if (m == 0.0) throw std::domain_error("energy_integral: E[f] estimate is zero");
    const double M = acc.yf.mean(0) / (m * m);
    const double g0 = 1.0 / (m * m), g1 = -2.0 * acc.yf.mean(0) / (m * m * m);
    const double var = g0 * g0 * acc.yf.mean_covariance(0, 0) + 2 * g0 * g1 * acc.yf.mean_covariance(0, 1) +
                       g1 * g1 * acc.yf.mean_covariance(1, 1);
    rep.value = Estimate{M, std::sqrt(std::max(0.0, var)), acc.yf.count, seed, clock.elapsed_ms()};

    // E[f^2], recovered from Y = sum_k w_k f0 f_k + w0 f0^2
    double sum_wc = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) sum_wc += w[k] * acc.per[k].mean();
    const double second = w0 > 0 ? (acc.yf.mean(0) - sum_wc) / w0 : 0.0;
    rep.cutoff_part = w0 * second / (m * m);
    double run = rep.cutoff_part;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        rep.ratio.push_back(acc.per[k].mean() / (m * m));
        run += w[k] * rep.ratio.back();
        rep.partial.push_back(run);
    }
    return rep;
}

/// rho(s): least r with r^2 alpha_4(r) >= s, scanning r = 1..r_max.
struct RhoTable {
    std::vector<double> s;
    std::vector<int> rho;
    std::vector<double> rho_sq_alpha4; // rho(s)^2 alpha_4(rho(s)), in [s, O(s)]
};

inline RhoTable rho_table(const std::function<double(int)>& alpha4, const std::vector<double>& s_values, int r_max)
{
    if (!alpha4) throw std::invalid_argument("rho_table: alpha_4 estimate missing");
    RhoTable t;
    std::vector<double> cache(static_cast<std::size_t>(std::max(r_max, 0)) + 1, std::numeric_limits<double>::quiet_NaN());
    auto a4 = [&](int r) {
        auto& c = cache[static_cast<std::size_t>(r)];
        if (std::isnan(c)) {
            c = alpha4(r);
            if (!std::isfinite(c) || c < 0) throw std::invalid_argument("rho_table: alpha_4 estimate missing at r=" + std::to_string(r));
        }
        return c;
    };
    for (double s : s_values) {
        int found = -1;
        for (int r = 1; r <= r_max; ++r)
            if (static_cast<double>(r) * r * a4(r) >= s) {
                found = r;
                break;
            }
        if (found < 0) throw std::out_of_range("rho_table: r_max too small for s=" + std::to_string(s));
        t.s.push_back(s);
        t.rho.push_back(found);
        t.rho_sq_alpha4.push_back(static_cast<double>(found) * found * a4(found));
    }
    return t;
}

/// P[0 < |S| <= lambda E|S|] for each lambda (normalized spectral law).
inline std::vector<double> lower_tail_profile(const SpectralDistribution& d, const std::vector<double>& lambdas)
{
    const auto sizes = size_distribution(d);
    const double mean = spectral_moments(d).mean;
    std::vector<double> out;
    for (double lam : lambdas) {
        double p = 0.0;
        for (std::size_t k = 1; k < sizes.size(); ++k)
            if (static_cast<double>(k) <= lam * mean + 1e-12) p += sizes[k];
        out.push_back(p);
    }
    return out;
}

struct PivotalMoments {
    Estimate mean;   // E|P|
    Estimate second; // E|P|^2
};

/// E|P| and E|P|^2 by counting pivotal bits on sampled configurations; the
/// duality fast path is used for rectangle crossings.
inline PivotalMoments estimate_pivotal_moments(const CrossingFunction& f, std::uint64_t n_samples, std::uint64_t seed,
                                               unsigned workers = 0)
{
    const auto n = f.bit_count();
    const bool rect = f.quad().shape() == QuadShape::rectangle_lr;
    Stopwatch clock;
    struct Acc {
        MeanAccumulator m1, m2;
        void merge(const Acc& o)
        {
            m1.merge(o.m1);
            m2.merge(o.m2);
        }
    };
    auto acc = run_replicas_with<Acc>(
        n_samples, seed, [&] { return std::vector<std::int8_t>(n); },
        [&](Acc& a, std::vector<std::int8_t>& x, Rng& rng, std::uint64_t) {
            detail::fill_fair(x, rng);
            const double k = static_cast<double>(rect ? pivotal_set_dual(f, x).size() : pivotal_set(f, x).size());
            a.m1.add(k);
            a.m2.add(k * k);
        },
        workers);
    const auto ms = clock.elapsed_ms();
    PivotalMoments out{acc.m1.estimate(seed), acc.m2.estimate(seed)};
    out.mean.wall_ms = out.second.wall_ms = ms;
    return out;
}

} // namespace spectral_perc
