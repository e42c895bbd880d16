#pragma once

// Coupled configurations: pairs (w', w'') equal off a set W and independent
// on W. Correlations of a function across such pairs are spectral
// quantities, E[f(w')f(w'')] = sum over S disjoint from W of f^(S)^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "arms.hpp"
#include "bitmask.hpp"
#include "boolfn.hpp"
#include "lattice.hpp"
#include "random.hpp"
#include "replicas.hpp"
#include "stats.hpp"

namespace spectral_perc {

struct CoupledPair {
    RegionPtr region;
    BitMask W;
    std::vector<std::int8_t> shared; // w' off W, 0 on W
    Configuration omega_prime;
    Configuration omega_second;
};

namespace detail {

// w' fair everywhere; w'' copies w' and redraws the bits of W.
inline void fill_coupled(std::span<std::int8_t> prime, std::span<std::int8_t> second, const BitMask& W, Rng& rng)
{
    BitStream bs(rng);
    for (auto& b : prime) b = bs.next() ? 1 : -1;
    std::copy(prime.begin(), prime.end(), second.begin());
    for (auto i : W.ids()) second[i] = bs.next() ? 1 : -1;
}

inline void redraw(std::span<std::int8_t> bits, const BitMask& set, Rng& rng)
{
    BitStream bs(rng);
    for (auto i : set.ids()) bits[i] = bs.next() ? 1 : -1;
}

inline void require_universe(const BitMask& m, std::size_t n, const char* what)
{
    if (m.size() != n) throw std::invalid_argument(std::string(what) + ": mask does not match the function's bits");
}

} // namespace detail

inline CoupledPair sample_coupled(const RegionPtr& region, const BitMask& W, std::uint64_t seed)
{
    detail::require_universe(W, region->bit_count(), "sample_coupled");
    const auto n = region->bit_count();
    std::vector<std::int8_t> a(n), b(n);
    Rng rng(seed);
    detail::fill_coupled(a, b, W, rng);
    std::vector<std::int8_t> shared(a);
    for (auto i : W.ids()) shared[i] = 0;
    return CoupledPair{region, W, std::move(shared), Configuration(region, std::move(a)),
                       Configuration(region, std::move(b))};
}

/// Q[S subset of A] (unnormalized spectral weight) as E[f(w')f(w'')] with W = A^c.
template <BooleanFunction F>
Estimate estimate_S_subset(const F& f, const BitMask& A, std::uint64_t n_samples, std::uint64_t seed,
                           unsigned workers = 0)
{
    const auto n = f.bit_count();
    detail::require_universe(A, n, "estimate_S_subset");
    const BitMask W = A.complement();
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> a, b;
    };
    auto acc = run_replicas_with<MeanAccumulator>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n)}; },
        [&](MeanAccumulator& m, State& s, Rng& rng, std::uint64_t) {
            detail::fill_coupled(s.a, s.b, W, rng);
            m.add(static_cast<double>(f(std::span<const std::int8_t>(s.a))) * f(std::span<const std::int8_t>(s.b)));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

/// Q[S meets B, S misses W] = Q[S in W^c] - Q[S in (W u B)^c], both terms
/// on the same w' and the same redraw of W; only the bits of B differ.
template <BooleanFunction F>
Estimate estimate_S_hits_B_avoids_W(const F& f, const BitMask& B, const BitMask& W, std::uint64_t n_samples,
                                    std::uint64_t seed, unsigned workers = 0)
{
    const auto n = f.bit_count();
    detail::require_universe(B, n, "estimate_S_hits_B_avoids_W");
    detail::require_universe(W, n, "estimate_S_hits_B_avoids_W");
    if (B.intersects(W)) throw std::invalid_argument("estimate_S_hits_B_avoids_W: B and W overlap");
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> a, b, c;
    };
    auto acc = run_replicas_with<MeanAccumulator>(
        n_samples, seed,
        [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n), std::vector<std::int8_t>(n)}; },
        [&](MeanAccumulator& m, State& s, Rng& rng, std::uint64_t) {
            detail::fill_coupled(s.a, s.b, W, rng);
            s.c = s.b;
            detail::redraw(s.c, B, rng);
            const int fa = f(std::span<const std::int8_t>(s.a));
            m.add(static_cast<double>(fa) *
                  (f(std::span<const std::int8_t>(s.b)) - f(std::span<const std::int8_t>(s.c))));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

/// E[lambda_{B,W}^2]: probability that B is pivotal for both w' and w''.
template <BooleanFunction F>
Estimate estimate_lambda_sq(const F& f, const BitMask& B, const BitMask& W, std::uint64_t n_samples,
                            std::uint64_t seed, unsigned workers = 0)
{
    if (!f.is_monotone()) throw std::invalid_argument("estimate_lambda_sq: function is not monotone");
    const auto n = f.bit_count();
    detail::require_universe(B, n, "estimate_lambda_sq");
    detail::require_universe(W, n, "estimate_lambda_sq");
    if (B.intersects(W)) throw std::invalid_argument("estimate_lambda_sq: B and W overlap");
    Stopwatch clock;
    struct State {
        std::vector<std::int8_t> a, b;
    };
    auto acc = run_replicas_with<BernoulliAccumulator>(
        n_samples, seed, [&] { return State{std::vector<std::int8_t>(n), std::vector<std::int8_t>(n)}; },
        [&](BernoulliAccumulator& m, State& s, Rng& rng, std::uint64_t) {
            detail::fill_coupled(s.a, s.b, W, rng);
            m.add(pivotal_for_box(f, s.a, B) && pivotal_for_box(f, s.b, B));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

/// P[B pivotal] on the w' stream of estimate_lambda_sq (same per replica when W is empty).
template <BooleanFunction F>
Estimate estimate_box_pivotal(const F& f, const BitMask& B, std::uint64_t n_samples, std::uint64_t seed,
                              unsigned workers = 0)
{
    return estimate_lambda_sq(f, B, BitMask(f.bit_count()), n_samples, seed, workers);
}

/// E[ E[g | bits outside W]^2 ] for a tabulated g.
inline double conditional_second_moment(const TruthTable& g, std::uint64_t W)
{
    const std::uint64_t full = (std::uint64_t{1} << g.n) - 1;
    if (W & ~full) throw std::invalid_argument("conditional_second_moment: W outside the bits");
    std::vector<double> sums(g.size(), 0.0);
    for (std::uint64_t m = 0; m < g.size(); ++m) sums[m & ~W] += g[m];
    const double inner = std::ldexp(1.0, std::popcount(W));
    double total = 0.0;
    for (std::uint64_t m = 0; m < g.size(); ++m) {
        if (m & W) continue;
        const double c = sums[m] / inner;
        total += c * c;
    }
    return total / std::ldexp(1.0, static_cast<int>(g.n) - std::popcount(W));
}

/// Indicator table of "B is pivotal" for a monotone tabulated function.
inline TruthTable box_pivotal_table(const TruthTable& t, std::uint64_t B)
{
    if (!t.is_monotone()) throw std::invalid_argument("box_pivotal_table: function is not monotone");
    if (B == 0) throw std::invalid_argument("box_pivotal_table: empty box");
    std::vector<double> v(t.size());
    for (std::uint64_t m = 0; m < t.size(); ++m) v[m] = t[m | B] != t[m & ~B] ? 1.0 : 0.0;
    return TruthTable(t.n, std::move(v));
}

/// Exact E[lambda_{B,W}^2] by enumeration.
inline double exact_lambda_sq(const TruthTable& t, std::uint64_t B, std::uint64_t W)
{
    if (B & W) throw std::invalid_argument("exact_lambda_sq: B and W overlap");
    return conditional_second_moment(box_pivotal_table(t, B), W);
}

/// Which tiles the second configuration of a coupled pair redraws, as a
/// deterministic function of lattice coordinates: the plane is cut into
/// cells of side `cell` and each cell belongs to W with probability `density`.
struct ResampleSet {
    double density = 0.0;
    double cell = 1.0;
    std::uint64_t seed = 0;

    static ResampleSet none() { return {0.0, 1.0, 0}; }
    static ResampleSet everything() { return {1.0, 1.0, 0}; }
    static ResampleSet random_cells(std::uint64_t seed, double cell, double density)
    {
        if (!(cell > 0)) throw std::invalid_argument("ResampleSet: cell side must be positive");
        return {density, cell, seed};
    }

    bool contains(const Tile& t) const noexcept
    {
        if (density <= 0.0) return false;
        if (density >= 1.0) return true;
        const auto cx = static_cast<std::int64_t>(std::floor(t.center.x / cell));
        const auto cy = static_cast<std::int64_t>(std::floor(t.center.y / cell));
        const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(cx) * 0x9e3779b97f4a7c15ULL ^
                                                   static_cast<std::uint64_t>(cy)));
        return static_cast<double>(h >> 11) * 0x1.0p-53 < density;
    }
};

/// Colours of w' and w'' for one replica: w'' uses an independent hashed
/// field on the tiles of W.
struct CoupledHashedColours {
    HashedColours first;
    HashedColours second;
    ResampleSet W;

    bool prime_white(const LatticeRegion& reg, std::size_t t) const noexcept { return first.tile_white(reg, t); }

    bool second_white(const LatticeRegion& reg, std::size_t t) const noexcept
    {
        const Tile& tile = reg.tile(t);
        if (tile.fixed == TileColor::bit && W.contains(tile)) return second.tile_white(reg, t);
        return first.tile_white(reg, t);
    }

    static CoupledHashedColours for_replica(std::uint64_t replica_seed, const ResampleSet& W)
    {
        return {HashedColours{replica_seed}, HashedColours{derive_seed(replica_seed, 0, 1)}, W};
    }
};

inline bool coupled_arm_event(ArmDetector& det, const CoupledHashedColours& c)
{
    const auto& reg = det.quad().region();
    if (!det.detect_with([&](std::size_t t) { return c.prime_white(reg, t); })) return false;
    return det.detect_with([&](std::size_t t) { return c.second_white(reg, t); });
}

/// beta_{jW}(r, R) = P[w', w'' both have the j-arm event].
inline Estimate estimate_beta(const ArmSpec& spec, const ResampleSet& W, std::uint64_t n_samples, std::uint64_t seed,
                              unsigned workers = 0)
{
    spec.validate();
    if (spec.trivial()) return Estimate{1.0, 0.0, 0, seed, 0};
    if (n_samples < 1) throw std::invalid_argument("estimate_beta: need at least one sample");
    Stopwatch clock;
    auto quad = std::make_shared<const Quad>(make_arm_quad(spec));
    auto acc = run_replicas_with<BernoulliAccumulator>(
        n_samples, seed, [&] { return ArmDetector(quad, spec.j); },
        [&](BernoulliAccumulator& a, ArmDetector& det, Rng&, std::uint64_t i) {
            a.add(coupled_arm_event(det, CoupledHashedColours::for_replica(derive_seed(seed, i), W)));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

/// Quasi-multiplicativity of beta_{jW} on shared coupled replicas.
inline QuasimultReport beta_quasimult_report(const ArmSpec& base, const ResampleSet& W, int r1, int r2, int r3,
                                             std::uint64_t n_samples, std::uint64_t seed, unsigned workers = 0)
{
    return detail::quasimult_with(base, r1, r2, r3, n_samples, seed, workers, [&](ArmDetector& d, std::uint64_t s) {
        return coupled_arm_event(d, CoupledHashedColours::for_replica(s, W));
    });
}

/// B, its concentric box B' of a third the radius, and W outside B.
struct BoxWindow {
    BitMask B;
    BitMask B_prime;
    BitMask W;

    void validate() const
    {
        if (B.size() != B_prime.size() || B.size() != W.size())
            throw std::invalid_argument("BoxWindow: masks over different universes");
        if (B.intersects(W)) throw std::invalid_argument("BoxWindow: W meets B");
        if (!B_prime.subset_of(B)) throw std::invalid_argument("BoxWindow: B' not inside B");
        if (B.empty()) throw std::invalid_argument("BoxWindow: empty box");
    }
};

inline BoxWindow make_box_window(const LatticeRegion& region, Point center, double r, BitMask W)
{
    BoxWindow w{region.box_bits(center, r), region.box_bits(center, r / 3.0), std::move(W)};
    w.validate();
    return w;
}

/// 1 / (alpha_4(r) r^2), capped at 1.
inline double thinning_density(double alpha4_r, double r)
{
    if (!(alpha4_r > 0) || !(r > 0)) throw std::invalid_argument("thinning_density: needs alpha_4(r) > 0 and r > 0");
    return std::min(1.0, 1.0 / (alpha4_r * r * r));
}

struct ThinningDraw {
    std::uint32_t s_in_B = 0;
    std::uint32_t s_in_Bprime_Z = 0;
    bool conditioned = false;
};

struct ThinningResult {
    Estimate conditional;
    Interval wilson;         // 4 sigma
    std::uint64_t conditioning_hits = 0;
    std::uint64_t successes = 0;
    bool inconclusive = false; // fewer than kMinConditioningHits conditioning events
    double exact = 0.0;
    double density = 0.0;
    std::vector<ThinningDraw> draws;

    static constexpr std::uint64_t kMinConditioningHits = 100;
};

/// P[S meets B' n Z | S meets B, S misses W] by exact summation.
inline double exact_thinning_probability(const SpectralDistribution& d, const BoxWindow& w, double density)
{
    w.validate();
    const auto B = w.B.to_u64(), Bp = w.B_prime.to_u64(), W = w.W.to_u64();
    double num = 0.0, den = 0.0;
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        if (!(S & B) || (S & W)) continue;
        const double wgt = d.weight(S);
        den += wgt;
        num += wgt * (1.0 - std::pow(1.0 - density, std::popcount(S & Bp)));
    }
    if (!(den > 0)) throw std::domain_error("exact_thinning_probability: conditioning event has zero mass");
    return num / den;
}

/// Draws S from the spectral law and Z independently with the given
/// density; reports the conditional frequency of S n B' n Z nonempty.
inline ThinningResult thinning_experiment(const SpectralDistribution& d, const BoxWindow& window, double density,
                                          std::uint64_t n_samples, std::uint64_t seed, bool keep_draws = false,
                                          unsigned workers = 0)
{
    window.validate();
    if (window.B.size() != d.n) throw std::invalid_argument("thinning_experiment: window and function differ in size");
    if (d.n > 64) throw std::invalid_argument("thinning_experiment: at most 64 bits");
    if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("thinning_experiment: density outside [0,1]");
    ThinningResult res;
    res.density = density;
    res.exact = exact_thinning_probability(d, window, density);
    Stopwatch clock;
    const SpectralSampler sampler(d);
    const auto B = window.B.to_u64(), Bp = window.B_prime.to_u64(), W = window.W.to_u64();
    const auto bp_ids = window.B_prime.ids();

    struct Acc {
        std::uint64_t count = 0, hits = 0, successes = 0;
        std::vector<ThinningDraw> draws;
        void merge(const Acc& o)
        {
            count += o.count;
            hits += o.hits;
            successes += o.successes;
            draws.insert(draws.end(), o.draws.begin(), o.draws.end());
        }
    };
    auto acc = run_replicas<Acc>(
        n_samples, seed,
        [&](Acc& a, Rng& rng, std::uint64_t) {
            const auto S = sampler(rng).mask;
            std::uint64_t Z = 0;
            for (auto i : bp_ids)
                if (bernoulli(rng, density)) Z |= std::uint64_t{1} << i;
            ThinningDraw t;
            t.s_in_B = static_cast<std::uint32_t>(std::popcount(S & B));
            t.s_in_Bprime_Z = static_cast<std::uint32_t>(std::popcount(S & Bp & Z));
            t.conditioned = (S & B) && !(S & W);
            ++a.count;
            if (t.conditioned) {
                ++a.hits;
                if (t.s_in_Bprime_Z > 0) ++a.successes;
            }
            if (keep_draws) a.draws.push_back(t);
        },
        workers);
    if (acc.hits == 0) throw std::domain_error("thinning_experiment: conditioning event never occurred");
    res.conditioning_hits = acc.hits;
    res.successes = acc.successes;
    const double p = static_cast<double>(acc.successes) / static_cast<double>(acc.hits);
    res.conditional = Estimate{p, std::sqrt(p * (1 - p) / static_cast<double>(acc.hits)), acc.hits, seed,
                               clock.elapsed_ms()};
    res.wilson = wilson_interval(acc.successes, acc.hits, 4.0);
    res.inconclusive = acc.hits < ThinningResult::kMinConditioningHits;
    res.draws = std::move(acc.draws);
    return res;
}

struct MomentRatioRow {
    std::size_t x = 0;
    double p_x = 0.0;       // P[x in S, S misses W]
    double p_x_stderr = 0.0;
    double ratio = 0.0;     // p_x / (E[lambda_{B,W}^2] alpha_4(r))
    bool within = false;
};

struct MomentRatioReport {
    double lambda_sq = 0.0;
    double lambda_sq_stderr = 0.0;
    double alpha4 = 0.0;
    double C = 100.0;
    bool exact = false;
    std::vector<MomentRatioRow> rows;
    bool passed() const
    {
        return std::all_of(rows.begin(), rows.end(), [](const MomentRatioRow& r) { return r.within; });
    }
};

/// Ratios P[x in S, S misses W] / (E[lambda_{B,W}^2] alpha_4(r)) for x in B'.
/// Exact for at most 20 bits; otherwise Monte Carlo, using
/// P[x in S, S misses W] = E[lambda_{x,W}^2] for monotone +-1 functions.
template <BooleanFunction F>
MomentRatioReport moment_ratio_check(const F& f, const BoxWindow& window, double alpha4_r, std::uint64_t n_samples,
                                     std::uint64_t seed, double C = 100.0, unsigned workers = 0)
{
    window.validate();
    if (!f.is_monotone()) throw std::invalid_argument("moment_ratio_check: function is not monotone");
    if (window.B.size() != f.bit_count())
        throw std::invalid_argument("moment_ratio_check: window and function differ in size");
    if (!(alpha4_r > 0)) throw std::domain_error("moment_ratio_check: alpha_4(r) must be positive");
    if (window.B_prime.empty()) throw std::invalid_argument("moment_ratio_check: B' is empty");
    MomentRatioReport rep;
    rep.alpha4 = alpha4_r;
    rep.C = C;
    const auto n = f.bit_count();
    rep.exact = n <= 20;
    if (rep.exact) {
        const TruthTable t = tabulate(f, 20);
        if (!t.is_boolean()) throw std::invalid_argument("moment_ratio_check: function must be +-1 valued");
        const auto d = walsh_transform(t);
        const auto W = window.W.to_u64();
        rep.lambda_sq = exact_lambda_sq(t, window.B.to_u64(), W);
        for (auto x : window.B_prime.ids()) {
            const auto bit = std::uint64_t{1} << x;
            MomentRatioRow row;
            row.x = x;
            row.p_x = spectral_probability(
                d, [&](std::uint64_t S) { return (S & bit) && !(S & W); }, SpectralWeight::unnormalized);
            rep.rows.push_back(row);
        }
    } else {
        const auto L = estimate_lambda_sq(f, window.B, window.W, n_samples, seed, workers);
        rep.lambda_sq = L.value;
        rep.lambda_sq_stderr = L.std_error;
        for (auto x : window.B_prime.ids()) {
            const auto e = estimate_lambda_sq(f, BitMask(n, {x}), window.W, n_samples, derive_seed(seed, x), workers);
            MomentRatioRow row;
            row.x = x;
            row.p_x = e.value;
            row.p_x_stderr = e.std_error;
            rep.rows.push_back(row);
        }
    }
    if (!(rep.lambda_sq > 0)) throw std::domain_error("moment_ratio_check: E[lambda^2] is zero");
    const double den = rep.lambda_sq * alpha4_r;
    for (auto& row : rep.rows) {
        row.ratio = row.p_x / den;
        // relative error of the ratio, both factors
        const double rel = std::hypot(row.p_x > 0 ? row.p_x_stderr / row.p_x : 0.0, rep.lambda_sq_stderr / rep.lambda_sq);
        const double slack = 4.0 * rel * row.ratio;
        row.within = row.ratio + slack >= 1.0 / C && row.ratio - slack <= C;
    }
    return rep;
}

} // namespace spectral_perc
