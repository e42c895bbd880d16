#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectral_perc/boolfn.hpp"
#include "spectral_perc/lattice.hpp"
#include "spectral_perc/random.hpp"

namespace spectral_perc {

inline constexpr std::size_t kLdpMaxCoordinates = 12;
inline constexpr double kLdpTolerance = 1e-12;

/// Joint law of two random vectors x, y in {0,1}^n with y <= x.
class JointPmf {
public:
    struct Atom {
        std::uint32_t x = 0;
        std::uint32_t y = 0;
        double p = 0.0;
    };

    JointPmf() = default;

    JointPmf(std::size_t n, const std::map<std::pair<std::uint32_t, std::uint32_t>, double>& probs) : n_(n)
    {
        if (n == 0 || n > kLdpMaxCoordinates)
            throw std::invalid_argument("JointPmf: n must be in [1, 12]");
        const std::uint32_t full = (std::uint32_t{1} << n) - 1;
        double total = 0.0;
        for (const auto& [key, p] : probs) {
            const auto [x, y] = key;
            if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("JointPmf: negative or non-finite mass");
            if ((x | full) != full || (y | full) != full) throw std::invalid_argument("JointPmf: mask outside [n]");
            if ((y & ~x) != 0) throw std::invalid_argument("JointPmf: support violates y <= x");
            total += p;
            if (p > 0.0) atoms_.push_back({x, y, p});
        }
        if (std::abs(total - 1.0) > kLdpTolerance)
            throw std::invalid_argument("JointPmf: probabilities sum to " + std::to_string(total));
    }

    std::size_t n() const noexcept { return n_; }
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    void write_csv(std::ostream& out) const
    {
        out << "x_mask,y_mask,probability\n";
        char buf[64];
        for (const auto& a : atoms_) {
            std::snprintf(buf, sizeof buf, "%.17g", a.p);
            out << a.x << ',' << a.y << ',' << buf << '\n';
        }
    }

    static JointPmf read_csv(std::istream& in, std::size_t n)
    {
        std::map<std::pair<std::uint32_t, std::uint32_t>, double> probs;
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (header) {
                header = false;
                if (line.rfind("x_mask", 0) == 0) continue;
            }
            std::istringstream row(line);
            std::string a, b, c;
            if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
                throw std::invalid_argument("JointPmf::read_csv: malformed row '" + line + "'");
            probs[{static_cast<std::uint32_t>(std::stoul(a)), static_cast<std::uint32_t>(std::stoul(b))}] += std::stod(c);
        }
        return JointPmf(n, probs);
    }

private:
    std::size_t n_ = 0;
    std::vector<Atom> atoms_;
};

struct HypothesisViolation {
    std::size_t j = 0;
    std::uint32_t I = 0;
    double lhs = 0.0; // P[y_j = 1 | y_I = 0]
    double rhs = 0.0; // a P[x_j = 1 | y_I = 0]
};

struct HypothesisReport {
    double a = 0.0;
    std::vector<HypothesisViolation> violations;
    double max_valid_a = 1.0;

    bool holds() const noexcept { return violations.empty(); }
};

namespace detail {

// f(T) <- sum over subsets U of T of f(U)
inline void subset_sums(std::vector<double>& f)
{
    for (std::size_t bit = 1; bit < f.size(); bit <<= 1)
        for (std::size_t m = 0; m < f.size(); ++m)
            if (m & bit) f[m] += f[m ^ bit];
}

} // namespace detail

/// Exhaustive check of P[y_j=1 | y_I=0] >= a P[x_j=1 | y_I=0] over all j and
/// I not containing j. Conditioning events of zero mass are vacuous.
inline HypothesisReport check_hypothesis(const JointPmf& p, double a)
{
    const std::size_t n = p.n();
    if (n == 0) throw std::invalid_argument("check_hypothesis: empty pmf");
    const std::size_t size = std::size_t{1} << n;
    const std::uint32_t full = static_cast<std::uint32_t>(size - 1);

    // Indexed by y mask, then summed over subsets: value at T is the mass of {y subset of T}.
    std::vector<double> mass(size, 0.0);
    std::vector<std::vector<double>> yj(n, std::vector<double>(size, 0.0)), xj = yj;
    for (const auto& at : p.atoms()) {
        mass[at.y] += at.p;
        for (std::size_t j = 0; j < n; ++j) {
            if (at.y >> j & 1) yj[j][at.y] += at.p;
            if (at.x >> j & 1) xj[j][at.y] += at.p;
        }
    }
    detail::subset_sums(mass);
    for (std::size_t j = 0; j < n; ++j) {
        detail::subset_sums(yj[j]);
        detail::subset_sums(xj[j]);
    }

    HypothesisReport rep;
    rep.a = a;
    double best = 1.0;
    for (std::uint32_t I = 0; I <= full; ++I) {
        const std::uint32_t T = full & ~I;
        const double cond = mass[T];
        if (!(cond > kLdpTolerance)) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (I >> j & 1) continue;
            const double py = yj[j][T], px = xj[j][T];
            if (px > kLdpTolerance) best = std::min(best, py / px);
            if (py < a * px - kLdpTolerance) rep.violations.push_back({j, I, py / cond, a * px / cond});
        }
    }
    rep.max_valid_a = std::clamp(best, 0.0, 1.0);
    return rep;
}

struct InequalityCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = true;
    bool vacuous = false;
};

struct TailCheck {
    double t = 0.0;
    double s = 0.0;
    InequalityCheck check;
};

struct ConclusionReport {
    double a = 0.0;
    InequalityCheck y0;
    std::vector<TailCheck> tail;

    bool holds() const
    {
        return y0.holds && std::all_of(tail.begin(), tail.end(), [](const TailCheck& c) { return c.check.holds; });
    }
};

inline const std::vector<double>& default_tail_t() { static const std::vector<double> v{0.0, 0.5, 1.0, 2.0}; return v; }
inline const std::vector<double>& default_tail_s() { static const std::vector<double> v{0.1, 1.0, 10.0}; return v; }

/// Both sides of the conclusions computed exactly from the law of (X, Y).
/// P[Y=0 | X>0] <= a^-1 E[exp(-aX/e) | X>0] and
/// P[Y<=t] <= P[X < (e/a)(t+s)] + (e^{t-1}/s) E[exp(-aX/e)].
inline ConclusionReport check_conclusion(const JointPmf& p, double a, const std::vector<double>& ts = default_tail_t(),
                                         const std::vector<double>& ss = default_tail_s())
{
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("check_conclusion: a must lie in (0, 1]");
    const double e = std::numbers::e;
    const std::size_t n = p.n();
    std::vector<double> law((n + 1) * (n + 1), 0.0); // law[X * (n+1) + Y]
    for (const auto& at : p.atoms())
        law[static_cast<std::size_t>(std::popcount(at.x)) * (n + 1) + static_cast<std::size_t>(std::popcount(at.y))] += at.p;

    ConclusionReport rep;
    rep.a = a;
    double x_pos = 0.0, y0_x_pos = 0.0, exp_pos = 0.0, exp_all = 0.0;
    for (std::size_t X = 0; X <= n; ++X)
        for (std::size_t Y = 0; Y <= n; ++Y) {
            const double q = law[X * (n + 1) + Y];
            const double w = q * std::exp(-a * static_cast<double>(X) / e);
            exp_all += w;
            if (X > 0) {
                x_pos += q;
                exp_pos += w;
                if (Y == 0) y0_x_pos += q;
            }
        }
    if (x_pos > 0.0) {
        rep.y0.lhs = y0_x_pos / x_pos;
        rep.y0.rhs = exp_pos / x_pos / a;
        rep.y0.holds = rep.y0.lhs <= rep.y0.rhs + kLdpTolerance;
    } else {
        rep.y0.vacuous = true;
    }

    for (double t : ts)
        for (double s : ss) {
            if (!(t >= 0.0) || !(s > 0.0)) throw std::invalid_argument("check_conclusion: need t >= 0 and s > 0");
            const double r = (e / a) * (t + s);
            double lhs = 0.0, below = 0.0;
            for (std::size_t X = 0; X <= n; ++X)
                for (std::size_t Y = 0; Y <= n; ++Y) {
                    const double q = law[X * (n + 1) + Y];
                    if (static_cast<double>(Y) <= t) lhs += q;
                    if (static_cast<double>(X) < r) below += q;
                }
            const double rhs = below + std::exp(t - 1.0) / s * exp_all;
            rep.tail.push_back({t, s, {lhs, rhs, lhs <= rhs + kLdpTolerance, false}});
        }
    return rep;
}

enum class InstanceKind { thinning, spectral_derived, adversarial_random };

inline std::string to_string(InstanceKind k)
{
    switch (k) {
    case InstanceKind::thinning: return "thinning";
    case InstanceKind::spectral_derived: return "spectral-derived";
    case InstanceKind::adversarial_random: return "adversarial-random";
    }
    return "?";
}

inline InstanceKind parse_instance_kind(const std::string& s)
{
    if (s == "thinning") return InstanceKind::thinning;
    if (s == "spectral-derived" || s == "spectral") return InstanceKind::spectral_derived;
    if (s == "adversarial-random" || s == "adversarial") return InstanceKind::adversarial_random;
    throw std::invalid_argument("unknown instance kind '" + s + "'");
}

struct GeneratedInstance {
    InstanceKind kind = InstanceKind::thinning;
    JointPmf pmf;
    double a = 0.0; // constant the instance is meant to be checked at
};

namespace detail {

using PmfMap = std::map<std::pair<std::uint32_t, std::uint32_t>, double>;

inline PmfMap normalized(PmfMap m)
{
    double total = 0.0;
    for (const auto& kv : m) total += kv.second;
    for (auto& kv : m) kv.second /= total;
    return m;
}

// Random law for x: a random support with exponential weights.
inline std::map<std::uint32_t, double> random_x_law(std::size_t n, Rng& rng)
{
    const std::uint32_t size = std::uint32_t{1} << n;
    std::uniform_int_distribution<std::uint32_t> mask(0, size - 1);
    std::exponential_distribution<double> w(1.0);
    const std::uint32_t support = 1 + static_cast<std::uint32_t>(rng() % std::min<std::uint32_t>(size, 24));
    std::map<std::uint32_t, double> law;
    for (std::uint32_t k = 0; k < support; ++k) law[mask(rng)] += w(rng);
    return law;
}

// Each y_i = x_i independently with probability a.
inline void add_thinned(PmfMap& out, std::uint32_t x, double px, double a)
{
    for (std::uint32_t y = x;; y = (y - 1) & x) {
        const int kept = std::popcount(y), dropped = std::popcount(x) - kept;
        out[{x, y}] += px * std::pow(a, kept) * std::pow(1.0 - a, dropped);
        if (y == 0) break;
    }
}

} // namespace detail

inline GeneratedInstance thinning_instance(std::size_t n, double a, std::uint64_t seed)
{
    if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("thinning_instance: a must lie in (0, 1]");
    Rng rng(derive_seed(seed, 0x7417));
    detail::PmfMap m;
    for (const auto& [x, w] : detail::random_x_law(n, rng)) detail::add_thinned(m, x, w, a);
    return {InstanceKind::thinning, JointPmf(n, detail::normalized(std::move(m))), a};
}

/// x_j = [S meets cell j], y_j = [S meets cell j inside Z], with S the spectral
/// sample and Z an independent density-p subset of the bits.
inline GeneratedInstance spectral_instance(const SpectralDistribution& d, const CoarseGrid& grid, double density)
{
    if (grid.bit_count() != d.n) throw std::invalid_argument("spectral_instance: grid/region mismatch");
    const std::size_t n = grid.cell_count();
    if (n == 0 || n > kLdpMaxCoordinates) throw std::invalid_argument("spectral_instance: need 1..12 coarse cells");
    if (!(density > 0.0 && density <= 1.0)) throw std::invalid_argument("spectral_instance: density must lie in (0, 1]");
    if (!(d.norm_sq > 0.0)) throw std::invalid_argument("spectral_instance: zero function");

    std::vector<std::uint64_t> cells(n);
    for (std::size_t c = 0; c < n; ++c) cells[c] = grid.cell_mask(c);
    detail::PmfMap m;
    std::vector<double> miss(n);
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        const double pS = d.probability(S);
        if (pS == 0.0) continue;
        std::uint32_t x = 0;
        for (std::size_t c = 0; c < n; ++c) {
            const int k = std::popcount(S & cells[c]);
            if (k > 0) x |= std::uint32_t{1} << c;
            miss[c] = std::pow(1.0 - density, k);
        }
        for (std::uint32_t y = x;; y = (y - 1) & x) {
            double q = pS;
            for (std::size_t c = 0; c < n; ++c)
                if (x >> c & 1) q *= (y >> c & 1) ? 1.0 - miss[c] : miss[c];
            m[{x, y}] += q;
            if (y == 0) break;
        }
    }
    return {InstanceKind::spectral_derived, JointPmf(n, detail::normalized(std::move(m))), density};
}

/// Arbitrary laws on {y <= x}, half of them perturbations of a thinning law.
/// The instance is checked at its own largest valid constant.
inline GeneratedInstance adversarial_instance(std::size_t n, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0xad5));
    std::exponential_distribution<double> w(1.0);
    detail::PmfMap m;
    if (fair_coin(rng)) {
        const double a = 0.05 + 0.95 * uniform01(rng);
        for (const auto& [x, px] : detail::random_x_law(n, rng)) detail::add_thinned(m, x, px, a);
        const double eps = 0.2 * uniform01(rng);
        const std::size_t extra = 1 + rng() % 4;
        for (std::size_t k = 0; k < extra; ++k) {
            const auto x = static_cast<std::uint32_t>(rng() % (std::uint64_t{1} << n));
            const auto y = static_cast<std::uint32_t>(rng()) & x;
            m[{x, y}] += eps * w(rng);
        }
    } else {
        const std::size_t support = 1 + rng() % (3 * n);
        for (std::size_t k = 0; k < support; ++k) {
            const auto x = static_cast<std::uint32_t>(rng() % (std::uint64_t{1} << n));
            const auto y = static_cast<std::uint32_t>(rng()) & x;
            m[{x, y}] += w(rng);
        }
    }
    JointPmf p(n, detail::normalized(std::move(m)));
    const double a = check_hypothesis(p, 1.0).max_valid_a;
    return {InstanceKind::adversarial_random, std::move(p), a};
}

/// Seeded generator. The spectral kind uses the crossing function of a 3x3
/// triangular rectangle with a coarse grid having exactly n cells.
inline GeneratedInstance generate_instance(InstanceKind kind, std::size_t n, std::uint64_t seed)
{
    if (n == 0 || n > kLdpMaxCoordinates) throw std::invalid_argument("generate_instance: n must be in [1, 12]");
    Rng rng(derive_seed(seed, 0x9e7));
    switch (kind) {
    case InstanceKind::thinning: return thinning_instance(n, 0.05 + 0.95 * uniform01(rng), seed);
    case InstanceKind::adversarial_random: return adversarial_instance(n, seed);
    case InstanceKind::spectral_derived: {
        const CrossingFunction f(Quad::rectangle(LatticeKind::triangular_site, 3, 3));
        const auto d = walsh_transform(tabulate(f));
        for (double r : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0}) {
            const CoarseGrid grid(f.region(), r);
            if (grid.cell_count() == n) return spectral_instance(d, grid, 0.1 + 0.8 * uniform01(rng));
        }
        throw std::invalid_argument("generate_instance: no coarse grid of the 3x3 quad has " + std::to_string(n) + " cells");
    }
    }
    throw std::invalid_argument("generate_instance: bad kind");
}

} // namespace spectral_perc
