#pragma once

// Exact Fourier-Walsh analysis of Boolean functions small enough to
// tabulate: truth tables, the Walsh transform, the spectral sample law and
// its statistics.
//
// Masks encode configurations and subsets alike: bit i of a configuration
// mask set means omega_i = +1, bit i of a subset mask set means i is in S.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bitmask.hpp"
#include "lattice.hpp"
#include "random.hpp"

namespace spectral_perc {

inline constexpr std::size_t kDefaultBitCap = 24;

struct TruthTable {
    std::size_t n = 0;
    std::vector<double> values; // indexed by configuration mask

    TruthTable() = default;
    TruthTable(std::size_t bits, std::vector<double> v) : n(bits), values(std::move(v))
    {
        if (bits >= 63 || values.size() != (std::size_t{1} << bits))
            throw std::invalid_argument("TruthTable: length must be 2^n");
        for (double x : values)
            if (!std::isfinite(x)) throw std::invalid_argument("TruthTable: non-finite value");
    }

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::uint64_t mask) const { return values[mask]; }

    bool is_monotone() const
    {
        for (std::uint64_t m = 0; m < values.size(); ++m)
            for (std::size_t i = 0; i < n; ++i)
                if (!((m >> i) & 1U) && values[m | (std::uint64_t{1} << i)] < values[m]) return false;
        return true;
    }

    bool is_boolean() const
    {
        return std::all_of(values.begin(), values.end(), [](double v) { return v == 1.0 || v == -1.0; });
    }
};

/// +-1 vector of a configuration mask.
inline void mask_to_bits(std::uint64_t mask, std::span<std::int8_t> bits)
{
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (mask >> i) & 1U ? 1 : -1;
}

inline std::uint64_t bits_to_mask(std::span<const std::int8_t> bits)
{
    std::uint64_t m = 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] > 0) m |= std::uint64_t{1} << i;
    return m;
}

/// Truth table of any function of a +-1 vector; refuses more than `cap` bits.
template <BooleanFunction F>
TruthTable tabulate(const F& f, std::size_t cap = kDefaultBitCap)
{
    const std::size_t n = f.bit_count();
    if (n > cap || n >= 63)
        throw std::length_error("tabulate: " + std::to_string(n) + " bits exceeds the cap of " +
                                std::to_string(cap));
    std::vector<double> v(std::size_t{1} << n);
    std::vector<std::int8_t> bits(n);
    for (std::uint64_t m = 0; m < v.size(); ++m) {
        mask_to_bits(m, bits);
        v[m] = static_cast<double>(f(std::span<const std::int8_t>(bits)));
    }
    return TruthTable(n, std::move(v));
}

/// A tabulated function usable wherever a BooleanFunction is expected.
class TableFunction {
public:
    explicit TableFunction(TruthTable t) : t_(std::move(t)), monotone_(t_.is_monotone()) {}

    int operator()(std::span<const std::int8_t> bits) const
    {
        if (bits.size() != t_.n) throw std::invalid_argument("TableFunction: wrong number of bits");
        return static_cast<int>(t_[bits_to_mask(bits)]);
    }
    bool is_monotone() const noexcept { return monotone_; }
    std::size_t bit_count() const noexcept { return t_.n; }
    const TruthTable& table() const noexcept { return t_; }

private:
    TruthTable t_;
    bool monotone_;
};

/// Unnormalized in-place Walsh-Hadamard butterfly:
/// out[S] = sum_m (-1)^{|S & m|} in[m]. Applying it twice multiplies by 2^n.
inline void fwht(std::span<double> a)
{
    const std::size_t len = a.size();
    if (len & (len - 1)) throw std::invalid_argument("fwht: length must be a power of two");
    for (std::size_t h = 1; h < len; h <<= 1)
        for (std::size_t i = 0; i < len; i += h << 1)
            for (std::size_t j = i; j < i + h; ++j) {
                const double x = a[j], y = a[j + h];
                a[j] = x + y;
                a[j + h] = x - y;
            }
}

enum class SpectralWeight { normalized, unnormalized };

/// Fourier coefficients of f, indexed by subset mask.
struct SpectralDistribution {
    std::size_t n = 0;
    std::vector<double> coeffs;
    double norm_sq = 0.0;

    double weight(std::uint64_t S) const { return coeffs[S] * coeffs[S]; }
    double probability(std::uint64_t S) const { return norm_sq > 0 ? weight(S) / norm_sq : 0.0; }
};

inline SpectralDistribution walsh_transform(const TruthTable& t)
{
    SpectralDistribution d;
    d.n = t.n;
    d.coeffs = t.values;
    fwht(d.coeffs);
    // chi_S(omega) = (-1)^{|S|} (-1)^{|S & m|} with omega_i = +1 iff m_i = 1
    const double scale = std::ldexp(1.0, -static_cast<int>(t.n));
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        d.coeffs[S] *= scale;
        if (std::popcount(S) & 1) d.coeffs[S] = -d.coeffs[S];
    }
    for (double c : d.coeffs) d.norm_sq += c * c;
    return d;
}

/// Sum of f^(S)^2 over subsets satisfying `pred`, divided by the norm in
/// normalized mode.
template <class Pred>
double spectral_probability(const SpectralDistribution& d, Pred&& pred,
                            SpectralWeight mode = SpectralWeight::normalized)
{
    double s = 0.0;
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S)
        if (pred(S)) s += d.weight(S);
    if (mode == SpectralWeight::unnormalized) return s;
    return d.norm_sq > 0 ? s / d.norm_sq : 0.0;
}

/// Q[S subset of A] for the mask A (unnormalized).
inline double spectral_subset_weight(const SpectralDistribution& d, std::uint64_t A)
{
    return spectral_probability(d, [A](std::uint64_t S) { return (S & ~A) == 0; }, SpectralWeight::unnormalized);
}

/// Q[S meets B, S misses W] (unnormalized).
inline double spectral_hits_avoids_weight(const SpectralDistribution& d, std::uint64_t B, std::uint64_t W)
{
    return spectral_probability(
        d, [B, W](std::uint64_t S) { return (S & B) != 0 && (S & W) == 0; }, SpectralWeight::unnormalized);
}

struct SpectralMoments {
    double mean = 0.0;   // E|S|
    double second = 0.0; // E|S|^2
};

inline SpectralMoments spectral_moments(const SpectralDistribution& d)
{
    SpectralMoments m;
    if (d.norm_sq <= 0) return m;
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        const double k = std::popcount(S);
        const double w = d.weight(S);
        m.mean += k * w;
        m.second += k * k * w;
    }
    m.mean /= d.norm_sq;
    m.second /= d.norm_sq;
    return m;
}

/// P[|S| = k] for k = 0..n.
inline std::vector<double> size_distribution(const SpectralDistribution& d)
{
    std::vector<double> p(d.n + 1, 0.0);
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) p[static_cast<std::size_t>(std::popcount(S))] += d.weight(S);
    if (d.norm_sq > 0)
        for (auto& x : p) x /= d.norm_sq;
    return p;
}

/// Laplace transform E[(1-eps)^{|S|}] times ||f||^2, i.e. E[f(x) f(y)] for an
/// eps-noised copy y of x.
inline double noise_stability(const SpectralDistribution& d, double eps)
{
    double s = 0.0;
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S)
        s += std::pow(1.0 - eps, std::popcount(S)) * d.weight(S);
    return s;
}

/// E[f(x) f(y)] by summing over all pairs (x, y), each bit of y resampled
/// with probability eps. Quadratic in the table size.
inline double noise_pairing_enumerated(const TruthTable& t, double eps)
{
    if (t.n > 14) throw std::length_error("noise_pairing_enumerated: at most 14 bits");
    const double same = 1.0 - eps / 2.0, diff = eps / 2.0;
    std::vector<double> pw_same(t.n + 1), pw_diff(t.n + 1);
    for (std::size_t k = 0; k <= t.n; ++k) {
        pw_same[k] = std::pow(same, static_cast<double>(k));
        pw_diff[k] = std::pow(diff, static_cast<double>(k));
    }
    double s = 0.0;
    for (std::uint64_t x = 0; x < t.size(); ++x)
        for (std::uint64_t y = 0; y < t.size(); ++y) {
            const auto k = static_cast<std::size_t>(std::popcount(x ^ y));
            s += t[x] * t[y] * pw_diff[k] * pw_same[t.n - k];
        }
    return s / static_cast<double>(t.size());
}

/// A subset drawn from the spectral law.
struct SpectralDraw {
    std::uint64_t mask = 0;
    std::size_t n = 0;
    SpectralWeight weight_mode = SpectralWeight::normalized;

    BitMask subset() const { return BitMask::from_u64(n, mask); }
    std::size_t size() const noexcept { return static_cast<std::size_t>(std::popcount(mask)); }
};

/// Inverse-CDF sampler over the 2^n spectral weights.
class SpectralSampler {
public:
    explicit SpectralSampler(const SpectralDistribution& d) : n_(d.n), cdf_(d.coeffs.size())
    {
        if (!(d.norm_sq > 0)) throw std::invalid_argument("SpectralSampler: f is identically zero");
        double acc = 0.0;
        for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
            acc += d.weight(S);
            cdf_[S] = acc;
        }
        total_ = acc;
    }

    SpectralDraw operator()(Rng& rng) const
    {
        const double u = uniform01(rng) * total_;
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        if (it == cdf_.end()) --it;
        const auto S = static_cast<std::uint64_t>(it - cdf_.begin());
        return SpectralDraw{S, n_, SpectralWeight::normalized};
    }

    std::size_t bit_count() const noexcept { return n_; }

private:
    std::size_t n_;
    std::vector<double> cdf_;
    double total_ = 0.0;
};

inline SpectralDraw sample_spectral(const SpectralDistribution& d, std::uint64_t seed)
{
    Rng rng(seed);
    return SpectralSampler(d)(rng);
}

/// g_y(x) = f(omega(x, y)) on the bits of A, where y fixes the other bits.
/// Bit k of the result's mask is the k-th smallest element of A.
inline TruthTable restrict_and_project(const TruthTable& t, std::uint64_t A, std::uint64_t y)
{
    const std::uint64_t full = t.n == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << t.n) - 1;
    if ((A & ~full) || (y & ~full)) throw std::invalid_argument("restrict_and_project: mask outside the bits");
    if (y & A) throw std::invalid_argument("restrict_and_project: outside assignment overlaps A");
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < t.n; ++i)
        if ((A >> i) & 1U) pos.push_back(i);
    std::vector<double> v(std::size_t{1} << pos.size());
    for (std::uint64_t x = 0; x < v.size(); ++x) {
        std::uint64_t m = y;
        for (std::size_t k = 0; k < pos.size(); ++k)
            if ((x >> k) & 1U) m |= std::uint64_t{1} << pos[k];
        v[x] = t[m];
    }
    return TruthTable(pos.size(), std::move(v));
}

/// Pivotal set statistics under the uniform measure, by enumeration.
struct PivotalProfile {
    double mean = 0.0;                       // E|P|
    double second = 0.0;                     // E|P|^2
    std::vector<double> per_bit;             // P[i in P]
    std::vector<std::vector<double>> pairs;  // P[{i, j} subset of P]
};

inline PivotalProfile pivotal_profile(const TruthTable& t, bool with_pairs = true)
{
    PivotalProfile p;
    p.per_bit.assign(t.n, 0.0);
    if (with_pairs) p.pairs.assign(t.n, std::vector<double>(t.n, 0.0));
    std::vector<std::size_t> piv;
    for (std::uint64_t m = 0; m < t.size(); ++m) {
        piv.clear();
        for (std::size_t i = 0; i < t.n; ++i)
            if (t[m] != t[m ^ (std::uint64_t{1} << i)]) piv.push_back(i);
        const double k = static_cast<double>(piv.size());
        p.mean += k;
        p.second += k * k;
        for (auto i : piv) p.per_bit[i] += 1.0;
        if (with_pairs)
            for (auto i : piv)
                for (auto j : piv) p.pairs[i][j] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(t.size());
    p.mean *= inv;
    p.second *= inv;
    for (auto& x : p.per_bit) x *= inv;
    for (auto& row : p.pairs)
        for (auto& x : row) x *= inv;
    return p;
}

/// Superset sums: out[T] = sum over S containing T of in[S].
inline std::vector<double> superset_sums(std::vector<double> a)
{
    const std::size_t len = a.size();
    for (std::size_t h = 1; h < len; h <<= 1)
        for (std::size_t m = 0; m < len; ++m)
            if (!(m & h)) a[m] += a[m | h];
    return a;
}

/// P[T subset of S] for every T (normalized).
inline std::vector<double> spectral_containment(const SpectralDistribution& d)
{
    std::vector<double> w(d.coeffs.size());
    for (std::uint64_t S = 0; S < w.size(); ++S) w[S] = d.probability(S);
    return superset_sums(std::move(w));
}

/// Entropy of the normalized spectral law in nats.
inline double spectral_entropy(const SpectralDistribution& d)
{
    double h = 0.0;
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        const double p = d.probability(S);
        if (p > 0) h -= p * std::log(p);
    }
    return h;
}

/// Partition of a region's bits into r x r cells of the grid r Z^2.
class CoarseGrid {
public:
    CoarseGrid(const LatticeRegion& region, double r) : r_(r)
    {
        if (!(r > 0)) throw std::invalid_argument("CoarseGrid: cell size must be positive");
        std::map<std::pair<long, long>, std::size_t> ids;
        cell_.resize(region.bit_count());
        centers_.resize(region.bit_count());
        for (std::size_t b = 0; b < region.bit_count(); ++b) {
            const Point c = region.bit_center(b);
            centers_[b] = c;
            const std::pair<long, long> key{static_cast<long>(std::floor(c.x / r)),
                                            static_cast<long>(std::floor(c.y / r))};
            auto [it, fresh] = ids.emplace(key, ids.size());
            cell_[b] = it->second;
            (void)fresh;
        }
        cells_ = ids.size();
        members_.assign(cells_, {});
        for (std::size_t b = 0; b < cell_.size(); ++b) members_[cell_[b]].push_back(b);
    }

    double cell_size() const noexcept { return r_; }
    std::size_t cell_count() const noexcept { return cells_; }
    std::size_t bit_count() const noexcept { return cell_.size(); }
    std::size_t cell_of(std::size_t bit) const { return cell_.at(bit); }
    const std::vector<std::size_t>& members(std::size_t cell) const { return members_.at(cell); }
    Point center(std::size_t bit) const { return centers_.at(bit); }

    /// Bit mask of a cell (for regions of at most 64 bits).
    std::uint64_t cell_mask(std::size_t cell) const
    {
        std::uint64_t m = 0;
        for (auto b : members(cell)) {
            if (b >= 64) throw std::length_error("CoarseGrid::cell_mask: more than 64 bits");
            m |= std::uint64_t{1} << b;
        }
        return m;
    }

private:
    double r_;
    std::size_t cells_ = 0;
    std::vector<std::size_t> cell_;
    std::vector<Point> centers_;
    std::vector<std::vector<std::size_t>> members_;
};

struct CoarseStats {
    std::size_t coarse_count = 0;        // |S_r|
    double diameter = 0.0;               // Euclidean diameter of the tile centers
    std::vector<std::size_t> occupancy;  // bits of S per cell
};

inline CoarseStats coarse_statistics(const BitMask& S, const CoarseGrid& grid)
{
    if (S.size() != grid.bit_count()) throw std::invalid_argument("coarse_statistics: universe mismatch");
    CoarseStats st;
    st.occupancy.assign(grid.cell_count(), 0);
    const auto ids = S.ids();
    for (auto b : ids) ++st.occupancy[grid.cell_of(b)];
    st.coarse_count = static_cast<std::size_t>(
        std::count_if(st.occupancy.begin(), st.occupancy.end(), [](std::size_t c) { return c > 0; }));
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            const Point p = grid.center(ids[i]), q = grid.center(ids[j]);
            st.diameter = std::max(st.diameter, std::hypot(p.x - q.x, p.y - q.y));
        }
    return st;
}

inline CoarseStats coarse_statistics(const SpectralDraw& s, const CoarseGrid& grid)
{
    return coarse_statistics(s.subset(), grid);
}

/// Exact law of |S_r|: entry k is P[|S_r| = k].
inline std::vector<double> coarse_count_distribution(const SpectralDistribution& d, const CoarseGrid& grid)
{
    if (grid.bit_count() != d.n) throw std::invalid_argument("coarse_count_distribution: grid/region mismatch");
    std::vector<std::uint64_t> masks(grid.cell_count());
    for (std::size_t c = 0; c < grid.cell_count(); ++c) masks[c] = grid.cell_mask(c);
    std::vector<double> p(grid.cell_count() + 1, 0.0);
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        const double w = d.weight(S);
        if (w == 0.0) continue;
        std::size_t k = 0;
        for (auto m : masks) k += (S & m) != 0;
        p[k] += w;
    }
    if (d.norm_sq > 0)
        for (auto& x : p) x /= d.norm_sq;
    return p;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr char kSpectrumMagic[8] = {'S', 'P', 'E', 'C', 'T', 'R', 'M', '1'};

/// Binary layout: 8-byte magic, uint64 n, f64 norm_sq, then 2^n f64
/// coefficients in mask order (host byte order).
inline void write_spectrum_binary(const SpectralDistribution& d, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_spectrum_binary: cannot open " + path);
    const std::uint64_t n = d.n;
    out.write(kSpectrumMagic, sizeof kSpectrumMagic);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&d.norm_sq), sizeof d.norm_sq);
    out.write(reinterpret_cast<const char*>(d.coeffs.data()),
              static_cast<std::streamsize>(d.coeffs.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write_spectrum_binary: write failed for " + path);
}

inline SpectralDistribution read_spectrum_binary(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_spectrum_binary: cannot open " + path);
    char magic[8];
    std::uint64_t n = 0;
    SpectralDistribution d;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&d.norm_sq), sizeof d.norm_sq);
    if (!in || std::memcmp(magic, kSpectrumMagic, sizeof magic) != 0 || n > 40)
        throw std::runtime_error("read_spectrum_binary: bad header in " + path);
    d.n = n;
    d.coeffs.resize(std::size_t{1} << n);
    in.read(reinterpret_cast<char*>(d.coeffs.data()), static_cast<std::streamsize>(d.coeffs.size() * sizeof(double)));
    if (!in) throw std::runtime_error("read_spectrum_binary: truncated file " + path);
    return d;
}

/// CSV rows `mask,coefficient` with a header; at most 2^20 rows.
inline void write_spectrum_csv(const SpectralDistribution& d, std::ostream& out, bool skip_zero = false)
{
    if (d.coeffs.size() > (std::size_t{1} << 20))
        throw std::length_error("write_spectrum_csv: more than 2^20 entries");
    out << "mask,coefficient\n" << std::setprecision(17);
    for (std::uint64_t S = 0; S < d.coeffs.size(); ++S) {
        if (skip_zero && d.coeffs[S] == 0.0) continue;
        out << S << ',' << d.coeffs[S] << '\n';
    }
}

struct IdentityCheck {
    std::string name;
    double max_error = 0.0; // relative
    double tolerance = 0.0;
    bool passed() const noexcept { return max_error <= tolerance; }
};

struct IdentityReport {
    std::vector<IdentityCheck> checks;
    bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const IdentityCheck& c) { return c.passed(); });
    }
};

namespace detail {

inline double rel_error(double a, double b)
{
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale > 0 ? std::abs(a - b) / scale : 0.0;
}

} // namespace detail

/// Exact identities between the spectral sample and the pivotal set:
/// Parseval, E|S| = E|P|, E|S|^2 = E|P|^2, P[i in S] = P[i in P],
/// P[S = {i}] = P[i in S]^2 (monotone f only) and, for `lmn_sets` random A,
/// the law of S n A against the restricted spectra E_y[g_y^2].
inline IdentityReport identity_suite(const TruthTable& t, std::uint64_t seed, int lmn_sets = 20, double tol = 1e-10)
{
    if (!t.is_boolean()) throw std::invalid_argument("identity_suite: function is not +-1 valued");
    const auto d = walsh_transform(t);
    const auto piv = pivotal_profile(t, false);
    const auto mom = spectral_moments(d);
    const auto contain = spectral_containment(d);
    IdentityReport rep;

    rep.checks.push_back({"parseval", detail::rel_error(d.norm_sq, 1.0), tol});
    rep.checks.push_back({"first moment", detail::rel_error(mom.mean, piv.mean), tol});
    rep.checks.push_back({"second moment", detail::rel_error(mom.second, piv.second), tol});
    IdentityCheck per_bit{"per-bit containment", 0.0, tol}, single{"singleton", 0.0, tol};
    for (std::size_t i = 0; i < t.n; ++i) {
        const std::uint64_t xi = std::uint64_t{1} << i;
        per_bit.max_error = std::max(per_bit.max_error, detail::rel_error(contain[xi], piv.per_bit[i]));
        single.max_error = std::max(single.max_error, detail::rel_error(d.probability(xi), contain[xi] * contain[xi]));
    }
    rep.checks.push_back(per_bit);
    if (t.is_monotone()) rep.checks.push_back(single);

    IdentityCheck lmn{"restriction law", 0.0, tol};
    Rng rng(derive_seed(seed, 0x1d));
    const std::uint64_t full = t.n == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << t.n) - 1;
    for (int rep_i = 0; rep_i < lmn_sets; ++rep_i) {
        const std::uint64_t A = rng() & full, out = full & ~A;
        const auto k = static_cast<std::size_t>(std::popcount(A));
        std::vector<double> lhs(std::size_t{1} << k, 0.0), rhs(lhs.size(), 0.0);
        for (std::uint64_t y = out;; y = (y - 1) & out) {
            const auto g = walsh_transform(restrict_and_project(t, A, y));
            for (std::size_t s = 0; s < lhs.size(); ++s) lhs[s] += g.weight(s);
            if (y == 0) break;
        }
        const double norm = std::ldexp(1.0, -std::popcount(out));
        for (std::uint64_t S = 0; S <= full; ++S) {
            std::uint64_t c = 0;
            std::size_t pos = 0;
            for (std::size_t i = 0; i < t.n; ++i)
                if ((A >> i) & 1U) c |= ((S >> i) & 1U) << pos++;
            rhs[c] += d.weight(S);
        }
        for (std::size_t s = 0; s < lhs.size(); ++s)
            lmn.max_error = std::max(lmn.max_error, detail::rel_error(lhs[s] * norm, rhs[s]));
    }
    if (lmn_sets > 0) rep.checks.push_back(lmn);
    return rep;
}

} // namespace spectral_perc
