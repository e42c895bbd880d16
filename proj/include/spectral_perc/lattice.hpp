#pragma once

// Finite planar lattice regions, percolation configurations, quads and
// crossing events for site percolation on the triangular lattice and bond
// percolation on Z^2.
//
// Both lattices are handled through their tile decomposition. Triangular
// sites are hexagonal tiles with six neighbours. For Z^2 bonds the plane is
// tiled by half-unit squares on the grid (a/2, b/2): a and b even is a
// vertex tile (always white), both odd is a face tile (always black), and
// mixed parity is an edge tile whose colour is the bit of that edge. Tiles
// of either kind connect through shared sides, so white connectivity is
// primal bond connectivity and black connectivity is dual connectivity.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bitmask.hpp"
#include "random.hpp"

namespace spectral_perc {

enum class LatticeKind { triangular_site, square_bond };

inline std::string to_string(LatticeKind k)
{
    return k == LatticeKind::triangular_site ? "tri" : "z2";
}

inline LatticeKind parse_lattice(const std::string& s)
{
    if (s == "tri" || s == "triangular" || s == "triangular-site") return LatticeKind::triangular_site;
    if (s == "z2" || s == "square" || s == "square-bond") return LatticeKind::square_bond;
    throw std::invalid_argument("unknown lattice '" + s + "' (expected tri or z2)");
}

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline constexpr double kRowHeight = 0.86602540378443864676; // sqrt(3)/2

enum class TileColor : std::uint8_t { bit, white, black };

struct Tile {
    int a = 0; // lattice coordinates: axial (i, j) or half-grid (a, b)
    int b = 0;
    Point center;
    std::int32_t bit = -1;
    TileColor fixed = TileColor::bit;
};

namespace detail {

inline std::uint64_t coord_key(int a, int b)
{
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

inline Point tile_center(LatticeKind kind, int a, int b)
{
    if (kind == LatticeKind::triangular_site) return {a + 0.5 * b, kRowHeight * b};
    return {0.5 * a, 0.5 * b};
}

inline TileColor square_tile_color(int a, int b)
{
    const bool ea = (a & 1) == 0;
    const bool eb = (b & 1) == 0;
    if (ea && eb) return TileColor::white;
    if (!ea && !eb) return TileColor::black;
    return TileColor::bit;
}

inline std::span<const std::pair<int, int>> neighbour_offsets(LatticeKind kind)
{
    static constexpr std::pair<int, int> tri[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, -1}, {-1, 1}};
    static constexpr std::pair<int, int> sq[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    if (kind == LatticeKind::triangular_site) return tri;
    return sq;
}

} // namespace detail

/// A finite set of tiles with a canonical bit numbering.
///
/// Bits are numbered row-major over sites (triangular) or over edges with
/// all horizontal edges first, then vertical edges, each row-major (Z^2).
class LatticeRegion {
public:
    /// Builds the region made of every tile whose lattice coordinates lie in
    /// [amin, amax] x [bmin, bmax] and satisfy `keep(a, b, center)`.
    template <class Keep>
    static std::shared_ptr<const LatticeRegion> build(LatticeKind kind, int width, int height,
                                                      int amin, int amax, int bmin, int bmax,
                                                      Keep&& keep)
    {
        auto r = std::shared_ptr<LatticeRegion>(new LatticeRegion());
        r->kind_ = kind;
        r->width_ = width;
        r->height_ = height;
        for (int b = bmin; b <= bmax; ++b) {
            for (int a = amin; a <= amax; ++a) {
                const Point c = detail::tile_center(kind, a, b);
                if (!keep(a, b, c)) continue;
                Tile t;
                t.a = a;
                t.b = b;
                t.center = c;
                t.fixed = kind == LatticeKind::triangular_site ? TileColor::bit
                                                               : detail::square_tile_color(a, b);
                r->tiles_.push_back(t);
            }
        }
        r->finish();
        return r;
    }

    LatticeKind kind() const noexcept { return kind_; }
    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    std::size_t bit_count() const noexcept { return bit_tile_.size(); }
    std::size_t tile_count() const noexcept { return tiles_.size(); }

    const Tile& tile(std::size_t t) const { return tiles_[t]; }
    std::span<const Tile> tiles() const noexcept { return tiles_; }

    std::size_t tile_of_bit(std::size_t bit) const { return bit_tile_.at(bit); }
    Point bit_center(std::size_t bit) const { return tiles_[tile_of_bit(bit)].center; }

    std::span<const std::int32_t> neighbours(std::size_t t) const
    {
        return {adj_.data() + adj_start_[t], adj_.data() + adj_start_[t + 1]};
    }

    /// Tile index at lattice coordinates (a, b), or -1 if not in the region.
    std::int64_t find_tile(int a, int b) const
    {
        auto it = index_.find(detail::coord_key(a, b));
        return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
    }

    /// Bounding box of tile centers: {xmin, ymin} and {xmax, ymax}.
    Point lower() const noexcept { return lo_; }
    Point upper() const noexcept { return hi_; }

    /// Bits whose tile center lies in z + [-r, r)^2.
    BitMask box_bits(Point z, double r) const
    {
        BitMask m(bit_count());
        for (std::size_t b = 0; b < bit_count(); ++b) {
            const Point c = bit_center(b);
            if (c.x >= z.x - r && c.x < z.x + r && c.y >= z.y - r && c.y < z.y + r) m.set(b);
        }
        return m;
    }

    /// Same lattice and the same tiles in the same order.
    bool same_shape(const LatticeRegion& o) const noexcept
    {
        if (this == &o) return true;
        if (kind_ != o.kind_ || tiles_.size() != o.tiles_.size() || bit_tile_ != o.bit_tile_) return false;
        for (std::size_t t = 0; t < tiles_.size(); ++t)
            if (tiles_[t].a != o.tiles_[t].a || tiles_[t].b != o.tiles_[t].b) return false;
        return true;
    }

    /// For each bit of `sub`, the matching bit id in this region, or -1.
    std::vector<std::int64_t> bit_map_to(const LatticeRegion& sub) const
    {
        if (sub.kind_ != kind_) throw std::invalid_argument("bit_map_to: lattice kind mismatch");
        std::vector<std::int64_t> map(sub.bit_count(), -1);
        for (std::size_t b = 0; b < sub.bit_count(); ++b) {
            const Tile& t = sub.tile(sub.tile_of_bit(b));
            const auto here = find_tile(t.a, t.b);
            if (here >= 0) map[b] = tiles_[static_cast<std::size_t>(here)].bit;
        }
        return map;
    }

private:
    LatticeRegion() = default;

    void finish()
    {
        // Canonical bit order.
        std::vector<std::size_t> order;
        for (std::size_t t = 0; t < tiles_.size(); ++t)
            if (tiles_[t].fixed == TileColor::bit) order.push_back(t);
        auto group = [&](const Tile& t) {
            if (kind_ == LatticeKind::triangular_site) return 0;
            return (t.a & 1) ? 0 : 1; // horizontal edges have odd a
        };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
            const Tile& x = tiles_[l];
            const Tile& y = tiles_[r];
            if (group(x) != group(y)) return group(x) < group(y);
            if (x.b != y.b) return x.b < y.b;
            return x.a < y.a;
        });
        bit_tile_.resize(order.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            tiles_[order[k]].bit = static_cast<std::int32_t>(k);
            bit_tile_[k] = static_cast<std::int32_t>(order[k]);
        }

        index_.reserve(tiles_.size());
        for (std::size_t t = 0; t < tiles_.size(); ++t)
            index_.emplace(detail::coord_key(tiles_[t].a, tiles_[t].b), static_cast<std::int32_t>(t));

        adj_start_.assign(tiles_.size() + 1, 0);
        for (std::size_t t = 0; t < tiles_.size(); ++t) {
            for (auto [da, db] : detail::neighbour_offsets(kind_)) {
                auto it = index_.find(detail::coord_key(tiles_[t].a + da, tiles_[t].b + db));
                if (it != index_.end()) adj_.push_back(it->second);
            }
            adj_start_[t + 1] = static_cast<std::int32_t>(adj_.size());
        }

        if (!tiles_.empty()) {
            lo_ = hi_ = tiles_.front().center;
            for (const auto& t : tiles_) {
                lo_.x = std::min(lo_.x, t.center.x);
                lo_.y = std::min(lo_.y, t.center.y);
                hi_.x = std::max(hi_.x, t.center.x);
                hi_.y = std::max(hi_.y, t.center.y);
            }
        }
    }

    LatticeKind kind_ = LatticeKind::triangular_site;
    int width_ = 0;
    int height_ = 0;
    std::vector<Tile> tiles_;
    std::vector<std::int32_t> bit_tile_;
    std::vector<std::int32_t> adj_start_;
    std::vector<std::int32_t> adj_;
    std::unordered_map<std::uint64_t, std::int32_t> index_;
    Point lo_, hi_;
};

using RegionPtr = std::shared_ptr<const LatticeRegion>;

/// Anything that can report the colour of a bit.
template <class S>
concept BitSource = requires(const S& s, std::size_t b) {
    { s.is_white(b) } -> std::convertible_to<bool>;
};

/// Dense +-1 view over a bit vector.
struct DenseBits {
    std::span<const std::int8_t> values;
    bool is_white(std::size_t b) const noexcept { return values[b] > 0; }
};

/// Bits packed 64 per word; bit set means white.
struct PackedBits {
    std::vector<std::uint64_t> words;

    bool is_white(std::size_t b) const noexcept { return (words[b >> 6] >> (b & 63)) & 1U; }

    void resize(std::size_t bits) { words.assign((bits + 63) / 64, 0); }

    void randomize(Rng& rng)
    {
        for (auto& w : words) w = rng();
    }

    void set(std::size_t b, bool white)
    {
        const std::uint64_t m = std::uint64_t{1} << (b & 63);
        if (white)
            words[b >> 6] |= m;
        else
            words[b >> 6] &= ~m;
    }
};

template <BitSource S>
bool tile_white(const LatticeRegion& region, std::size_t t, const S& src)
{
    const Tile& tile = region.tile(t);
    switch (tile.fixed) {
    case TileColor::white: return true;
    case TileColor::black: return false;
    default: return src.is_white(static_cast<std::size_t>(tile.bit));
    }
}

/// An assignment of +1 (white, open) or -1 (black, closed) to every bit.
class Configuration {
public:
    Configuration(RegionPtr region, std::vector<std::int8_t> bits)
        : region_(std::move(region)), bits_(std::move(bits))
    {
        if (!region_) throw std::invalid_argument("Configuration: null region");
        if (bits_.size() != region_->bit_count())
            throw std::invalid_argument("Configuration: bit vector length mismatch");
        for (auto v : bits_)
            if (v != 1 && v != -1) throw std::invalid_argument("Configuration: entries must be +-1");
    }

    static Configuration constant(RegionPtr region, std::int8_t value)
    {
        const auto n = region->bit_count();
        return Configuration(std::move(region), std::vector<std::int8_t>(n, value));
    }

    const LatticeRegion& region() const noexcept { return *region_; }
    const RegionPtr& region_ptr() const noexcept { return region_; }
    std::size_t size() const noexcept { return bits_.size(); }

    std::span<const std::int8_t> bits() const noexcept { return bits_; }
    std::int8_t operator[](std::size_t b) const { return bits_[b]; }
    bool is_white(std::size_t b) const noexcept { return bits_[b] > 0; }

    void set(std::size_t b, std::int8_t v)
    {
        if (v != 1 && v != -1) throw std::invalid_argument("Configuration::set: value must be +-1");
        bits_.at(b) = v;
    }

    Configuration flipped() const
    {
        auto copy = bits_;
        for (auto& v : copy) v = static_cast<std::int8_t>(-v);
        return Configuration(region_, std::move(copy));
    }

    friend bool operator==(const Configuration& l, const Configuration& r)
    {
        return l.region_ == r.region_ && l.bits_ == r.bits_;
    }

private:
    RegionPtr region_;
    std::vector<std::int8_t> bits_;
};

/// Fills `out` with independent fair +-1 bits.
inline void fill_fair_bits(std::span<std::int8_t> out, Rng& rng)
{
    BitStream bits(rng);
    for (auto& v : out) v = bits.next() ? 1 : -1;
}

/// Critical (p = 1/2) product measure; deterministic in `seed`.
inline Configuration sample_configuration(const RegionPtr& region, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<std::int8_t> bits(region->bit_count());
    fill_fair_bits(bits, rng);
    return Configuration(region, std::move(bits));
}

// ---------------------------------------------------------------------------
// Quads

enum class QuadShape { rectangle_lr, radial_annulus, half_plane, quarter_plane };

inline std::string to_string(QuadShape s)
{
    switch (s) {
    case QuadShape::rectangle_lr: return "rectangle-LR";
    case QuadShape::radial_annulus: return "radial-annulus";
    case QuadShape::half_plane: return "half-plane";
    case QuadShape::quarter_plane: return "quarter-plane";
    }
    return "?";
}

/// Per-tile roles inside a quad.
enum TileRole : std::uint8_t {
    kArcA = 1,      // first distinguished arc (left side / inner boundary)
    kArcB = 2,      // second distinguished arc (right side / outer boundary)
    kCompArcA = 4,  // complementary arcs of a rectangle (bottom / top)
    kCompArcB = 8,
};

/// A region with two distinguished boundary arcs.
///
/// For rectangle-LR the arcs are the left and right sides, and the
/// complementary arcs (bottom, top) are recorded for duality arguments. For
/// the annular shapes arc A is the set of tiles touching the inner box and
/// arc B the set touching the outside of the outer box; `ring()` lists arc A
/// in angular order around the center.
class Quad {
public:
    QuadShape shape() const noexcept { return shape_; }
    const LatticeRegion& region() const noexcept { return *region_; }
    const RegionPtr& region_ptr() const noexcept { return region_; }

    int inner_radius() const noexcept { return r_; }
    int outer_radius() const noexcept { return R_; }
    Point center() const noexcept { return center_; }

    std::uint8_t role(std::size_t tile) const { return roles_[tile]; }
    std::span<const std::uint8_t> roles() const noexcept { return roles_; }

    std::span<const std::int32_t> arc_a() const noexcept { return arc_a_; }
    std::span<const std::int32_t> arc_b() const noexcept { return arc_b_; }
    std::span<const std::int32_t> ring() const noexcept { return arc_a_; }

    bool is_annular() const noexcept { return shape_ != QuadShape::rectangle_lr; }
    bool cyclic() const noexcept { return shape_ == QuadShape::radial_annulus; }

    /// Left-right crossing quad of nominal size width x height.
    ///
    /// Triangular: `height` rows of `width` sites in a brick layout. Z^2:
    /// primal vertices {0..width} x {0..height-1} with every horizontal edge
    /// and the interior vertical edges; width == height is self-dual.
    static Quad rectangle(LatticeKind kind, int width, int height)
    {
        if (width < 1 || height < 1) throw std::invalid_argument("Quad::rectangle: empty rectangle");
        Quad q;
        q.shape_ = QuadShape::rectangle_lr;
        if (kind == LatticeKind::triangular_site) {
            q.region_ = LatticeRegion::build(
                kind, width, height, -height, width + height, 0, height - 1,
                [&](int i, int j, Point) {
                    const int first = -(j / 2);
                    return i >= first && i < first + width;
                });
        } else {
            const int amax = 2 * width;
            const int bmax = 2 * (height - 1);
            q.region_ = LatticeRegion::build(kind, width, height, 0, amax, 0, bmax,
                                             [&](int a, int b, Point) {
                                                 const bool vertical_edge = (a % 2 == 0) && (b % 2 != 0);
                                                 return !(vertical_edge && (a == 0 || a == amax));
                                             });
        }
        const auto& reg = *q.region_;
        q.roles_.assign(reg.tile_count(), 0);
        int bmin = 1 << 30, bmax = -(1 << 30);
        for (const auto& t : reg.tiles()) {
            bmin = std::min(bmin, t.b);
            bmax = std::max(bmax, t.b);
        }
        for (std::size_t t = 0; t < reg.tile_count(); ++t) {
            const Tile& tile = reg.tile(t);
            std::uint8_t role = 0;
            if (kind == LatticeKind::triangular_site) {
                const int first = -(tile.b / 2);
                if (tile.a == first) role |= kArcA;
                if (tile.a == first + width - 1) role |= kArcB;
            } else {
                if (tile.a == 0 && tile.b % 2 == 0) role |= kArcA;
                if (tile.a == 2 * width && tile.b % 2 == 0) role |= kArcB;
            }
            if (tile.b == bmin) role |= kCompArcA;
            if (tile.b == bmax) role |= kCompArcB;
            q.roles_[t] = role;
        }
        q.collect_arcs();
        return q;
    }

    /// Annulus B(c, R) \ B(c, r), optionally clipped to the upper half plane
    /// (y >= c.y) or the first quadrant.
    static Quad annulus(LatticeKind kind, QuadShape shape, int r, int R, Point c = {})
    {
        if (shape == QuadShape::rectangle_lr)
            throw std::invalid_argument("Quad::annulus: rectangle shape is not annular");
        if (r < 0 || R <= r) throw std::invalid_argument("Quad::annulus: need 0 <= r < R");
        Quad q;
        q.shape_ = shape;
        q.r_ = r;
        q.R_ = R;
        q.center_ = c;

        auto in_box = [&](Point p, double rad) {
            return p.x >= c.x - rad && p.x < c.x + rad && p.y >= c.y - rad && p.y < c.y + rad;
        };
        auto in_sector = [&](Point p) {
            const double eps = 1e-9;
            if (shape == QuadShape::half_plane) return p.y >= c.y - eps;
            if (shape == QuadShape::quarter_plane) return p.y >= c.y - eps && p.x >= c.x - eps;
            return true;
        };
        auto keep = [&](int, int, Point p) { return in_box(p, R) && !in_box(p, r) && in_sector(p); };

        int amin, amax, bmin, bmax;
        if (kind == LatticeKind::triangular_site) {
            bmin = static_cast<int>(std::floor((c.y - R) / kRowHeight)) - 1;
            bmax = static_cast<int>(std::ceil((c.y + R) / kRowHeight)) + 1;
            amin = static_cast<int>(std::floor(c.x - R)) - (std::abs(bmin) + std::abs(bmax)) / 2 - 2;
            amax = static_cast<int>(std::ceil(c.x + R)) + (std::abs(bmin) + std::abs(bmax)) / 2 + 2;
        } else {
            amin = static_cast<int>(std::floor(2 * (c.x - R))) - 1;
            amax = static_cast<int>(std::ceil(2 * (c.x + R))) + 1;
            bmin = static_cast<int>(std::floor(2 * (c.y - R))) - 1;
            bmax = static_cast<int>(std::ceil(2 * (c.y + R))) + 1;
        }
        q.region_ = LatticeRegion::build(kind, 2 * R, 2 * R, amin, amax, bmin, bmax, keep);

        const auto& reg = *q.region_;
        q.roles_.assign(reg.tile_count(), 0);
        for (std::size_t t = 0; t < reg.tile_count(); ++t) {
            const Tile& tile = reg.tile(t);
            std::uint8_t role = 0;
            for (auto [da, db] : detail::neighbour_offsets(kind)) {
                const Point p = detail::tile_center(kind, tile.a + da, tile.b + db);
                if (r > 0 && in_box(p, r)) role |= kArcA;
                if (!in_box(p, R)) role |= kArcB;
            }
            q.roles_[t] = role;
        }
        q.collect_arcs();

        // Angular order of the inner ring; ties by lexicographic center.
        auto angle = [&](std::int32_t t) {
            const Point p = reg.tile(static_cast<std::size_t>(t)).center;
            return std::atan2(p.y - c.y, p.x - c.x);
        };
        auto base = [&](double a) {
            // Linear shapes scan counter-clockwise from the positive x-axis;
            // the full annulus starts just below the negative x-axis.
            const double two_pi = 2.0 * 3.14159265358979323846;
            if (shape != QuadShape::radial_annulus && a < -1e-9) a += two_pi;
            return a;
        };
        std::stable_sort(q.arc_a_.begin(), q.arc_a_.end(), [&](std::int32_t l, std::int32_t rr) {
            const double al = base(angle(l)), ar = base(angle(rr));
            if (std::abs(al - ar) > 1e-12) return al < ar;
            const Point pl = reg.tile(static_cast<std::size_t>(l)).center;
            const Point pr = reg.tile(static_cast<std::size_t>(rr)).center;
            return pl.x != pr.x ? pl.x < pr.x : pl.y < pr.y;
        });
        return q;
    }

private:
    void collect_arcs()
    {
        arc_a_.clear();
        arc_b_.clear();
        for (std::size_t t = 0; t < roles_.size(); ++t) {
            if (roles_[t] & kArcA) arc_a_.push_back(static_cast<std::int32_t>(t));
            if (roles_[t] & kArcB) arc_b_.push_back(static_cast<std::int32_t>(t));
        }
    }

    QuadShape shape_ = QuadShape::rectangle_lr;
    RegionPtr region_;
    int r_ = 0;
    int R_ = 0;
    Point center_;
    std::vector<std::uint8_t> roles_;
    std::vector<std::int32_t> arc_a_;
    std::vector<std::int32_t> arc_b_;
};

// ---------------------------------------------------------------------------
// Flood fill scratch

namespace detail {

/// Epoch-stamped visit marks plus a work queue; reused across calls.
struct VisitScratch {
    std::vector<std::uint32_t> stamp;
    std::vector<std::int32_t> queue;
    std::uint32_t epoch = 0;

    void begin(std::size_t tiles)
    {
        if (stamp.size() < tiles) stamp.resize(tiles, 0);
        if (++epoch == 0) {
            std::fill(stamp.begin(), stamp.end(), 0);
            epoch = 1;
        }
        queue.clear();
    }

    bool visit(std::size_t t)
    {
        if (stamp[t] == epoch) return false;
        stamp[t] = epoch;
        return true;
    }

    bool seen(std::size_t t) const { return stamp[t] == epoch; }
};

inline VisitScratch& thread_scratch()
{
    thread_local VisitScratch s;
    return s;
}

} // namespace detail

/// True when tiles of colour `white` connect a tile carrying role `from`
/// to a tile carrying role `to`.
template <BitSource S>
bool connects(const Quad& q, const S& src, bool white, std::uint8_t from, std::uint8_t to)
{
    const auto& reg = q.region();
    auto& s = detail::thread_scratch();
    s.begin(reg.tile_count());
    for (std::size_t t = 0; t < reg.tile_count(); ++t) {
        if ((q.role(t) & from) && tile_white(reg, t, src) == white) {
            if (q.role(t) & to) return true;
            s.visit(t);
            s.queue.push_back(static_cast<std::int32_t>(t));
        }
    }
    for (std::size_t head = 0; head < s.queue.size(); ++head) {
        const auto t = static_cast<std::size_t>(s.queue[head]);
        for (auto nb : reg.neighbours(t)) {
            const auto u = static_cast<std::size_t>(nb);
            if (s.seen(u) || tile_white(reg, u, src) != white) continue;
            if (q.role(u) & to) return true;
            s.visit(u);
            s.queue.push_back(nb);
        }
    }
    return false;
}

enum class ValueMode { plus_minus_one, zero_one };

/// Indicator of a white crossing between the two distinguished arcs.
class CrossingFunction {
public:
    explicit CrossingFunction(Quad quad, ValueMode mode = ValueMode::plus_minus_one)
        : quad_(std::make_shared<const Quad>(std::move(quad))), mode_(mode)
    {
    }

    const Quad& quad() const noexcept { return *quad_; }
    const LatticeRegion& region() const noexcept { return quad_->region(); }
    ValueMode mode() const noexcept { return mode_; }
    bool is_monotone() const noexcept { return true; }
    std::size_t bit_count() const noexcept { return region().bit_count(); }

    template <BitSource S>
    bool crosses(const S& src) const
    {
        return connects(*quad_, src, true, kArcA, kArcB);
    }

    int value(bool crossed) const noexcept
    {
        if (mode_ == ValueMode::zero_one) return crossed ? 1 : 0;
        return crossed ? 1 : -1;
    }

    int operator()(std::span<const std::int8_t> bits) const
    {
        if (bits.size() != bit_count())
            throw std::invalid_argument("CrossingFunction: configuration has wrong length");
        return value(crosses(DenseBits{bits}));
    }

    int operator()(const Configuration& w) const
    {
        if (!w.region().same_shape(region()))
            throw std::invalid_argument("CrossingFunction: configuration from another region");
        return value(crosses(w));
    }

    int operator()(const PackedBits& w) const { return value(crosses(w)); }

private:
    std::shared_ptr<const Quad> quad_;
    ValueMode mode_;
};

inline int evaluate_crossing(const CrossingFunction& f, const Configuration& w) { return f(w); }

/// Functions of a +-1 bit vector that the pivotal machinery accepts.
template <class F>
concept BooleanFunction = requires(const F& f, std::span<const std::int8_t> bits) {
    { f(bits) } -> std::convertible_to<int>;
    { f.is_monotone() } -> std::convertible_to<bool>;
    { f.bit_count() } -> std::convertible_to<std::size_t>;
};

/// Pivotal bits by two-point substitution; monotone functions only.
template <BooleanFunction F>
std::vector<std::size_t> pivotal_set(const F& f, std::span<const std::int8_t> bits)
{
    if (!f.is_monotone())
        throw std::invalid_argument("pivotal_set: function is not monotone");
    if (bits.size() != f.bit_count())
        throw std::invalid_argument("pivotal_set: configuration has wrong length");
    std::vector<std::int8_t> w(bits.begin(), bits.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto keep = w[i];
        w[i] = 1;
        const int up = f(std::span<const std::int8_t>(w));
        w[i] = -1;
        const int down = f(std::span<const std::int8_t>(w));
        w[i] = keep;
        if (up != down) out.push_back(i);
    }
    return out;
}

/// True iff forcing B white and forcing B black give different values.
template <BooleanFunction F>
bool pivotal_for_box(const F& f, std::span<const std::int8_t> bits, const BitMask& box)
{
    if (!f.is_monotone())
        throw std::invalid_argument("pivotal_for_box: function is not monotone");
    if (box.size() != f.bit_count() || bits.size() != f.bit_count())
        throw std::invalid_argument("pivotal_for_box: box or configuration outside the region");
    if (box.empty()) throw std::invalid_argument("pivotal_for_box: empty box");
    std::vector<std::int8_t> plus(bits.begin(), bits.end());
    std::vector<std::int8_t> minus(bits.begin(), bits.end());
    for (auto id : box.ids()) {
        plus[id] = 1;
        minus[id] = -1;
    }
    return f(std::span<const std::int8_t>(plus)) != f(std::span<const std::int8_t>(minus));
}

inline bool pivotal_for_box(const CrossingFunction& f, const Configuration& w, const BitMask& box)
{
    if (!w.region().same_shape(f.region()))
        throw std::invalid_argument("pivotal_for_box: configuration from another region");
    return pivotal_for_box(f, w.bits(), box);
}

namespace detail {

/// Labels the colour clusters of every tile; returns the cluster count.
template <BitSource S>
std::size_t label_clusters(const LatticeRegion& reg, const S& src, std::vector<std::int32_t>& label,
                           std::vector<std::uint8_t>& colour)
{
    label.assign(reg.tile_count(), -1);
    colour.assign(reg.tile_count(), 0);
    for (std::size_t t = 0; t < reg.tile_count(); ++t) colour[t] = tile_white(reg, t, src) ? 1 : 0;
    std::vector<std::int32_t> stack;
    std::int32_t next = 0;
    for (std::size_t t = 0; t < reg.tile_count(); ++t) {
        if (label[t] >= 0) continue;
        label[t] = next;
        stack.assign(1, static_cast<std::int32_t>(t));
        while (!stack.empty()) {
            const auto u = static_cast<std::size_t>(stack.back());
            stack.pop_back();
            for (auto nb : reg.neighbours(u)) {
                const auto v = static_cast<std::size_t>(nb);
                if (label[v] < 0 && colour[v] == colour[u]) {
                    label[v] = next;
                    stack.push_back(nb);
                }
            }
        }
        ++next;
    }
    return static_cast<std::size_t>(next);
}

} // namespace detail

/// Pivotal bits of a rectangle crossing in one cluster-labelling pass.
///
/// Uses the duality of the rectangle: there is no white left-right crossing
/// iff there is a black bottom-top crossing. A white bit is pivotal iff
/// blackening it completes a black bottom-top crossing; a black bit is
/// pivotal iff whitening it completes a white left-right crossing.
inline std::vector<std::size_t> pivotal_set_dual(const CrossingFunction& f, std::span<const std::int8_t> bits)
{
    const Quad& q = f.quad();
    if (q.shape() != QuadShape::rectangle_lr)
        throw std::invalid_argument("pivotal_set_dual: only rectangle quads are self-dual");
    const auto& reg = q.region();
    DenseBits src{bits};
    std::vector<std::int32_t> label;
    std::vector<std::uint8_t> colour;
    const auto nclusters = detail::label_clusters(reg, src, label, colour);
    std::vector<std::uint8_t> touch(nclusters, 0);
    for (std::size_t t = 0; t < reg.tile_count(); ++t) touch[static_cast<std::size_t>(label[t])] |= q.role(t);

    bool crossed = false;
    for (std::size_t t = 0; t < reg.tile_count(); ++t) {
        const auto c = static_cast<std::size_t>(label[t]);
        if (colour[t] && (touch[c] & kArcA) && (touch[c] & kArcB)) {
            crossed = true;
            break;
        }
    }

    // When crossed, pivotal bits are white and we look for black joins of
    // the complementary arcs; otherwise black bits joining white clusters.
    const std::uint8_t want_colour = crossed ? 0 : 1;
    const std::uint8_t side_a = crossed ? kCompArcA : kArcA;
    const std::uint8_t side_b = crossed ? kCompArcB : kArcB;

    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < reg.bit_count(); ++b) {
        const auto t = reg.tile_of_bit(b);
        if (colour[t] == want_colour) continue; // must currently have the other colour
        std::uint8_t reach = q.role(t);
        for (auto nb : reg.neighbours(t)) {
            const auto u = static_cast<std::size_t>(nb);
            if (colour[u] == want_colour) reach |= touch[static_cast<std::size_t>(label[u])];
        }
        if ((reach & side_a) && (reach & side_b)) out.push_back(b);
    }
    return out;
}

} // namespace spectral_perc
