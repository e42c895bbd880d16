#include "catch_amalgamated.hpp"

#include <set>

#include "oracles.hpp"
#include "spectral_perc/lattice.hpp"

using namespace spectral_perc;

namespace {

std::uint64_t config_count(std::size_t bits) { return std::uint64_t{1} << bits; }

struct Dictator {
    int operator()(std::span<const std::int8_t> w) const { return w[0]; }
    bool is_monotone() const { return true; }
    std::size_t bit_count() const { return 1; }
};

struct Majority3 {
    int operator()(std::span<const std::int8_t> w) const { return w[0] + w[1] + w[2] > 0 ? 1 : -1; }
    bool is_monotone() const { return true; }
    std::size_t bit_count() const { return 3; }
};

struct Parity2 {
    int operator()(std::span<const std::int8_t> w) const { return w[0] * w[1]; }
    bool is_monotone() const { return false; }
    std::size_t bit_count() const { return 2; }
};

std::vector<std::size_t> flip_oracle(const CrossingFunction& f, std::vector<std::int8_t> w)
{
    std::vector<std::size_t> out;
    const int base = f(std::span<const std::int8_t>(w));
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = static_cast<std::int8_t>(-w[i]);
        if (f(std::span<const std::int8_t>(w)) != base) out.push_back(i);
        w[i] = static_cast<std::int8_t>(-w[i]);
    }
    return out;
}

} // namespace

TEST_CASE("region geometry and bit indexing")
{
    SECTION("triangular rectangle")
    {
        auto q = Quad::rectangle(LatticeKind::triangular_site, 3, 3);
        const auto& reg = q.region();
        REQUIRE(reg.bit_count() == 9);
        REQUIRE(reg.tile_count() == 9);
        // row-major: bit k sits in row k / 3
        for (std::size_t b = 0; b < 9; ++b) CHECK(reg.tile(reg.tile_of_bit(b)).b == static_cast<int>(b / 3));
        CHECK(q.arc_a().size() == 3);
        CHECK(q.arc_b().size() == 3);
    }
    SECTION("square-bond rectangle")
    {
        auto q = Quad::rectangle(LatticeKind::square_bond, 3, 3);
        const auto& reg = q.region();
        REQUIRE(reg.bit_count() == 13);
        // horizontal edges (odd a) come first
        for (std::size_t b = 0; b < 9; ++b) CHECK(reg.tile(reg.tile_of_bit(b)).a % 2 == 1);
        for (std::size_t b = 9; b < 13; ++b) CHECK(reg.tile(reg.tile_of_bit(b)).a % 2 == 0);
        CHECK(q.arc_a().size() == 3);
    }
    SECTION("bit index is a bijection and adjacency is symmetric")
    {
        for (auto kind : {LatticeKind::triangular_site, LatticeKind::square_bond}) {
            auto q = Quad::annulus(kind, QuadShape::radial_annulus, 2, 6);
            const auto& reg = q.region();
            std::set<std::size_t> tiles;
            for (std::size_t b = 0; b < reg.bit_count(); ++b) {
                const auto t = reg.tile_of_bit(b);
                CHECK(reg.tile(t).bit == static_cast<std::int32_t>(b));
                tiles.insert(t);
            }
            CHECK(tiles.size() == reg.bit_count());
            const Point lo = reg.lower(), hi = reg.upper();
            for (std::size_t b = 0; b < reg.bit_count(); ++b) {
                const Point c = reg.bit_center(b);
                CHECK(c.x >= lo.x - 1);
                CHECK(c.x <= hi.x + 1);
                CHECK(c.y >= lo.y - 1);
                CHECK(c.y <= hi.y + 1);
            }
            const auto geo = oracle::geometric_adjacency(reg);
            for (std::size_t t = 0; t < reg.tile_count(); ++t) {
                auto nb = reg.neighbours(t);
                CHECK(nb.size() <= (kind == LatticeKind::triangular_site ? 6U : 4U));
                std::set<int> lib(nb.begin(), nb.end());
                std::set<int> ref(geo[t].begin(), geo[t].end());
                CHECK(lib == ref);
                for (auto u : nb) {
                    auto back = reg.neighbours(static_cast<std::size_t>(u));
                    CHECK(std::find(back.begin(), back.end(), static_cast<std::int32_t>(t)) != back.end());
                }
            }
        }
    }
    SECTION("annulus excludes the inner box and keeps the outer one")
    {
        auto q = Quad::annulus(LatticeKind::triangular_site, QuadShape::radial_annulus, 3, 8);
        for (const auto& t : q.region().tiles()) {
            const bool inner = t.center.x >= -3 && t.center.x < 3 && t.center.y >= -3 && t.center.y < 3;
            CHECK_FALSE(inner);
            CHECK(t.center.x >= -8);
            CHECK(t.center.x < 8);
        }
        auto half = Quad::annulus(LatticeKind::square_bond, QuadShape::half_plane, 2, 5);
        for (const auto& t : half.region().tiles()) CHECK(t.center.y >= 0);
        auto quarter = Quad::annulus(LatticeKind::square_bond, QuadShape::quarter_plane, 2, 5);
        for (const auto& t : quarter.region().tiles()) {
            CHECK(t.center.x >= 0);
            CHECK(t.center.y >= 0);
        }
        CHECK_THROWS_AS(Quad::annulus(LatticeKind::square_bond, QuadShape::radial_annulus, 4, 4), std::invalid_argument);
    }
    SECTION("box bits")
    {
        auto q = Quad::rectangle(LatticeKind::square_bond, 4, 4);
        auto box = q.region().box_bits({2, 1.5}, 0.5);
        for (auto id : box.ids()) {
            const Point c = q.region().bit_center(id);
            CHECK(c.x >= 1.5);
            CHECK(c.x < 2.5);
        }
        CHECK(box.count() == 2); // one horizontal and one vertical edge tile
    }
}

TEST_CASE("sample_configuration")
{
    auto q = Quad::rectangle(LatticeKind::triangular_site, 5, 5);
    const auto& reg = q.region_ptr();
    CHECK(sample_configuration(reg, 42) == sample_configuration(reg, 42));
    CHECK_FALSE(sample_configuration(reg, 42) == sample_configuration(reg, 43));

    auto empty = LatticeRegion::build(LatticeKind::triangular_site, 0, 0, 0, 0, 0, 0,
                                      [](int, int, Point) { return false; });
    CHECK(sample_configuration(empty, 1).size() == 0);

    auto one = Quad::rectangle(LatticeKind::triangular_site, 1, 1).region_ptr();
    REQUIRE(one->bit_count() == 1);
    double sum = 0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) sum += sample_configuration(one, derive_seed(7, static_cast<std::uint64_t>(i)))[0];
    CHECK(std::abs(sum / n) <= 4.0 / std::sqrt(static_cast<double>(n)));

    CHECK_THROWS_AS(Configuration(reg, std::vector<std::int8_t>(3, 1)), std::invalid_argument);
    CHECK_THROWS_AS(Configuration(reg, std::vector<std::int8_t>(reg->bit_count(), 0)), std::invalid_argument);
}

TEST_CASE("evaluate_crossing")
{
    for (auto kind : {LatticeKind::triangular_site, LatticeKind::square_bond}) {
        CrossingFunction f(Quad::rectangle(kind, 4, 3));
        CrossingFunction g(Quad::rectangle(kind, 4, 3), ValueMode::zero_one);
        auto white = Configuration::constant(f.quad().region_ptr(), 1);
        auto black = Configuration::constant(f.quad().region_ptr(), -1);
        CHECK(evaluate_crossing(f, white) == 1);
        CHECK(evaluate_crossing(f, black) == -1);
        CHECK(g(white) == 1);
        CHECK(g(black) == 0);

        CrossingFunction other(Quad::rectangle(kind, 3, 4));
        CHECK_THROWS_AS(other(white), std::invalid_argument);
    }

    SECTION("agrees with the path oracle on every configuration")
    {
        struct Case { LatticeKind kind; int w, h; };
        for (auto c : {Case{LatticeKind::triangular_site, 3, 3}, Case{LatticeKind::triangular_site, 4, 4},
                       Case{LatticeKind::square_bond, 3, 3}, Case{LatticeKind::square_bond, 2, 4}}) {
            CrossingFunction f(Quad::rectangle(c.kind, c.w, c.h));
            oracle::CrossingOracle ref(f.quad());
            const auto n = f.bit_count();
            REQUIRE(n <= 16);
            std::uint64_t disagreements = 0;
            for (std::uint64_t m = 0; m < config_count(n); ++m) {
                const auto bits = oracle::bits_of_mask(n, m);
                if ((f(std::span<const std::int8_t>(bits)) > 0) != ref.crosses(bits)) ++disagreements;
            }
            CHECK(disagreements == 0);
        }
        CrossingFunction ann(Quad::annulus(LatticeKind::triangular_site, QuadShape::radial_annulus, 1, 2));
        oracle::CrossingOracle ref(ann.quad());
        REQUIRE(ann.bit_count() <= 16);
        for (std::uint64_t m = 0; m < config_count(ann.bit_count()); ++m) {
            const auto bits = oracle::bits_of_mask(ann.bit_count(), m);
            REQUIRE((ann(std::span<const std::int8_t>(bits)) > 0) == ref.crosses(bits));
        }
    }

    SECTION("monotone in every bit")
    {
        CrossingFunction f(Quad::rectangle(LatticeKind::triangular_site, 4, 4));
        const auto n = f.bit_count();
        for (std::uint64_t m = 0; m < config_count(n); ++m) {
            auto bits = oracle::bits_of_mask(n, m);
            for (std::size_t i = 0; i < n; ++i) {
                if (bits[i] > 0) continue;
                const int down = f(std::span<const std::int8_t>(bits));
                bits[i] = 1;
                const int up = f(std::span<const std::int8_t>(bits));
                bits[i] = -1;
                REQUIRE(up >= down);
            }
        }
        CrossingFunction big(Quad::rectangle(LatticeKind::square_bond, 16, 16));
        Rng rng(5);
        for (int rep = 0; rep < 200; ++rep) {
            auto w = sample_configuration(big.quad().region_ptr(), rng());
            std::vector<std::int8_t> bits(w.bits().begin(), w.bits().end());
            const std::size_t i = rng() % bits.size();
            bits[i] = 1;
            const int up = big(std::span<const std::int8_t>(bits));
            bits[i] = -1;
            CHECK(up >= big(std::span<const std::int8_t>(bits)));
        }
    }

    SECTION("self-dual square-bond quad crosses with probability exactly 1/2")
    {
        for (int w : {2, 3}) {
            CrossingFunction f(Quad::rectangle(LatticeKind::square_bond, w, w));
            std::uint64_t hits = 0;
            for (std::uint64_t m = 0; m < config_count(f.bit_count()); ++m) {
                const auto bits = oracle::bits_of_mask(f.bit_count(), m);
                hits += f(std::span<const std::int8_t>(bits)) > 0;
            }
            CHECK(2 * hits == config_count(f.bit_count()));
        }
    }
}

TEST_CASE("pivotal_set")
{
    SECTION("substitution test equals the flip oracle")
    {
        for (auto kind : {LatticeKind::triangular_site, LatticeKind::square_bond}) {
            CrossingFunction f(Quad::rectangle(kind, 3, 3));
            const auto n = f.bit_count();
            for (std::uint64_t m = 0; m < config_count(n); ++m) {
                const auto bits = oracle::bits_of_mask(n, m);
                const auto piv = pivotal_set(f, std::span<const std::int8_t>(bits));
                REQUIRE(piv == flip_oracle(f, bits));
                REQUIRE(piv == pivotal_set_dual(f, bits));
            }
        }
    }
    SECTION("duality shortcut on larger quads")
    {
        for (auto kind : {LatticeKind::triangular_site, LatticeKind::square_bond}) {
            CrossingFunction f(Quad::rectangle(kind, 12, 9));
            for (std::uint64_t s = 0; s < 200; ++s) {
                auto w = sample_configuration(f.quad().region_ptr(), s);
                REQUIRE(pivotal_set(f, w.bits()) == pivotal_set_dual(f, w.bits()));
            }
        }
    }
    SECTION("all-white wide rectangle has no pivotal bits")
    {
        CrossingFunction f(Quad::rectangle(LatticeKind::triangular_site, 4, 3));
        auto w = Configuration::constant(f.quad().region_ptr(), 1);
        CHECK(pivotal_set(f, w.bits()).empty());
    }
    SECTION("toy functions")
    {
        const std::int8_t plus[] = {1};
        const std::int8_t minus[] = {-1};
        CHECK(pivotal_set(Dictator{}, plus) == std::vector<std::size_t>{0});
        CHECK(pivotal_set(Dictator{}, minus) == std::vector<std::size_t>{0});
        for (std::uint64_t m = 0; m < 8; ++m) {
            const auto bits = oracle::bits_of_mask(3, m);
            const auto piv = pivotal_set(Majority3{}, std::span<const std::int8_t>(bits));
            const int ones = std::popcount(m);
            // exactly two pivotal bits when the vote is 2-1, none when unanimous
            CHECK(piv.size() == (ones == 1 || ones == 2 ? 2U : 0U));
            for (std::size_t i = 0; i < 3; ++i) {
                // bit i is pivotal iff the other two disagree
                const bool others_split = (bits[(i + 1) % 3] != bits[(i + 2) % 3]);
                CHECK((std::find(piv.begin(), piv.end(), i) != piv.end()) == others_split);
            }
        }
        const std::int8_t two[] = {1, 1};
        CHECK_THROWS_AS(pivotal_set(Parity2{}, two), std::invalid_argument);
    }
    SECTION("colour flip with the rotation duality of the square quad")
    {
        // Rotating the W x W square-bond quad by 90 degrees about its center
        // maps edge tiles to edge tiles and exchanges primal and dual. A
        // white left-right crossing of w exists iff the rotated colour-flipped
        // configuration has none, and pivotal counts agree.
        const int W = 3;
        CrossingFunction f(Quad::rectangle(LatticeKind::square_bond, W, W));
        const auto& reg = f.region();
        const auto n = f.bit_count();
        std::vector<std::size_t> sigma(n);
        for (std::size_t b = 0; b < n; ++b) {
            const Tile& t = reg.tile(reg.tile_of_bit(b));
            const auto img = reg.find_tile(2 * W - 1 - t.b, t.a - 1);
            REQUIRE(img >= 0);
            sigma[b] = static_cast<std::size_t>(reg.tile(static_cast<std::size_t>(img)).bit);
        }
        for (std::uint64_t m = 0; m < config_count(n); ++m) {
            const auto bits = oracle::bits_of_mask(n, m);
            std::vector<std::int8_t> dual(n);
            for (std::size_t b = 0; b < n; ++b) dual[sigma[b]] = static_cast<std::int8_t>(-bits[b]);
            REQUIRE(f(std::span<const std::int8_t>(bits)) == -f(std::span<const std::int8_t>(dual)));
            REQUIRE(pivotal_set(f, std::span<const std::int8_t>(bits)).size() ==
                    pivotal_set(f, std::span<const std::int8_t>(dual)).size());
        }
    }
}

TEST_CASE("pivotal_for_box")
{
    CrossingFunction f(Quad::rectangle(LatticeKind::triangular_site, 4, 4));
    const auto& reg = f.region();
    const auto n = f.bit_count();
    REQUIRE(n == 16);

    SECTION("single bit agrees with pivotal_set")
    {
        for (std::uint64_t m = 0; m < config_count(n); m += 7) {
            const auto bits = oracle::bits_of_mask(n, m);
            const auto piv = pivotal_set(f, std::span<const std::int8_t>(bits));
            for (std::size_t i = 0; i < n; ++i) {
                BitMask b(n, {i});
                const bool in = std::find(piv.begin(), piv.end(), i) != piv.end();
                REQUIRE(pivotal_for_box(f, std::span<const std::int8_t>(bits), b) == in);
            }
        }
    }
    SECTION("whole region is pivotal for a non-constant function")
    {
        const auto all = BitMask::full(n);
        for (std::uint64_t m = 0; m < config_count(n); m += 97) {
            const auto bits = oracle::bits_of_mask(n, m);
            CHECK(pivotal_for_box(f, std::span<const std::int8_t>(bits), all));
        }
    }
    SECTION("2x2 box against the definitional oracle")
    {
        const Point mid{(reg.lower().x + reg.upper().x) / 2, (reg.lower().y + reg.upper().y) / 2};
        const auto box = reg.box_bits(mid, 1.0);
        const auto ids = box.ids();
        REQUIRE(ids.size() >= 2);
        REQUIRE(ids.size() <= 6);
        for (std::uint64_t m = 0; m < config_count(n); ++m) {
            auto bits = oracle::bits_of_mask(n, m);
            const int base = f(std::span<const std::int8_t>(bits));
            bool changes = false;
            auto w = bits;
            for (std::uint64_t sub = 0; sub < (1U << ids.size()) && !changes; ++sub) {
                for (std::size_t k = 0; k < ids.size(); ++k) w[ids[k]] = (sub >> k) & 1U ? 1 : -1;
                changes = f(std::span<const std::int8_t>(w)) != base;
            }
            REQUIRE(pivotal_for_box(f, std::span<const std::int8_t>(bits), box) == changes);
        }
    }
    SECTION("errors")
    {
        const auto bits = oracle::bits_of_mask(n, 0);
        CHECK_THROWS_AS(pivotal_for_box(f, std::span<const std::int8_t>(bits), BitMask(n)), std::invalid_argument);
        CHECK_THROWS_AS(pivotal_for_box(f, std::span<const std::int8_t>(bits), BitMask(n + 1, {n})),
                        std::invalid_argument);
    }
}
