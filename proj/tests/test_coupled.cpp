#include "catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "spectral_perc/coupled.hpp"

using namespace spectral_perc;

namespace {

// At most 16 bits, so that tabulated Monte Carlo runs stay fast.
std::vector<fixtures::NamedFunction> small16()
{
    std::vector<fixtures::NamedFunction> out;
    for (auto& nf : fixtures::small_crossings())
        if (nf.f.bit_count() <= 16) out.push_back(nf);
    return out;
}

std::uint64_t random_mask(Rng& rng, std::size_t n) { return rng() & ((std::uint64_t{1} << n) - 1); }

// E[ P[B pivotal | bits outside W]^2 ] by direct enumeration of the crossing
// function: outer loop over bits outside W, inner loop over W.
double brute_lambda_sq(const CrossingFunction& f, std::uint64_t B, std::uint64_t W)
{
    const auto n = f.bit_count();
    std::vector<std::size_t> in_w, out_w;
    for (std::size_t i = 0; i < n; ++i) ((W >> i) & 1U ? in_w : out_w).push_back(i);
    double total = 0.0;
    std::vector<std::int8_t> hi(n), lo(n);
    for (std::uint64_t o = 0; o < (std::uint64_t{1} << out_w.size()); ++o) {
        double cond = 0.0;
        for (std::uint64_t w = 0; w < (std::uint64_t{1} << in_w.size()); ++w) {
            for (std::size_t k = 0; k < out_w.size(); ++k) hi[out_w[k]] = (o >> k) & 1U ? 1 : -1;
            for (std::size_t k = 0; k < in_w.size(); ++k) hi[in_w[k]] = (w >> k) & 1U ? 1 : -1;
            lo = hi;
            for (std::size_t i = 0; i < n; ++i)
                if ((B >> i) & 1U) {
                    hi[i] = 1;
                    lo[i] = -1;
                }
            cond += f(std::span<const std::int8_t>(hi)) != f(std::span<const std::int8_t>(lo));
        }
        cond /= std::ldexp(1.0, static_cast<int>(in_w.size()));
        total += cond * cond;
    }
    return total / std::ldexp(1.0, static_cast<int>(out_w.size()));
}

bool within4(const Estimate& e, double exact) { return within_sigma(e.value, e.std_error, exact, 0.0, 4.0); }

} // namespace

TEST_CASE("coupled pairs agree off W and are independent on W", "[coupled]")
{
    const Quad q = Quad::rectangle(LatticeKind::triangular_site, 4, 4);
    const auto n = q.region().bit_count();
    const auto p0 = sample_coupled(q.region_ptr(), BitMask(n), 5);
    CHECK(p0.omega_prime == p0.omega_second);
    const auto again = sample_coupled(q.region_ptr(), BitMask(n), 5);
    CHECK(again.omega_prime == p0.omega_prime);

    const BitMask W(n, {0, 3, 7});
    MeanAccumulator inside, outside;
    for (std::uint64_t s = 0; s < 100000; ++s) {
        const auto p = sample_coupled(q.region_ptr(), W, derive_seed(8, s));
        inside.add(p.omega_prime[3] * p.omega_second[3]);
        outside.add(p.omega_prime[4] * p.omega_second[4]);
        if (s < 100) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!W.test(i)) REQUIRE(p.omega_prime[i] == p.omega_second[i]);
                REQUIRE(p.shared[i] == (W.test(i) ? 0 : p.omega_prime[i]));
            }
        }
    }
    CHECK(std::abs(inside.mean()) <= 4 * inside.std_error());
    CHECK(outside.mean() == 1.0);

    MeanAccumulator all;
    for (std::uint64_t s = 0; s < 20000; ++s) {
        const auto p = sample_coupled(q.region_ptr(), BitMask::full(n), derive_seed(9, s));
        all.add(p.omega_prime[0] * p.omega_second[0]);
    }
    CHECK(std::abs(all.mean()) <= 4 * all.std_error());
    CHECK_THROWS_AS(sample_coupled(q.region_ptr(), BitMask(n + 1), 1), std::invalid_argument);
}

TEST_CASE("Q[S in A] estimates match the spectrum", "[coupled]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto d = walsh_transform(g.table());
        const auto n = g.bit_count();

        const auto all = estimate_S_subset(g, BitMask::full(n), 2000, 1);
        CHECK(all.value == 1.0);
        const auto none = estimate_S_subset(g, BitMask(n), 20000, 2);
        CHECK(within4(none, d.coeffs[0] * d.coeffs[0]));

        Rng rng(derive_seed(31, n));
        for (int k = 0; k < 5; ++k) {
            const auto A = random_mask(rng, n);
            const auto e = estimate_S_subset(g, BitMask::from_u64(n, A), 20000, derive_seed(3, static_cast<std::uint64_t>(k)));
            CHECK(within4(e, spectral_subset_weight(d, A)));
        }
    }
}

TEST_CASE("Q[S meets B, misses W] estimates match the spectrum", "[coupled]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto d = walsh_transform(g.table());
        const auto n = g.bit_count();
        const auto e0 = estimate_S_hits_B_avoids_W(g, BitMask::full(n), BitMask(n), 20000, 4);
        CHECK(within4(e0, 1.0 - d.coeffs[0] * d.coeffs[0]));

        Rng rng(derive_seed(32, n));
        for (int k = 0; k < 5; ++k) {
            const auto B = random_mask(rng, n) & random_mask(rng, n);
            const auto W = random_mask(rng, n) & ~B;
            if (!B) continue;
            const auto e = estimate_S_hits_B_avoids_W(g, BitMask::from_u64(n, B), BitMask::from_u64(n, W), 20000,
                                                      derive_seed(5, static_cast<std::uint64_t>(k)));
            const double exact = spectral_hits_avoids_weight(d, B, W);
            CHECK(within4(e, exact));
            // the lemma bounding this by 4 E[lambda^2], exactly and at 4 sigma
            const double lam = exact_lambda_sq(g.table(), B, W);
            CHECK(exact <= 4 * lam + 1e-12);
            const auto L = estimate_lambda_sq(g, BitMask::from_u64(n, B), BitMask::from_u64(n, W), 20000,
                                              derive_seed(6, static_cast<std::uint64_t>(k)));
            CHECK(e.value <= 4 * L.value + 4 * std::hypot(e.std_error, 4 * L.std_error));
        }
    }
    const TableFunction g(fixtures::majority3());
    CHECK_THROWS_AS(estimate_S_hits_B_avoids_W(g, BitMask(3, {0}), BitMask(3, {0, 1}), 10, 1), std::invalid_argument);
}

TEST_CASE("E[lambda^2] matches enumeration of conditional pivotality", "[coupled]")
{
    for (const auto& nf : small16()) {
        if (nf.f.bit_count() > 13) continue;
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto n = g.bit_count();
        Rng rng(derive_seed(33, n));
        for (int k = 0; k < 4; ++k) {
            std::uint64_t B = random_mask(rng, n) & random_mask(rng, n) & random_mask(rng, n);
            if (!B) B = 1;
            const auto W = random_mask(rng, n) & ~B;
            const double brute = brute_lambda_sq(nf.f, B, W);
            CHECK(exact_lambda_sq(g.table(), B, W) == Catch::Approx(brute).margin(1e-12));
            const auto e = estimate_lambda_sq(g, BitMask::from_u64(n, B), BitMask::from_u64(n, W), 20000,
                                              derive_seed(7, static_cast<std::uint64_t>(k)));
            CHECK(within4(e, brute));

            // W empty: alpha_box; W = B^c: alpha_box squared
            const double alpha = brute_lambda_sq(nf.f, B, 0);
            const auto full = (std::uint64_t{1} << n) - 1;
            CHECK(brute_lambda_sq(nf.f, B, full & ~B) == Catch::Approx(alpha * alpha).margin(1e-12));
            const auto e0 = estimate_lambda_sq(g, BitMask::from_u64(n, B), BitMask(n), 5000, 11);
            CHECK(e0.value == estimate_box_pivotal(g, BitMask::from_u64(n, B), 5000, 11).value);
            CHECK(within4(e0, alpha));
        }
    }
    const TableFunction par(fixtures::parity(3));
    CHECK_THROWS_AS(estimate_lambda_sq(par, BitMask(3, {0}), BitMask(3), 10, 1), std::invalid_argument);
}

TEST_CASE("single-bit spectral mass off W equals E[lambda_x^2]", "[coupled]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const auto t = tabulate(nf.f);
        const auto d = walsh_transform(t);
        const auto n = t.n;
        Rng rng(derive_seed(34, n));
        for (int k = 0; k < 6; ++k) {
            const std::size_t x = rng() % n;
            const auto bit = std::uint64_t{1} << x;
            const auto W = random_mask(rng, n) & ~bit;
            const double spec = spectral_probability(
                d, [&](std::uint64_t S) { return (S & bit) && !(S & W); }, SpectralWeight::unnormalized);
            CHECK(spec == Catch::Approx(exact_lambda_sq(t, bit, W)).margin(1e-12));
        }
    }
}

TEST_CASE("enlarging W never increases Q[S in W^c]", "[coupled]")
{
    for (const auto& nf : small16()) {
        const auto d = walsh_transform(tabulate(nf.f));
        const auto n = d.n;
        Rng rng(derive_seed(35, n));
        for (int k = 0; k < 20; ++k) {
            const auto W1 = random_mask(rng, n) & random_mask(rng, n);
            const auto W2 = W1 | random_mask(rng, n);
            const auto full = (std::uint64_t{1} << n) - 1;
            CHECK(spectral_subset_weight(d, full & ~W2) <= spectral_subset_weight(d, full & ~W1) + 1e-12);
        }
    }
}

TEST_CASE("beta for coupled arm events", "[coupled][arms]")
{
    const ArmSpec spec{LatticeKind::triangular_site, ArmGeometry::full, {}, 2, 12, 4};
    const auto alpha = estimate_alpha(spec, 20000, 40);
    const auto b0 = estimate_beta(spec, ResampleSet::none(), 20000, 40);
    CHECK(b0.value == alpha.value);

    const auto b_all = estimate_beta(spec, ResampleSet::everything(), 20000, 41);
    CHECK(within_sigma(b_all.value, b_all.std_error, alpha.value * alpha.value, 2 * alpha.value * alpha.std_error, 4.0));

    const auto cells = ResampleSet::random_cells(3, 4.0, 0.5);
    const auto b_cells = estimate_beta(spec, cells, 20000, 42);
    CHECK(b_cells.value <= b0.value + 4 * std::hypot(b0.std_error, b_cells.std_error));
    CHECK(b_all.value <= b_cells.value + 4 * std::hypot(b_all.std_error, b_cells.std_error));

    const auto rep = beta_quasimult_report(spec, cells, 2, 4, 8, 5000, 43);
    CHECK(rep.violations == 0);

    ArmSpec triv = spec;
    triv.R = triv.r;
    CHECK(estimate_beta(triv, cells, 10, 1).value == 1.0);
}

TEST_CASE("thinning experiment", "[coupled][thinning]")
{
    const Quad q = Quad::rectangle(LatticeKind::triangular_site, 4, 4);
    const CrossingFunction f(q);
    const auto d = walsh_transform(tabulate(f));
    const auto& reg = q.region();
    const auto n = reg.bit_count();

    // B' = B = everything, density 1: every nonempty S is caught
    const BoxWindow whole{BitMask::full(n), BitMask::full(n), BitMask(n)};
    CHECK(thinning_experiment(d, whole, 1.0, 5000, 1).conditional.value == 1.0);
    CHECK(exact_thinning_probability(d, whole, 1.0) == Catch::Approx(1.0));
    CHECK(thinning_experiment(d, whole, 0.0, 5000, 1).conditional.value == 0.0);

    const Point c = reg.bit_center(n / 2);
    const double r = 1.5;
    const auto B = reg.box_bits(c, r);
    BitMask W(n);
    for (std::size_t b = 0; b < n; ++b)
        if (!B.test(b) && reg.bit_center(b).x > c.x + 2) W.set(b);
    const auto window = make_box_window(reg, c, r, W);
    REQUIRE(!window.B_prime.empty());
    const double density = thinning_density(0.5, r);
    std::vector<double> values;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto res = thinning_experiment(d, window, density, 100000, seed, seed == 1);
        CHECK(!res.inconclusive);
        CHECK(res.conditional.value > 0.0);
        CHECK(within4(res.conditional, res.exact));
        CHECK(res.wilson.lo <= res.exact);
        CHECK(res.exact <= res.wilson.hi);
        if (seed == 1) {
            REQUIRE(res.draws.size() == 100000);
            std::uint64_t hits = 0;
            for (const auto& t : res.draws) hits += t.conditioned;
            CHECK(hits == res.conditioning_hits);
        }
        values.push_back(res.conditional.value);
    }
    CHECK(*std::max_element(values.begin(), values.end()) - *std::min_element(values.begin(), values.end()) <= 0.05);

    const auto few = thinning_experiment(d, window, density, 50, 4);
    CHECK(few.inconclusive);

    const auto flat = walsh_transform(TruthTable(2, {1, 1, 1, 1}));
    const BoxWindow w2{BitMask::full(2), BitMask::full(2), BitMask(2)};
    CHECK_THROWS_AS(thinning_experiment(flat, w2, 0.5, 10, 1), std::domain_error);
    CHECK_THROWS_AS(make_box_window(reg, c, r, B), std::invalid_argument);
    CHECK_THROWS_AS(thinning_density(0.0, 2), std::invalid_argument);
}

TEST_CASE("moment ratio check", "[coupled]")
{
    const Quad q = Quad::rectangle(LatticeKind::square_bond, 3, 3);
    const CrossingFunction f(q);
    const auto& reg = q.region();
    const auto n = reg.bit_count();
    const auto window = make_box_window(reg, reg.bit_center(n / 2), 1.0, BitMask(n));
    const auto rep = moment_ratio_check(f, window, 0.5, 0, 0);
    CHECK(rep.exact);
    CHECK(rep.passed());
    REQUIRE(!rep.rows.empty());
    for (const auto& row : rep.rows) CHECK(row.ratio > 0.0);

    // W empty, B the whole region: lambda^2 is the probability that the region is pivotal, i.e. 1
    const BoxWindow whole{BitMask::full(n), BitMask(n, {0}), BitMask(n)};
    const auto rw = moment_ratio_check(f, whole, 1.0, 0, 0);
    CHECK(rw.lambda_sq == Catch::Approx(1.0));
    const auto t = tabulate(f);
    const auto pp = pivotal_profile(t, false);
    CHECK(rw.rows[0].p_x == Catch::Approx(pp.per_bit[0]));

    const BoxWindow bad{BitMask::full(n + 1), BitMask(n + 1, {n}), BitMask(n + 1)};
    CHECK_THROWS_AS(moment_ratio_check(f, bad, 0.5, 0, 0), std::invalid_argument);
}

TEST_CASE("coupled estimators do not depend on the worker count", "[coupled]")
{
    const TableFunction g(tabulate(CrossingFunction(Quad::rectangle(LatticeKind::square_bond, 3, 3))));
    const auto n = g.bit_count();
    const auto A = BitMask::from_u64(n, 0x0f0fULL & ((1ULL << n) - 1));
    const auto a = estimate_S_subset(g, A, 5000, 9, 1);
    const auto b = estimate_S_subset(g, A, 5000, 9, 4);
    CHECK(a.value == b.value);
    CHECK(a.std_error == b.std_error);
}
