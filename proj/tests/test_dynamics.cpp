#include "catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "spectral_perc/dynamics.hpp"

using namespace spectral_perc;

namespace {

bool within4(const Estimate& e, double exact) { return within_sigma(e.value, e.std_error, exact, 0.0, 4.0); }

std::vector<fixtures::NamedFunction> small16()
{
    std::vector<fixtures::NamedFunction> out;
    for (auto& nf : fixtures::small_crossings())
        if (nf.f.bit_count() <= 16) out.push_back(nf);
    return out;
}

} // namespace

TEST_CASE("noise application", "[dynamics][noise]")
{
    const Quad q = Quad::rectangle(LatticeKind::triangular_site, 5, 4);
    const auto w = sample_configuration(q.region_ptr(), 3);
    const auto n = w.size();
    CHECK(apply_noise(w, NoiseSpec::uniform(0.0), 1) == w);
    CHECK(apply_noise(w, NoiseSpec::selective(BitMask(n)), 1) == w);
    CHECK_THROWS_AS(NoiseSpec::block({{0, 1}, {2}}, 0.5).validate(n), std::invalid_argument);
    CHECK_THROWS_AS(apply_noise(w, NoiseSpec::uniform(1.5), 1), std::invalid_argument);
    CHECK_THROWS_AS(apply_noise(w, NoiseSpec::selective(BitMask(n + 1)), 1), std::invalid_argument);

    MeanAccumulator corr, changed;
    for (std::uint64_t s = 0; s < 100000; ++s) {
        const auto x = sample_configuration(q.region_ptr(), derive_seed(1, s));
        const auto y = apply_noise(x, NoiseSpec::uniform(1.0), derive_seed(2, s));
        corr.add(x[7] * y[7]);
        if (s < 20000) {
            const auto z = apply_noise(x, NoiseSpec::uniform(0.3), derive_seed(3, s));
            changed.add(x[4] != z[4]);
        }
    }
    CHECK(std::abs(corr.mean()) <= 4 * corr.std_error());
    // resampled with probability 0.3, changed half of those times
    CHECK(within_sigma(changed.mean(), changed.std_error(), 0.15, 0.0, 4.0));

    const BitMask sel(n, {2, 5});
    const auto y = apply_noise(w, NoiseSpec::selective(sel), 9);
    for (std::size_t i = 0; i < n; ++i)
        if (!sel.test(i)) CHECK(y[i] == w[i]);
}

TEST_CASE("noise correlations match the spectrum", "[dynamics][noise]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto d = walsh_transform(g.table());
        const auto n = g.bit_count();

        const auto zero = noise_correlation(g, NoiseSpec::uniform(0.0), 2000, 1);
        CHECK(zero.correlation.value == 1.0);
        CHECK(zero.correlation.std_error == 0.0);

        for (double eps : {0.1, 0.4}) {
            const auto nc = noise_correlation(g, NoiseSpec::uniform(eps), 20000, derive_seed(2, n));
            CHECK(within4(nc.correlation, exact_noise_correlation(d, NoiseSpec::uniform(eps))));
            // the delta-method error bar needs a non-degenerate f
            if (1.0 - d.coeffs[0] * d.coeffs[0] > 0.01)
                CHECK(within4(nc.psi, noise_stability(d, eps) - d.coeffs[0] * d.coeffs[0]));
            CHECK(nc.psi.value >= -4 * nc.psi.std_error);
        }
        Rng rng(derive_seed(5, n));
        const auto U = BitMask::from_u64(n, rng() & ((std::uint64_t{1} << n) - 1));
        const auto sel = noise_correlation(g, NoiseSpec::selective(U), 20000, 6);
        CHECK(within4(sel.correlation, exact_noise_correlation(d, NoiseSpec::selective(U))));

        const CoarseGrid grid(nf.f.region(), 1.5);
        const auto blocks = NoiseSpec::block(grid_blocks(grid), 0.5);
        const auto bl = noise_correlation(g, blocks, 20000, 7);
        CHECK(within4(bl.correlation, exact_noise_correlation(d, blocks)));
    }
}

TEST_CASE("exact noise stability is monotone and above the squared mean", "[dynamics][noise]")
{
    for (const auto& nf : fixtures::small_crossings()) {
        const auto d = walsh_transform(tabulate(nf.f));
        const double m2 = d.coeffs[0] * d.coeffs[0];
        double prev = noise_stability(d, 0.0);
        for (int k = 1; k <= 20; ++k) {
            const double cur = noise_stability(d, k / 20.0);
            CHECK(cur <= prev + 1e-12);
            CHECK(cur >= m2 - 1e-12);
            prev = cur;
        }
        CHECK(noise_stability(d, 1.0) == Catch::Approx(m2).margin(1e-12));
    }
}

TEST_CASE("clueless and decisive probes", "[dynamics]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto d = walsh_transform(g.table());
        const auto n = g.bit_count();
        const auto all = clueless_decisive_probe(g, BitMask::full(n), 2000, 1);
        CHECK(all.undecided.value == 0.0);
        const auto none = clueless_decisive_probe(g, BitMask(n), 2000, 1);
        CHECK(none.clueless.value == 0.0);

        Rng rng(derive_seed(8, n));
        const auto u = rng() & ((std::uint64_t{1} << n) - 1);
        const auto p = clueless_decisive_probe(g, BitMask::from_u64(n, u), 20000, 3);
        CHECK(within4(p.clueless, spectral_probability(d, [u](std::uint64_t S) { return S != 0 && (S & ~u) == 0; },
                                                       SpectralWeight::unnormalized)));
        CHECK(within4(p.undecided, spectral_probability(d, [u](std::uint64_t S) { return (S & ~u) != 0; },
                                                        SpectralWeight::unnormalized)));
    }
}

TEST_CASE("dynamics traces", "[dynamics]")
{
    const Quad q = Quad::rectangle(LatticeKind::square_bond, 3, 3);
    const auto none = simulate_dynamics(q.region_ptr(), 0.0, 1);
    CHECK(none.events.empty());
    MeanAccumulator count;
    for (std::uint64_t s = 0; s < 2000; ++s) {
        const auto tr = simulate_dynamics(q.region_ptr(), 2.0, s);
        for (std::size_t k = 1; k < tr.events.size(); ++k) REQUIRE(tr.events[k - 1].time < tr.events[k].time);
        count.add(static_cast<double>(tr.events.size()));
        if (s == 0) {
            CHECK(tr.at(0.0) == tr.initial);
            const auto end = tr.at(2.0);
            for (const auto& e : tr.events) static_cast<void>(e);
            if (!tr.events.empty()) CHECK(end[tr.events.back().bit] == tr.events.back().value);
        }
    }
    const double expected = 2.0 * static_cast<double>(q.region().bit_count());
    CHECK(within_sigma(count.mean(), count.std_error(), expected, 0.0, 4.0));
    CHECK_THROWS_AS(simulate_dynamics(q.region_ptr(), -1.0, 1), std::invalid_argument);
}

TEST_CASE("dynamical correlation, noise path and clock path", "[dynamics]")
{
    for (const auto& nf : small16()) {
        INFO(nf.name);
        const TableFunction g(tabulate(nf.f));
        const auto d = walsh_transform(g.table());
        CHECK(dynamical_correlation(g, 0.0, 1000, 1).value == 1.0);
        CHECK(dynamical_correlation(g, 0.0, 1000, 1, DynamicsPath::clock).value == 1.0);
        for (double t : {0.05, 0.5}) {
            const double exact = noise_stability(d, -std::expm1(-t));
            const auto a = dynamical_correlation(g, t, 20000, 2, DynamicsPath::noise);
            const auto b = dynamical_correlation(g, t, 20000, 3, DynamicsPath::clock);
            CHECK(within4(a, exact));
            CHECK(within4(b, exact));
        }
    }

    // zero-one radial crossing: both paths on a small annulus
    const CrossingFunction rad(Quad::annulus(LatticeKind::triangular_site, QuadShape::radial_annulus, 1, 6),
                               ValueMode::zero_one);
    for (double t : {0.01, 0.1, 1.0}) {
        const auto a = dynamical_correlation(rad, t, 20000, 4, DynamicsPath::noise);
        const auto b = dynamical_correlation(rad, t, 20000, 5, DynamicsPath::clock);
        CHECK(within_sigma(a.value, a.std_error, b.value, b.std_error, 4.0));
    }
    CHECK_THROWS_AS(dynamical_correlation(rad, -1.0, 10, 1), std::invalid_argument);
}

TEST_CASE("correlation curves", "[dynamics]")
{
    const TableFunction g(tabulate(CrossingFunction(Quad::rectangle(LatticeKind::triangular_site, 4, 4), ValueMode::zero_one)));
    const auto d = walsh_transform(g.table());
    const std::vector<double> times{0.0, 0.01, 0.1, 0.5, 2.0};
    const auto c = correlation_curve(g, times, 40000, 11);
    REQUIRE(c.points.size() == times.size());
    CHECK(within4(c.mean, d.coeffs[0]));
    for (const auto& p : c.points) {
        INFO("t=" << p.t);
        CHECK(within4(p.correlation, noise_stability(d, -std::expm1(-p.t))));
    }
    CHECK(c.points[0].ratio == Catch::Approx(c.second.value / (c.mean.value * c.mean.value) - 1.0));
    CHECK_THROWS_AS(correlation_curve(g, {0.5, 0.1}, 10, 1), std::invalid_argument);
}

TEST_CASE("switch statistics", "[dynamics]")
{
    const TableFunction dict(fixtures::dictator());
    const auto reg1 = LatticeRegion::build(LatticeKind::triangular_site, 1, 1, 0, 0, 0, 0,
                                           [](int, int, Point) { return true; });
    REQUIRE(reg1->bit_count() == 1);
    CHECK(switch_statistics(dict, simulate_dynamics(reg1, 0.0, 1)).switches == 0);

    const TableFunction constant(TruthTable(1, {1.0, 1.0}));
    CHECK(switch_statistics(constant, simulate_dynamics(reg1, 10.0, 1)).switches == 0);

    MeanAccumulator sw;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const auto st = switch_statistics(dict, simulate_dynamics(reg1, 10.0, derive_seed(4, s)));
        sw.add(static_cast<double>(st.switches));
        if (s == 0) {
            double total = 0.0;
            for (double x : st.sojourns) total += x;
            CHECK(total == Catch::Approx(10.0));
            std::uint64_t hist = 0;
            for (auto h : st.histogram) hist += h;
            CHECK(hist == st.sojourns.size());
        }
    }
    // each ring redraws the bit and changes it half the time: Poisson(T/2)
    CHECK(within_sigma(sw.mean(), std::sqrt(5.0 / 10000.0), 5.0, 0.0, 4.0));
}

TEST_CASE("energy integral", "[dynamics][energy]")
{
    const TableFunction constant(TruthTable(2, {1.0, 1.0, 1.0, 1.0}));
    for (double gamma : {0.0, 0.3, 0.5, 0.8}) {
        const auto rep = energy_integral(constant, gamma, energy_grid(), 100, 1);
        CHECK(rep.value.value == Catch::Approx(2.0 / ((1.0 - gamma) * (2.0 - gamma))).epsilon(1e-9));
        CHECK(rep.partial.back() == Catch::Approx(rep.value.value).epsilon(1e-9));
        CHECK(rep.u_min == kEnergyUMin);
    }
    CHECK_THROWS_AS(energy_integral(constant, 1.0, energy_grid(), 100, 1), std::invalid_argument);
    CHECK_THROWS_AS(energy_integral(constant, 0.5, {0.5, 0.1, 1.0}, 100, 1), std::invalid_argument);

    // gamma = 0: the plain average of E[f(w_s) f(w_t)] / E[f]^2 over s, t uniform
    const TableFunction g(tabulate(CrossingFunction(Quad::rectangle(LatticeKind::triangular_site, 3, 3), ValueMode::zero_one)));
    const auto d = walsh_transform(g.table());
    const auto rep = energy_integral(g, 0.0, energy_grid(1e-4, 8), 40000, 2);
    double direct = 0.0;
    const int K = 20000;
    for (int k = 0; k < K; ++k) {
        const double u = (k + 0.5) / K;
        direct += 2.0 * (1.0 - u) * noise_stability(d, -std::expm1(-u)) / K;
    }
    direct /= d.coeffs[0] * d.coeffs[0];
    CHECK(within4(rep.value, direct));
    for (std::size_t k = 1; k < rep.partial.size(); ++k) CHECK(rep.partial[k] >= rep.partial[k - 1]);
}

TEST_CASE("rho table", "[dynamics]")
{
    // alpha_4(r) = 1 up to the degenerate radius 8, then (8/r)^{5/4}
    auto a4 = [](int r) { return r <= 8 ? 1.0 : std::pow(8.0 / r, 1.25); };
    const auto t = rho_table(a4, {1, 10, 100, 1000}, 10000);
    CHECK(t.rho[0] == 1);
    for (std::size_t k = 0; k < t.s.size(); ++k) {
        CHECK(t.rho_sq_alpha4[k] >= t.s[k]);
        if (k > 0) CHECK(t.rho[k] >= t.rho[k - 1]);
        CHECK(t.rho_sq_alpha4[k] <= 4 * t.s[k] + 4);
    }
    CHECK_THROWS_AS(rho_table(nullptr, {1}, 10), std::invalid_argument);
    CHECK_THROWS_AS(rho_table([](int) { return std::nan(""); }, {1}, 10), std::invalid_argument);
    CHECK_THROWS_AS(rho_table(a4, {1e9}, 10), std::out_of_range);
}

TEST_CASE("lower tail profile", "[dynamics]")
{
    for (const auto& nf : fixtures::small_crossings()) {
        const auto d = walsh_transform(tabulate(nf.f));
        const double mean = spectral_moments(d).mean;
        std::vector<double> lambdas;
        for (int k = 0; k <= 40; ++k) lambdas.push_back(k / 10.0);
        const auto prof = lower_tail_profile(d, lambdas);
        for (std::size_t k = 1; k < prof.size(); ++k) CHECK(prof[k] >= prof[k - 1]);
        for (std::size_t k = 0; k < prof.size(); ++k)
            if (lambdas[k] >= 1.0 / mean) CHECK(prof[k] > 0.0);
        CHECK(prof[0] == 0.0);
    }
}

TEST_CASE("pivotal moments equal spectral moments", "[dynamics]")
{
    for (const auto& nf : fixtures::small_crossings()) {
        INFO(nf.name);
        const auto d = walsh_transform(tabulate(nf.f));
        const auto sm = spectral_moments(d);
        const auto pm = estimate_pivotal_moments(nf.f, 20000, 13);
        CHECK(within4(pm.mean, sm.mean));
        CHECK(within4(pm.second, sm.second));
    }
}

TEST_CASE("square-bond edge classes", "[dynamics]")
{
    const Quad q = Quad::rectangle(LatticeKind::square_bond, 4, 4);
    const auto v = edge_bits(q.region(), true);
    const auto h = edge_bits(q.region(), false);
    CHECK(!v.intersects(h));
    CHECK((v | h) == BitMask::full(q.region().bit_count()));
    CHECK_THROWS_AS(edge_bits(Quad::rectangle(LatticeKind::triangular_site, 3, 3).region(), true), std::invalid_argument);
}
