#pragma once

// Experiment runner behind the command-line tool: configuration, one
// function per experiment, JSONL/CSV records and log-log reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral_perc/arms.hpp"
#include "spectral_perc/boolfn.hpp"
#include "spectral_perc/coupled.hpp"
#include "spectral_perc/dynamics.hpp"
#include "spectral_perc/lattice.hpp"
#include "spectral_perc/ldp.hpp"
#include "spectral_perc/replicas.hpp"
#include "spectral_perc/stats.hpp"

namespace spectral_perc::cli {

using json = nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr std::size_t kHardBitCap = 24;

/// Invalid configuration or a resource cap exceeded; maps to exit code 2.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
    std::string experiment;
    LatticeKind lattice = LatticeKind::triangular_site;
    std::string shape = "rectangle"; // rectangle | annulus | half | quarter
    std::string geometry = "full";   // arm events: full | half | quarter
    int R = 8;
    int r = 1;
    int r2 = 0; // middle radius of a quasi-multiplicativity triple; 0 = geometric mean
    int j = 4;
    std::vector<int> radii;
    std::vector<double> eps, t, lambda;
    std::uint64_t samples = 10000;
    std::uint64_t seed = 1;
    double gamma = 0.5;
    double density = 0.3;
    double cell = 1.5;
    double w_density = 0.0;
    int choices = 5;
    bool compare_paths = false;
    std::string kind = "adversarial-random";
    int coords = 4;
    std::size_t bit_cap = 20;
    std::string out;
    std::string csv;

    json to_json() const
    {
        return json{{"experiment", experiment}, {"lattice", to_string(lattice)}, {"shape", shape},
                    {"geometry", geometry},     {"R", R},                        {"r", r},
                    {"r2", r2},                 {"j", j},                        {"radii", radii},
                    {"eps", eps},               {"t", t},                        {"lambda", lambda},
                    {"samples", samples},       {"seed", seed},                  {"gamma", gamma},
                    {"density", density},       {"cell", cell},                  {"w_density", w_density},
                    {"choices", choices},       {"compare_paths", compare_paths}, {"kind", kind},
                    {"coords", coords},         {"bit_cap", bit_cap}};
    }
};

struct ResultRecord {
    std::string experiment;
    std::string lattice;
    json spec;
    std::string quantity;
    std::string param; // sweep variable, empty if none
    double x = 0.0;
    double value = 0.0;
    double stderr_ = 0.0;
    std::uint64_t n = 0;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    json extra = json::object();
    std::string timestamp;

    json to_json() const
    {
        json j{{"experiment", experiment}, {"lattice", lattice}, {"spec", spec},       {"quantity", quantity},
               {"value", value},           {"stderr", stderr_},  {"n", n},             {"seed", seed},
               {"wall_ms", wall_ms},       {"version", kVersion}, {"timestamp", timestamp}};
        if (!param.empty()) {
            j["param"] = param;
            j["x"] = x;
        }
        if (!extra.empty()) j["extra"] = extra;
        return j;
    }

    static ResultRecord from_json(const json& j)
    {
        ResultRecord r;
        r.experiment = j.at("experiment").get<std::string>();
        r.lattice = j.value("lattice", "");
        r.spec = j.value("spec", json::object());
        r.quantity = j.value("quantity", "");
        r.param = j.value("param", "");
        r.x = j.value("x", 0.0);
        r.value = j.at("value").get<double>();
        r.stderr_ = j.value("stderr", 0.0);
        r.n = j.value("n", std::uint64_t{0});
        r.seed = j.value("seed", std::uint64_t{0});
        r.wall_ms = j.value("wall_ms", 0.0);
        r.extra = j.value("extra", json::object());
        r.timestamp = j.value("timestamp", "");
        return r;
    }
};

struct RunResult {
    std::vector<ResultRecord> records;
    bool ok = true;
    std::vector<std::string> notes;
};

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace detail {

struct Recorder {
    const ExperimentConfig& cfg;
    RunResult& res;
    json spec = cfg.to_json();
    std::string stamp = utc_timestamp();

    ResultRecord& add(const std::string& quantity, double value, double se, std::uint64_t n, double wall_ms,
                      const std::string& param = "", double x = 0.0)
    {
        ResultRecord r;
        r.experiment = cfg.experiment;
        r.lattice = to_string(cfg.lattice);
        r.spec = spec;
        r.quantity = quantity;
        r.param = param;
        r.x = x;
        r.value = value;
        r.stderr_ = se;
        r.n = n;
        r.seed = cfg.seed;
        r.wall_ms = wall_ms;
        r.timestamp = stamp;
        res.records.push_back(std::move(r));
        return res.records.back();
    }

    ResultRecord& add(const std::string& quantity, const Estimate& e, const std::string& param = "", double x = 0.0)
    {
        return add(quantity, e.value, e.std_error, e.n, e.wall_ms, param, x);
    }

    void fail(const std::string& why)
    {
        res.ok = false;
        res.notes.push_back(why);
    }
};

inline QuadShape parse_shape(const std::string& s)
{
    if (s == "rectangle") return QuadShape::rectangle_lr;
    if (s == "annulus" || s == "full") return QuadShape::radial_annulus;
    if (s == "half") return QuadShape::half_plane;
    if (s == "quarter") return QuadShape::quarter_plane;
    throw ConfigError("unknown shape '" + s + "' (rectangle, annulus, half, quarter)");
}

inline Quad make_quad(const ExperimentConfig& cfg)
{
    const auto shape = parse_shape(cfg.shape);
    if (shape == QuadShape::rectangle_lr) return Quad::rectangle(cfg.lattice, cfg.R, cfg.R);
    if (cfg.r >= cfg.R) throw ConfigError("annular shapes need r < R");
    return Quad::annulus(cfg.lattice, shape, cfg.r, cfg.R);
}

// Pre-flight for experiments that tabulate 2^n values.
inline void require_tabulable(const CrossingFunction& f, const ExperimentConfig& cfg)
{
    if (f.bit_count() > cfg.bit_cap)
        throw ConfigError(cfg.experiment + ": " + std::to_string(f.bit_count()) + " bits exceed the cap of " +
                          std::to_string(cfg.bit_cap) + " for exact enumeration");
}

inline bool tabulable(const CrossingFunction& f, const ExperimentConfig& cfg) { return f.bit_count() <= cfg.bit_cap; }

inline Point region_center(const LatticeRegion& reg)
{
    return {(reg.lower().x + reg.upper().x) / 2.0, (reg.lower().y + reg.upper().y) / 2.0};
}

inline std::vector<double> or_default(const std::vector<double>& v, std::vector<double> d) { return v.empty() ? d : v; }

// Check that an estimate lies within 4 sigma of an exact value.
inline bool agrees(Recorder& rec, const ResultRecord& r, double exact, const std::string& what)
{
    const bool ok = within_sigma(r.value, r.stderr_, exact, 0.0, 4.0);
    if (!ok) rec.fail(what + ": estimate " + std::to_string(r.value) + " vs exact " + std::to_string(exact));
    return ok;
}

inline std::vector<std::int8_t> to_bits(std::uint64_t mask, std::size_t n)
{
    std::vector<std::int8_t> b(n);
    mask_to_bits(mask, b);
    return b;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments

inline RunResult run_exact_spectrum(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    Stopwatch clock;
    const auto d = walsh_transform(tabulate(f));
    const auto mom = spectral_moments(d);
    const auto sizes = size_distribution(d);
    const double ms = clock.elapsed_ms();
    rec.add("norm_sq", d.norm_sq, 0.0, 0, ms);
    rec.add("mean_size", mom.mean, 0.0, 0, ms);
    rec.add("second_size", mom.second, 0.0, 0, ms);
    rec.add("entropy", spectral_entropy(d), 0.0, 0, ms);
    for (std::size_t k = 0; k < sizes.size(); ++k) rec.add("size_probability", sizes[k], 0.0, 0, ms, "k", static_cast<double>(k));
    if (std::abs(d.norm_sq - 1.0) > 1e-10) rec.fail("Parseval violated");
    return res;
}

inline RunResult run_identity_suite(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    Stopwatch clock;
    const auto rep = identity_suite(tabulate(f), cfg.seed, 20);
    const double ms = clock.elapsed_ms();
    for (const auto& c : rep.checks) {
        auto& r = rec.add(c.name, c.max_error, 0.0, 0, ms);
        r.extra = {{"tolerance", c.tolerance}, {"passed", c.passed()}};
        if (!c.passed()) rec.fail(c.name + " identity failed");
    }
    return res;
}

inline RunResult run_arm_prob(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const auto radii = cfg.radii.empty() ? std::vector<int>{cfg.R} : cfg.radii;
    for (int R : radii) {
        ArmSpec spec{cfg.lattice, parse_geometry(cfg.geometry), {}, cfg.r, R, cfg.j};
        rec.add("alpha", estimate_alpha(spec, cfg.samples, cfg.seed), "R", R);
    }
    return res;
}

inline RunResult run_quasimult(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const int r1 = cfg.r, r3 = cfg.R;
    const int r2 = cfg.r2 > 0 ? cfg.r2 : static_cast<int>(std::lround(std::sqrt(static_cast<double>(r1) * r3)));
    if (!(r1 <= r2 && r2 <= r3)) throw ConfigError("quasimult: need r <= r2 <= R");
    ArmSpec base{cfg.lattice, parse_geometry(cfg.geometry), {}, r1, r3, cfg.j};
    const bool beta = cfg.w_density > 0.0;
    const auto rep = beta ? beta_quasimult_report(base, ResampleSet::random_cells(cfg.seed, cfg.cell, cfg.w_density), r1,
                                                  r2, r3, cfg.samples, cfg.seed)
                          : quasimult_report(base, r1, r2, r3, cfg.samples, cfg.seed);
    rec.add("a12", rep.a12, "r2", r2);
    rec.add("a23", rep.a23, "r2", r2);
    rec.add("a13", rep.a13, "r2", r2);
    auto& q = rec.add("ratio", rep.ratio, rep.ratio_stderr, rep.a13.n, rep.a13.wall_ms, "r2", r2);
    q.extra = {{"violations", rep.violations}, {"coupled", beta}};
    if (rep.violations != 0) rec.fail("quasimult: inclusion violated in " + std::to_string(rep.violations) + " replicas");
    return res;
}

inline RunResult run_beffara(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const int k = cfg.j >= 3 && cfg.j % 2 == 1 ? (cfg.j - 1) / 2 : 2;
    const auto radii = cfg.radii.empty() ? std::vector<int>{16, 32, 64} : cfg.radii;
    const auto rep = beffara_check(cfg.lattice, k, cfg.r, radii, cfg.samples, cfg.seed);
    for (const auto& row : rep.rows) {
        auto& r = rec.add("ratio", row.ratio, row.ratio_stderr, row.a1.n, row.a1.wall_ms, "R", row.R);
        r.extra = {{"a1", row.a1.value}, {"a2k", row.a2k.value}, {"a2k1", row.a2k1.value}, {"k", k}};
    }
    if (!rep.non_increasing(3.0)) rec.fail("beffara: ratio increases by more than 3 sigma");
    return res;
}

// Random (A) and (B, W) choices on a tabulated function; the check passes
// when at least 95% of the estimates are within 4 sigma of the spectrum.
inline RunResult run_coupled_prob(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    const auto t = tabulate(f);
    const auto d = walsh_transform(t);
    const TableFunction g(t);
    const auto n = t.n;
    Rng rng(derive_seed(cfg.seed, 0xc0));
    int within = 0, total = 0;
    for (int c = 0; c < cfg.choices; ++c) {
        const std::uint64_t A = rng() & ((std::uint64_t{1} << n) - 1);
        auto& ra = rec.add("S_subset_A", estimate_S_subset(g, BitMask::from_u64(n, A), cfg.samples, derive_seed(cfg.seed, c, 1)),
                           "choice", c);
        const double ea = spectral_subset_weight(d, A);
        ra.extra = {{"A", A}, {"exact", ea}};
        within += within_sigma(ra.value, ra.stderr_, ea, 0.0, 4.0);
        ++total;

        std::uint64_t B = 0, W = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = rng() % 3;
            if (u == 0) B |= std::uint64_t{1} << i;
            if (u == 1) W |= std::uint64_t{1} << i;
        }
        if (B == 0) {
            B = std::uint64_t{1} << (rng() % n);
            W &= ~B;
        }
        auto& rb = rec.add("S_hits_B_avoids_W",
                           estimate_S_hits_B_avoids_W(g, BitMask::from_u64(n, B), BitMask::from_u64(n, W), cfg.samples,
                                                      derive_seed(cfg.seed, c, 2)),
                           "choice", c);
        const double eb = spectral_hits_avoids_weight(d, B, W);
        rb.extra = {{"B", B}, {"W", W}, {"exact", eb}};
        within += within_sigma(rb.value, rb.stderr_, eb, 0.0, 4.0);
        ++total;
    }
    if (total > 0 && within < 0.95 * total)
        rec.fail("coupled-prob: only " + std::to_string(within) + "/" + std::to_string(total) + " within 4 sigma");
    return res;
}

inline RunResult run_lambda_sq(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    const auto t = tabulate(f);
    const TableFunction g(t);
    const auto n = t.n;
    Rng rng(derive_seed(cfg.seed, 0x1a));
    int within = 0, total = 0;
    for (int c = 0; c < cfg.choices; ++c) {
        std::uint64_t B = 0, W = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = rng() % 4;
            if (u == 0) B |= std::uint64_t{1} << i;
            if (u == 1) W |= std::uint64_t{1} << i;
        }
        if (B == 0) {
            B = std::uint64_t{1} << (rng() % n);
            W &= ~B;
        }
        auto& r = rec.add("lambda_sq",
                          estimate_lambda_sq(g, BitMask::from_u64(n, B), BitMask::from_u64(n, W), cfg.samples,
                                             derive_seed(cfg.seed, c, 3)),
                          "choice", c);
        const double exact = exact_lambda_sq(t, B, W);
        r.extra = {{"B", B}, {"W", W}, {"exact", exact}};
        within += within_sigma(r.value, r.stderr_, exact, 0.0, 4.0);
        ++total;
    }
    if (total > 0 && within < 0.95 * total)
        rec.fail("lambda-sq: only " + std::to_string(within) + "/" + std::to_string(total) + " within 4 sigma");
    return res;
}

inline RunResult run_thinning(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    const auto d = walsh_transform(tabulate(f));
    const auto window = make_box_window(f.region(), detail::region_center(f.region()), cfg.cell, BitMask(f.bit_count()));
    const auto tr = thinning_experiment(d, window, cfg.density, cfg.samples, cfg.seed);
    auto& r = rec.add("conditional", tr.conditional);
    r.extra = {{"exact", tr.exact},
               {"density", tr.density},
               {"conditioning_hits", tr.conditioning_hits},
               {"successes", tr.successes},
               {"wilson_lo", tr.wilson.lo},
               {"wilson_hi", tr.wilson.hi},
               {"inconclusive", tr.inconclusive}};
    if (tr.inconclusive) rec.fail("thinning: fewer than 100 conditioning events");
    else detail::agrees(rec, r, tr.exact, "thinning");
    return res;
}

namespace detail {

inline void noise_sweep(Recorder& rec, const CrossingFunction& f, const std::vector<NoiseSpec>& specs,
                        const std::vector<double>& xs, const std::string& param, const ExperimentConfig& cfg)
{
    const bool exact = tabulable(f, cfg);
    SpectralDistribution d;
    if (exact) d = walsh_transform(tabulate(f));
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const auto nc = noise_correlation(f, specs[k], cfg.samples, derive_seed(cfg.seed, k));
        auto& rc = rec.add("correlation", nc.correlation, param, xs[k]);
        rec.add("psi", nc.psi, param, xs[k]);
        // Jensen: E[f(x) f(y)] >= E[f]^2 for these noise operators
        const double floor = nc.mean_x.value * nc.mean_y.value;
        if (rc.value < floor - 4.0 * rc.stderr_) rec.fail("correlation below E[f]^2 by more than 4 sigma");
        if (exact) {
            const double e = exact_noise_correlation(d, specs[k]);
            rc.extra = {{"exact", e}};
            agrees(rec, rc, e, "noise correlation");
        }
    }
}

} // namespace detail

inline RunResult run_noise_corr(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    const auto eps = detail::or_default(cfg.eps, {0.01, 0.05, 0.1, 0.2, 0.5});
    std::vector<NoiseSpec> specs;
    for (double e : eps) specs.push_back(NoiseSpec::uniform(e));
    detail::noise_sweep(rec, f, specs, eps, "eps", cfg);
    return res;
}

// Vertical edges of Z^2 resampled, horizontal ones kept.
inline RunResult run_selective_noise(const ExperimentConfig& cfg)
{
    if (cfg.lattice != LatticeKind::square_bond) throw ConfigError("selective-noise: square-bond lattice only");
    RunResult res;
    detail::Recorder rec{cfg, res};
    const auto radii = cfg.radii.empty() ? std::vector<int>{cfg.R} : cfg.radii;
    for (int R : radii) {
        const CrossingFunction f(Quad::rectangle(cfg.lattice, R, R));
        std::vector<NoiseSpec> specs{NoiseSpec::selective(edge_bits(f.region(), true))};
        detail::noise_sweep(rec, f, specs, {static_cast<double>(R)}, "R", cfg);
    }
    return res;
}

inline RunResult run_block_noise(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    const auto blocks = grid_blocks(CoarseGrid(f.region(), cfg.cell));
    const auto eps = detail::or_default(cfg.eps, {0.05, 0.1, 0.2, 0.5});
    std::vector<NoiseSpec> specs;
    for (double e : eps) specs.push_back(NoiseSpec::block(blocks, e));
    detail::noise_sweep(rec, f, specs, eps, "eps", cfg);
    return res;
}

inline std::vector<double> default_times()
{
    std::vector<double> t;
    for (int k = 8; k >= 2; --k) t.push_back(std::ldexp(1.0, -k));
    return t;
}

/// Correlation ratio E[f(w_0) f(w_t)] / E[f]^2 - 1 of the 0/1 crossing
/// indicator, with a weighted log-log slope over t.
inline RunResult run_dynamics_corr(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg), ValueMode::zero_one);
    auto times = detail::or_default(cfg.t, default_times());
    std::sort(times.begin(), times.end());
    const auto curve = correlation_curve(f, times, cfg.samples, cfg.seed);
    rec.add("mean", curve.mean);
    std::vector<double> xs, ys, ses;
    for (const auto& p : curve.points) {
        auto& r = rec.add("ratio", p.ratio, p.ratio_stderr, p.correlation.n, p.correlation.wall_ms, "t", p.t);
        r.extra = {{"correlation", p.correlation.value}, {"correlation_stderr", p.correlation.std_error}};
        if (p.t > 0 && p.ratio > 0 && p.ratio_stderr > 0) {
            xs.push_back(p.t);
            ys.push_back(p.ratio);
            ses.push_back(p.ratio_stderr);
        }
    }
    if (xs.size() >= 3) {
        const auto w = fit_loglog(xs, ys, ses);
        const auto u = fit_loglog(xs, ys);
        auto& s = rec.add("slope", w.slope, w.slope_stderr, cfg.samples, 0.0);
        s.extra = {{"unweighted_slope", u.slope}, {"unweighted_stderr", u.slope_stderr}, {"points", w.points}};
    }
    if (cfg.compare_paths) {
        for (std::size_t k = 0; k < times.size(); ++k) {
            const auto a = dynamical_correlation(f, times[k], cfg.samples, derive_seed(cfg.seed, k, 1), DynamicsPath::noise);
            const auto b = dynamical_correlation(f, times[k], cfg.samples, derive_seed(cfg.seed, k, 2), DynamicsPath::clock);
            rec.add("noise_path", a, "t", times[k]);
            rec.add("clock_path", b, "t", times[k]);
            if (!within_sigma(a.value, a.std_error, b.value, b.std_error, 4.0))
                rec.fail("noise and clock paths disagree at t=" + std::to_string(times[k]));
        }
    }
    return res;
}

inline RunResult run_energy(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg), ValueMode::zero_one);
    const auto rep = energy_integral(f, cfg.gamma, energy_grid(), cfg.samples, cfg.seed);
    auto& r = rec.add("energy", rep.value, "gamma", cfg.gamma);
    r.extra = {{"cutoff_part", rep.cutoff_part}, {"u_min", rep.u_min}};
    if (!std::isfinite(rep.value.value)) rec.fail("energy integral is not finite");
    return res;
}

/// Generated instances checked exhaustively; passes with zero violations of
/// the conclusions among instances satisfying the hypothesis.
inline RunResult run_ldp_check(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const auto kind = parse_instance_kind(cfg.kind);
    Stopwatch clock;
    std::uint64_t generated = 0, checked = 0, violations = 0;
    double worst_y0 = 0.0, worst_tail = 0.0; // largest lhs / rhs
    for (std::uint64_t i = 0; i < cfg.samples; ++i) {
        const auto g = generate_instance(kind, static_cast<std::size_t>(cfg.coords), derive_seed(cfg.seed, i));
        ++generated;
        if (!(g.a > 0.0) || !check_hypothesis(g.pmf, g.a).holds()) continue;
        ++checked;
        const auto c = check_conclusion(g.pmf, g.a);
        if (!c.holds()) ++violations;
        if (!c.y0.vacuous && c.y0.rhs > 0) worst_y0 = std::max(worst_y0, c.y0.lhs / c.y0.rhs);
        for (const auto& tc : c.tail)
            if (tc.check.rhs > 0) worst_tail = std::max(worst_tail, tc.check.lhs / tc.check.rhs);
    }
    const double ms = clock.elapsed_ms();
    auto& r = rec.add("conclusion_violations", static_cast<double>(violations), 0.0, checked, ms);
    r.extra = {{"generated", generated}, {"hypothesis_holds", checked}};
    rec.add("worst_ratio_y0", worst_y0, 0.0, checked, ms);
    rec.add("worst_ratio_tail", worst_tail, 0.0, checked, ms);
    if (violations) rec.fail("ldp-check: " + std::to_string(violations) + " instances violate the conclusion");
    if (checked == 0) rec.fail("ldp-check: no instance satisfied the hypothesis");
    return res;
}

/// E|P| on the R x R rectangle, and its ratio to R^2 alpha_4(2j, R).
inline RunResult run_pivotal_moments(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const auto radii = cfg.radii.empty() ? std::vector<int>{cfg.R} : cfg.radii;
    for (int R : radii) {
        const CrossingFunction f(Quad::rectangle(cfg.lattice, R, R));
        const auto pm = estimate_pivotal_moments(f, cfg.samples, cfg.seed);
        rec.add("mean_pivotal", pm.mean, "R", R);
        rec.add("second_pivotal", pm.second, "R", R);
        const ArmSpec spec{cfg.lattice, ArmGeometry::full, {}, 2 * cfg.j, R, 4};
        const auto a4 = estimate_alpha(spec, cfg.samples, derive_seed(cfg.seed, 4, 4));
        rec.add("alpha4", a4, "R", R);
        if (a4.value > 0) {
            const double scale = static_cast<double>(R) * R * a4.value;
            const double ratio = pm.mean.value / scale;
            const double rel = std::hypot(pm.mean.std_error / pm.mean.value, a4.std_error / a4.value);
            auto& r = rec.add("ratio", ratio, ratio * rel, pm.mean.n, pm.mean.wall_ms + a4.wall_ms, "R", R);
            r.extra = {{"inner_radius", 2 * cfg.j}};
        }
    }
    return res;
}

inline RunResult run_lower_tail(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    detail::require_tabulable(f, cfg);
    Stopwatch clock;
    const auto d = walsh_transform(tabulate(f));
    const auto lam = detail::or_default(cfg.lambda, {0.1, 0.25, 0.5, 1.0});
    const auto p = lower_tail_profile(d, lam);
    const double ms = clock.elapsed_ms();
    for (std::size_t k = 0; k < lam.size(); ++k) rec.add("lower_tail", p[k], 0.0, 0, ms, "lambda", lam[k]);
    const CoarseGrid grid(f.region(), cfg.cell);
    const auto cd = coarse_count_distribution(d, grid);
    for (std::size_t k = 0; k < cd.size(); ++k) rec.add("coarse_count", cd[k], 0.0, 0, ms, "k", static_cast<double>(k));
    return res;
}

/// U = bits in the box of half-side `cell` around the centre of the quad.
inline RunResult run_clueless_probe(const ExperimentConfig& cfg)
{
    RunResult res;
    detail::Recorder rec{cfg, res};
    const CrossingFunction f(detail::make_quad(cfg));
    const auto U = f.region().box_bits(detail::region_center(f.region()), cfg.cell);
    if (U.empty()) throw ConfigError("clueless-probe: the window around the centre has no bits");
    const auto cd = clueless_decisive_probe(f, U, cfg.samples, cfg.seed);
    auto& a = rec.add("clueless", cd.clueless);
    auto& b = rec.add("undecided", cd.undecided);
    if (detail::tabulable(f, cfg)) {
        const auto d = walsh_transform(tabulate(f));
        const auto u = U.to_u64();
        const double inside = spectral_subset_weight(d, u), empty = d.weight(0);
        a.extra = {{"exact", inside - empty}};
        b.extra = {{"exact", d.norm_sq - inside}};
        detail::agrees(rec, a, inside - empty, "clueless");
        detail::agrees(rec, b, d.norm_sq - inside, "undecided");
    }
    return res;
}

using ExperimentFn = std::function<RunResult(const ExperimentConfig&)>;

inline const std::map<std::string, ExperimentFn>& experiments()
{
    static const std::map<std::string, ExperimentFn> table{
        {"exact-spectrum", run_exact_spectrum}, {"arm-prob", run_arm_prob},
        {"quasimult", run_quasimult},           {"beffara", run_beffara},
        {"coupled-prob", run_coupled_prob},     {"lambda-sq", run_lambda_sq},
        {"thinning", run_thinning},             {"noise-corr", run_noise_corr},
        {"selective-noise", run_selective_noise}, {"block-noise", run_block_noise},
        {"dynamics-corr", run_dynamics_corr},   {"energy", run_energy},
        {"ldp-check", run_ldp_check},           {"pivotal-moments", run_pivotal_moments},
        {"lower-tail", run_lower_tail},         {"clueless-probe", run_clueless_probe},
        {"identity-suite", run_identity_suite},
    };
    return table;
}

inline void validate(const ExperimentConfig& cfg)
{
    if (!experiments().count(cfg.experiment)) throw ConfigError("unknown experiment '" + cfg.experiment + "'");
    if (cfg.R < 1) throw ConfigError("--R must be at least 1");
    if (cfg.r < 1) throw ConfigError("--r must be at least 1");
    if (cfg.j < 1) throw ConfigError("--j must be at least 1");
    if (cfg.samples < 2 && cfg.experiment != "ldp-check") throw ConfigError("--samples must be at least 2");
    if (cfg.samples < 1) throw ConfigError("--samples must be at least 1");
    for (int R : cfg.radii)
        if (R < 1) throw ConfigError("--radii entries must be at least 1");
    for (double e : cfg.eps)
        if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("--eps entries must lie in [0, 1]");
    for (double t : cfg.t)
        if (!(t >= 0.0)) throw ConfigError("--t entries must be non-negative");
    for (double l : cfg.lambda)
        if (!(l > 0.0)) throw ConfigError("--lambda entries must be positive");
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("--gamma must lie in [0, 1)");
    if (!(cfg.density > 0.0 && cfg.density <= 1.0)) throw ConfigError("--density must lie in (0, 1]");
    if (!(cfg.w_density >= 0.0 && cfg.w_density <= 1.0)) throw ConfigError("--w-density must lie in [0, 1]");
    if (!(cfg.cell > 0.0)) throw ConfigError("--cell must be positive");
    if (cfg.choices < 1) throw ConfigError("--choices must be at least 1");
    if (cfg.coords < 1 || cfg.coords > static_cast<int>(kLdpMaxCoordinates)) throw ConfigError("--n must be in [1, 12]");
    if (cfg.bit_cap > kHardBitCap) throw ConfigError("--bit-cap cannot exceed 24");
    detail::parse_shape(cfg.shape);
    try {
        parse_geometry(cfg.geometry);
        parse_instance_kind(cfg.kind);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

/// Validates and runs; library argument errors raised before any sampling
/// are reported as configuration errors.
inline RunResult run(const ExperimentConfig& cfg)
{
    validate(cfg);
    try {
        return experiments().at(cfg.experiment)(cfg);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::out_of_range& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Output

inline void write_jsonl(const std::vector<ResultRecord>& records, std::ostream& out)
{
    for (const auto& r : records) out << r.to_json().dump() << '\n';
}

inline void write_csv(const std::vector<ResultRecord>& records, std::ostream& out)
{
    out << "experiment,lattice,quantity,param,x,value,stderr,n,seed\n";
    for (const auto& r : records) {
        out << r.experiment << ',' << r.lattice << ',' << r.quantity << ',' << r.param << ',';
        if (!r.param.empty()) out << json(r.x).dump();
        out << ',' << json(r.value).dump() << ',' << json(r.stderr_).dump() << ',' << r.n << ',' << r.seed << '\n';
    }
}

inline std::vector<ResultRecord> read_jsonl(std::istream& in)
{
    std::vector<ResultRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(ResultRecord::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

struct SlopeReport {
    std::string experiment;
    std::string quantity;
    std::string param;
    SlopeFit fit;
    bool weighted = false;
    std::vector<double> x, y, se;
};

/// Log-log least squares of value against the sweep variable, weighted by
/// 1/var(log y) when every point carries a positive standard error.
inline SlopeReport fit_records(const std::vector<ResultRecord>& records, const std::string& experiment,
                               const std::string& quantity, const std::string& param)
{
    SlopeReport rep{experiment, quantity, param, {}, false, {}, {}, {}};
    for (const auto& r : records) {
        if (!experiment.empty() && r.experiment != experiment) continue;
        if (!quantity.empty() && r.quantity != quantity) continue;
        if (r.param != param) continue;
        rep.x.push_back(r.x);
        rep.y.push_back(r.value);
        rep.se.push_back(r.stderr_);
    }
    if (rep.x.size() < 3)
        throw std::invalid_argument("report: " + std::to_string(rep.x.size()) + " matching points, need at least 3");
    rep.weighted = std::all_of(rep.se.begin(), rep.se.end(), [](double s) { return s > 0; });
    rep.fit = rep.weighted ? fit_loglog(rep.x, rep.y, rep.se) : fit_loglog(rep.x, rep.y);
    return rep;
}

} // namespace spectral_perc::cli
