#pragma once

// Alternating multi-arm events in annuli, half-annuli and quarter-annuli,
// and Monte Carlo estimators for their probabilities.
//
// Detection works on crossing clusters: monochromatic clusters that touch
// the inner ring and reach the outer boundary. Two crossing clusters never
// interleave along the ring, so the colours of crossing clusters, read in
// ring order and compressed into runs, determine which alternating patterns
// are realisable. The one case runs cannot settle (odd j around a full
// annulus with exactly as many white runs as needed black runs) asks whether
// some white run carries two disjoint arms, answered by a unit-capacity
// max-flow.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice.hpp"
#include "random.hpp"
#include "replicas.hpp"
#include "stats.hpp"

namespace spectral_perc {

enum class ArmGeometry { full, half_plane, quarter_plane };

inline QuadShape to_shape(ArmGeometry g)
{
    switch (g) {
    case ArmGeometry::half_plane: return QuadShape::half_plane;
    case ArmGeometry::quarter_plane: return QuadShape::quarter_plane;
    default: return QuadShape::radial_annulus;
    }
}

inline std::string to_string(ArmGeometry g) { return to_string(to_shape(g)); }

inline ArmGeometry parse_geometry(const std::string& s)
{
    if (s == "full" || s == "radial-annulus") return ArmGeometry::full;
    if (s == "half" || s == "half-plane") return ArmGeometry::half_plane;
    if (s == "quarter" || s == "quarter-plane") return ArmGeometry::quarter_plane;
    throw std::invalid_argument("unknown arm geometry '" + s + "'");
}

/// The j-arm event in the annulus B(center, R) \ B(center, r), possibly
/// clipped to a half or quarter plane.
struct ArmSpec {
    LatticeKind lattice = LatticeKind::triangular_site;
    ArmGeometry geometry = ArmGeometry::full;
    Point center{};
    int r = 1;
    int R = 2;
    int j = 1;

    bool cyclic() const noexcept { return geometry == ArmGeometry::full; }

    /// alpha_j(r, R) = 1 by convention when r >= R.
    bool trivial() const noexcept { return r >= R; }

    /// Colours in ring order, +1 white and -1 black. Alternating, with one
    /// extra white for odd j (around a full annulus the two whites are
    /// neighbours; in clipped geometries the sequence starts and ends white).
    std::vector<int> pattern() const
    {
        std::vector<int> p(static_cast<std::size_t>(std::max(j, 0)));
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = i % 2 == 0 ? 1 : -1;
        return p;
    }

    void validate() const
    {
        if (j < 1) throw std::invalid_argument("ArmSpec: arm count must be at least 1");
        if (r < 1) throw std::invalid_argument("ArmSpec: inner radius must be at least 1");
        if (R < 1) throw std::invalid_argument("ArmSpec: outer radius must be at least 1");
    }
};

inline Quad make_arm_quad(const ArmSpec& spec)
{
    spec.validate();
    if (spec.trivial()) throw std::invalid_argument("make_arm_quad: r >= R has no annulus");
    return Quad::annulus(spec.lattice, to_shape(spec.geometry), spec.r, spec.R, spec.center);
}

/// Colour field defined tile by tile from a hash of (seed, lattice
/// coordinates). Two regions evaluated with the same seed see the same
/// colours on shared tiles, which couples different radii exactly.
struct HashedColours {
    std::uint64_t seed = 0;

    bool bit_white(int a, int b) const noexcept
    {
        return (mix64(seed ^ mix64(detail::coord_key(a, b))) >> 63) != 0;
    }

    bool tile_white(const LatticeRegion& reg, std::size_t t) const noexcept
    {
        const Tile& tile = reg.tile(t);
        if (tile.fixed == TileColor::white) return true;
        if (tile.fixed == TileColor::black) return false;
        return bit_white(tile.a, tile.b);
    }

    /// The same field written out as a configuration of `region`.
    Configuration materialize(const RegionPtr& region) const
    {
        std::vector<std::int8_t> bits(region->bit_count());
        for (std::size_t b = 0; b < bits.size(); ++b) {
            const Tile& t = region->tile(region->tile_of_bit(b));
            bits[b] = bit_white(t.a, t.b) ? 1 : -1;
        }
        return Configuration(region, std::move(bits));
    }
};

/// Reusable arm-event detector for one annulus and arm count. Not
/// thread-safe; give each worker its own copy.
class ArmDetector {
public:
    ArmDetector(std::shared_ptr<const Quad> quad, int j) : quad_(std::move(quad)), j_(j)
    {
        if (!quad_ || !quad_->is_annular()) throw std::invalid_argument("ArmDetector: needs an annular quad");
        if (j_ < 1) throw std::invalid_argument("ArmDetector: arm count must be at least 1");
        const auto& reg = quad_->region();
        const auto n = reg.tile_count();
        colour_stamp_.assign(n, 0);
        colour_.assign(n, 0);
        label_stamp_.assign(n, 0);
        label_.assign(n, 0);
        full_stamp_.assign(n, 0);
        full_label_.assign(n, 0);
        level_.resize(n);
        const Point c = quad_->center();
        int top = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const Point p = reg.tile(t).center;
            const double d = std::max(std::abs(p.x - c.x), std::abs(p.y - c.y));
            level_[t] = static_cast<std::int32_t>(std::floor(2.0 * d));
            top = std::max(top, level_[t]);
        }
        buckets_.assign(static_cast<std::size_t>(top) + 1, {});
    }

    ArmDetector(const ArmSpec& spec) : ArmDetector(std::make_shared<const Quad>(make_arm_quad(spec)), spec.j) {}

    const Quad& quad() const noexcept { return *quad_; }
    int arms() const noexcept { return j_; }

    /// Runs of crossing-cluster colours seen by the last call.
    std::size_t white_runs() const noexcept { return white_runs_; }
    std::size_t black_runs() const noexcept { return black_runs_; }

    /// Event test for an arbitrary colouring `white(tile)`.
    template <class WhiteFn>
    bool detect_with(WhiteFn&& white)
    {
        next_epoch();
        fn_ = [&white](std::size_t t) { return static_cast<bool>(white(t)); };
        const bool hit = run();
        fn_ = nullptr;
        return hit;
    }

    template <BitSource S>
    bool operator()(const S& src)
    {
        const auto& reg = quad_->region();
        return detect_with([&](std::size_t t) { return tile_white(reg, t, src); });
    }

    bool operator()(const Configuration& w)
    {
        if (!w.region().same_shape(quad_->region()))
            throw std::invalid_argument("ArmDetector: configuration from another region");
        return (*this)(DenseBits{w.bits()});
    }

    bool operator()(const HashedColours& h)
    {
        const auto& reg = quad_->region();
        return detect_with([&](std::size_t t) { return h.tile_white(reg, t); });
    }

private:
    enum class FloodEnd { crossing, merged, exhausted };

    struct Entry {
        bool white;
        std::int32_t label;
        std::int32_t start;
    };

    void next_epoch()
    {
        if (++epoch_ == 0) {
            std::fill(colour_stamp_.begin(), colour_stamp_.end(), 0);
            std::fill(label_stamp_.begin(), label_stamp_.end(), 0);
            std::fill(full_stamp_.begin(), full_stamp_.end(), 0);
            epoch_ = 1;
        }
    }

    bool colour(std::size_t t)
    {
        if (colour_stamp_[t] != epoch_) {
            colour_stamp_[t] = epoch_;
            colour_[t] = fn_(t) ? 1 : 0;
        }
        return colour_[t] != 0;
    }

    bool labelled(std::size_t t) const { return label_stamp_[t] == epoch_; }

    std::int32_t find(std::int32_t x)
    {
        while (parent_[static_cast<std::size_t>(x)] != x) {
            parent_[static_cast<std::size_t>(x)] = parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(x)])];
            x = parent_[static_cast<std::size_t>(x)];
        }
        return x;
    }

    void push(std::int32_t t)
    {
        const auto lv = static_cast<std::size_t>(level_[static_cast<std::size_t>(t)]);
        buckets_[lv].push_back(t);
        if (static_cast<std::int64_t>(lv) > top_) top_ = static_cast<std::int64_t>(lv);
        ++queued_;
    }

    std::int32_t pop()
    {
        while (buckets_[static_cast<std::size_t>(top_)].empty()) --top_;
        auto& b = buckets_[static_cast<std::size_t>(top_)];
        const auto t = b.back();
        b.pop_back();
        --queued_;
        return t;
    }

    void clear_queue()
    {
        for (auto& b : buckets_) b.clear();
        queued_ = 0;
        top_ = 0;
    }

    // Explores the cluster of ring tile `start` under label L, outermost
    // tiles first, stopping as soon as its fate is known.
    FloodEnd flood(std::int32_t start, std::int32_t L)
    {
        const auto& reg = quad_->region();
        const bool c = colour(static_cast<std::size_t>(start));
        label_stamp_[static_cast<std::size_t>(start)] = epoch_;
        label_[static_cast<std::size_t>(start)] = L;
        if (quad_->role(static_cast<std::size_t>(start)) & kArcB) return FloodEnd::crossing;
        push(start);
        while (queued_ > 0) {
            const auto u = static_cast<std::size_t>(pop());
            for (auto nb : reg.neighbours(u)) {
                const auto v = static_cast<std::size_t>(nb);
                if (colour(v) != c) continue;
                if (labelled(v)) {
                    const auto root = find(label_[v]);
                    if (root == L) continue;
                    parent_[static_cast<std::size_t>(L)] = root;
                    clear_queue();
                    return FloodEnd::merged;
                }
                label_stamp_[v] = epoch_;
                label_[v] = L;
                if (quad_->role(v) & kArcB) {
                    clear_queue();
                    return FloodEnd::crossing;
                }
                push(nb);
            }
        }
        return FloodEnd::exhausted;
    }

    bool run()
    {
        entries_.clear();
        parent_.clear();
        white_runs_ = black_runs_ = 0;
        for (auto t : quad_->ring()) {
            if (labelled(static_cast<std::size_t>(t))) continue;
            const auto L = static_cast<std::int32_t>(parent_.size());
            parent_.push_back(L);
            if (flood(t, L) == FloodEnd::crossing) entries_.push_back({colour(static_cast<std::size_t>(t)), L, t});
        }
        if (entries_.empty()) return false;

        const std::size_t k = entries_.size();
        const bool cyc = quad_->cyclic();
        std::size_t changes = 0;
        for (std::size_t i = 1; i < k; ++i) changes += entries_[i].white != entries_[i - 1].white;
        const bool any_white = std::any_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.white; });

        if (cyc) {
            if (k > 1) changes += entries_.front().white != entries_.back().white;
            if (changes == 0) {
                white_runs_ = entries_.front().white ? 1 : 0;
                black_runs_ = entries_.front().white ? 0 : 1;
            } else {
                white_runs_ = black_runs_ = changes / 2;
            }
            const std::size_t m = static_cast<std::size_t>(j_ / 2);
            const std::size_t mstar = std::min(white_runs_, black_runs_);
            if (j_ % 2 == 0) return mstar >= m;
            if (m == 0) return any_white;
            if (mstar >= m + 1) return true;
            if (mstar < m) return false;
            return some_white_run_has_two_arms();
        }

        const std::size_t runs = changes + 1;
        for (std::size_t i = 0; i < k; ++i) {
            if (i == 0 || entries_[i].white != entries_[i - 1].white) ++(entries_[i].white ? white_runs_ : black_runs_);
        }
        if (j_ % 2 == 0) return runs >= static_cast<std::size_t>(j_);
        const std::size_t usable = runs - (entries_.front().white ? 0 : 1) - (entries_.back().white ? 0 : 1);
        return any_white && usable >= static_cast<std::size_t>(j_);
    }

    // Full labelling of the white crossing clusters, then per white run:
    // two distinct clusters, or one cluster with two tile-disjoint arms.
    bool some_white_run_has_two_arms()
    {
        const auto& reg = quad_->region();
        full_members_.clear();
        std::int32_t next = 0;
        std::vector<std::int32_t> entry_cluster(entries_.size(), -1);
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            if (!entries_[e].white) continue;
            const auto s = static_cast<std::size_t>(entries_[e].start);
            if (full_stamp_[s] == epoch_) {
                entry_cluster[e] = full_label_[s];
                continue;
            }
            const std::int32_t id = next++;
            full_members_.emplace_back();
            auto& members = full_members_.back();
            full_stamp_[s] = epoch_;
            full_label_[s] = id;
            members.push_back(static_cast<std::int32_t>(s));
            for (std::size_t h = 0; h < members.size(); ++h) {
                for (auto nb : reg.neighbours(static_cast<std::size_t>(members[h]))) {
                    const auto v = static_cast<std::size_t>(nb);
                    if (full_stamp_[v] == epoch_ || !colour(v)) continue;
                    full_stamp_[v] = epoch_;
                    full_label_[v] = id;
                    members.push_back(nb);
                }
            }
            entry_cluster[e] = id;
        }

        // Walk the white runs cyclically, starting just after a black entry.
        const std::size_t k = entries_.size();
        std::size_t first = 0;
        while (entries_[first].white) ++first;
        std::size_t i = 0;
        while (i < k) {
            const std::size_t e = (first + i) % k;
            if (!entries_[e].white) {
                ++i;
                continue;
            }
            std::int32_t cluster = entry_cluster[e];
            bool distinct = false;
            std::size_t span = 0;
            while (span + i < k && entries_[(first + i + span) % k].white) {
                distinct = distinct || entry_cluster[(first + i + span) % k] != cluster;
                ++span;
            }
            if (distinct) return true;
            if (disjoint_arms(full_members_[static_cast<std::size_t>(cluster)]) >= 2) return true;
            i += span;
        }
        return false;
    }

    // Tile-disjoint ring-to-outer paths inside one cluster, capped at two.
    int disjoint_arms(const std::vector<std::int32_t>& members)
    {
        const auto& reg = quad_->region();
        const std::size_t n = members.size();
        local_.resize(reg.tile_count());
        for (std::size_t i = 0; i < n; ++i) local_[static_cast<std::size_t>(members[i])] = static_cast<std::int32_t>(i);
        const std::int32_t id = full_label_[static_cast<std::size_t>(members.front())];
        auto in_cluster = [&](std::size_t t) { return full_stamp_[t] == epoch_ && full_label_[t] == id; };

        // node 2i = tile i in, 2i+1 = tile i out, 2n = source, 2n+1 = sink
        const std::size_t S = 2 * n, T = 2 * n + 1;
        head_.assign(2 * n + 2, -1);
        to_.clear();
        cap_.clear();
        nxt_.clear();
        auto add = [&](std::size_t a, std::size_t b) {
            to_.push_back(static_cast<std::int32_t>(b));
            cap_.push_back(1);
            nxt_.push_back(head_[a]);
            head_[a] = static_cast<std::int32_t>(to_.size() - 1);
            to_.push_back(static_cast<std::int32_t>(a));
            cap_.push_back(0);
            nxt_.push_back(head_[b]);
            head_[b] = static_cast<std::int32_t>(to_.size() - 1);
        };
        for (std::size_t i = 0; i < n; ++i) {
            const auto t = static_cast<std::size_t>(members[i]);
            add(2 * i, 2 * i + 1);
            if (quad_->role(t) & kArcA) add(S, 2 * i);
            if (quad_->role(t) & kArcB) add(2 * i + 1, T);
            for (auto nb : reg.neighbours(t)) {
                const auto v = static_cast<std::size_t>(nb);
                if (in_cluster(v)) add(2 * i + 1, 2 * static_cast<std::size_t>(local_[v]));
            }
        }
        int flow = 0;
        std::vector<std::int32_t> via(2 * n + 2);
        std::vector<std::int32_t> queue;
        while (flow < 2) {
            std::fill(via.begin(), via.end(), -1);
            queue.assign(1, static_cast<std::int32_t>(S));
            via[S] = -2;
            for (std::size_t h = 0; h < queue.size() && via[T] == -1; ++h) {
                const auto u = static_cast<std::size_t>(queue[h]);
                for (auto e = head_[u]; e >= 0; e = nxt_[static_cast<std::size_t>(e)]) {
                    const auto v = static_cast<std::size_t>(to_[static_cast<std::size_t>(e)]);
                    if (cap_[static_cast<std::size_t>(e)] > 0 && via[v] == -1) {
                        via[v] = e;
                        queue.push_back(static_cast<std::int32_t>(v));
                    }
                }
            }
            if (via[T] == -1) break;
            for (std::size_t v = T; v != S;) {
                const auto e = static_cast<std::size_t>(via[v]);
                --cap_[e];
                ++cap_[e ^ 1U];
                v = static_cast<std::size_t>(to_[e ^ 1U]);
            }
            ++flow;
        }
        return flow;
    }

    std::shared_ptr<const Quad> quad_;
    int j_;
    std::uint32_t epoch_ = 0;
    std::function<bool(std::size_t)> fn_;
    std::vector<std::uint32_t> colour_stamp_;
    std::vector<std::uint8_t> colour_;
    std::vector<std::uint32_t> label_stamp_;
    std::vector<std::int32_t> label_;
    std::vector<std::uint32_t> full_stamp_;
    std::vector<std::int32_t> full_label_;
    std::vector<std::int32_t> level_;
    std::vector<std::vector<std::int32_t>> buckets_;
    std::int64_t top_ = 0;
    std::size_t queued_ = 0;
    std::vector<std::int32_t> parent_;
    std::vector<Entry> entries_;
    std::vector<std::vector<std::int32_t>> full_members_;
    std::vector<std::int32_t> local_, head_, to_, cap_, nxt_;
    std::size_t white_runs_ = 0;
    std::size_t black_runs_ = 0;
};

/// Arm event for a configuration whose region contains the annulus.
inline bool detect_arm_event(const Configuration& w, const ArmSpec& spec)
{
    spec.validate();
    if (spec.trivial()) return true;
    ArmDetector det(spec);
    const auto& ann = det.quad().region();
    const auto& host = w.region();
    if (host.kind() != spec.lattice) throw std::invalid_argument("detect_arm_event: lattice mismatch");
    std::vector<std::int64_t> where(ann.tile_count());
    for (std::size_t t = 0; t < ann.tile_count(); ++t) {
        where[t] = host.find_tile(ann.tile(t).a, ann.tile(t).b);
        if (where[t] < 0) throw std::out_of_range("detect_arm_event: annulus not contained in the configuration's region");
    }
    return det.detect_with([&](std::size_t t) { return tile_white(host, static_cast<std::size_t>(where[t]), w); });
}

/// Bernoulli estimate of alpha_j(r, R) over independent configurations.
/// Replica i uses the hashed field seeded by derive_seed(seed, i), so
/// estimates for different radii with the same seed are coupled.
inline Estimate estimate_alpha(const ArmSpec& spec, std::uint64_t n_samples, std::uint64_t seed, unsigned workers = 0)
{
    spec.validate();
    if (spec.trivial()) return Estimate{1.0, 0.0, 0, seed, 0};
    if (n_samples < 1) throw std::invalid_argument("estimate_alpha: need at least one sample");
    Stopwatch clock;
    auto quad = std::make_shared<const Quad>(make_arm_quad(spec));
    auto acc = run_replicas_with<BernoulliAccumulator>(
        n_samples, seed, [&] { return ArmDetector(quad, spec.j); },
        [&](BernoulliAccumulator& a, ArmDetector& det, Rng&, std::uint64_t i) {
            a.add(det(HashedColours{derive_seed(seed, i)}));
        },
        workers);
    auto e = acc.estimate(seed);
    e.wall_ms = clock.elapsed_ms();
    return e;
}

/// alpha_j^+ and alpha_j^{++}: the clipped geometries only.
inline Estimate estimate_alpha_half_quarter(const ArmSpec& spec, std::uint64_t n_samples, std::uint64_t seed,
                                            unsigned workers = 0)
{
    if (spec.geometry == ArmGeometry::full)
        throw std::invalid_argument("estimate_alpha_half_quarter: geometry must be half-plane or quarter-plane");
    return estimate_alpha(spec, n_samples, seed, workers);
}

/// Ratio of products of means with delta-method standard error, from K
/// jointly observed indicators: prod_{num} mean / prod_{den} mean.
template <std::size_t K>
inline std::pair<double, double> ratio_of_means(const CovarianceAccumulator<K>& acc,
                                                const std::vector<std::pair<std::size_t, int>>& powers)
{
    double log_r = 0.0;
    for (auto [i, p] : powers) {
        const double m = acc.mean(i);
        if (!(m > 0)) throw std::domain_error("ratio_of_means: zero estimate in the ratio");
        log_r += p * std::log(m);
    }
    double var = 0.0;
    for (auto [i, p] : powers)
        for (auto [k, q] : powers) var += p * q * acc.mean_covariance(i, k) / (acc.mean(i) * acc.mean(k));
    const double r = std::exp(log_r);
    return {r, r * std::sqrt(std::max(0.0, var))};
}

struct QuasimultReport {
    int j = 0;
    int r1 = 0, r2 = 0, r3 = 0;
    Estimate a12, a23, a13;
    double ratio = 1.0;        // a12 * a23 / a13
    double ratio_stderr = 0.0;
    std::uint64_t violations = 0; // replicas with A13 but not (A12 and A23); zero by inclusion
};

namespace detail {

// `event(detector, replica_seed)` decides one annulus for one replica.
template <class Event>
QuasimultReport quasimult_with(const ArmSpec& base, int r1, int r2, int r3, std::uint64_t n_samples,
                               std::uint64_t seed, unsigned workers, Event&& event)
{
    if (!(r1 <= r2 && r2 <= r3)) throw std::invalid_argument("quasimult_report: radii must satisfy r1 <= r2 <= r3");
    if (n_samples < 2) throw std::invalid_argument("quasimult_report: need at least two samples");
    Stopwatch clock;
    QuasimultReport rep;
    rep.j = base.j;
    rep.r1 = r1;
    rep.r2 = r2;
    rep.r3 = r3;
    auto spec_for = [&](int a, int b) {
        ArmSpec s = base;
        s.r = a;
        s.R = b;
        return s;
    };
    const std::array<ArmSpec, 3> specs{spec_for(r1, r2), spec_for(r2, r3), spec_for(r1, r3)};
    std::array<std::shared_ptr<const Quad>, 3> quads;
    for (std::size_t k = 0; k < 3; ++k) {
        specs[k].validate();
        if (!specs[k].trivial()) quads[k] = std::make_shared<const Quad>(make_arm_quad(specs[k]));
    }

    struct Acc {
        CovarianceAccumulator<3> cov;
        std::uint64_t violations = 0;
        void merge(const Acc& o)
        {
            cov.merge(o.cov);
            violations += o.violations;
        }
    };
    auto make = [&] {
        std::vector<ArmDetector> d;
        for (std::size_t k = 0; k < 3; ++k)
            if (quads[k]) d.emplace_back(quads[k], base.j);
        return d;
    };
    auto acc = run_replicas_with<Acc>(
        n_samples, seed, make,
        [&](Acc& a, std::vector<ArmDetector>& dets, Rng&, std::uint64_t i) {
            const std::uint64_t s = derive_seed(seed, i);
            std::array<double, 3> x{};
            std::size_t next = 0;
            for (std::size_t k = 0; k < 3; ++k) x[k] = quads[k] ? (event(dets[next++], s) ? 1.0 : 0.0) : 1.0;
            a.cov.add(x);
            if (x[2] > 0 && !(x[0] > 0 && x[1] > 0)) ++a.violations;
        },
        workers);
    const auto ms = clock.elapsed_ms();
    auto est = [&](std::size_t k) {
        if (!quads[k]) return Estimate{1.0, 0.0, 0, seed, ms};
        return Estimate{acc.cov.mean(k), std::sqrt(acc.cov.mean_covariance(k, k)), acc.cov.count, seed, ms};
    };
    rep.a12 = est(0);
    rep.a23 = est(1);
    rep.a13 = est(2);
    rep.violations = acc.violations;
    auto [ratio, se] = ratio_of_means(acc.cov, {{0, 1}, {1, 1}, {2, -1}});
    rep.ratio = ratio;
    rep.ratio_stderr = se;
    return rep;
}

} // namespace detail

/// Joint estimate of alpha_j(r1,r2), alpha_j(r2,r3), alpha_j(r1,r3) on the
/// same configurations, and their quasi-multiplicativity ratio.
inline QuasimultReport quasimult_report(const ArmSpec& base, int r1, int r2, int r3, std::uint64_t n_samples,
                                        std::uint64_t seed, unsigned workers = 0)
{
    return detail::quasimult_with(base, r1, r2, r3, n_samples, seed, workers,
                                  [](ArmDetector& d, std::uint64_t s) { return d(HashedColours{s}); });
}

struct BeffaraRow {
    int R = 0;
    Estimate a1, a2k, a2k1;
    double ratio = 1.0; // a_{2k+1} / (a_1 a_{2k})
    double ratio_stderr = 0.0;
};

struct BeffaraReport {
    LatticeKind lattice = LatticeKind::square_bond;
    int k = 2;
    int r = 0;
    std::vector<BeffaraRow> rows;
    /// True when every consecutive pair satisfies ratio[i+1] <= ratio[i] + z * combined stderr.
    bool non_increasing(double z) const
    {
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].ratio > rows[i - 1].ratio + z * std::hypot(rows[i].ratio_stderr, rows[i - 1].ratio_stderr))
                return false;
        return true;
    }
};

/// alpha_{2k+1}(r,R) / (alpha_1(r,R) alpha_{2k}(r,R)) for each R, the three
/// events evaluated on the same configurations.
inline BeffaraReport beffara_check(LatticeKind lattice, int k, int r, const std::vector<int>& radii,
                                   std::uint64_t n_samples, std::uint64_t seed, unsigned workers = 0)
{
    if (k < 1) throw std::invalid_argument("beffara_check: k must be at least 1");
    BeffaraReport rep;
    rep.lattice = lattice;
    rep.k = k;
    rep.r = r;
    for (int R : radii) {
        BeffaraRow row;
        row.R = R;
        if (R <= r) {
            row.a1 = row.a2k = row.a2k1 = Estimate{1.0, 0.0, 0, seed, 0};
            rep.rows.push_back(row);
            continue;
        }
        Stopwatch clock;
        ArmSpec spec{lattice, ArmGeometry::full, {}, r, R, 1};
        auto quad = std::make_shared<const Quad>(make_arm_quad(spec));
        auto acc = run_replicas_with<CovarianceAccumulator<3>>(
            n_samples, seed,
            [&] {
                return std::array<ArmDetector, 3>{ArmDetector(quad, 1), ArmDetector(quad, 2 * k),
                                                  ArmDetector(quad, 2 * k + 1)};
            },
            [&](CovarianceAccumulator<3>& a, std::array<ArmDetector, 3>& d, Rng&, std::uint64_t i) {
                const HashedColours h{derive_seed(seed, i)};
                const bool e1 = d[0](h);
                // 2k+1 arms imply 2k arms and 1 arm
                const bool e2k = e1 && d[1](h);
                const bool e2k1 = e2k && d[2](h);
                a.add({e1 ? 1.0 : 0.0, e2k ? 1.0 : 0.0, e2k1 ? 1.0 : 0.0});
            },
            workers);
        const auto ms = clock.elapsed_ms();
        auto est = [&](std::size_t q) {
            return Estimate{acc.mean(q), std::sqrt(acc.mean_covariance(q, q)), acc.count, seed, ms};
        };
        row.a1 = est(0);
        row.a2k = est(1);
        row.a2k1 = est(2);
        auto [ratio, se] = ratio_of_means(acc, {{2, 1}, {0, -1}, {1, -1}});
        row.ratio = ratio;
        row.ratio_stderr = se;
        rep.rows.push_back(row);
    }
    return rep;
}

} // namespace spectral_perc
