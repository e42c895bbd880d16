#pragma once

#include <string>
#include <vector>

#include "spectral_perc/arms.hpp"
#include "spectral_perc/boolfn.hpp"
#include "spectral_perc/lattice.hpp"

namespace fixtures {

using namespace spectral_perc;

struct NamedFunction {
    std::string name;
    CrossingFunction f;
};

/// Crossing functions of at most 20 bits over both lattices and all four
/// quad shapes.
inline std::vector<NamedFunction> small_crossings()
{
    using LK = LatticeKind;
    using QS = QuadShape;
    std::vector<NamedFunction> out;
    out.push_back({"tri rectangle 3x3", CrossingFunction(Quad::rectangle(LK::triangular_site, 3, 3))});
    out.push_back({"tri rectangle 4x4", CrossingFunction(Quad::rectangle(LK::triangular_site, 4, 4))});
    out.push_back({"tri rectangle 5x4", CrossingFunction(Quad::rectangle(LK::triangular_site, 5, 4))});
    out.push_back({"z2 rectangle 3x3", CrossingFunction(Quad::rectangle(LK::square_bond, 3, 3))});
    out.push_back({"z2 rectangle 2x4", CrossingFunction(Quad::rectangle(LK::square_bond, 2, 4))});
    out.push_back({"tri annulus 1-2", CrossingFunction(Quad::annulus(LK::triangular_site, QS::radial_annulus, 1, 2))});
    out.push_back({"tri half annulus 1-2", CrossingFunction(Quad::annulus(LK::triangular_site, QS::half_plane, 1, 2))});
    out.push_back({"tri quarter annulus 1-3", CrossingFunction(Quad::annulus(LK::triangular_site, QS::quarter_plane, 1, 3))});
    out.push_back({"z2 half annulus 1-2", CrossingFunction(Quad::annulus(LK::square_bond, QS::half_plane, 1, 2))});
    out.push_back({"z2 quarter annulus 1-3", CrossingFunction(Quad::annulus(LK::square_bond, QS::quarter_plane, 1, 3))});
    return out;
}

inline TruthTable majority3()
{
    std::vector<double> v(8);
    for (std::uint64_t m = 0; m < 8; ++m) v[m] = std::popcount(m) >= 2 ? 1.0 : -1.0;
    return TruthTable(3, v);
}

inline TruthTable dictator() { return TruthTable(1, {-1.0, 1.0}); }

inline TruthTable parity(std::size_t n)
{
    std::vector<double> v(std::size_t{1} << n);
    for (std::uint64_t m = 0; m < v.size(); ++m) v[m] = (static_cast<std::size_t>(std::popcount(m)) % 2 == n % 2) ? 1.0 : -1.0;
    return TruthTable(n, v);
}

struct MicroAnnulus {
    std::string name;
    ArmSpec spec;
};

// Annuli of at most 18 bits, enumerated exhaustively.
inline std::vector<MicroAnnulus> micro_annuli()
{
    using LK = LatticeKind;
    using AG = ArmGeometry;
    const Point off{0.5, 0.3};
    auto spec = [](LK k, AG g, int r, int R, Point c = {}) { return ArmSpec{k, g, c, r, R, 1}; };
    return {
        {"tri full 1-2", spec(LK::triangular_site, AG::full, 1, 2)},
        {"tri full 1-2 off-centre", spec(LK::triangular_site, AG::full, 1, 2, off)},
        {"tri half 2-3", spec(LK::triangular_site, AG::half_plane, 2, 3)},
        {"tri half 1-3 off-centre", spec(LK::triangular_site, AG::half_plane, 1, 3, off)},
        {"tri quarter 1-4", spec(LK::triangular_site, AG::quarter_plane, 1, 4)},
        {"tri quarter 2-4", spec(LK::triangular_site, AG::quarter_plane, 2, 4)},
        {"z2 half 1-2", spec(LK::square_bond, AG::half_plane, 1, 2)},
        {"z2 quarter 1-3", spec(LK::square_bond, AG::quarter_plane, 1, 3)},
        {"z2 quarter 2-3", spec(LK::square_bond, AG::quarter_plane, 2, 3)},
    };
}

} // namespace fixtures
