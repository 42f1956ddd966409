#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dadp/model.hpp"

namespace dadp {

// Rectangular grid: per-dimension sorted breakpoints over a box. A
// zero-dimensional grid has exactly one node (used by stockless units).
struct Grid {
    std::vector<Vec> axes; // strictly increasing breakpoints per dimension

    int dims() const { return static_cast<int>(axes.size()); }
    std::size_t node_count() const {
        std::size_t n = 1;
        for (const auto& ax : axes) n *= ax.size();
        return n;
    }
    // coordinates of flat node index (row-major, first axis slowest)
    void node_coords(std::size_t flat, std::span<double> out) const;
    std::size_t flat_index(std::span<const std::size_t> idx) const;

    // uniform grid over [lo,hi] with n >= 1 nodes per dimension; a collapsed
    // dimension (lo == hi) gets the single breakpoint lo
    static Grid uniform(const Vec& lo, const Vec& hi, const std::vector<int>& nodes);
    static Grid product(const Grid& a, const Grid& b);

    // Multilinear interpolation of a node table at x. Exact at nodes. A +inf
    // corner with nonzero weight makes the result +inf. Throws if x is
    // outside the box (no extrapolation).
    double interpolate(std::span<const double> table, std::span<const double> x) const;

    bool inside(std::span<const double> x) const;
};

} // namespace dadp
