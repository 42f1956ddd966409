#include "dadp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dadp {

void Grid::node_coords(std::size_t flat, std::span<double> out) const {
    for (int d = dims() - 1; d >= 0; --d) {
        const auto& ax = axes[static_cast<size_t>(d)];
        out[static_cast<size_t>(d)] = ax[flat % ax.size()];
        flat /= ax.size();
    }
}

std::size_t Grid::flat_index(std::span<const std::size_t> idx) const {
    std::size_t flat = 0;
    for (int d = 0; d < dims(); ++d) flat = flat * axes[static_cast<size_t>(d)].size() + idx[static_cast<size_t>(d)];
    return flat;
}

Grid Grid::uniform(const Vec& lo, const Vec& hi, const std::vector<int>& nodes) {
    Grid g;
    for (size_t d = 0; d < lo.size(); ++d) {
        int n = nodes.size() == 1 ? nodes[0] : nodes[d];
        if (n < 1) throw std::invalid_argument("grid needs at least one node per dimension");
        Vec ax;
        if (n == 1 || lo[d] == hi[d]) {
            ax.push_back(lo[d]);
        } else {
            ax.reserve(static_cast<size_t>(n));
            for (int k = 0; k < n; ++k)
                ax.push_back(lo[d] + (hi[d] - lo[d]) * static_cast<double>(k) / (n - 1));
            ax.back() = hi[d]; // cover the box exactly at the endpoints
        }
        g.axes.push_back(std::move(ax));
    }
    return g;
}

Grid Grid::product(const Grid& a, const Grid& b) {
    Grid g = a;
    g.axes.insert(g.axes.end(), b.axes.begin(), b.axes.end());
    return g;
}

bool Grid::inside(std::span<const double> x) const {
    for (int d = 0; d < dims(); ++d) {
        const auto& ax = axes[static_cast<size_t>(d)];
        if (x[static_cast<size_t>(d)] < ax.front() || x[static_cast<size_t>(d)] > ax.back()) return false;
    }
    return true;
}

double Grid::interpolate(std::span<const double> table, std::span<const double> x) const {
    const int D = dims();
    if (D == 0) return table[0];

    // cell index and weight per dimension
    std::size_t cell[16];
    double wt[16];
    if (D > 16) throw std::invalid_argument("grid dimension too large");
    for (int d = 0; d < D; ++d) {
        const auto& ax = axes[static_cast<size_t>(d)];
        double v = x[static_cast<size_t>(d)];
        if (std::isnan(v) || v < ax.front() || v > ax.back())
            throw std::domain_error("interpolation query outside grid box");
        if (ax.size() == 1) {
            cell[d] = 0;
            wt[d] = 0.0;
            continue;
        }
        auto it = std::upper_bound(ax.begin(), ax.end(), v);
        std::size_t hi = static_cast<std::size_t>(it - ax.begin());
        if (hi >= ax.size()) hi = ax.size() - 1; // v == upper endpoint
        if (hi == 0) hi = 1;
        std::size_t lo = hi - 1;
        cell[d] = lo;
        wt[d] = (v - ax[lo]) / (ax[hi] - ax[lo]);
    }

    // accumulate over the 2^D corners, skipping zero-weight corners so that
    // +inf at an untouched corner cannot poison the result
    double acc = 0.0;
    const int corners = 1 << D;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        std::size_t flat = 0;
        for (int d = 0; d < D; ++d) {
            const auto& ax = axes[static_cast<size_t>(d)];
            bool up = (c >> d) & 1;
            double wd = up ? wt[d] : 1.0 - wt[d];
            if (ax.size() == 1) {
                if (up) { w = 0.0; break; }
                wd = 1.0;
            }
            w *= wd;
            if (w == 0.0) break;
            flat = flat * ax.size() + cell[d] + (up ? 1 : 0);
        }
        if (w == 0.0) continue;
        acc += w * table[flat];
    }
    return acc;
}

} // namespace dadp
