#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

// Regular 2D grid of exact Euclidean distances to the nearest occupied cell center.
// `origin` is the world position of the center of cell (0,0); rows grow with +y.
// Distances are computed on integer cell offsets, so every stored value is
// sqrt(integer) * cell_size, identical to what a brute-force scan produces.
struct DistanceMap {
    Vec2 origin = Vec2::Zero();
    double cell_size = 0.5;
    int cols = 0;
    int rows = 0;
    std::vector<double> values;          // rows * cols, row-major
    std::vector<std::int64_t> sq_cells;  // squared distance in cell units

    double at(int col, int row) const { return values[static_cast<std::size_t>(row) * cols + col]; }

    bool contains_cell(int col, int row) const {
        return col >= 0 && col < cols && row >= 0 && row < rows;
    }

    Vec2 cell_center(int col, int row) const {
        return origin + Vec2(col * cell_size, row * cell_size);
    }

    // Nearest-cell lookup. Outside the grid the value continues 1-Lipschitz:
    // clamped cell value plus the straight-line distance to that cell's center.
    double lookup(const Vec2& p, bool* outside = nullptr) const {
        const double cx = (p.x() - origin.x()) / cell_size;
        const double cy = (p.y() - origin.y()) / cell_size;
        int col = static_cast<int>(std::lround(cx));
        int row = static_cast<int>(std::lround(cy));
        bool out = !contains_cell(col, row);
        if (outside) *outside = out;
        if (!out) return at(col, row);
        col = std::min(std::max(col, 0), cols - 1);
        row = std::min(std::max(row, 0), rows - 1);
        return at(col, row) + (p - cell_center(col, row)).norm();
    }
};

namespace detail {

constexpr std::int64_t kEdtInf = std::numeric_limits<std::int64_t>::max() / 4;

// 1D squared-distance transform (lower envelope of parabolas). f and d may alias
// only through the caller's buffering; all arithmetic on f is integral, so the
// envelope minima come out exact.
inline void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d,
                   std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        if (f[q] >= kEdtInf) continue;
        double s;
        while (true) {
            const int p = v[k];
            if (f[p] >= kEdtInf) {
                // Empty envelope so far; parabola q replaces it outright.
                s = -std::numeric_limits<double>::infinity();
                break;
            }
            s = (static_cast<double>(f[q] + static_cast<std::int64_t>(q) * q) -
                 static_cast<double>(f[p] + static_cast<std::int64_t>(p) * p)) /
                (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        d[q] = f[p] >= kEdtInf
                   ? kEdtInf
                   : static_cast<std::int64_t>(q - p) * (q - p) + f[p];
    }
}

}  // namespace detail

// Exact squared EDT over an occupancy grid, column pass then row pass.
inline std::vector<std::int64_t> exact_squared_edt(const std::vector<std::uint8_t>& occupied,
                                                   int cols, int rows) {
    require(cols > 0 && rows > 0, "grid must be non-empty");
    std::vector<std::int64_t> g(static_cast<std::size_t>(cols) * rows);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = occupied[i] ? 0 : detail::kEdtInf;

    const int n = std::max(cols, rows);
    std::vector<std::int64_t> f(n), d(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);

    for (int c = 0; c < cols; ++c) {
        f.resize(rows);
        d.resize(rows);
        for (int r = 0; r < rows; ++r) f[r] = g[static_cast<std::size_t>(r) * cols + c];
        detail::edt_1d(f, d, v, z);
        for (int r = 0; r < rows; ++r) g[static_cast<std::size_t>(r) * cols + c] = d[r];
    }
    for (int r = 0; r < rows; ++r) {
        f.resize(cols);
        d.resize(cols);
        for (int c = 0; c < cols; ++c) f[c] = g[static_cast<std::size_t>(r) * cols + c];
        detail::edt_1d(f, d, v, z);
        for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] = d[c];
    }
    return g;
}

inline DistanceMap build_distance_map(const std::vector<Vec2>& sources, double cell_size,
                                      double padding) {
    require(!sources.empty(), "distance map needs at least one source point");
    require(cell_size > 0.0, "cell size must be positive");
    require(padding >= 0.0, "padding must be non-negative");

    Vec2 lo = sources.front(), hi = sources.front();
    for (const Vec2& p : sources) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    DistanceMap map;
    map.cell_size = cell_size;
    map.origin = lo - Vec2(padding, padding);
    map.cols = static_cast<int>(std::floor((hi.x() + padding - map.origin.x()) / cell_size)) + 1;
    map.rows = static_cast<int>(std::floor((hi.y() + padding - map.origin.y()) / cell_size)) + 1;

    std::vector<std::uint8_t> occ(static_cast<std::size_t>(map.cols) * map.rows, 0);
    for (const Vec2& p : sources) {
        const int c = static_cast<int>(std::lround((p.x() - map.origin.x()) / cell_size));
        const int r = static_cast<int>(std::lround((p.y() - map.origin.y()) / cell_size));
        require(map.contains_cell(c, r), "source point fell outside the computed grid");
        occ[static_cast<std::size_t>(r) * map.cols + c] = 1;
    }

    map.sq_cells = exact_squared_edt(occ, map.cols, map.rows);
    map.values.resize(map.sq_cells.size());
    for (std::size_t i = 0; i < map.values.size(); ++i)
        map.values[i] = std::sqrt(static_cast<double>(map.sq_cells[i])) * cell_size;
    return map;
}

// 8-bit PGM dump, distances scaled to the map maximum. Inspection aid only.
inline void write_distance_map_pgm(const DistanceMap& map, const std::string& path) {
    double vmax = 0.0;
    for (double v : map.values) vmax = std::max(vmax, v);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << map.cols << " " << map.rows << "\n255\n";
    // Top image row = highest y, so viewers show the map in world orientation.
    for (int r = map.rows - 1; r >= 0; --r) {
        for (int c = 0; c < map.cols; ++c) {
            const double v = map.at(c, r);
            const int g = vmax > 0.0 ? static_cast<int>(std::lround(v / vmax * 255.0)) : 0;
            out.put(static_cast<char>(g));
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace crossreg
