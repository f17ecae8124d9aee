#pragma once

#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossreg/convex.hpp"
#include "crossreg/image_io.hpp"
#include "crossreg/segments.hpp"

namespace crossreg {

// World placement of a raster: origin is the outer corner of cell (0,0), which is the
// south-west cell. Cell centers sit at origin + (col+0.5, row+0.5) * cell_size.
struct GeoRef {
    Vec2 origin = Vec2::Zero();
    double cell_size = 0.5;
};

inline GeoRef read_georef(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    GeoRef g;
    if (!(in >> g.origin.x() >> g.origin.y() >> g.cell_size) || g.cell_size <= 0.0)
        throw std::runtime_error("malformed georeference sidecar: " + path);
    return g;
}

inline void write_georef(const GeoRef& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", g.origin.x(), g.origin.y(), g.cell_size);
    out << buf;
}

// 8-connected components of nonzero cells become segments; components spanning less
// than min_diameter are discarded. The footprint keeps every cell center (interior
// included); boundary2d keeps the cells with at least one 4-neighbor outside the
// component mask. Size is measured on cell outer corners, so an n-cell-wide block
// spans n * cell_size.
inline std::vector<OverviewSegment> ingest_overview_mask(const GrayImage& img, const GeoRef& geo,
                                                         double min_diameter = 5.0) {
    const int cols = img.cols, rows = img.rows;
    auto occupied = [&](int c, int r) {
        return c >= 0 && c < cols && r >= 0 && r < rows && img.at(c, r) != 0;
    };

    std::vector<std::uint8_t> visited(static_cast<std::size_t>(cols) * rows, 0);
    std::vector<OverviewSegment> segments;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (!occupied(c, r) || visited[static_cast<std::size_t>(r) * cols + c]) continue;
            std::vector<std::pair<int, int>> cells;
            std::deque<std::pair<int, int>> frontier{{c, r}};
            visited[static_cast<std::size_t>(r) * cols + c] = 1;
            while (!frontier.empty()) {
                const auto [cc, cr] = frontier.front();
                frontier.pop_front();
                cells.push_back({cc, cr});
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        const int nc = cc + dc, nr = cr + dr;
                        if (!occupied(nc, nr)) continue;
                        std::uint8_t& v = visited[static_cast<std::size_t>(nr) * cols + nc];
                        if (v) continue;
                        v = 1;
                        frontier.push_back({nc, nr});
                    }
                }
            }

            std::vector<Vec2> corners;
            corners.reserve(cells.size() * 4);
            OverviewSegment seg;
            Vec2 sum = Vec2::Zero();
            for (const auto& [cc, cr] : cells) {
                const Vec2 center = geo.origin + Vec2((cc + 0.5) * geo.cell_size,
                                                      (cr + 0.5) * geo.cell_size);
                seg.footprint2d.push_back(center);
                sum += center;
                const bool boundary = !occupied(cc - 1, cr) || !occupied(cc + 1, cr) ||
                                      !occupied(cc, cr - 1) || !occupied(cc, cr + 1);
                if (boundary) seg.boundary2d.push_back(center);
                for (int dy = 0; dy <= 1; ++dy)
                    for (int dx = 0; dx <= 1; ++dx)
                        corners.push_back(geo.origin + Vec2((cc + dx) * geo.cell_size,
                                                            (cr + dy) * geo.cell_size));
            }
            if (footprint_diameter(corners) < min_diameter) continue;
            seg.center2d = sum / static_cast<double>(seg.footprint2d.size());
            seg.id = static_cast<int>(segments.size());
            segments.push_back(std::move(seg));
        }
    }
    return segments;
}

inline bool point_in_ring(const Vec2& p, const std::vector<Vec2>& ring) {
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[j];
        if ((a.y() > p.y()) != (b.y() > p.y()) &&
            p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
            inside = !inside;
    }
    return inside;
}

namespace detail {

inline bool segments_cross(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
        const double v = (q.x() - p.x()) * (r.y() - p.y()) - (q.y() - p.y()) * (r.x() - p.x());
        return v > 1e-12 ? 1 : (v < -1e-12 ? -1 : 0);
    };
    const int o1 = orient(a, b, c), o2 = orient(a, b, d);
    const int o3 = orient(c, d, a), o4 = orient(c, d, b);
    return o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

inline bool ring_self_intersects(const std::vector<Vec2>& ring) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            // Edges sharing a vertex (consecutive, or first/last) are allowed to touch.
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]))
                return true;
        }
    }
    return false;
}

}  // namespace detail

struct PolygonIngestResult {
    std::vector<OverviewSegment> segments;
    std::vector<std::string> warnings;  // one per rejected ring
};

// Densifies each ring boundary at steps no longer than sample_spacing; each vertex
// appears exactly once. Rings smaller than min_diameter (measured on vertices) are
// dropped; self-intersecting rings are skipped with a warning. Rings may repeat
// their first vertex at the end or leave the closure implicit.
inline PolygonIngestResult ingest_overview_polygons(const std::vector<std::vector<Vec2>>& rings,
                                                    double sample_spacing,
                                                    double min_diameter = 5.0) {
    require(sample_spacing > 0.0, "sample spacing must be positive");
    PolygonIngestResult out;
    for (std::size_t ri = 0; ri < rings.size(); ++ri) {
        std::vector<Vec2> ring = rings[ri];
        if (ring.size() >= 2 && (ring.front() - ring.back()).norm() < 1e-12) ring.pop_back();
        require(ring.size() >= 3, "polygon ring needs at least 3 distinct vertices");
        if (detail::ring_self_intersects(ring)) {
            out.warnings.push_back("ring " + std::to_string(ri) + " is self-intersecting; skipped");
            continue;
        }
        if (footprint_diameter(ring) < min_diameter) {
            out.warnings.push_back("ring " + std::to_string(ri) + " is below the minimum diameter; skipped");
            continue;
        }

        OverviewSegment seg;
        Vec2 sum = Vec2::Zero();
        const std::size_t n = ring.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& a = ring[i];
            const Vec2& b = ring[(i + 1) % n];
            const double len = (b - a).norm();
            const int steps = std::max(1, static_cast<int>(std::ceil(len / sample_spacing)));
            for (int s = 0; s < steps; ++s) {
                const Vec2 p = a + (b - a) * (static_cast<double>(s) / steps);
                seg.footprint2d.push_back(p);
                sum += p;
            }
        }
        seg.boundary2d = seg.footprint2d;
        seg.center2d = sum / static_cast<double>(seg.footprint2d.size());
        seg.id = static_cast<int>(out.segments.size());
        out.segments.push_back(std::move(seg));
    }
    return out;
}

inline std::vector<std::vector<Vec2>> read_polygons_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    std::vector<std::vector<Vec2>> rings;
    for (const auto& ring : j) {
        std::vector<Vec2> r;
        for (const auto& p : ring) r.emplace_back(p[0].get<double>(), p[1].get<double>());
        rings.push_back(std::move(r));
    }
    return rings;
}

inline void write_polygons_json(const std::vector<std::vector<Vec2>>& rings,
                                const std::string& path) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& ring : rings) {
        nlohmann::ordered_json r = nlohmann::ordered_json::array();
        for (const Vec2& p : ring) r.push_back({p.x(), p.y()});
        arr.push_back(std::move(r));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << arr.dump(2) << "\n";
}

// Rasterizes rings into a labeled mask (ring index + 1) on a grid covering the rings'
// bounding box plus margin. Later rings overwrite earlier ones where they overlap.
struct RasterizedMask {
    GrayImage image;
    GeoRef georef;
};

inline RasterizedMask rasterize_polygons(const std::vector<std::vector<Vec2>>& rings,
                                         double cell_size, double margin = 2.0) {
    require(!rings.empty(), "nothing to rasterize");
    require(rings.size() <= 255, "mask labels limited to 255 rings");
    Vec2 lo = rings[0][0], hi = rings[0][0];
    for (const auto& ring : rings)
        for (const Vec2& p : ring) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    RasterizedMask out;
    out.georef.cell_size = cell_size;
    out.georef.origin = lo - Vec2(margin, margin);
    out.image.cols = static_cast<int>(std::ceil((hi.x() + margin - out.georef.origin.x()) / cell_size));
    out.image.rows = static_cast<int>(std::ceil((hi.y() + margin - out.georef.origin.y()) / cell_size));
    out.image.values.assign(static_cast<std::size_t>(out.image.cols) * out.image.rows, 0);
    for (int r = 0; r < out.image.rows; ++r) {
        for (int c = 0; c < out.image.cols; ++c) {
            const Vec2 center = out.georef.origin +
                                Vec2((c + 0.5) * cell_size, (r + 0.5) * cell_size);
            for (std::size_t i = 0; i < rings.size(); ++i)
                if (point_in_ring(center, rings[i]))
                    out.image.at(c, r) = static_cast<std::uint8_t>(i + 1);
        }
    }
    return out;
}

}  // namespace crossreg
