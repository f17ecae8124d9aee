#pragma once

#include <algorithm>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

// Monotone-chain convex hull, counter-clockwise, no repeated first point.
// Collinear inputs collapse to their two extreme points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) { return a == b; }),
              pts.end());
    const int n = static_cast<int>(pts.size());
    if (n <= 2) return pts;
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Vec2> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const int lower = k + 1;
    for (int i = n - 2; i >= 0; --i) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline double max_pairwise_distance(const std::vector<Vec2>& pts) {
    double best = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            best = std::max(best, (pts[i] - pts[j]).norm());
    return best;
}

// Horizontal size of a footprint: the larger side of the tightest enclosing
// rectangle, minimized over rectangles aligned with convex-hull edges. A thin wall
// therefore measures its length, while a 4 m square measures 4 m rather than its
// 5.66 m diagonal. Degenerate (collinear) footprints fall back to the max pairwise
// distance, which equals their length.
inline double footprint_diameter(const std::vector<Vec2>& pts) {
    if (pts.size() < 2) return 0.0;
    const std::vector<Vec2> hull = convex_hull(pts);
    if (hull.size() <= 2) return max_pairwise_distance(hull);

    double best = std::numeric_limits<double>::infinity();
    const int h = static_cast<int>(hull.size());
    for (int i = 0; i < h; ++i) {
        const Vec2 e = hull[(i + 1) % h] - hull[i];
        const double len = e.norm();
        if (len < 1e-12) continue;
        const Vec2 u = e / len;
        const Vec2 v(-u.y(), u.x());
        double ulo = 0, uhi = 0, vlo = 0, vhi = 0;
        bool first = true;
        for (const Vec2& p : hull) {
            const double pu = p.dot(u), pv = p.dot(v);
            if (first) {
                ulo = uhi = pu;
                vlo = vhi = pv;
                first = false;
            } else {
                ulo = std::min(ulo, pu);
                uhi = std::max(uhi, pu);
                vlo = std::min(vlo, pv);
                vhi = std::max(vhi, pv);
            }
        }
        best = std::min(best, std::max(uhi - ulo, vhi - vlo));
    }
    return best;
}

}  // namespace crossreg
