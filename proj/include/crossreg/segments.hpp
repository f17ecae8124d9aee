#pragma once

#include <deque>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossreg/convex.hpp"
#include "crossreg/kdtree.hpp"
#include "crossreg/normals.hpp"
#include "crossreg/parallel.hpp"
#include "crossreg/point_cloud.hpp"

namespace crossreg {

// Planar building piece extracted from the street cloud. Indices refer to the
// vertically aligned cloud the segmentation ran on. footprint2d holds one (x, y)
// sample per facade point.
struct StreetSegment {
    int id = -1;
    std::vector<int> facade_points;
    std::vector<int> ground_points;
    std::vector<Vec2> footprint2d;
    Vec2 center2d = Vec2::Zero();
};

// Georeferenced building footprint from the over-view source. footprint2d keeps
// every sample (interior included for raster sources); boundary2d is the outline
// subset that feeds distance maps.
struct OverviewSegment {
    int id = -1;
    std::vector<Vec2> footprint2d;
    std::vector<Vec2> boundary2d;
    Vec2 center2d = Vec2::Zero();
    std::optional<double> mean_roof_height;
    std::optional<double> ground_height;
};

struct FacadeParams {
    int k = 16;                  // neighborhood size, shared with normal estimation
    double angle_deg = 75.0;     // min angle between normal and vertical axis
    double neighbor_frac = 0.75; // fraction of the neighborhood that must pass
};

// A point is a facade point when its own normal is far enough from vertical AND the
// same holds for more than neighbor_frac of its k-neighborhood (query included).
// Points without a valid normal fail both roles. Returns ascending indices.
inline std::vector<int> extract_facade_points(const PointCloud& cloud, const KdTree3& tree,
                                              const NormalEstimate& est, const Vec3& axis,
                                              const FacadeParams& params = {}, int threads = 1) {
    require(est.normals.size() == cloud.size(), "normal estimate does not match cloud");
    require(params.k >= 1 && cloud.size() >= static_cast<std::size_t>(params.k),
            "facade k exceeds point count");
    const Vec3 up = axis.normalized();
    const double cos_th = std::cos(deg2rad(params.angle_deg));

    std::vector<std::uint8_t> passes(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        passes[i] = est.valid[i] && std::abs(est.normals[i].dot(up)) < cos_th;

    std::vector<std::uint8_t> keep(cloud.size(), 0);
    par_for(cloud.size(), threads, [&](std::size_t i) {
        if (!passes[i]) return;
        const auto nn = tree.knn(cloud.points[i], params.k);
        int hits = 0;
        for (const Neighbor& n : nn) hits += passes[n.index];
        if (hits > params.neighbor_frac * static_cast<double>(nn.size())) keep[i] = 1;
    });

    std::vector<int> out;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (keep[i]) out.push_back(static_cast<int>(i));
    return out;
}

struct RegionGrowParams {
    double angle_deg = 15.0;       // max deviation from the region's running mean normal
    double min_diameter = 5.0;     // smaller footprints are discarded
    double radius_factor = 3.0;    // connection radius = factor * median NN spacing
};

// Grows planar regions over the facade points. Seeds are taken in ascending point
// order; a neighbor joins when it lies within the connection radius of a region
// member and its normal (up to sign) stays within angle_deg of the region's running
// mean. Surviving regions become segments with ids in discovery order.
inline std::vector<StreetSegment> region_grow_segments(const PointCloud& cloud,
                                                       const std::vector<int>& facade_indices,
                                                       const NormalEstimate& est,
                                                       const RegionGrowParams& params = {}) {
    std::vector<StreetSegment> segments;
    if (facade_indices.empty()) return segments;

    std::vector<Vec3> pts(facade_indices.size());
    for (std::size_t i = 0; i < facade_indices.size(); ++i)
        pts[i] = cloud.points[facade_indices[i]];
    const KdTree3 tree(pts);

    double radius = 0.0;
    if (pts.size() >= 2) {
        std::vector<double> spacing(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i)
            spacing[i] = tree.knn(pts[i], 2)[1].distance;
        std::nth_element(spacing.begin(), spacing.begin() + spacing.size() / 2, spacing.end());
        radius = params.radius_factor * spacing[spacing.size() / 2];
    }

    const double cos_th = std::cos(deg2rad(params.angle_deg));
    std::vector<std::uint8_t> visited(pts.size(), 0);

    for (std::size_t seed = 0; seed < pts.size(); ++seed) {
        if (visited[seed]) continue;
        visited[seed] = 1;
        std::vector<int> region{static_cast<int>(seed)};
        Vec3 normal_sum = est.normals[facade_indices[seed]];
        std::deque<int> frontier{static_cast<int>(seed)};
        while (!frontier.empty()) {
            const int cur = frontier.front();
            frontier.pop_front();
            const Vec3 mean = normal_sum.normalized();
            for (const Neighbor& nb : tree.radius(pts[cur], radius)) {
                if (visited[nb.index]) continue;
                Vec3 n = est.normals[facade_indices[nb.index]];
                if (std::abs(n.dot(mean)) < cos_th) continue;
                if (n.dot(mean) < 0.0) n = -n;
                visited[nb.index] = 1;
                region.push_back(nb.index);
                normal_sum += n;
                frontier.push_back(nb.index);
            }
        }

        StreetSegment seg;
        seg.facade_points.reserve(region.size());
        seg.footprint2d.reserve(region.size());
        std::sort(region.begin(), region.end());
        for (int local : region) {
            const int gi = facade_indices[local];
            seg.facade_points.push_back(gi);
            seg.footprint2d.push_back(cloud.points[gi].head<2>());
        }
        if (footprint_diameter(seg.footprint2d) < params.min_diameter) continue;
        Vec2 sum = Vec2::Zero();
        for (const Vec2& p : seg.footprint2d) sum += p;
        seg.center2d = sum / static_cast<double>(seg.footprint2d.size());
        seg.id = static_cast<int>(segments.size());
        segments.push_back(std::move(seg));
    }
    return segments;
}

// Assigns near-horizontal points (angle to the vertical axis below angle_deg) to the
// segment with the nearest centroid; equidistant ties go to the lowest segment id.
inline void associate_ground_points(const PointCloud& cloud, const NormalEstimate& est,
                                    const Vec3& axis, std::vector<StreetSegment>& segments,
                                    double angle_deg = 15.0) {
    require(!segments.empty(), "ground association needs at least one segment");
    const Vec3 up = axis.normalized();
    const double cos_th = std::cos(deg2rad(angle_deg));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!est.valid[i] || std::abs(est.normals[i].dot(up)) <= cos_th) continue;
        const Vec2 p = cloud.points[i].head<2>();
        int best = 0;
        double best_d = (segments[0].center2d - p).squaredNorm();
        for (std::size_t s = 1; s < segments.size(); ++s) {
            const double d = (segments[s].center2d - p).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(s);
            }
        }
        segments[best].ground_points.push_back(static_cast<int>(i));
    }
}

inline nlohmann::ordered_json street_segments_to_json(const std::vector<StreetSegment>& segs) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const StreetSegment& s : segs) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["center"] = {s.center2d.x(), s.center2d.y()};
        j["facade_points"] = s.facade_points;
        j["ground_points"] = s.ground_points;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<StreetSegment> street_segments_from_json(const nlohmann::json& arr,
                                                            const PointCloud& aligned_cloud) {
    std::vector<StreetSegment> segs;
    for (const auto& j : arr) {
        StreetSegment s;
        s.id = j.at("id").get<int>();
        s.center2d = Vec2(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
        s.facade_points = j.at("facade_points").get<std::vector<int>>();
        s.ground_points = j.at("ground_points").get<std::vector<int>>();
        s.footprint2d.reserve(s.facade_points.size());
        for (int idx : s.facade_points) {
            require(idx >= 0 && static_cast<std::size_t>(idx) < aligned_cloud.size(),
                    "segment references a point outside the cloud");
            s.footprint2d.push_back(aligned_cloud.points[idx].head<2>());
        }
        segs.push_back(std::move(s));
    }
    return segs;
}

inline nlohmann::ordered_json overview_segments_to_json(const std::vector<OverviewSegment>& segs) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const OverviewSegment& s : segs) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["center"] = {s.center2d.x(), s.center2d.y()};
        nlohmann::ordered_json fp = nlohmann::ordered_json::array();
        for (const Vec2& p : s.footprint2d) fp.push_back({p.x(), p.y()});
        j["footprint"] = std::move(fp);
        nlohmann::ordered_json bd = nlohmann::ordered_json::array();
        for (const Vec2& p : s.boundary2d) bd.push_back({p.x(), p.y()});
        j["boundary"] = std::move(bd);
        if (s.mean_roof_height) j["mean_roof_height"] = *s.mean_roof_height;
        if (s.ground_height) j["ground_height"] = *s.ground_height;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<OverviewSegment> overview_segments_from_json(const nlohmann::json& arr) {
    std::vector<OverviewSegment> segs;
    for (const auto& j : arr) {
        OverviewSegment s;
        s.id = j.at("id").get<int>();
        s.center2d = Vec2(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
        for (const auto& p : j.at("footprint"))
            s.footprint2d.emplace_back(p[0].get<double>(), p[1].get<double>());
        for (const auto& p : j.at("boundary"))
            s.boundary2d.emplace_back(p[0].get<double>(), p[1].get<double>());
        if (j.contains("mean_roof_height")) s.mean_roof_height = j["mean_roof_height"].get<double>();
        if (j.contains("ground_height")) s.ground_height = j["ground_height"].get<double>();
        segs.push_back(std::move(s));
    }
    return segs;
}

}  // namespace crossreg
