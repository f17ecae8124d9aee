#pragma once

#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossreg/distance_map.hpp"
#include "crossreg/types.hpp"

namespace crossreg {

struct FineOptions {
    double angle_range_deg = 10.0;
    double angle_step_deg = 1.0;
    int offset_half_cells = 10;
    bool coarse_to_fine = false;
};

struct FineResult {
    RigidTransform2D transform;  // refined transform, offset folded in
    double mean_dist = 0.0;
    double angle_delta = 0.0;  // applied correction relative to the initial transform
    int offset_x = 0, offset_y = 0;
};

namespace detail {

inline double fine_score(const DistanceMap& dmap, const std::vector<Vec2>& placed,
                         const std::vector<int>& base_col, const std::vector<int>& base_row,
                         int dx, int dy) {
    double sum = 0.0;
    for (std::size_t s = 0; s < placed.size(); ++s) {
        const int col = base_col[s] + dx, row = base_row[s] + dy;
        if (dmap.contains_cell(col, row)) {
            sum += dmap.at(col, row);
        } else {
            const int cc = std::min(std::max(col, 0), dmap.cols - 1);
            const int cr = std::min(std::max(row, 0), dmap.rows - 1);
            const Vec2 shifted = placed[s] + Vec2(dx * dmap.cell_size, dy * dmap.cell_size);
            sum += dmap.at(cc, cr) + (shifted - dmap.cell_center(cc, cr)).norm();
        }
    }
    return sum / static_cast<double>(placed.size());
}

}  // namespace detail

// Per-segment refinement: small rotations about the pivot (the matched footprint
// centroid) crossed with integer-cell offsets, scored by the mean distance-map
// lookup. Angles scan 0, -step, +step, ... so score ties keep the smallest
// correction; offsets scan lexicographically with strict improvement.
inline FineResult refine_2d(const std::vector<Vec2>& samples, const RigidTransform2D& init,
                            const Vec2& pivot, const DistanceMap& dmap,
                            const FineOptions& opt = {}) {
    require(!samples.empty(), "no samples to refine");
    require(opt.angle_step_deg > 0.0, "angle step must be positive");

    std::vector<double> deltas{0.0};
    const int steps = static_cast<int>(std::floor(opt.angle_range_deg / opt.angle_step_deg + 1e-9));
    for (int s = 1; s <= steps; ++s) {
        deltas.push_back(-deg2rad(s * opt.angle_step_deg));
        deltas.push_back(deg2rad(s * opt.angle_step_deg));
    }

    FineResult best;
    best.mean_dist = std::numeric_limits<double>::infinity();
    std::vector<Vec2> placed(samples.size());
    std::vector<int> base_col(samples.size()), base_row(samples.size());

    for (double delta : deltas) {
        RigidTransform2D cand;
        cand.angle = init.angle + delta;
        const Eigen::Rotation2D<double> rd(delta);
        cand.t = rd * (init.t - pivot) + pivot;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            placed[i] = cand.apply(samples[i]);
            base_col[i] =
                static_cast<int>(std::lround((placed[i].x() - dmap.origin.x()) / dmap.cell_size));
            base_row[i] =
                static_cast<int>(std::lround((placed[i].y() - dmap.origin.y()) / dmap.cell_size));
        }

        double best_here = std::numeric_limits<double>::infinity();
        int bdx = 0, bdy = 0;
        auto consider = [&](int dx, int dy) {
            const double m = detail::fine_score(dmap, placed, base_col, base_row, dx, dy);
            if (m < best_here) {
                best_here = m;
                bdx = dx;
                bdy = dy;
            }
        };
        const int H = opt.offset_half_cells;
        if (opt.coarse_to_fine && H > 4) {
            // Anchored at 0 so the no-shift offset is probed at every angle; the
            // refinement window contains the coarse winner, so the reset is safe.
            for (int dx = -4 * (H / 4); dx <= H; dx += 4)
                for (int dy = -4 * (H / 4); dy <= H; dy += 4) consider(dx, dy);
            const int cx = bdx, cy = bdy;
            best_here = std::numeric_limits<double>::infinity();
            for (int dx = std::max(-H, cx - 4); dx <= std::min(H, cx + 4); ++dx)
                for (int dy = std::max(-H, cy - 4); dy <= std::min(H, cy + 4); ++dy) consider(dx, dy);
        } else {
            for (int dx = -H; dx <= H; ++dx)
                for (int dy = -H; dy <= H; ++dy) consider(dx, dy);
        }

        if (best_here < best.mean_dist) {
            best.mean_dist = best_here;
            best.angle_delta = delta;
            best.offset_x = bdx;
            best.offset_y = bdy;
            best.transform = cand;
            best.transform.t += Vec2(bdx * dmap.cell_size, bdy * dmap.cell_size);
        }
    }
    return best;
}

struct ZAlign {
    Mat3 RZ = Mat3::Identity();  // levels the fitted street ground plane
    double tz = 0.0;
    bool degenerate = false;  // too few or unusable ground points; global fallback used
};

namespace detail {

// Lower median, deterministic for even counts.
inline double lower_median(std::vector<double> v) {
    require(!v.empty(), "median of empty range");
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

}  // namespace detail

// Vertical alignment from the segment's ground points. Heights are median-filtered
// (window 5, index order) to shed stray returns, a total-least-squares plane is fit,
// and RZ rotates its normal to +z. tz then moves the lower median of the leveled
// heights onto the over-view ground height. Fewer than 10 ground points, a rank
// deficient fit, or a normal further than 30 degrees from vertical fall back to
// identity leveling with the caller's global shift.
inline ZAlign align_z(const std::vector<Vec3>& ground_points, double overview_ground_height,
                      double fallback_tz) {
    ZAlign out;
    if (ground_points.size() < 10) {
        out.degenerate = true;
        out.tz = fallback_tz;
        return out;
    }
    const int n = static_cast<int>(ground_points.size());
    std::vector<Vec3> filtered(ground_points.begin(), ground_points.end());
    for (int i = 0; i < n; ++i) {
        const int lo = std::max(0, i - 2), hi = std::min(n - 1, i + 2);
        std::vector<double> win;
        win.reserve(hi - lo + 1);
        for (int j = lo; j <= hi; ++j) win.push_back(ground_points[j].z());
        filtered[i].z() = detail::lower_median(std::move(win));
    }

    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : filtered) mean += p;
    mean /= n;
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : filtered) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const auto& ev = eig.eigenvalues();
    const double gap = ev[1] - ev[0];
    Vec3 normal = eig.eigenvectors().col(0);
    if (normal.z() < 0) normal = -normal;
    if (gap <= 1e-9 * std::max({std::abs(ev[0]), std::abs(ev[2]), 1e-300}) ||
        normal.z() < std::cos(deg2rad(30.0))) {
        out.degenerate = true;
        out.tz = fallback_tz;
        return out;
    }
    out.RZ = minimal_rotation(normal, Vec3::UnitZ());
    std::vector<double> leveled;
    leveled.reserve(ground_points.size());
    for (const Vec3& p : ground_points) leveled.push_back((out.RZ * p).z());
    out.tz = overview_ground_height - detail::lower_median(std::move(leveled));
    return out;
}

// Lift the planar transform and stack the vertical alignment under it:
// R = blockdiag(R2d, 1) * RZ, t = (t2d, tz). Valid while RZ stays near identity,
// which the align_z guards enforce.
inline RigidTransform3D compose_3d(const RigidTransform2D& planar, const Mat3& RZ, double tz) {
    RigidTransform3D out;
    Mat3 lifted = Mat3::Identity();
    lifted.topLeftCorner<2, 2>() = planar.rotation();
    out.R = lifted * RZ;
    out.t = Vec3(planar.t.x(), planar.t.y(), tz);
    return out;
}

struct SegmentTransform3D {
    int segment_id = -1;
    int overview_id = -1;  // -1 when the segment went unmatched
    RigidTransform3D transform;
    double mean_dist = 0.0;
    bool z_degenerate = false;
};

inline nlohmann::ordered_json segment_transforms_to_json(
    const std::vector<SegmentTransform3D>& ts) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& t : ts) {
        nlohmann::ordered_json j;
        j["segment_id"] = t.segment_id;
        j["overview_id"] = t.overview_id;
        j["R"] = nlohmann::ordered_json::array();
        for (int r = 0; r < 3; ++r)
            j["R"].push_back({t.transform.R(r, 0), t.transform.R(r, 1), t.transform.R(r, 2)});
        j["t"] = {t.transform.t.x(), t.transform.t.y(), t.transform.t.z()};
        j["mean_dist"] = t.mean_dist;
        j["z_degenerate"] = t.z_degenerate;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<SegmentTransform3D> segment_transforms_from_json(const nlohmann::json& arr) {
    std::vector<SegmentTransform3D> out;
    for (const auto& j : arr) {
        SegmentTransform3D t;
        t.segment_id = j.at("segment_id").get<int>();
        t.overview_id = j.at("overview_id").get<int>();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t.transform.R(r, c) = j.at("R")[r][c].get<double>();
        t.transform.t = Vec3(j.at("t")[0].get<double>(), j.at("t")[1].get<double>(),
                             j.at("t")[2].get<double>());
        t.mean_dist = j.at("mean_dist").get<double>();
        t.z_degenerate = j.at("z_degenerate").get<bool>();
        require(t.transform.is_rotation(1e-6), "stored rotation is not orthonormal");
        out.push_back(t);
    }
    return out;
}

inline void write_segment_transforms(const std::vector<SegmentTransform3D>& ts,
                                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << segment_transforms_to_json(ts).dump(2) << "\n";
}

inline std::vector<SegmentTransform3D> read_segment_transforms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return segment_transforms_from_json(j);
}

}  // namespace crossreg
