#pragma once

#include <vector>

#include "crossreg/camera.hpp"
#include "crossreg/fine_registration.hpp"
#include "crossreg/point_cloud.hpp"

namespace crossreg {

// Inverse-log falloff; w(0) = 1 and the weight stays positive for any distance.
inline double blend_weight(double distance) {
    require(distance >= 0.0, "blend distance must be non-negative");
    return 1.0 / std::log(distance + std::numbers::e_v<double>);
}

struct BlendOptions {
    int neighbor_count = 2;  // matched neighbor segments blended in beside the owner
};

// Per-point transform field built from the per-segment rigid transforms. Each point
// is moved by a convex combination of its owner segment's transform and the
// neighbor_count nearest other matched segments, weighted by 1 / ln(d + e) with d
// the planar distance to each segment's center. Blending mixes the transformed
// positions only; directions (normals, camera rotations) follow the owner alone,
// since averaging rotations has no rigid meaning.
class BlendField {
public:
    BlendField(std::vector<SegmentTransform3D> transforms, std::vector<Vec2> centers,
               BlendOptions opt = {})
        : transforms_(std::move(transforms)), centers_(std::move(centers)), opt_(opt) {
        require(transforms_.size() == centers_.size(), "one center per segment transform");
        for (std::size_t i = 0; i < transforms_.size(); ++i)
            if (transforms_[i].overview_id >= 0) matched_.push_back(static_cast<int>(i));
        require(!matched_.empty(), "no matched segments to blend");
    }

    // Owner may be -1 (unsegmented point); the nearest matched segment then owns it.
    Vec3 apply(const Vec3& p, int owner) const {
        const auto support = support_set(Vec2(p.x(), p.y()), owner);
        Vec3 out = Vec3::Zero();
        for (const auto& [idx, w] : support) out += w * transforms_[idx].transform.apply(p);
        return out;
    }

    Vec3 apply_direction(const Vec3& d, const Vec2& at, int owner) const {
        return transforms_[owner_index(owner, at, owner >= 0)].transform.R * d;
    }

    // Rigid move for a camera: center blended, rotation from the owner segment.
    CameraPose apply(const CameraPose& pose) const {
        const int own = nearest_matched(Vec2(pose.C.x(), pose.C.y()));
        CameraPose out;
        out.C = apply(pose.C, own);
        out.R = transforms_[own].transform.R * pose.R;
        return out;
    }

    int nearest_matched(const Vec2& p) const {
        int best = matched_.front();
        double best_d = (centers_[best] - p).squaredNorm();
        for (int idx : matched_) {
            const double d = (centers_[idx] - p).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = idx;
            }
        }
        return best;
    }

    const std::vector<SegmentTransform3D>& transforms() const { return transforms_; }

    // Owner plus the nearest matched others, weights normalized to sum to one.
    std::vector<std::pair<int, double>> support_set(const Vec2& p, int owner) const {
        const int own = owner_index(owner, p, owner >= 0);
        std::vector<std::pair<double, int>> others;
        for (int idx : matched_) {
            if (idx == own) continue;
            others.push_back({(centers_[idx] - p).norm(), idx});
        }
        std::sort(others.begin(), others.end());
        std::vector<std::pair<int, double>> support{{own, blend_weight((centers_[own] - p).norm())}};
        for (int k = 0; k < opt_.neighbor_count && k < static_cast<int>(others.size()); ++k)
            support.push_back({others[k].second, blend_weight(others[k].first)});
        double sum = 0.0;
        for (const auto& [idx, w] : support) sum += w;
        for (auto& [idx, w] : support) w /= sum;
        return support;
    }

private:
    int owner_index(int owner, const Vec2& p, bool have_owner) const {
        if (have_owner) {
            require(owner >= 0 && static_cast<std::size_t>(owner) < transforms_.size(),
                    "owner segment out of range");
            if (transforms_[owner].overview_id >= 0) return owner;
        }
        return nearest_matched(p);
    }

    std::vector<SegmentTransform3D> transforms_;
    std::vector<Vec2> centers_;
    std::vector<int> matched_;
    BlendOptions opt_;
};

// owner[i] is the segment id of point i, -1 for points outside every segment.
inline PointCloud blend_cloud(const PointCloud& cloud, const std::vector<int>& owner,
                              const BlendField& field) {
    require(owner.size() == cloud.size(), "one owner per point");
    PointCloud out = cloud;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec2 at(cloud.points[i].x(), cloud.points[i].y());
        out.points[i] = field.apply(cloud.points[i], owner[i]);
        if (cloud.has_normals())
            out.normals[i] = field.apply_direction(cloud.normals[i], at, owner[i]);
    }
    return out;
}

inline std::vector<CameraPose> blend_poses(const std::vector<CameraPose>& poses,
                                           const BlendField& field) {
    std::vector<CameraPose> out;
    out.reserve(poses.size());
    for (const auto& p : poses) out.push_back(field.apply(p));
    return out;
}

}  // namespace crossreg
