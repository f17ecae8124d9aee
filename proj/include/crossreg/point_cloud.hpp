#pragma once

#include <cstdint>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

// Point set with optional per-point normals and optional track ids linking points to
// 2D observations. Normals, when present, are unit length and parallel-sized to points;
// track id -1 marks an untracked point.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<std::int64_t> track_ids;

    std::size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }

    void validate() const {
        require(normals.empty() || normals.size() == points.size(),
                "normal count must match point count");
        require(track_ids.empty() || track_ids.size() == points.size(),
                "track id count must match point count");
        for (const Vec3& n : normals)
            require(std::abs(n.norm() - 1.0) < 1e-6, "normals must be unit length");
    }
};

inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform3D& tf) {
    PointCloud out = cloud;
    for (Vec3& p : out.points) p = tf.apply(p);
    for (Vec3& n : out.normals) n = tf.R * n;
    return out;
}

}  // namespace crossreg
