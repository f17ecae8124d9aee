#pragma once

#include <cstdint>
#include <vector>

#include "crossreg/kdtree.hpp"
#include "crossreg/parallel.hpp"
#include "crossreg/point_cloud.hpp"
#include "crossreg/types.hpp"

namespace crossreg {

struct NormalEstimate {
    std::vector<Vec3> normals;        // unit vectors; placeholder +z where invalid
    std::vector<std::uint8_t> valid;  // 0 when the neighborhood had no unique plane normal
};

// Per-point plane normal from the covariance of the k nearest neighbors (query point
// included). A neighborhood whose two smallest covariance eigenvalues coincide within
// 1e-9 relative tolerance has no unique normal and is flagged invalid. Signs are
// canonicalized (largest-magnitude component positive), so normals of one planar
// neighborhood always agree with each other up to the shared flip.
inline NormalEstimate estimate_normals(const PointCloud& cloud, const KdTree3& tree, int k,
                                       int threads = 1) {
    require(k >= 3, "normal estimation needs k >= 3");
    require(cloud.size() >= static_cast<std::size_t>(k), "k exceeds point count");
    require(tree.size() == cloud.size(), "index does not match cloud");

    NormalEstimate out;
    out.normals.assign(cloud.size(), Vec3::UnitZ());
    out.valid.assign(cloud.size(), 0);

    par_for(cloud.size(), threads, [&](std::size_t i) {
        const auto nn = tree.knn(cloud.points[i], k);
        Vec3 mean = Vec3::Zero();
        for (const Neighbor& n : nn) mean += cloud.points[n.index];
        mean /= static_cast<double>(nn.size());
        Mat3 cov = Mat3::Zero();
        for (const Neighbor& n : nn) {
            const Vec3 d = cloud.points[n.index] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        const Vec3 evals = eig.eigenvalues();  // ascending
        const double scale = std::max({std::abs(evals[0]), std::abs(evals[1]), 1e-300});
        if (evals[1] - evals[0] <= 1e-9 * scale) return;  // flagged invalid

        Vec3 n = eig.eigenvectors().col(0).normalized();
        int major = 0;
        for (int a = 1; a < 3; ++a)
            if (std::abs(n[a]) > std::abs(n[major])) major = a;
        if (n[major] < 0.0) n = -n;
        out.normals[i] = n;
        out.valid[i] = 1;
    });
    return out;
}

struct VerticalAxis {
    Vec3 axis = Vec3::UnitZ();
    int support = 0;  // normals in the modal bin
};

// Dominant normal direction via a hemisphere histogram: antipodal pairs merged, 5-degree
// rings and sectors, except the polar cap (theta < 5 deg) is a single bin so a tight
// vertical cluster is not split across azimuth sectors. Returns the renormalized mean of
// the modal bin's members.
inline VerticalAxis estimate_vertical_axis(const std::vector<Vec3>& normals,
                                           const std::vector<std::uint8_t>& valid = {}) {
    require(valid.empty() || valid.size() == normals.size(), "validity mask size mismatch");

    constexpr int kSectors = 72;  // 360 / 5
    constexpr int kRings = 18;    // 90 / 5
    const double bin = deg2rad(5.0);

    std::vector<Vec3> sums(1 + (kRings - 1) * kSectors, Vec3::Zero());
    std::vector<int> counts(sums.size(), 0);

    int used = 0;
    for (std::size_t i = 0; i < normals.size(); ++i) {
        if (!valid.empty() && !valid[i]) continue;
        Vec3 n = normals[i].normalized();
        if (n.z() < 0.0 || (n.z() == 0.0 && (n.y() < 0.0 || (n.y() == 0.0 && n.x() < 0.0))))
            n = -n;
        const double theta = std::acos(std::min(1.0, std::max(0.0, n.z())));
        int ring = std::min(static_cast<int>(theta / bin), kRings - 1);
        int id = 0;
        if (ring > 0) {
            double phi = std::atan2(n.y(), n.x());
            if (phi < 0.0) phi += 2.0 * kPi;
            const int sector = std::min(static_cast<int>(phi / bin), kSectors - 1);
            id = 1 + (ring - 1) * kSectors + sector;
        }
        sums[id] += n;
        ++counts[id];
        ++used;
    }
    require(used > 0, "vertical axis estimation needs at least one valid normal");

    int best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i)
        if (counts[i] > counts[best]) best = static_cast<int>(i);

    // The winning bin seeds a cone refinement: the reported axis is the mean of
    // every normal within 10 degrees of it and support counts those inliers, so
    // noise spread over adjacent bins does not fragment the estimate.
    Vec3 axis = sums[best].normalized();
    const double cone = std::cos(deg2rad(10.0));
    int support = counts[best];
    for (int iter = 0; iter < 2; ++iter) {
        Vec3 acc = Vec3::Zero();
        int inliers = 0;
        for (std::size_t i = 0; i < normals.size(); ++i) {
            if (!valid.empty() && !valid[i]) continue;
            Vec3 n = normals[i].normalized();
            if (n.dot(axis) < 0.0) n = -n;
            if (n.dot(axis) >= cone) {
                acc += n;
                ++inliers;
            }
        }
        if (inliers == 0) break;
        axis = acc.normalized();
        support = inliers;
    }
    return {axis, support};
}

struct AlignedCloud {
    PointCloud cloud;
    RigidTransform3D transform;
};

// Rotates the cloud so its estimated vertical axis coincides with the reference axis.
inline AlignedCloud align_vertical(const PointCloud& cloud, const Vec3& street_axis,
                                   const Vec3& reference_axis) {
    require(street_axis.norm() > 1e-12 && reference_axis.norm() > 1e-12,
            "axes must be nonzero");
    RigidTransform3D tf;
    tf.R = minimal_rotation(street_axis, reference_axis);
    return {apply_transform(cloud, tf), tf};
}

}  // namespace crossreg
