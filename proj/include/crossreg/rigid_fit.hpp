#pragma once

#include <vector>

#include <Eigen/SVD>

#include "crossreg/types.hpp"

namespace crossreg {

struct RigidFit {
    RigidTransform3D transform;  // maps src onto dst in the least-squares sense
    double rms = 0.0;
};

// Orthogonal Procrustes with the usual determinant correction, so the result is a
// proper rotation even when the correlation favors a reflection.
inline RigidFit fit_rigid_transform(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    require(src.size() == dst.size(), "rigid fit needs equal point counts");
    require(src.size() >= 3, "rigid fit needs at least three points");
    Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        ms += src[i];
        md += dst[i];
    }
    ms /= static_cast<double>(src.size());
    md /= static_cast<double>(dst.size());
    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) cov += (dst[i] - md) * (src[i] - ms).transpose();
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    RigidFit fit;
    fit.transform.R = svd.matrixU() * d * svd.matrixV().transpose();
    fit.transform.t = md - fit.transform.R * ms;
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i)
        sq += (fit.transform.apply(src[i]) - dst[i]).squaredNorm();
    fit.rms = std::sqrt(sq / static_cast<double>(src.size()));
    return fit;
}

}  // namespace crossreg
