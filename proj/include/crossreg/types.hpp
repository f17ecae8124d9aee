#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace crossreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    if (a > kPi) a -= 2.0 * kPi;
    return a;
}

// Magnitude of the shortest rotation between two planar angles.
inline double angle_diff(double a, double b) { return std::abs(wrap_angle(a - b)); }

struct RigidTransform2D {
    double angle = 0.0;   // radians, counter-clockwise
    Vec2 t = Vec2::Zero();

    Eigen::Matrix2d rotation() const {
        const double c = std::cos(angle), s = std::sin(angle);
        Eigen::Matrix2d r;
        r << c, -s, s, c;
        return r;
    }

    Vec2 apply(const Vec2& p) const { return rotation() * p + t; }

    RigidTransform2D inverse() const {
        RigidTransform2D inv;
        inv.angle = -angle;
        inv.t = -(inv.rotation() * t);
        return inv;
    }

    // this ∘ other: apply `other` first.
    RigidTransform2D compose(const RigidTransform2D& other) const {
        RigidTransform2D out;
        out.angle = wrap_angle(angle + other.angle);
        out.t = rotation() * other.t + t;
        return out;
    }
};

struct RigidTransform3D {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return R * p + t; }

    RigidTransform3D inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

    RigidTransform3D compose(const RigidTransform3D& other) const {
        return {R * other.R, R * other.t + t};
    }

    bool is_rotation(double tol = 1e-9) const {
        return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
               std::abs(R.determinant() - 1.0) < tol;
    }
};

inline Mat3 axis_angle(const Vec3& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

// Smallest rotation taking unit vector `from` onto unit vector `to`. The antiparallel
// case has no unique minimizer; there we rotate by pi about the direction perpendicular
// to `to` that is closest to +x (falling back to +y when `to` is itself along x).
inline Mat3 minimal_rotation(const Vec3& from, const Vec3& to) {
    const Vec3 a = from.normalized(), b = to.normalized();
    const double d = a.dot(b);
    if (d > -1.0 + 1e-12) {
        const Vec3 v = a.cross(b);
        const double s = v.norm();
        if (s < 1e-15) return Mat3::Identity();
        return axis_angle(v, std::atan2(s, d));
    }
    Vec3 h = Vec3::UnitX() - b.dot(Vec3::UnitX()) * b;
    if (h.norm() < 1e-9) h = Vec3::UnitY() - b.dot(Vec3::UnitY()) * b;
    return axis_angle(h, kPi);
}

inline void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace crossreg
