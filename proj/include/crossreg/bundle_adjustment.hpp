#pragma once

#include <map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "crossreg/camera.hpp"

namespace crossreg {

namespace detail {

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

inline Mat3 so3_exp(const Vec3& w) {
    const double th = w.norm();
    if (th < 1e-12) return Mat3::Identity() + skew(w);
    return axis_angle(w / th, th);
}

}  // namespace detail

struct BAObservation {
    int pose = -1;
    int point = -1;
    Vec2 uv = Vec2::Zero();
};

// Reprojection term plus a quadratic anchor pulling each camera center toward its
// registered position. The anchor keeps the global gauge fixed: without it the
// reprojection term is invariant to a common rigid move and the solver could drift
// the whole scene away from the registration.
struct BAProblem {
    std::vector<CameraPose> poses;
    std::vector<Vec3> points;
    std::vector<BAObservation> obs;
    std::vector<Vec3> anchors;  // one per pose
    Intrinsics K;
    double lambda = 20.0;

    void validate() const {
        require(anchors.size() == poses.size(), "one anchor per pose");
        require(lambda >= 0.0, "anchor weight must be non-negative");
        for (const auto& o : obs) {
            require(o.pose >= 0 && static_cast<std::size_t>(o.pose) < poses.size(),
                    "observation pose out of range");
            require(o.point >= 0 && static_cast<std::size_t>(o.point) < points.size(),
                    "observation point out of range");
        }
    }
};

// Residual of one observation and, optionally, its Jacobian blocks. The rotation is
// updated right-multiplicatively, R <- R * Exp(delta), so with Y = R^T (X - C) the
// chain is dY/ddelta = [Y]_x, dY/dC = -R^T, dY/dX = R^T.
inline Vec2 reprojection_residual(const CameraPose& pose, const Intrinsics& K, const Vec3& X,
                                  const Vec2& uv, Eigen::Matrix<double, 2, 3>* J_rot = nullptr,
                                  Eigen::Matrix<double, 2, 3>* J_center = nullptr,
                                  Eigen::Matrix<double, 2, 3>* J_point = nullptr,
                                  bool* behind = nullptr) {
    const Vec3 Y = pose.to_camera(X);
    if (Y.z() <= 1e-12) {
        if (behind) *behind = true;
        if (J_rot) J_rot->setZero();
        if (J_center) J_center->setZero();
        if (J_point) J_point->setZero();
        return Vec2::Zero();
    }
    if (behind) *behind = false;
    const Vec2 proj(K.f * Y.x() / Y.z() + K.cx, K.f * Y.y() / Y.z() + K.cy);
    if (J_rot || J_center || J_point) {
        Eigen::Matrix<double, 2, 3> du_dY;
        du_dY << 1, 0, -Y.x() / Y.z(), 0, 1, -Y.y() / Y.z();
        du_dY *= K.f / Y.z();
        // r = uv - proj, so each block picks up a minus sign.
        if (J_rot) *J_rot = -du_dY * detail::skew(Y);
        if (J_center) *J_center = du_dY * pose.R.transpose();
        if (J_point) *J_point = -du_dY * pose.R.transpose();
    }
    return uv - proj;
}

inline double ba_cost(const BAProblem& prob) {
    double c = 0.0;
    for (const auto& o : prob.obs)
        c += reprojection_residual(prob.poses[o.pose], prob.K, prob.points[o.point], o.uv)
                 .squaredNorm();
    for (std::size_t p = 0; p < prob.poses.size(); ++p)
        c += prob.lambda * (prob.poses[p].C - prob.anchors[p]).squaredNorm();
    return c;
}

inline double ba_rms_reprojection(const BAProblem& prob) {
    if (prob.obs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& o : prob.obs)
        s += reprojection_residual(prob.poses[o.pose], prob.K, prob.points[o.point], o.uv)
                 .squaredNorm();
    return std::sqrt(s / static_cast<double>(prob.obs.size()));
}

struct BAOptions {
    int max_iters = 50;
    double rel_tol = 1e-12;
    double mu_init = 1e-4;
    std::size_t dense_point_limit = 1000;  // above this, points are Schur-eliminated
};

struct BAResult {
    double initial_cost = 0.0;
    double final_cost = 0.0;
    double rms_reproj_px = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

struct BAStep {
    Eigen::VectorXd cam;  // 6 per pose: rotation increment, center increment
    Eigen::VectorXd pts;  // 3 per point
};

// One damped normal-equations solve. Returns false when the system is not solvable.
inline bool ba_solve(const BAProblem& prob, double mu, std::size_t dense_limit, BAStep& step) {
    const int P = static_cast<int>(prob.poses.size());
    const int N = static_cast<int>(prob.points.size());

    std::vector<Eigen::Matrix<double, 6, 6>> U(P, Eigen::Matrix<double, 6, 6>::Zero());
    std::vector<Eigen::Matrix<double, 6, 1>> gc(P, Eigen::Matrix<double, 6, 1>::Zero());
    std::vector<Mat3> V(N, Mat3::Zero());
    std::vector<Vec3> gp(N, Vec3::Zero());
    std::map<std::pair<int, int>, Eigen::Matrix<double, 6, 3>> W;

    for (const auto& o : prob.obs) {
        Eigen::Matrix<double, 2, 3> Jr, Jc, Jx;
        const Vec2 r = reprojection_residual(prob.poses[o.pose], prob.K, prob.points[o.point],
                                             o.uv, &Jr, &Jc, &Jx);
        Eigen::Matrix<double, 2, 6> Jcam;
        Jcam << Jr, Jc;
        U[o.pose] += Jcam.transpose() * Jcam;
        gc[o.pose] += Jcam.transpose() * r;
        V[o.point] += Jx.transpose() * Jx;
        gp[o.point] += Jx.transpose() * r;
        auto slot = W.try_emplace({o.pose, o.point}, Eigen::Matrix<double, 6, 3>::Zero()).first;
        slot->second += Jcam.transpose() * Jx;
    }
    for (int p = 0; p < P; ++p) {
        // anchor residual sqrt(lambda) * (C - anchor): Jacobian sqrt(lambda) * I on C
        const Vec3 ra = std::sqrt(prob.lambda) * (prob.poses[p].C - prob.anchors[p]);
        U[p].bottomRightCorner<3, 3>() += prob.lambda * Mat3::Identity();
        gc[p].tail<3>() += std::sqrt(prob.lambda) * ra;
        U[p] += mu * Eigen::Matrix<double, 6, 6>::Identity();
    }
    for (int i = 0; i < N; ++i) V[i] += mu * Mat3::Identity();

    if (static_cast<std::size_t>(N) <= dense_limit) {
        const int dim = 6 * P + 3 * N;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        for (int p = 0; p < P; ++p) {
            H.block<6, 6>(6 * p, 6 * p) = U[p];
            g.segment<6>(6 * p) = gc[p];
        }
        for (int i = 0; i < N; ++i) {
            H.block<3, 3>(6 * P + 3 * i, 6 * P + 3 * i) = V[i];
            g.segment<3>(6 * P + 3 * i) = gp[i];
        }
        for (const auto& [key, w] : W) {
            H.block<6, 3>(6 * key.first, 6 * P + 3 * key.second) = w;
            H.block<3, 6>(6 * P + 3 * key.second, 6 * key.first) = w.transpose();
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        if (ldlt.info() != Eigen::Success) return false;
        const Eigen::VectorXd delta = ldlt.solve(-g);
        step.cam = delta.head(6 * P);
        step.pts = delta.tail(3 * N);
        return true;
    }

    // Schur complement on the points: S = U - W V^-1 W^T over the cameras only.
    std::vector<Mat3> Vinv(N);
    for (int i = 0; i < N; ++i) {
        const Eigen::LDLT<Mat3> ldlt(V[i]);
        if (ldlt.info() != Eigen::Success) return false;
        Vinv[i] = ldlt.solve(Mat3::Identity());
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(6 * P, 6 * P);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(6 * P);
    for (int p = 0; p < P; ++p) {
        S.block<6, 6>(6 * p, 6 * p) = U[p];
        rhs.segment<6>(6 * p) = -gc[p];
    }
    std::vector<std::vector<std::pair<int, const Eigen::Matrix<double, 6, 3>*>>> by_point(N);
    for (const auto& [key, w] : W) by_point[key.second].push_back({key.first, &w});
    for (int i = 0; i < N; ++i) {
        for (const auto& [p, wp] : by_point[i]) {
            const Eigen::Matrix<double, 6, 3> wv = (*wp) * Vinv[i];
            rhs.segment<6>(6 * p) += wv * gp[i];
            for (const auto& [q, wq] : by_point[i])
                S.block<6, 6>(6 * p, 6 * q) -= wv * wq->transpose();
        }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success) return false;
    step.cam = ldlt.solve(rhs);
    step.pts.resize(3 * N);
    for (int i = 0; i < N; ++i) {
        Vec3 acc = -gp[i];
        for (const auto& [p, wp] : by_point[i]) acc -= wp->transpose() * step.cam.segment<6>(6 * p);
        step.pts.segment<3>(3 * i) = Vinv[i] * acc;
    }
    return true;
}

}  // namespace detail

// Levenberg-Marquardt over poses and points. Steps are only accepted when the cost
// drops, so the reported cost sequence is non-increasing.
inline BAResult solve_bundle_adjustment(BAProblem& prob, const BAOptions& opt = {}) {
    prob.validate();
    BAResult res;
    res.initial_cost = ba_cost(prob);
    double cost = res.initial_cost;
    double mu = opt.mu_init;

    for (int it = 0; it < opt.max_iters; ++it) {
        detail::BAStep step;
        bool solved = detail::ba_solve(prob, mu, opt.dense_point_limit, step);
        BAProblem trial = prob;
        if (solved) {
            for (std::size_t p = 0; p < prob.poses.size(); ++p) {
                trial.poses[p].R = prob.poses[p].R * detail::so3_exp(step.cam.segment<3>(6 * p));
                trial.poses[p].C = prob.poses[p].C + step.cam.segment<3>(6 * p + 3);
            }
            for (std::size_t i = 0; i < prob.points.size(); ++i)
                trial.points[i] = prob.points[i] + step.pts.segment<3>(3 * i);
        }
        const double trial_cost = solved ? ba_cost(trial) : std::numeric_limits<double>::infinity();
        res.iterations = it + 1;
        if (trial_cost < cost) {
            prob = std::move(trial);
            const double rel = (cost - trial_cost) / std::max(1.0, cost);
            cost = trial_cost;
            mu = std::max(mu / 3.0, 1e-12);
            if (rel < opt.rel_tol) {
                res.converged = true;
                break;
            }
        } else {
            mu *= 10.0;
            if (mu > 1e16) {
                res.converged = true;  // stalled at a stationary point
                break;
            }
        }
    }
    res.final_cost = cost;
    res.rms_reproj_px = ba_rms_reprojection(prob);
    return res;
}

}  // namespace crossreg
