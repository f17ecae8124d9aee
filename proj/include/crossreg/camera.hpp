#pragma once

#include <fstream>
#include <sstream>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

struct Intrinsics {
    double f = 1000.0;
    double cx = 0.0;
    double cy = 0.0;
};

// World-from-camera rotation plus camera center: X_world = R * X_cam + C.
struct CameraPose {
    Mat3 R = Mat3::Identity();
    Vec3 C = Vec3::Zero();

    Vec3 to_camera(const Vec3& world) const { return R.transpose() * (world - C); }
};

// Pinhole projection; the point must sit in front of the camera.
inline Vec2 project_point(const CameraPose& pose, const Intrinsics& K, const Vec3& world,
                          bool* behind = nullptr) {
    const Vec3 pc = pose.to_camera(world);
    if (behind) *behind = pc.z() <= 1e-12;
    if (pc.z() <= 1e-12) return Vec2(0.0, 0.0);
    return Vec2(K.f * pc.x() / pc.z() + K.cx, K.f * pc.y() / pc.z() + K.cy);
}

// Text format, one pose per line: id, row-major rotation, center.
inline void write_poses(const std::vector<CameraPose>& poses, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        out << i;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out << " " << poses[i].R(r, c);
        for (int c = 0; c < 3; ++c) out << " " << poses[i].C[c];
        out << "\n";
    }
}

inline std::vector<CameraPose> read_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<CameraPose> poses;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long id;
        CameraPose p;
        ss >> id;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) ss >> p.R(r, c);
        ss >> p.C.x() >> p.C.y() >> p.C.z();
        if (!ss) throw std::runtime_error("malformed pose line in " + path);
        require(static_cast<std::size_t>(id) == poses.size(), "pose ids must be sequential");
        RigidTransform3D chk{p.R, Vec3::Zero()};
        require(chk.is_rotation(1e-6), "pose rotation is not orthonormal");
        poses.push_back(p);
    }
    return poses;
}

// One image observation of a tracked point.
struct Observation {
    int pose_id = -1;
    int track_id = -1;
    Vec2 uv = Vec2::Zero();
};

inline void write_observations(const std::vector<Observation>& obs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (const auto& o : obs)
        out << o.pose_id << " " << o.track_id << " " << o.uv.x() << " " << o.uv.y() << "\n";
}

inline std::vector<Observation> read_observations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<Observation> obs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Observation o;
        ss >> o.pose_id >> o.track_id >> o.uv.x() >> o.uv.y();
        if (!ss) throw std::runtime_error("malformed observation line in " + path);
        require(o.pose_id >= 0 && o.track_id >= 0, "observation ids must be non-negative");
        obs.push_back(o);
    }
    return obs;
}

}  // namespace crossreg
