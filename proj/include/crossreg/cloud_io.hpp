#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossreg/point_cloud.hpp"

namespace crossreg {

namespace detail {

// Normals that already round-trip as unit vectors are kept bit for bit, so writing a
// cloud and reading it back is exact; anything clearly off unit length is rescaled.
inline Vec3 unitize(const Vec3& n, const std::string& path) {
    const double len = n.norm();
    if (len < 1e-12) throw std::runtime_error("zero-length normal in " + path);
    if (std::abs(len - 1.0) <= 1e-9) return n;
    return n / len;
}

}  // namespace detail

// ASCII format: "x y z" or "x y z nx ny nz" per line, '#' starts a comment. All data
// lines must agree on whether normals are present.
inline PointCloud read_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    PointCloud cloud;
    int fields = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        double v[6];
        int got = 0;
        while (got < 6 && (ss >> v[got])) ++got;
        if (got == 0) continue;
        if (got != 3 && got != 6)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected 3 or 6 values");
        if (fields == 0)
            fields = got;
        else if (fields != got)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": inconsistent normal columns");
        cloud.points.emplace_back(v[0], v[1], v[2]);
        if (got == 6) cloud.normals.emplace_back(detail::unitize(Vec3(v[3], v[4], v[5]), path));
    }
    cloud.validate();
    return cloud;
}

inline void write_xyz(const PointCloud& cloud, const std::string& path) {
    cloud.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    char buf[256];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        if (cloud.has_normals()) {
            const Vec3& n = cloud.normals[i];
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g\n", p.x(), p.y(),
                          p.z(), n.x(), n.y(), n.z());
        } else {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
        }
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Binary little-endian PLY with float64 x, y, z and optional float64 nx, ny, nz.
inline void write_ply(const PointCloud& cloud, const std::string& path) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.has_normals())
        out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        double row[6] = {cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z(), 0, 0, 0};
        int n = 3;
        if (cloud.has_normals()) {
            row[3] = cloud.normals[i].x();
            row[4] = cloud.normals[i].y();
            row[5] = cloud.normals[i].z();
            n = 6;
        }
        out.write(reinterpret_cast<const char*>(row), n * sizeof(double));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline PointCloud read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "ply") throw std::runtime_error("not a PLY file: " + path);

    std::size_t count = 0;
    std::vector<std::string> props;
    bool binary_le = false;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (tok == "element") {
            std::string name;
            ss >> name >> count;
            if (name != "vertex") throw std::runtime_error("unsupported PLY element: " + name);
        } else if (tok == "property") {
            std::string type, name;
            ss >> type >> name;
            if (type != "double" && type != "float64")
                throw std::runtime_error("PLY property must be float64: " + name);
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!binary_le) throw std::runtime_error("PLY must be binary little-endian: " + path);
    const bool with_normals = props.size() == 6;
    if (props.size() != 3 && props.size() != 6)
        throw std::runtime_error("PLY must carry x y z [nx ny nz]: " + path);

    PointCloud cloud;
    cloud.points.resize(count);
    if (with_normals) cloud.normals.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        double row[6];
        in.read(reinterpret_cast<char*>(row), (with_normals ? 6 : 3) * sizeof(double));
        if (!in) throw std::runtime_error("truncated PLY: " + path);
        cloud.points[i] = Vec3(row[0], row[1], row[2]);
        if (with_normals) cloud.normals[i] = detail::unitize(Vec3(row[3], row[4], row[5]), path);
    }
    cloud.validate();
    return cloud;
}

inline PointCloud read_cloud(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "ply" || ext == "PLY") return read_ply(path);
    return read_xyz(path);
}

inline void write_cloud(const PointCloud& cloud, const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "ply" || ext == "PLY")
        write_ply(cloud, path);
    else
        write_xyz(cloud, path);
}

}  // namespace crossreg
