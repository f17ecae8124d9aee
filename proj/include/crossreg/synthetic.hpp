#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossreg/camera.hpp"
#include "crossreg/cloud_io.hpp"
#include "crossreg/overview_ingest.hpp"
#include "crossreg/point_cloud.hpp"
#include "crossreg/rigid_fit.hpp"
#include "crossreg/types.hpp"

namespace crossreg {

// Closed polyline trajectory, parameterized by arc length. Corners are sharp: the
// heading jumps there, the position does not.
class LoopPath {
public:
    explicit LoopPath(std::vector<Vec2> corners) : corners_(std::move(corners)) {
        require(corners_.size() >= 3, "loop needs at least three corners");
        cum_.resize(corners_.size() + 1);
        cum_[0] = 0.0;
        for (std::size_t i = 0; i < corners_.size(); ++i) {
            const double len = (corner(i + 1) - corners_[i]).norm();
            require(len > 1e-9, "degenerate loop side");
            cum_[i + 1] = cum_[i] + len;
        }
    }

    double total() const { return cum_.back(); }
    int side_count() const { return static_cast<int>(corners_.size()); }
    double side_start(int i) const { return cum_[i]; }
    double side_length(int i) const { return cum_[i + 1] - cum_[i]; }
    Vec2 side_dir(int i) const { return (corner(i + 1) - corners_[i]).normalized(); }
    double side_heading(int i) const {
        const Vec2 d = side_dir(i);
        return std::atan2(d.y(), d.x());
    }
    const std::vector<Vec2>& corners() const { return corners_; }

    int locate(double s) const {
        require(s >= -1e-9 && s <= total() + 1e-9, "arc length outside the loop");
        int side = side_count() - 1;
        for (int i = 0; i < side_count(); ++i)
            if (s < cum_[i + 1]) {
                side = i;
                break;
            }
        return side;
    }

    struct Frame {
        Vec2 pos;
        Vec2 dir;
        int side;
    };

    Frame at(double s) const {
        const int i = locate(s);
        Frame f;
        f.side = i;
        f.dir = side_dir(i);
        f.pos = corners_[i] + f.dir * (s - cum_[i]);
        return f;
    }

    // Arc position of the nearest path point; equal distances keep the smaller s.
    double project(const Vec2& p) const {
        double best_d2 = std::numeric_limits<double>::infinity();
        double best_s = 0.0;
        for (int i = 0; i < side_count(); ++i) {
            const Vec2 a = corners_[i];
            const Vec2 d = side_dir(i);
            const double t = std::clamp((p - a).dot(d), 0.0, side_length(i));
            const double d2 = (a + d * t - p).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best_s = cum_[i] + t;
            }
        }
        return best_s;
    }

private:
    Vec2 corner(std::size_t i) const { return corners_[i % corners_.size()]; }

    std::vector<Vec2> corners_;
    std::vector<double> cum_;
};

struct DriftModel {
    double heading_rate_deg_per_m = 0.0;  // cumulative heading error per meter traveled
    double translation_rate = 0.0;        // along-track scale error, meters per meter
    double vertical_rate = 0.0;           // height ramp, meters per meter
    double noise_sigma = 0.0;             // iid point noise after the drift map
    std::uint64_t seed = 7;

    bool is_identity() const {
        return heading_rate_deg_per_m == 0.0 && translation_rate == 0.0 && vertical_rate == 0.0 &&
               noise_sigma == 0.0;
    }
    void validate() const {
        require(std::isfinite(heading_rate_deg_per_m) && std::isfinite(translation_rate) &&
                    std::isfinite(vertical_rate),
                "drift rates must be finite");
        require(noise_sigma >= 0.0, "noise sigma must be non-negative");
    }
};

// Smooth map from the true world onto the drifted world. The drifted trajectory is
// integrated in closed form side by side (a straight side maps to a circular arc
// under a constant heading rate), so the result carries no step-size error. A world
// point rides the frame of its nearest trajectory point: it rotates by the
// accumulated heading error about that anchor and follows the anchor's displaced
// position, which distorts the scene smoothly and non-rigidly.
class DriftField {
public:
    DriftField(const LoopPath& path, const DriftModel& m)
        : path_(path),
          k_(deg2rad(m.heading_rate_deg_per_m)),
          stretch_(1.0 + m.translation_rate),
          vr_(m.vertical_rate) {
        side_start_pos_.resize(path.side_count() + 1);
        side_start_pos_[0] = path.corners()[0];
        for (int i = 0; i < path.side_count(); ++i)
            side_start_pos_[i + 1] = advance(i, path.side_start(i) + path.side_length(i));
    }

    double drift_angle(double s) const { return k_ * s; }

    Vec2 drifted_path_pos(double s) const {
        s = std::clamp(s, 0.0, path_.total());
        return advance(path_.locate(s), s);
    }

    double anchor(const Vec2& p) const { return path_.project(p); }

    Mat3 rotation_at(double s) const { return axis_angle(Vec3::UnitZ(), drift_angle(s)); }

    Vec3 map_point(const Vec3& p, double s) const {
        const Eigen::Rotation2D<double> rot(drift_angle(s));
        const Vec2 moved = rot * (p.head<2>() - path_.at(s).pos) + drifted_path_pos(s);
        return Vec3(moved.x(), moved.y(), p.z() + vr_ * s);
    }

private:
    // Drifted position after traveling to arc length s within side i, integrating
    // the drifted heading exactly: a constant true heading theta plus the linear
    // error k*s integrates to an arc of radius stretch / k.
    Vec2 advance(int i, double s) const {
        const double s0 = path_.side_start(i);
        const double theta = path_.side_heading(i);
        const Vec2 base = side_start_pos_[i];
        if (std::abs(k_) < 1e-15)
            return base + stretch_ * (s - s0) * Vec2(std::cos(theta), std::sin(theta));
        const double a0 = theta + k_ * s0, a1 = theta + k_ * s;
        return base + (stretch_ / k_) * Vec2(std::sin(a1) - std::sin(a0),
                                             std::cos(a0) - std::cos(a1));
    }

    const LoopPath& path_;
    double k_, stretch_, vr_;
    std::vector<Vec2> side_start_pos_;
};

struct SceneConfig {
    std::uint64_t seed = 1;
    int buildings = 30;
    // 220x180 leaves 38 slots at the default widths, enough headroom for the
    // default building count after corner margins.
    double loop_width = 220.0;
    double loop_height = 180.0;
    double building_width = 11.0;  // along the street, jittered per building
    double building_depth = 8.0;
    // Wide spreads keep building pairs distinguishable by shape; with
    // near-identical footprints on a common frontage line the pair matching
    // problem turns ambiguous. The smallest width stays a step above the 5 m
    // detectability floor so no building sits exactly on the edge.
    double size_jitter = 5.0;
    double rotation_jitter_deg = 12.0;
    double roof_height_min = 6.0;
    double roof_height_max = 12.0;
    double setback = 8.0;        // trajectory to facade distance
    double setback_jitter = 3.0;  // per-building frontage variation
    double corner_margin = 10.0;
    double slot_gap = 6.0;  // clearance added between building slots
    double facade_height = 3.0;
    double facade_spacing = 0.05;
    // Length of each side wall captured past the front corners. Street-level
    // capture always clips some of the sides at oblique angles, and the corners
    // are what make a footprint identifiable rather than a bare strip.
    double side_visible = 3.0;
    double ground_spacing = 0.15;
    double ground_inner = 0.5;  // ground strip extent, measured from the trajectory
    double overview_spacing = 0.5;
    double camera_every = 5.0;
    double camera_height = 2.0;
    int track_stride = 97;  // every Nth facade point becomes a tracked point
    double obs_max_range = 25.0;
    double obs_min_depth = 1.0;
    double image_half_extent = 1500.0;
    Intrinsics intrinsics;

    void validate() const {
        require(buildings >= 1, "need at least one building");
        require(building_width - size_jitter >= 5.0 && building_depth - size_jitter / 2 >= 5.0,
                "building sides must stay at least 5 m");
        require(facade_spacing > 0 && ground_spacing > 0 && overview_spacing > 0,
                "sampling spacings must be positive");
        require(facade_height > facade_spacing, "facade height too small to sample");
        require(side_visible >= 0.0, "side wall capture length cannot be negative");
        require(setback_jitter >= 0.0 && setback - setback_jitter > ground_inner + 0.5,
                "setback leaves no ground strip");
        require(camera_every > 0, "camera spacing must be positive");
        require(track_stride >= 1, "track stride must be positive");
    }
};

struct SyntheticBuilding {
    std::vector<Vec2> footprint;  // four corners, front edge first
    Vec2 front_center = Vec2::Zero();
    Vec2 facade_dir = Vec2::Zero();    // along the front edge
    Vec2 outward_dir = Vec2::Zero();   // from the street into the building
    double width = 0.0, depth = 0.0;
    double roof_height = 0.0;
};

struct SyntheticScene {
    SceneConfig config;
    DriftModel drift;  // identity until apply_drift
    std::vector<Vec2> path_corners;
    std::vector<SyntheticBuilding> buildings;

    PointCloud street;       // what the pipeline sees (drifted after apply_drift)
    PointCloud street_true;  // undistorted reference, same point order
    std::vector<int> owner;  // building id per street point, -1 for ground

    PointCloud overview_cloud;  // roofs and ground, georeferenced frame
    std::vector<std::vector<Vec2>> overview_polygons;
    double overview_ground_height = 0.0;

    std::vector<CameraPose> poses;       // drifted after apply_drift
    std::vector<CameraPose> poses_true;
    std::vector<double> pose_arc;        // arc position of each pose on the true path
    std::vector<Observation> observations;

    std::vector<RigidTransform3D> truth;  // per building, distorted -> true
    std::vector<double> truth_rms;        // residual of that rigid fit
    bool drift_applied = false;
};

namespace detail {

inline bool convex_overlap(const std::vector<Vec2>& A, const std::vector<Vec2>& B) {
    auto separates = [](const std::vector<Vec2>& edges_of, const std::vector<Vec2>& a,
                        const std::vector<Vec2>& b) {
        for (std::size_t i = 0; i < edges_of.size(); ++i) {
            const Vec2 e = edges_of[(i + 1) % edges_of.size()] - edges_of[i];
            const Vec2 axis(-e.y(), e.x());
            double lo_a = std::numeric_limits<double>::infinity(), hi_a = -lo_a;
            double lo_b = lo_a, hi_b = -lo_a;
            for (const Vec2& p : a) {
                lo_a = std::min(lo_a, axis.dot(p));
                hi_a = std::max(hi_a, axis.dot(p));
            }
            for (const Vec2& p : b) {
                lo_b = std::min(lo_b, axis.dot(p));
                hi_b = std::max(hi_b, axis.dot(p));
            }
            if (hi_a < lo_b || hi_b < lo_a) return true;
        }
        return false;
    };
    return !separates(A, A, B) && !separates(B, A, B);
}

inline Mat3 camera_rotation(const Vec2& heading) {
    // right-handed: x along travel, y up, z (view direction) toward the outer side
    Mat3 R;
    R.col(0) = Vec3(heading.x(), heading.y(), 0.0);
    R.col(1) = Vec3::UnitZ();
    R.col(2) = Vec3(heading.y(), -heading.x(), 0.0);
    return R;
}

}  // namespace detail

// Observations are regenerated from whatever geometry the scene currently holds, so
// they are always self-consistent: reprojecting them at the scene's own poses and
// points gives zero residual.
inline std::vector<Observation> make_observations(const PointCloud& cloud,
                                                  const std::vector<CameraPose>& poses,
                                                  const SceneConfig& cfg) {
    std::vector<int> tracked;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (cloud.track_ids[i] >= 0) tracked.push_back(static_cast<int>(i));
    std::vector<Observation> obs;
    for (std::size_t p = 0; p < poses.size(); ++p) {
        for (int idx : tracked) {
            const Vec3& X = cloud.points[idx];
            if ((X - poses[p].C).head<2>().norm() > cfg.obs_max_range) continue;
            const Vec3 pc = poses[p].to_camera(X);
            if (pc.z() <= cfg.obs_min_depth) continue;
            const Vec2 uv = project_point(poses[p], cfg.intrinsics, X);
            if (std::abs(uv.x() - cfg.intrinsics.cx) > cfg.image_half_extent ||
                std::abs(uv.y() - cfg.intrinsics.cy) > cfg.image_half_extent)
                continue;
            obs.push_back({static_cast<int>(p), static_cast<int>(cloud.track_ids[idx]), uv});
        }
    }
    return obs;
}

// Deterministic scene build: a rectangular closed loop traversed counter-clockwise,
// buildings in slots along the outer (right-hand) side, the street-facing wall and
// the front lip of both side walls sampled per building plus a ground strip between
// trajectory and facades. The RNG is consumed in a fixed order (six draws per
// building per placement attempt), so a seed pins the scene bit for bit.
inline SyntheticScene generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    SyntheticScene scene;
    scene.config = cfg;
    scene.path_corners = {Vec2(0, 0), Vec2(cfg.loop_width, 0),
                          Vec2(cfg.loop_width, cfg.loop_height), Vec2(0, cfg.loop_height)};
    LoopPath path(scene.path_corners);

    const double slot_len = cfg.building_width + cfg.size_jitter + cfg.slot_gap;
    std::vector<double> slot_arcs;
    for (int i = 0; i < path.side_count(); ++i) {
        const double usable = path.side_length(i) - 2 * cfg.corner_margin;
        const int slots = usable > slot_len ? static_cast<int>(usable / slot_len) : 0;
        for (int j = 0; j < slots; ++j)
            slot_arcs.push_back(path.side_start(i) + cfg.corner_margin + slot_len * (j + 0.5));
    }
    require(static_cast<int>(slot_arcs.size()) >= cfg.buildings,
            "loop too small for the requested building count");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> roof(cfg.roof_height_min, cfg.roof_height_max);

    for (int attempt = 0;; ++attempt) {
        if (attempt >= 100)
            throw std::runtime_error("could not place buildings without overlap in 100 attempts");
        scene.buildings.clear();
        for (int b = 0; b < cfg.buildings; ++b) {
            const auto frame = path.at(slot_arcs[b]);
            const Vec2 n(frame.dir.y(), -frame.dir.x());  // outer side of a CCW loop
            SyntheticBuilding bl;
            bl.width = cfg.building_width + cfg.size_jitter * unit(rng);
            bl.depth = cfg.building_depth + 0.5 * cfg.size_jitter * unit(rng);
            const double along = 0.4 * cfg.slot_gap * unit(rng);
            const double rot = deg2rad(cfg.rotation_jitter_deg * unit(rng));
            const double frontage = cfg.setback + cfg.setback_jitter * unit(rng);
            bl.roof_height = roof(rng);
            bl.front_center = frame.pos + frame.dir * along + n * frontage;
            const Eigen::Rotation2D<double> rr(rot);
            bl.facade_dir = rr * frame.dir;
            bl.outward_dir = rr * n;
            const Vec2 fl = bl.front_center - bl.facade_dir * (bl.width / 2);
            const Vec2 fr = bl.front_center + bl.facade_dir * (bl.width / 2);
            bl.footprint = {fl, fr, fr + bl.outward_dir * bl.depth, fl + bl.outward_dir * bl.depth};
            scene.buildings.push_back(std::move(bl));
        }
        bool overlap = false;
        for (std::size_t i = 0; i < scene.buildings.size() && !overlap; ++i)
            for (std::size_t j = i + 1; j < scene.buildings.size() && !overlap; ++j)
                overlap = detail::convex_overlap(scene.buildings[i].footprint,
                                                 scene.buildings[j].footprint);
        if (!overlap) break;
    }

    // facades: isotropic grid on the front face plus the visible lip of each side
    // wall, normals facing away from the building
    std::int64_t next_track = 0;
    std::int64_t facade_counter = 0;
    for (std::size_t b = 0; b < scene.buildings.size(); ++b) {
        const auto& bl = scene.buildings[b];
        const Vec2 start = bl.front_center - bl.facade_dir * (bl.width / 2);
        auto sample_wall = [&](const Vec2& from, const Vec2& along, double length,
                               const Vec2& outward) {
            const Vec3 normal(outward.x(), outward.y(), 0.0);
            for (double u = cfg.facade_spacing / 2; u < length; u += cfg.facade_spacing) {
                const Vec2 at = from + along * u;
                for (double z = cfg.facade_spacing / 2; z < cfg.facade_height;
                     z += cfg.facade_spacing) {
                    scene.street_true.points.push_back(Vec3(at.x(), at.y(), z));
                    scene.street_true.normals.push_back(normal);
                    scene.street_true.track_ids.push_back(
                        facade_counter % cfg.track_stride == 0 ? next_track++ : -1);
                    scene.owner.push_back(static_cast<int>(b));
                    ++facade_counter;
                }
            }
        };
        sample_wall(start, bl.facade_dir, bl.width, -bl.outward_dir);
        const double side = std::min(cfg.side_visible, bl.depth);
        sample_wall(start, bl.outward_dir, side, -bl.facade_dir);
        sample_wall(start + bl.facade_dir * bl.width, bl.outward_dir, side, bl.facade_dir);
    }

    // ground strip between the trajectory and the nearest possible facade line
    const double ground_outer = cfg.setback - cfg.setback_jitter - 0.3;
    for (double s = cfg.ground_spacing / 2; s < path.total(); s += cfg.ground_spacing) {
        const auto frame = path.at(s);
        const Vec2 n(frame.dir.y(), -frame.dir.x());
        for (double t = cfg.ground_inner; t < ground_outer; t += cfg.ground_spacing) {
            const Vec2 at = frame.pos + n * t;
            scene.street_true.points.push_back(Vec3(at.x(), at.y(), 0.0));
            scene.street_true.normals.push_back(Vec3::UnitZ());
            scene.street_true.track_ids.push_back(-1);
            scene.owner.push_back(-1);
        }
    }
    scene.street = scene.street_true;

    // over-view: footprint polygons, plus a roof/ground cloud on the raster pitch
    for (const auto& bl : scene.buildings) scene.overview_polygons.push_back(bl.footprint);
    for (const auto& bl : scene.buildings) {
        Vec2 lo = bl.footprint[0], hi = bl.footprint[0];
        for (const Vec2& c : bl.footprint) {
            lo = lo.cwiseMin(c);
            hi = hi.cwiseMax(c);
        }
        for (double x = lo.x() + cfg.overview_spacing / 2; x < hi.x(); x += cfg.overview_spacing)
            for (double y = lo.y() + cfg.overview_spacing / 2; y < hi.y();
                 y += cfg.overview_spacing)
                if (point_in_ring(Vec2(x, y), bl.footprint)) {
                    scene.overview_cloud.points.push_back(Vec3(x, y, bl.roof_height));
                    scene.overview_cloud.track_ids.push_back(-1);
                }
    }
    const double band =
        cfg.setback + cfg.setback_jitter + cfg.building_depth + cfg.size_jitter + 4.0;
    for (double s = cfg.overview_spacing / 2; s < path.total(); s += cfg.overview_spacing) {
        const auto frame = path.at(s);
        const Vec2 n(frame.dir.y(), -frame.dir.x());
        for (double t = cfg.ground_inner; t < band; t += cfg.overview_spacing) {
            const Vec2 at = frame.pos + n * t;
            bool covered = false;
            for (const auto& bl : scene.buildings) {
                if ((at - bl.front_center).squaredNorm() > (bl.width + bl.depth) * (bl.width + bl.depth))
                    continue;
                if (point_in_ring(at, bl.footprint)) {
                    covered = true;
                    break;
                }
            }
            if (!covered) {
                scene.overview_cloud.points.push_back(Vec3(at.x(), at.y(), 0.0));
                scene.overview_cloud.track_ids.push_back(-1);
            }
        }
    }
    scene.overview_ground_height = 0.0;

    for (double s = 0.0; s < path.total() - 1e-9; s += cfg.camera_every) {
        const auto frame = path.at(s);
        CameraPose pose;
        pose.R = detail::camera_rotation(frame.dir);
        pose.C = Vec3(frame.pos.x(), frame.pos.y(), cfg.camera_height);
        scene.poses_true.push_back(pose);
        scene.pose_arc.push_back(s);
    }
    scene.poses = scene.poses_true;
    scene.observations = make_observations(scene.street, scene.poses, cfg);

    scene.truth.assign(scene.buildings.size(), RigidTransform3D{});
    scene.truth_rms.assign(scene.buildings.size(), 0.0);
    scene.street.validate();
    return scene;
}

// Push the scene through a drift model. Zero rates and zero noise return the scene
// unchanged so the identity case is bit-exact. Otherwise every street point, pose,
// and observation is rebuilt from the drift map, and the per-building truth becomes
// the rigid fit from the distorted facade back onto the true one, with its residual
// recorded (drift bends each wall slightly, so the fit is not exact).
inline SyntheticScene apply_drift(const SyntheticScene& scene, const DriftModel& model) {
    model.validate();
    SyntheticScene out = scene;
    out.drift = model;
    out.drift_applied = true;
    // The identity model moves nothing; skipping the remap keeps the clouds
    // bit-identical to the input instead of within rounding of it.
    if (model.is_identity()) return out;

    LoopPath path(scene.path_corners);
    DriftField field(path, model);
    std::mt19937_64 rng(model.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (std::size_t i = 0; i < scene.street_true.size(); ++i) {
        const Vec3& p = scene.street_true.points[i];
        const double s = field.anchor(p.head<2>());
        Vec3 moved = field.map_point(p, s);
        if (model.noise_sigma > 0) {
            moved.x() += model.noise_sigma * gauss(rng);
            moved.y() += model.noise_sigma * gauss(rng);
            moved.z() += model.noise_sigma * gauss(rng);
        }
        out.street.points[i] = moved;
        out.street.normals[i] = field.rotation_at(s) * scene.street_true.normals[i];
    }

    for (std::size_t p = 0; p < scene.poses_true.size(); ++p) {
        const double s = scene.pose_arc[p];
        const double drifted_heading = path.side_heading(path.at(s).side) + field.drift_angle(s);
        const Vec2 dir(std::cos(drifted_heading), std::sin(drifted_heading));
        CameraPose pose;
        pose.R = detail::camera_rotation(dir);
        const Vec2 at = field.drifted_path_pos(s);
        pose.C = Vec3(at.x(), at.y(), scene.poses_true[p].C.z() + model.vertical_rate * s);
        out.poses[p] = pose;
    }

    out.observations = make_observations(out.street, out.poses, scene.config);

    for (std::size_t b = 0; b < scene.buildings.size(); ++b) {
        std::vector<Vec3> src, dst;
        for (std::size_t i = 0; i < scene.street_true.size(); ++i) {
            if (scene.owner[i] != static_cast<int>(b)) continue;
            src.push_back(out.street.points[i]);
            dst.push_back(scene.street_true.points[i]);
        }
        const RigidFit fit = fit_rigid_transform(src, dst);
        out.truth[b] = fit.transform;
        out.truth_rms[b] = fit.rms;
    }
    out.drift_applied = true;
    return out;
}

inline void write_scene_bundle(const SyntheticScene& scene, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto in_dir = [&](const char* name) { return (fs::path(dir) / name).string(); };

    write_cloud(scene.street, in_dir("street.xyz"));
    write_cloud(scene.street_true, in_dir("street_true.xyz"));
    write_cloud(scene.overview_cloud, in_dir("overview_cloud.xyz"));
    write_polygons_json(scene.overview_polygons, in_dir("overview_polygons.json"));
    const RasterizedMask mask =
        rasterize_polygons(scene.overview_polygons, scene.config.overview_spacing);
    write_pgm(mask.image, in_dir("overview_mask.pgm"));
    write_georef(mask.georef, in_dir("georef.txt"));
    write_poses(scene.poses, in_dir("poses.txt"));
    write_observations(scene.observations, in_dir("observations.txt"));

    {
        std::ofstream owners(in_dir("owners.txt"));
        for (int o : scene.owner) owners << o << "\n";
    }
    {
        std::ofstream tracks(in_dir("tracks.txt"));
        for (std::size_t i = 0; i < scene.street.size(); ++i)
            if (scene.street.track_ids[i] >= 0)
                tracks << scene.street.track_ids[i] << " " << i << "\n";
    }

    nlohmann::ordered_json truth;
    truth["ground_height"] = scene.overview_ground_height;
    truth["drift_applied"] = scene.drift_applied;
    truth["buildings"] = nlohmann::ordered_json::array();
    for (std::size_t b = 0; b < scene.buildings.size(); ++b) {
        nlohmann::ordered_json j;
        j["id"] = b;
        j["roof_height"] = scene.buildings[b].roof_height;
        j["rms"] = scene.truth_rms[b];
        j["R"] = nlohmann::ordered_json::array();
        for (int r = 0; r < 3; ++r)
            j["R"].push_back({scene.truth[b].R(r, 0), scene.truth[b].R(r, 1),
                              scene.truth[b].R(r, 2)});
        j["t"] = {scene.truth[b].t.x(), scene.truth[b].t.y(), scene.truth[b].t.z()};
        truth["buildings"].push_back(std::move(j));
    }
    std::ofstream(in_dir("truth.json")) << truth.dump(2) << "\n";

    nlohmann::ordered_json manifest;
    manifest["scale"] = 1.0;
    manifest["config"] = {{"seed", scene.config.seed},
                          {"buildings", scene.config.buildings},
                          {"loop_width", scene.config.loop_width},
                          {"loop_height", scene.config.loop_height},
                          {"building_width", scene.config.building_width},
                          {"building_depth", scene.config.building_depth},
                          {"size_jitter", scene.config.size_jitter},
                          {"rotation_jitter_deg", scene.config.rotation_jitter_deg},
                          {"setback", scene.config.setback},
                          {"setback_jitter", scene.config.setback_jitter},
                          {"facade_height", scene.config.facade_height},
                          {"facade_spacing", scene.config.facade_spacing},
                          {"side_visible", scene.config.side_visible},
                          {"ground_spacing", scene.config.ground_spacing},
                          {"overview_spacing", scene.config.overview_spacing},
                          {"camera_every", scene.config.camera_every},
                          {"track_stride", scene.config.track_stride}};
    manifest["drift"] = {{"heading_rate_deg_per_m", scene.drift.heading_rate_deg_per_m},
                         {"translation_rate", scene.drift.translation_rate},
                         {"vertical_rate", scene.drift.vertical_rate},
                         {"noise_sigma", scene.drift.noise_sigma},
                         {"seed", scene.drift.seed}};
    std::ofstream(in_dir("manifest.json")) << manifest.dump(2) << "\n";
}

}  // namespace crossreg
