#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "crossreg/overview_ingest.hpp"
#include "crossreg/rigid_fit.hpp"
#include "crossreg/synthetic.hpp"

using namespace crossreg;

namespace {

SceneConfig small_config(std::uint64_t seed = 3) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.buildings = 8;
    cfg.loop_width = 110.0;
    cfg.loop_height = 90.0;
    cfg.facade_spacing = 0.2;
    cfg.ground_spacing = 0.4;
    cfg.overview_spacing = 0.5;
    return cfg;
}

bool clouds_identical(const PointCloud& a, const PointCloud& b) {
    if (a.size() != b.size() || a.normals.size() != b.normals.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.points[i] != b.points[i]) return false;
    for (std::size_t i = 0; i < a.normals.size(); ++i)
        if (a.normals[i] != b.normals[i]) return false;
    return a.track_ids == b.track_ids;
}

}  // namespace

TEST_CASE("the same seed reproduces the scene bit for bit") {
    const SyntheticScene a = generate_scene(small_config());
    const SyntheticScene b = generate_scene(small_config());
    REQUIRE(clouds_identical(a.street, b.street));
    REQUIRE(clouds_identical(a.overview_cloud, b.overview_cloud));
    REQUIRE(a.owner == b.owner);
    REQUIRE(a.buildings.size() == b.buildings.size());
    for (std::size_t i = 0; i < a.poses.size(); ++i) {
        REQUIRE(a.poses[i].R == b.poses[i].R);
        REQUIRE(a.poses[i].C == b.poses[i].C);
    }
    // Different seeds must change the layout.
    const SyntheticScene c = generate_scene(small_config(4));
    REQUIRE_FALSE(clouds_identical(a.street, c.street));
}

TEST_CASE("a fresh scene is its own undistorted truth") {
    const SyntheticScene scene = generate_scene(small_config());
    REQUIRE_FALSE(scene.drift_applied);
    REQUIRE(clouds_identical(scene.street, scene.street_true));
    REQUIRE(scene.truth.size() == scene.buildings.size());
    for (std::size_t b = 0; b < scene.truth.size(); ++b) {
        REQUIRE((scene.truth[b].R - Mat3::Identity()).norm() == 0.0);
        REQUIRE(scene.truth[b].t.norm() == 0.0);
        REQUIRE(scene.truth_rms[b] == 0.0);
    }
}

TEST_CASE("zero drift maps the scene onto itself") {
    const SyntheticScene scene = generate_scene(small_config());
    const SyntheticScene drifted = apply_drift(scene, DriftModel{});
    REQUIRE(drifted.drift_applied);
    REQUIRE(clouds_identical(drifted.street, scene.street));
    for (std::size_t i = 0; i < scene.poses.size(); ++i) {
        REQUIRE(drifted.poses[i].R == scene.poses[i].R);
        REQUIRE(drifted.poses[i].C == scene.poses[i].C);
    }
    for (std::size_t b = 0; b < drifted.truth.size(); ++b) {
        REQUIRE((drifted.truth[b].R - Mat3::Identity()).norm() == 0.0);
        REQUIRE(drifted.truth[b].t.norm() == 0.0);
    }
}

TEST_CASE("every building produces exactly one over-view polygon") {
    const SyntheticScene scene = generate_scene(small_config());
    REQUIRE(scene.overview_polygons.size() == scene.buildings.size());
    const PolygonIngestResult res = ingest_overview_polygons(scene.overview_polygons, 0.5, 5.0);
    REQUIRE(res.segments.size() == scene.buildings.size());
    REQUIRE(res.warnings.empty());
}

TEST_CASE("building footprints never overlap") {
    const SyntheticScene scene = generate_scene(small_config(9));
    for (std::size_t i = 0; i < scene.buildings.size(); ++i)
        for (std::size_t j = i + 1; j < scene.buildings.size(); ++j) {
            // Sample one footprint densely; no sample may fall inside the other.
            const auto& fi = scene.buildings[i].footprint;
            for (int u = 0; u < 10; ++u)
                for (int v = 0; v < 10; ++v) {
                    const Vec2 p = fi[0] + (u / 9.0) * (fi[1] - fi[0]) +
                                   (v / 9.0) * (fi[3] - fi[0]);
                    REQUIRE_FALSE(point_in_ring(p, scene.buildings[j].footprint));
                }
        }
}

TEST_CASE("owners tag facade points with their building and ground with none") {
    const SyntheticScene scene = generate_scene(small_config());
    REQUIRE(scene.owner.size() == scene.street.size());
    std::vector<int> facade_count(scene.buildings.size(), 0);
    for (std::size_t i = 0; i < scene.owner.size(); ++i) {
        REQUIRE(scene.owner[i] >= -1);
        REQUIRE(scene.owner[i] < static_cast<int>(scene.buildings.size()));
        if (scene.owner[i] >= 0) ++facade_count[scene.owner[i]];
    }
    for (int c : facade_count) REQUIRE(c > 100);
}

TEST_CASE("pure heading drift bends a straight side into the analytic arc") {
    const std::vector<Vec2> corners = {{0, 0}, {100, 0}, {100, 80}, {0, 80}};
    const LoopPath path(corners);
    DriftModel m;
    m.heading_rate_deg_per_m = 0.1;
    const DriftField field(path, m);
    const double k = deg2rad(0.1);
    for (double s : {0.0, 10.0, 25.0, 60.0, 99.0}) {
        // Circle through the origin tangent to +x with curvature k.
        const Vec2 expect(std::sin(k * s) / k, (1.0 - std::cos(k * s)) / k);
        REQUIRE((field.drifted_path_pos(s) - expect).norm() < 1e-6);
    }
}

TEST_CASE("translation drift stretches a straight side linearly") {
    const std::vector<Vec2> corners = {{0, 0}, {100, 0}, {100, 80}, {0, 80}};
    const LoopPath path(corners);
    DriftModel m;
    m.translation_rate = 0.02;
    const DriftField field(path, m);
    for (double s : {0.0, 20.0, 50.0, 100.0}) {
        REQUIRE((field.drifted_path_pos(s) - Vec2(1.02 * s, 0.0)).norm() < 1e-9);
        REQUIRE(field.drift_angle(s) == 0.0);
    }
}

TEST_CASE("drift accumulates into a start-to-end gap around the loop") {
    const std::vector<Vec2> corners = {{0, 0}, {100, 0}, {100, 80}, {0, 80}};
    const LoopPath path(corners);
    DriftModel m;
    m.heading_rate_deg_per_m = 0.05;
    m.translation_rate = 0.02;
    const DriftField field(path, m);
    const double gap = (field.drifted_path_pos(path.total()) - field.drifted_path_pos(0.0)).norm();
    REQUIRE(gap > 1.0);
}

TEST_CASE("vertical drift ramps heights with arc length") {
    const std::vector<Vec2> corners = {{0, 0}, {100, 0}, {100, 80}, {0, 80}};
    const LoopPath path(corners);
    DriftModel m;
    m.vertical_rate = 0.01;
    const DriftField field(path, m);
    const Vec3 p(40.0, 5.0, 2.0);
    const Vec3 moved = field.map_point(p, 40.0);
    REQUIRE(moved.z() == Catch::Approx(2.0 + 0.4).margin(1e-12));
    REQUIRE((moved.head<2>() - p.head<2>()).norm() < 1e-12);
}

TEST_CASE("recorded truth transforms undo the drift to the recorded residual") {
    const SyntheticScene scene = generate_scene(small_config());
    DriftModel m;
    m.heading_rate_deg_per_m = 0.05;
    m.translation_rate = 0.02;
    const SyntheticScene drifted = apply_drift(scene, m);
    REQUIRE(drifted.drift_applied);
    REQUIRE_FALSE(clouds_identical(drifted.street, scene.street));

    for (std::size_t b = 0; b < drifted.buildings.size(); ++b) {
        double sum_sq = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < drifted.street.size(); ++i) {
            if (drifted.owner[i] != static_cast<int>(b)) continue;
            const Vec3 back = drifted.truth[b].apply(drifted.street.points[i]);
            sum_sq += (back - drifted.street_true.points[i]).squaredNorm();
            ++n;
        }
        REQUIRE(n > 0);
        const double rms = std::sqrt(sum_sq / static_cast<double>(n));
        REQUIRE(rms == Catch::Approx(drifted.truth_rms[b]).margin(1e-9));
        // The fit must beat doing nothing.
        double raw_sq = 0.0;
        for (std::size_t i = 0; i < drifted.street.size(); ++i)
            if (drifted.owner[i] == static_cast<int>(b))
                raw_sq += (drifted.street.points[i] - drifted.street_true.points[i]).squaredNorm();
        REQUIRE(sum_sq <= raw_sq + 1e-9);
    }
}

TEST_CASE("observations reproject exactly in both fresh and drifted scenes") {
    const SyntheticScene scene = generate_scene(small_config());
    DriftModel m;
    m.heading_rate_deg_per_m = 0.05;
    m.translation_rate = 0.02;
    const SyntheticScene drifted = apply_drift(scene, m);

    for (const SyntheticScene* sc : {&scene, &drifted}) {
        REQUIRE_FALSE(sc->observations.empty());
        std::map<int, int> track_to_point;
        for (std::size_t i = 0; i < sc->street.track_ids.size(); ++i)
            if (sc->street.track_ids[i] >= 0) track_to_point[sc->street.track_ids[i]] = static_cast<int>(i);
        for (const Observation& o : sc->observations) {
            const auto it = track_to_point.find(o.track_id);
            REQUIRE(it != track_to_point.end());
            bool behind = false;
            const Vec2 uv = project_point(sc->poses[o.pose_id], sc->config.intrinsics,
                                          sc->street.points[it->second], &behind);
            REQUIRE_FALSE(behind);
            REQUIRE((uv - o.uv).norm() < 1e-9);
        }
    }
}

TEST_CASE("noise perturbs points reproducibly") {
    const SyntheticScene scene = generate_scene(small_config());
    DriftModel m;
    m.noise_sigma = 0.01;
    m.seed = 99;
    const SyntheticScene a = apply_drift(scene, m);
    const SyntheticScene b = apply_drift(scene, m);
    REQUIRE(clouds_identical(a.street, b.street));
    REQUIRE_FALSE(clouds_identical(a.street, scene.street));
    double max_shift = 0.0;
    for (std::size_t i = 0; i < a.street.size(); ++i)
        max_shift = std::max(max_shift, (a.street.points[i] - scene.street.points[i]).norm());
    REQUIRE(max_shift < 0.1);
    m.seed = 100;
    const SyntheticScene c = apply_drift(scene, m);
    REQUIRE_FALSE(clouds_identical(a.street, c.street));
}

TEST_CASE("a scene bundle round-trips through its files") {
    const SyntheticScene scene = generate_scene(small_config());
    DriftModel m;
    m.heading_rate_deg_per_m = 0.03;
    const SyntheticScene drifted = apply_drift(scene, m);
    const auto dir = std::filesystem::temp_directory_path() / "crossreg_test_bundle";
    std::filesystem::create_directories(dir);
    write_scene_bundle(drifted, dir.string());

    for (const char* name :
         {"street.xyz", "street_true.xyz", "overview_cloud.xyz", "overview_polygons.json",
          "overview_mask.pgm", "georef.txt", "poses.txt", "observations.txt", "owners.txt",
          "tracks.txt", "truth.json", "manifest.json"})
        REQUIRE(std::filesystem::exists(dir / name));

    const PointCloud street = read_cloud((dir / "street.xyz").string());
    REQUIRE(street.size() == drifted.street.size());
    for (std::size_t i = 0; i < street.size(); ++i)
        REQUIRE(street.points[i] == drifted.street.points[i]);

    const auto polys = read_polygons_json((dir / "overview_polygons.json").string());
    REQUIRE(polys.size() == drifted.overview_polygons.size());

    const auto poses = read_poses((dir / "poses.txt").string());
    REQUIRE(poses.size() == drifted.poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) REQUIRE(poses[i].C == drifted.poses[i].C);

    std::ifstream truth_in(dir / "truth.json");
    nlohmann::json tj;
    truth_in >> tj;
    REQUIRE(tj.at("buildings").size() == drifted.buildings.size());
    REQUIRE(tj.at("drift_applied").get<bool>());
    std::filesystem::remove_all(dir);
}

TEST_CASE("cameras sit on the path at ground height looking outward") {
    const SyntheticScene scene = generate_scene(small_config());
    REQUIRE_FALSE(scene.poses.empty());
    REQUIRE(scene.pose_arc.size() == scene.poses.size());
    const LoopPath path(scene.path_corners);
    for (std::size_t i = 0; i < scene.poses.size(); ++i) {
        const auto frame = path.at(scene.pose_arc[i]);
        REQUIRE((scene.poses_true[i].C.head<2>() - frame.pos).norm() < 1e-9);
        REQUIRE(scene.poses_true[i].C.z() == Catch::Approx(scene.config.camera_height));
        // Camera frame stays right-handed and orthonormal.
        const Mat3& R = scene.poses_true[i].R;
        REQUIRE((R * R.transpose() - Mat3::Identity()).norm() < 1e-9);
        REQUIRE(R.determinant() == Catch::Approx(1.0).margin(1e-9));
    }
}
