#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "crossreg/normals.hpp"
#include "crossreg/overview_ingest.hpp"
#include "crossreg/segments.hpp"

using namespace crossreg;

namespace {

// Vertical wall in the xz plane: x in [0,len], z in [0,3], normal +/-y.
void add_wall(PointCloud& cloud, const Vec2& start, const Vec2& dir, double len, double spacing) {
    const Vec2 d = dir.normalized();
    for (double s = 0.0; s <= len + 1e-9; s += spacing)
        for (double z = 0.0; z <= 3.0 + 1e-9; z += spacing) {
            const Vec2 xy = start + s * d;
            cloud.points.emplace_back(xy.x(), xy.y(), z);
        }
}

void add_ground(PointCloud& cloud, const Vec2& lo, const Vec2& hi, double spacing) {
    for (double x = lo.x(); x <= hi.x() + 1e-9; x += spacing)
        for (double y = lo.y(); y <= hi.y() + 1e-9; y += spacing)
            cloud.points.emplace_back(x, y, 0.0);
}

struct Segmented {
    PointCloud cloud;
    std::vector<StreetSegment> segments;
    NormalEstimate est;
};

Segmented segment_cloud(PointCloud cloud, double min_diameter = 5.0) {
    const KdTree3 tree(cloud.points);
    Segmented out;
    out.est = estimate_normals(cloud, tree, 16, 1);
    const VerticalAxis axis = estimate_vertical_axis(out.est.normals, out.est.valid);
    const std::vector<int> facade =
        extract_facade_points(cloud, tree, out.est, axis.axis, {}, 1);
    RegionGrowParams rp;
    rp.min_diameter = min_diameter;
    out.segments = region_grow_segments(cloud, facade, out.est, rp);
    associate_ground_points(cloud, out.est, axis.axis, out.segments, 15.0);
    out.cloud = std::move(cloud);
    return out;
}

}  // namespace

TEST_CASE("plane normals are recovered and degenerate neighborhoods flagged") {
    PointCloud cloud;
    std::mt19937 rng(21);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    const Vec3 n = Vec3(1.0, 2.0, 3.0).normalized();
    const Vec3 a = n.cross(Vec3::UnitX()).normalized();
    const Vec3 b = n.cross(a);
    for (int i = 0; i < 300; ++i) cloud.points.push_back(u(rng) * a + u(rng) * b);
    const KdTree3 tree(cloud.points);
    const NormalEstimate est = estimate_normals(cloud, tree, 16, 1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        REQUIRE(est.valid[i] == 1);
        REQUIRE(std::abs(est.normals[i].dot(n)) == Catch::Approx(1.0).margin(1e-6));
    }

    // A straight line has no unique plane normal.
    PointCloud line;
    for (int i = 0; i < 50; ++i) line.points.emplace_back(0.1 * i, 0.0, 0.0);
    const KdTree3 ltree(line.points);
    const NormalEstimate lest = estimate_normals(line, ltree, 8, 1);
    for (std::size_t i = 0; i < line.size(); ++i) REQUIRE(lest.valid[i] == 0);
}

TEST_CASE("vertical axis estimation finds the dominant ground direction") {
    std::mt19937 rng(22);
    std::normal_distribution<double> g(0.0, 0.01);
    std::vector<Vec3> normals;
    std::vector<std::uint8_t> valid;
    const Mat3 tilt = axis_angle(Vec3::UnitX(), deg2rad(8.0));
    for (int i = 0; i < 400; ++i) {
        normals.push_back((tilt * Vec3(g(rng), g(rng), 1.0)).normalized());
        valid.push_back(1);
    }
    for (int i = 0; i < 150; ++i) {  // wall normals must not win
        normals.push_back(Vec3(1.0, g(rng), g(rng)).normalized());
        valid.push_back(1);
    }
    const VerticalAxis axis = estimate_vertical_axis(normals, valid);
    REQUIRE(std::abs(axis.axis.dot(tilt * Vec3::UnitZ())) > std::cos(deg2rad(2.0)));
    REQUIRE(axis.support >= 350);
}

TEST_CASE("vertical alignment rotates the estimated axis onto +z") {
    PointCloud cloud;
    cloud.points.emplace_back(1.0, 0.0, 0.0);
    cloud.normals.push_back(Vec3::UnitX());
    const Vec3 axis = Vec3(0.1, -0.05, 1.0).normalized();
    const AlignedCloud aligned = align_vertical(cloud, axis, Vec3::UnitZ());
    REQUIRE((aligned.transform.R * axis - Vec3::UnitZ()).norm() < 1e-9);
    REQUIRE(aligned.transform.R.determinant() == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("region growing keeps a long wall and drops a short one") {
    PointCloud cloud;
    add_wall(cloud, {0.0, 0.0}, {1.0, 0.0}, 10.0, 0.12);   // 10 m: kept
    add_wall(cloud, {0.0, 30.0}, {1.0, 0.0}, 3.0, 0.12);   // 3 m: below min diameter
    add_ground(cloud, {-2.0, -4.0}, {12.0, -1.0}, 0.1);    // dense enough to define up
    const Segmented got = segment_cloud(std::move(cloud));
    REQUIRE(got.segments.size() == 1);
    REQUIRE(footprint_diameter(got.segments[0].footprint2d) == Catch::Approx(10.0).margin(0.3));
    REQUIRE_FALSE(got.segments[0].ground_points.empty());
}

TEST_CASE("walls twenty meters apart become separate segments") {
    PointCloud cloud;
    add_wall(cloud, {0.0, 0.0}, {1.0, 0.0}, 10.0, 0.12);
    add_wall(cloud, {30.0, 0.0}, {1.0, 0.0}, 10.0, 0.12);
    add_ground(cloud, {-2.0, -4.0}, {42.0, -1.0}, 0.12);
    const Segmented got = segment_cloud(std::move(cloud));
    REQUIRE(got.segments.size() == 2);
    REQUIRE(got.segments[0].id == 0);
    REQUIRE(got.segments[1].id == 1);
    // Ids follow discovery order, which follows point order.
    REQUIRE(got.cloud.points[got.segments[0].facade_points[0]].x() <
            got.cloud.points[got.segments[1].facade_points[0]].x());
}

TEST_CASE("ground points go to the nearest segment and facades never count as ground") {
    PointCloud cloud;
    add_wall(cloud, {0.0, 0.0}, {1.0, 0.0}, 10.0, 0.12);
    add_wall(cloud, {40.0, 0.0}, {1.0, 0.0}, 10.0, 0.12);
    add_ground(cloud, {-1.0, -4.0}, {12.0, -1.0}, 0.12);
    add_ground(cloud, {39.0, -4.0}, {52.0, -1.0}, 0.12);
    const Segmented got = segment_cloud(std::move(cloud));
    REQUIRE(got.segments.size() == 2);
    for (const auto& seg : got.segments) {
        for (int idx : seg.ground_points) {
            const Vec2 p = got.cloud.points[idx].head<2>();
            const double d0 = (p - got.segments[0].center2d).norm();
            const double d1 = (p - got.segments[1].center2d).norm();
            REQUIRE(((seg.id == 0 && d0 <= d1) || (seg.id == 1 && d1 < d0)));
        }
        std::vector<int> overlap;
        std::vector<int> fac = seg.facade_points, grd = seg.ground_points;
        std::sort(fac.begin(), fac.end());
        std::sort(grd.begin(), grd.end());
        std::set_intersection(fac.begin(), fac.end(), grd.begin(), grd.end(),
                              std::back_inserter(overlap));
        REQUIRE(overlap.empty());
    }
}

TEST_CASE("street segments survive a json round-trip") {
    PointCloud cloud;
    add_wall(cloud, {0.0, 0.0}, {1.0, 1.0}, 12.0, 0.15);
    add_ground(cloud, {-2.0, -3.0}, {10.0, 0.0}, 0.1);
    const Segmented got = segment_cloud(std::move(cloud));
    const nlohmann::json j = street_segments_to_json(got.segments);
    const auto back = street_segments_from_json(j, got.cloud);
    REQUIRE(back.size() == got.segments.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        REQUIRE(back[i].id == got.segments[i].id);
        REQUIRE(back[i].facade_points == got.segments[i].facade_points);
        REQUIRE(back[i].ground_points == got.segments[i].ground_points);
        REQUIRE(back[i].footprint2d.size() == got.segments[i].footprint2d.size());
        REQUIRE((back[i].center2d - got.segments[i].center2d).norm() < 1e-12);
    }
}

TEST_CASE("mask ingestion keeps a ten meter block and drops a four meter one") {
    GrayImage img;
    img.cols = 80;
    img.rows = 60;
    img.values.assign(static_cast<std::size_t>(img.cols) * img.rows, 0);
    auto paint = [&](int c0, int r0, int w, int h) {
        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c)
                img.values[static_cast<std::size_t>(r) * img.cols + c] = 255;
    };
    paint(10, 10, 20, 20);  // 10 m x 10 m at 0.5 m cells
    paint(50, 40, 8, 8);    // 4 m x 4 m: below the diameter threshold
    const GeoRef geo{Vec2(100.0, 200.0), 0.5};
    const auto segments = ingest_overview_mask(img, geo, 5.0);
    REQUIRE(segments.size() == 1);
    REQUIRE(segments[0].id == 0);
    REQUIRE(segments[0].footprint2d.size() == 400);
    REQUIRE(segments[0].boundary2d.size() < segments[0].footprint2d.size());
    // Geo placement: cell (10, 10) center sits at origin + (10.5, 10.5) * cell.
    Vec2 lo = segments[0].footprint2d[0];
    for (const Vec2& p : segments[0].footprint2d) lo = lo.cwiseMin(p);
    REQUIRE(lo.x() == Catch::Approx(100.0 + 10.5 * 0.5).margin(1e-12));
    REQUIRE(lo.y() == Catch::Approx(200.0 + 10.5 * 0.5).margin(1e-12));
}

TEST_CASE("eight-connected diagonal cells form one component") {
    GrayImage img;
    img.cols = 30;
    img.rows = 30;
    img.values.assign(900, 0);
    // Two 6 m blocks touching only at one corner.
    for (int r = 2; r < 14; ++r)
        for (int c = 2; c < 14; ++c) img.values[static_cast<std::size_t>(r) * 30 + c] = 255;
    for (int r = 14; r < 26; ++r)
        for (int c = 14; c < 26; ++c) img.values[static_cast<std::size_t>(r) * 30 + c] = 255;
    const auto segments = ingest_overview_mask(img, GeoRef{Vec2::Zero(), 0.5}, 5.0);
    REQUIRE(segments.size() == 1);
}

TEST_CASE("polygon ingestion densifies boundaries and rejects bad rings") {
    std::vector<std::vector<Vec2>> rings;
    rings.push_back({{0, 0}, {12, 0}, {12, 9}, {0, 9}});            // valid
    rings.push_back({{50, 50}, {52, 50}, {52, 52}, {50, 52}});      // too small
    rings.push_back({{70, 0}, {80, 10}, {80, 0}, {70, 10}});        // self-intersecting bowtie
    const PolygonIngestResult res = ingest_overview_polygons(rings, 0.5, 5.0);
    REQUIRE(res.segments.size() == 1);
    REQUIRE(res.warnings.size() == 2);

    const auto& seg = res.segments[0];
    REQUIRE(seg.boundary2d.size() >= 2 * (12 + 9) * 2);  // spacing 0.5 along a 42 m outline
    for (std::size_t i = 0; i < seg.boundary2d.size(); ++i) {
        const Vec2 a = seg.boundary2d[i];
        const Vec2 b = seg.boundary2d[(i + 1) % seg.boundary2d.size()];
        REQUIRE((a - b).norm() <= 0.5 + 1e-9);
    }
    REQUIRE((seg.center2d - Vec2(6.0, 4.5)).norm() < 0.1);
}

TEST_CASE("point-in-ring handles boundary-adjacent probes") {
    const std::vector<Vec2> ring = {{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    REQUIRE(point_in_ring(Vec2(5, 5), ring));
    REQUIRE_FALSE(point_in_ring(Vec2(15, 5), ring));
    REQUIRE_FALSE(point_in_ring(Vec2(-0.001, 5), ring));
    REQUIRE(point_in_ring(Vec2(0.001, 0.001), ring));
}

TEST_CASE("rasterized polygons ingest back to matching segments") {
    std::vector<std::vector<Vec2>> rings;
    rings.push_back({{3, 4}, {19, 4}, {19, 16}, {3, 16}});
    const RasterizedMask ras = rasterize_polygons(rings, 0.5);
    const auto from_mask = ingest_overview_mask(ras.image, ras.georef, 5.0);
    const auto from_poly = ingest_overview_polygons(rings, 0.5, 5.0);
    REQUIRE(from_mask.size() == 1);
    REQUIRE(from_poly.segments.size() == 1);
    REQUIRE((from_mask[0].center2d - from_poly.segments[0].center2d).norm() < 0.5);
    REQUIRE(footprint_diameter(from_mask[0].footprint2d) ==
            Catch::Approx(footprint_diameter(from_poly.segments[0].footprint2d)).margin(1.0));
}

TEST_CASE("georef and polygon files round-trip") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string gpath = (dir / "crossreg_test_georef.txt").string();
    write_georef(GeoRef{Vec2(12.5, -3.75), 0.25}, gpath);
    const GeoRef g = read_georef(gpath);
    REQUIRE(g.origin.x() == 12.5);
    REQUIRE(g.origin.y() == -3.75);
    REQUIRE(g.cell_size == 0.25);

    const std::string ppath = (dir / "crossreg_test_polys.json").string();
    std::vector<std::vector<Vec2>> rings = {{{0, 0}, {7, 0}, {7, 7}, {0, 7}},
                                            {{20, 0}, {26, 0}, {23, 8}}};
    write_polygons_json(rings, ppath);
    const auto back = read_polygons_json(ppath);
    REQUIRE(back.size() == 2);
    REQUIRE(back[1].size() == 3);
    REQUIRE((back[1][2] - Vec2(23, 8)).norm() == 0.0);
    std::filesystem::remove(gpath);
    std::filesystem::remove(ppath);
}
