#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "crossreg/pipeline.hpp"
#include "crossreg/synthetic.hpp"

using namespace crossreg;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const char* name) const { return (path / name).string(); }
};

// One shared scene bundle for the pipeline tests, built once.
const std::string& scene_dir() {
    static TempDir dir("crossreg_test_pipeline_scene");
    static bool built = false;
    if (!built) {
        SceneConfig cfg;
        cfg.seed = 5;
        cfg.buildings = 6;
        cfg.loop_width = 100.0;
        cfg.loop_height = 80.0;
        cfg.facade_spacing = 0.2;
        cfg.ground_spacing = 0.4;
        DriftModel drift;
        drift.heading_rate_deg_per_m = 0.1;  // strong enough that registration must fix it
        drift.translation_rate = 0.03;
        const SyntheticScene scene = apply_drift(generate_scene(cfg), drift);
        write_scene_bundle(scene, dir.str());
        built = true;
    }
    static std::string s = dir.str();
    return s;
}

PipelineConfig default_config() {
    return parse_config_text(config_template_text(), "template");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("the generated template parses back to usable defaults") {
    const PipelineConfig cfg = default_config();
    REQUIRE(cfg.scale == 1.0);
    REQUIRE(cfg.normals_k == 16);
    REQUIRE(cfg.c1 == 0.1);
    REQUIRE(cfg.c2 == 0.6);
    REQUIRE(cfg.theta_th_deg == 10.0);
    REQUIRE(cfg.t_th_m == 100.0);
    REQUIRE(cfg.pair_k == 4);
    REQUIRE(cfg.bp_max_sweeps == 100);
    REQUIRE(cfg.lambda == 20.0);
    REQUIRE(cfg.chamfer_cutoff_m == 10.0);
    REQUIRE(cfg.cell_size_m == 0.5);
    REQUIRE(cfg.min_diameter_m == 5.0);
    REQUIRE(cfg.facade_angle_deg == 75.0);
    REQUIRE(cfg.refine_offset_cells == 10);
}

TEST_CASE("config parsing accepts comments and rejects junk") {
    const PipelineConfig cfg = parse_config_text(
        "# leading comment\n  scale = 2.5  # trailing\n\nc1=0.2\nc2 = 0.7\n", "test");
    REQUIRE(cfg.scale == 2.5);
    REQUIRE(cfg.c1 == 0.2);
    REQUIRE(cfg.c2 == 0.7);

    REQUIRE_THROWS_AS(parse_config_text("scale = 1\nnot_a_key = 3\n", "t"), InputError);
    REQUIRE_THROWS_AS(parse_config_text("c1 = 0.1\n", "t"), InputError);        // no scale
    REQUIRE_THROWS_AS(parse_config_text("scale = zero\n", "t"), InputError);    // bad value
    REQUIRE_THROWS_AS(parse_config_text("scale 1.0\n", "t"), InputError);       // no equals
    REQUIRE_THROWS_AS(parse_config_text("scale = -1\n", "t"), InputError);      // invalid
    REQUIRE_THROWS_AS(parse_config_text("scale = 1\nc1 = 0.9\nc2 = 0.3\n", "t"),
                      InputError);  // c1 > c2
    REQUIRE_THROWS_AS(parse_config_text("scale = 1\nmatch_coarse_to_fine = maybe\n", "t"),
                      InputError);
}

TEST_CASE("missing inputs fail with input errors before any stage runs") {
    const PipelineConfig cfg = default_config();
    TempDir out("crossreg_test_pipeline_err");
    PipelineInputs in;
    in.street = "/nonexistent/street.xyz";
    in.overview_polygons = scene_dir() + "/overview_polygons.json";
    REQUIRE_THROWS_AS(run_pipeline(in, cfg, out.str(), {}), InputError);

    PipelineInputs no_overview;
    no_overview.street = scene_dir() + "/street.xyz";
    REQUIRE_THROWS_AS(run_pipeline(no_overview, cfg, out.str(), {}), InputError);
}

TEST_CASE("a failed later stage leaves earlier artifacts in place") {
    const PipelineConfig cfg = default_config();
    TempDir out("crossreg_test_pipeline_partial");
    PipelineInputs in;
    in.street = scene_dir() + "/street.xyz";
    in.overview_polygons = "/nonexistent/polygons.json";
    REQUIRE_THROWS_AS(run_pipeline(in, cfg, out.str(), {}), InputError);
    REQUIRE(fs::exists(out.path / files::work_cloud));
    REQUIRE(fs::exists(out.path / files::segments));
    REQUIRE_FALSE(fs::exists(out.path / files::summary));
}

TEST_CASE("polygons-only input runs the planar pipeline end to end") {
    const PipelineConfig cfg = default_config();
    TempDir out("crossreg_test_pipeline_2d");
    PipelineInputs in;
    in.street = scene_dir() + "/street.xyz";
    in.overview_polygons = scene_dir() + "/overview_polygons.json";
    PipelineOptions opt;
    opt.threads = 2;
    REQUIRE(run_pipeline(in, cfg, out.str(), opt) == 0);

    const nlohmann::json summary = detail::read_json_file(out.file("summary.json"));
    REQUIRE(summary.at("status") == "ok");
    REQUIRE(summary.at("overview").at("has_heights") == false);
    REQUIRE_FALSE(summary.contains("evaluation"));
    REQUIRE_FALSE(summary.contains("adjustment"));

    // Without heights every transform stays planar: no z motion at all.
    const auto transforms = read_segment_transforms(out.file("transforms.json"));
    REQUIRE(!transforms.empty());
    int matched = 0;
    for (const auto& t : transforms) {
        REQUIRE_FALSE(t.z_degenerate);
        REQUIRE(t.transform.t.z() == 0.0);
        REQUIRE(t.transform.R(2, 2) == 1.0);
        REQUIRE(t.transform.R(0, 2) == 0.0);
        REQUIRE(t.transform.R(2, 0) == 0.0);
        if (t.overview_id >= 0) ++matched;
    }
    REQUIRE(matched >= 4);  // 6 buildings, most must match
}

TEST_CASE("the full pipeline with heights, poses, and adjustment succeeds") {
    const PipelineConfig cfg = default_config();
    TempDir out("crossreg_test_pipeline_full");
    PipelineInputs in;
    in.street = scene_dir() + "/street.xyz";
    in.overview_polygons = scene_dir() + "/overview_polygons.json";
    in.overview_cloud = scene_dir() + "/overview_cloud.xyz";
    in.poses = scene_dir() + "/poses.txt";
    in.observations = scene_dir() + "/observations.txt";
    in.tracks = scene_dir() + "/tracks.txt";
    PipelineOptions opt;
    opt.threads = 2;
    opt.dump_instance = true;
    REQUIRE(run_pipeline(in, cfg, out.str(), opt) == 0);

    const nlohmann::json summary = detail::read_json_file(out.file("summary.json"));
    REQUIRE(summary.at("status") == "ok");
    REQUIRE(summary.at("overview").at("has_heights") == true);
    REQUIRE(summary.at("matching").at("converged") == true);
    REQUIRE(summary.at("evaluation").at("chamfer3d").at("mean").get<double>() < 1.5);
    REQUIRE(summary.at("adjustment").at("final_cost").get<double>() <=
            summary.at("adjustment").at("initial_cost").get<double>());
    REQUIRE(summary.at("config").at("scale") == 1.0);

    for (const char* name : {"street_work.xyz", "segments.json", "overview_segments.json",
                             "instance.json", "match.json", "transforms.json", "registered.xyz",
                             "poses_work.txt", "poses_registered.txt", "poses_adjusted.txt",
                             "ba_report.json", "chamfer.json", "summary.json"})
        REQUIRE(fs::exists(out.path / name));

    // The dumped instance is a valid, runnable labeling problem.
    const MatchingInstance inst = read_instance_json(out.file("instance.json"));
    inst.validate();
    const BPResult bp = run_belief_propagation(inst, {});
    REQUIRE(bp.converged);
    REQUIRE(bp.energy == summary.at("matching").at("energy").get<double>());

    // Registration must tighten the street-to-overview fit substantially.
    const PointCloud before = read_cloud(out.file("street_work.xyz"));
    const PointCloud after = read_cloud(out.file("registered.xyz"));
    const PointCloud reference = read_cloud(scene_dir() + "/overview_cloud.xyz");
    ChamferOptions copt;
    copt.planar = true;
    const double planar_before = chamfer_distance(before.points, reference.points, copt).mean;
    const double planar_after = chamfer_distance(after.points, reference.points, copt).mean;
    REQUIRE(planar_after < planar_before);
}

TEST_CASE("the mask source reproduces the polygon matching") {
    const PipelineConfig cfg = default_config();
    TempDir out("crossreg_test_pipeline_mask");
    PipelineInputs in;
    in.street = scene_dir() + "/street.xyz";
    in.overview_mask = scene_dir() + "/overview_mask.pgm";
    in.overview_georef = scene_dir() + "/georef.txt";
    REQUIRE(run_pipeline(in, cfg, out.str(), {}) == 0);
    const nlohmann::json summary = detail::read_json_file(out.file("summary.json"));
    REQUIRE(summary.at("overview").at("segments").get<int>() == 6);
    int matched = 0;
    for (const auto& c : summary.at("matching").at("correspondences"))
        if (!c.is_null()) ++matched;
    REQUIRE(matched >= 4);
}

TEST_CASE("repeated runs write byte-identical summaries") {
    const PipelineConfig cfg = default_config();
    TempDir out_a("crossreg_test_pipeline_rep_a");
    TempDir out_b("crossreg_test_pipeline_rep_b");
    PipelineInputs in;
    in.street = scene_dir() + "/street.xyz";
    in.overview_polygons = scene_dir() + "/overview_polygons.json";
    in.overview_cloud = scene_dir() + "/overview_cloud.xyz";
    PipelineOptions opt_a;
    opt_a.threads = 1;
    PipelineOptions opt_b;
    opt_b.threads = 3;
    REQUIRE(run_pipeline(in, cfg, out_a.str(), opt_a) == 0);
    REQUIRE(run_pipeline(in, cfg, out_b.str(), opt_b) == 0);
    REQUIRE(read_file(out_a.file("summary.json")) == read_file(out_b.file("summary.json")));
    REQUIRE(read_file(out_a.file("registered.xyz")) == read_file(out_b.file("registered.xyz")));
    REQUIRE(read_file(out_a.file("match.json")) == read_file(out_b.file("match.json")));
}

TEST_CASE("scaled input reproduces the metric pipeline") {
    // Shrink the street cloud by 4x and tell the pipeline; segments must come out
    // in meters again.
    const PipelineConfig cfg = default_config();
    TempDir out_ref("crossreg_test_pipeline_scale_ref");
    TempDir out_scaled("crossreg_test_pipeline_scale");
    TempDir data("crossreg_test_pipeline_scaled_data");

    PointCloud street = read_cloud(scene_dir() + "/street.xyz");
    for (auto& p : street.points) p *= 0.25;
    write_cloud(street, data.file("street_small.xyz"));

    PipelineConfig scaled_cfg = cfg;
    scaled_cfg.scale = 4.0;
    PipelineInputs in;
    in.street = data.file("street_small.xyz");
    in.overview_polygons = scene_dir() + "/overview_polygons.json";
    REQUIRE(run_pipeline(in, scaled_cfg, out_scaled.str(), {}) == 0);

    PipelineInputs ref;
    ref.street = scene_dir() + "/street.xyz";
    ref.overview_polygons = scene_dir() + "/overview_polygons.json";
    REQUIRE(run_pipeline(ref, cfg, out_ref.str(), {}) == 0);

    const nlohmann::json a = detail::read_json_file(out_scaled.file("summary.json"));
    const nlohmann::json b = detail::read_json_file(out_ref.file("summary.json"));
    REQUIRE(a.at("segmentation").at("segments") == b.at("segmentation").at("segments"));
    REQUIRE(a.at("matching").at("assignment") == b.at("matching").at("assignment"));
}
