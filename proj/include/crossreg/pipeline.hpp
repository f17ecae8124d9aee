#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossreg/blend.hpp"
#include "crossreg/bp.hpp"
#include "crossreg/bundle_adjustment.hpp"
#include "crossreg/chamfer.hpp"
#include "crossreg/cloud_io.hpp"
#include "crossreg/fine_registration.hpp"
#include "crossreg/matching.hpp"
#include "crossreg/normals.hpp"
#include "crossreg/overview_ingest.hpp"
#include "crossreg/parallel.hpp"
#include "crossreg/segments.hpp"

namespace crossreg {

// Unusable or missing inputs; the CLI maps this to exit code 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Any other failure inside a pipeline stage; the CLI maps this to exit code 4.
struct StageError : std::runtime_error {
    StageError(const std::string& stage, const std::string& detail)
        : std::runtime_error("stage " + stage + " failed: " + detail), stage_name(stage) {}
    std::string stage_name;
};

template <class F>
void run_stage(const char* name, F&& f) {
    try {
        std::forward<F>(f)();
    } catch (const InputError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

struct PipelineConfig {
    double scale = 0.0;  // street-view units to meters; required, no usable default
    int normals_k = 16;
    double facade_angle_deg = 75.0;
    double facade_neighbor_frac = 0.75;
    double min_diameter_m = 5.0;
    double region_angle_deg = 15.0;
    double region_radius_factor = 3.0;
    double ground_angle_deg = 15.0;
    int pair_k = 4;
    double c1 = 0.1;
    double c2 = 0.6;
    double theta_th_deg = 10.0;
    double t_th_m = 100.0;
    int bp_max_sweeps = 100;
    double refine_angle_range_deg = 10.0;
    double refine_angle_step_deg = 1.0;
    int refine_offset_cells = 10;
    bool refine_coarse_to_fine = false;
    double lambda = 20.0;
    double chamfer_cutoff_m = 10.0;
    double cell_size_m = 0.5;
    double polygon_sample_spacing = 0.5;
    int match_sample_cap = 96;
    int match_window_cap_cells = 24;
    bool match_coarse_to_fine = true;
    double match_radius_m = 150.0;
    int refine_sample_cap = 200;
    int blend_neighbors = 2;
    double focal_px = 1000.0;
    double principal_x = 0.0;
    double principal_y = 0.0;

    void validate() const {
        require(scale > 0.0, "scale must be set to a positive value");
        require(normals_k >= 3, "normals_k must be at least 3");
        require(facade_neighbor_frac >= 0.0 && facade_neighbor_frac <= 1.0,
                "facade_neighbor_frac must lie in [0, 1]");
        require(pair_k >= 1, "pair_k must be positive");
        require(c1 >= 0.0 && c1 <= c2, "smooth costs need 0 <= c1 <= c2");
        require(bp_max_sweeps >= 1, "bp_max_sweeps must be positive");
        require(cell_size_m > 0.0 && polygon_sample_spacing > 0.0,
                "grid cell and polygon spacing must be positive");
        require(refine_angle_step_deg > 0.0 && refine_angle_range_deg >= 0.0,
                "refine angle window malformed");
        require(refine_offset_cells >= 0, "refine_offset_cells must be non-negative");
        require(lambda >= 0.0, "lambda must be non-negative");
        require(chamfer_cutoff_m > 0.0, "chamfer cutoff must be positive");
        require(match_sample_cap >= 4 && refine_sample_cap >= 4, "sample caps too small");
        require(match_window_cap_cells >= 0, "match_window_cap_cells must be non-negative");
        require(match_radius_m >= 0.0, "match_radius_m must be non-negative");
        require(blend_neighbors >= 0, "blend_neighbors must be non-negative");
        require(focal_px > 0.0, "focal_px must be positive");
    }

    Intrinsics intrinsics() const { return {focal_px, principal_x, principal_y}; }
};

inline std::string config_template_text() {
    return R"(# crossreg pipeline configuration: key = value, '#' starts a comment.

# Street-view units to meters. Required; everything downstream assumes meters.
scale = 1.0

# Normal estimation and facade voting neighborhood size.
normals_k = 16
# A point is facade-like when its normal stays this many degrees away from vertical.
facade_angle_deg = 75
# Fraction of the neighborhood that must also be facade-like.
facade_neighbor_frac = 0.75
# Segments with a footprint diameter below this are discarded (both views).
min_diameter_m = 5
# Region growing: max angle to the running mean normal, and connection radius as a
# multiple of the median point spacing.
region_angle_deg = 15
region_radius_factor = 3
# Points whose normal lies within this angle of vertical count as ground.
ground_angle_deg = 15

# Each segment pairs with its pair_k nearest peers to form the matching units.
pair_k = 4
# Pairwise label costs: consistent neighbors pay c1, everything else c2.
c1 = 0.1
c2 = 0.6
# Transform consistency thresholds between neighboring assignments.
theta_th_deg = 10
t_th_m = 100
bp_max_sweeps = 100

# Per-segment refinement: rotation window and offset search radius in grid cells.
refine_angle_range_deg = 10
refine_angle_step_deg = 1
refine_offset_cells = 10
refine_coarse_to_fine = false

# Camera center anchor weight in the constrained adjustment.
lambda = 20
# Mutual-nearest pairs further apart than this are ignored in the evaluation.
chamfer_cutoff_m = 10
# Distance map resolution; matches the over-view ground sampling distance.
cell_size_m = 0.5
# Over-view polygon boundaries are densified at this spacing.
polygon_sample_spacing = 0.5

# Matching cost controls: footprint samples per pair, offset window cap in cells,
# and whether the offset scan is coarse-to-fine.
match_sample_cap = 96
match_window_cap_cells = 24
match_coarse_to_fine = true
refine_sample_cap = 200
# Over-view pairs further than this from a street pair midpoint are not offered
# as labels; covers the expected georeferencing drift. 0 disables the cutoff.
match_radius_m = 150

# Matched neighbor segments blended in beside the owner when moving points.
blend_neighbors = 2

# Pinhole intrinsics used by the pose adjustment.
focal_px = 1000
principal_x = 0
principal_y = 0
)";
}

inline PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
    PipelineConfig cfg;
    bool saw_scale = false;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;

    auto parse_bool = [&](const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw InputError(origin + ":" + std::to_string(lineno) + ": expected a boolean, got '" +
                         v + "'");
    };

    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw InputError(origin + ":" + std::to_string(lineno) + ": empty key or value");

        try {
            if (key == "scale") {
                cfg.scale = std::stod(val);
                saw_scale = true;
            } else if (key == "normals_k") {
                cfg.normals_k = std::stoi(val);
            } else if (key == "facade_angle_deg") {
                cfg.facade_angle_deg = std::stod(val);
            } else if (key == "facade_neighbor_frac") {
                cfg.facade_neighbor_frac = std::stod(val);
            } else if (key == "min_diameter_m") {
                cfg.min_diameter_m = std::stod(val);
            } else if (key == "region_angle_deg") {
                cfg.region_angle_deg = std::stod(val);
            } else if (key == "region_radius_factor") {
                cfg.region_radius_factor = std::stod(val);
            } else if (key == "ground_angle_deg") {
                cfg.ground_angle_deg = std::stod(val);
            } else if (key == "pair_k") {
                cfg.pair_k = std::stoi(val);
            } else if (key == "c1") {
                cfg.c1 = std::stod(val);
            } else if (key == "c2") {
                cfg.c2 = std::stod(val);
            } else if (key == "theta_th_deg") {
                cfg.theta_th_deg = std::stod(val);
            } else if (key == "t_th_m") {
                cfg.t_th_m = std::stod(val);
            } else if (key == "bp_max_sweeps") {
                cfg.bp_max_sweeps = std::stoi(val);
            } else if (key == "refine_angle_range_deg") {
                cfg.refine_angle_range_deg = std::stod(val);
            } else if (key == "refine_angle_step_deg") {
                cfg.refine_angle_step_deg = std::stod(val);
            } else if (key == "refine_offset_cells") {
                cfg.refine_offset_cells = std::stoi(val);
            } else if (key == "refine_coarse_to_fine") {
                cfg.refine_coarse_to_fine = parse_bool(val);
            } else if (key == "lambda") {
                cfg.lambda = std::stod(val);
            } else if (key == "chamfer_cutoff_m") {
                cfg.chamfer_cutoff_m = std::stod(val);
            } else if (key == "cell_size_m") {
                cfg.cell_size_m = std::stod(val);
            } else if (key == "polygon_sample_spacing") {
                cfg.polygon_sample_spacing = std::stod(val);
            } else if (key == "match_sample_cap") {
                cfg.match_sample_cap = std::stoi(val);
            } else if (key == "match_window_cap_cells") {
                cfg.match_window_cap_cells = std::stoi(val);
            } else if (key == "match_coarse_to_fine") {
                cfg.match_coarse_to_fine = parse_bool(val);
            } else if (key == "match_radius_m") {
                cfg.match_radius_m = std::stod(val);
            } else if (key == "refine_sample_cap") {
                cfg.refine_sample_cap = std::stoi(val);
            } else if (key == "blend_neighbors") {
                cfg.blend_neighbors = std::stoi(val);
            } else if (key == "focal_px") {
                cfg.focal_px = std::stod(val);
            } else if (key == "principal_x") {
                cfg.principal_x = std::stod(val);
            } else if (key == "principal_y") {
                cfg.principal_y = std::stod(val);
            } else {
                throw InputError(origin + ":" + std::to_string(lineno) + ": unknown key '" +
                                 key + "'");
            }
        } catch (const InputError&) {
            throw;
        } catch (const std::exception&) {
            throw InputError(origin + ":" + std::to_string(lineno) + ": cannot parse value '" +
                             val + "' for key '" + key + "'");
        }
    }
    if (!saw_scale) throw InputError(origin + ": missing required key 'scale'");
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw InputError(origin + ": " + e.what());
    }
    return cfg;
}

inline PipelineConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

inline void write_config_template(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << config_template_text();
}

namespace files {
inline constexpr const char* work_cloud = "street_work.xyz";
inline constexpr const char* segments = "segments.json";
inline constexpr const char* overview = "overview_segments.json";
inline constexpr const char* instance = "instance.json";
inline constexpr const char* match = "match.json";
inline constexpr const char* transforms = "transforms.json";
inline constexpr const char* registered = "registered.xyz";
inline constexpr const char* poses_work = "poses_work.txt";
inline constexpr const char* poses_registered = "poses_registered.txt";
inline constexpr const char* poses_adjusted = "poses_adjusted.txt";
inline constexpr const char* ba_report = "ba_report.json";
inline constexpr const char* chamfer = "chamfer.json";
inline constexpr const char* summary = "summary.json";
}  // namespace files

namespace detail {

inline std::string join_path(const std::string& dir, const char* name) {
    return (std::filesystem::path(dir) / name).string();
}

template <class F>
auto load_input(const char* what, F&& f) {
    try {
        return std::forward<F>(f)();
    } catch (const std::exception& e) {
        throw InputError(std::string(what) + ": " + e.what());
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

// Preserves on-disk key order, for embedding stage artifacts into the summary.
inline nlohmann::ordered_json read_ordered_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::ordered_json j;
    in >> j;
    return j;
}

inline void write_json_file(const nlohmann::ordered_json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline double percentile05(std::vector<double> v) {
    require(!v.empty(), "percentile of empty range");
    const std::size_t k = static_cast<std::size_t>(0.05 * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + k, v.end());
    return v[k];
}

}  // namespace detail

// ---- segment stage ----------------------------------------------------------

inline void stage_segment(const std::string& street_path, const std::string& poses_path,
                          const PipelineConfig& cfg, const std::string& out, int threads) {
    PointCloud raw = detail::load_input(
        "street cloud", [&] { return read_cloud(street_path); });
    require(raw.size() >= static_cast<std::size_t>(cfg.normals_k),
            "street cloud smaller than the normal estimation neighborhood");

    PointCloud scaled;
    scaled.points.reserve(raw.size());
    for (const Vec3& p : raw.points) scaled.points.push_back(cfg.scale * p);

    const KdTree3 tree(scaled.points);
    const NormalEstimate est = estimate_normals(scaled, tree, cfg.normals_k, threads);
    const VerticalAxis axis = estimate_vertical_axis(est.normals, est.valid);

    scaled.normals = est.normals;
    AlignedCloud aligned = align_vertical(scaled, axis.axis, Vec3::UnitZ());

    FacadeParams fp;
    fp.k = cfg.normals_k;
    fp.angle_deg = cfg.facade_angle_deg;
    fp.neighbor_frac = cfg.facade_neighbor_frac;
    const std::vector<int> facade_idx =
        extract_facade_points(scaled, tree, est, axis.axis, fp, threads);

    NormalEstimate est_aligned;
    est_aligned.normals = aligned.cloud.normals;
    est_aligned.valid = est.valid;
    RegionGrowParams rp;
    rp.angle_deg = cfg.region_angle_deg;
    rp.min_diameter = cfg.min_diameter_m;
    rp.radius_factor = cfg.region_radius_factor;
    std::vector<StreetSegment> segments =
        region_grow_segments(aligned.cloud, facade_idx, est_aligned, rp);
    if (segments.empty()) throw std::runtime_error("no street segments survived extraction");
    associate_ground_points(aligned.cloud, est_aligned, Vec3::UnitZ(), segments,
                            cfg.ground_angle_deg);

    write_cloud(aligned.cloud, detail::join_path(out, files::work_cloud));
    nlohmann::ordered_json j;
    j["points"] = aligned.cloud.size();
    j["scale"] = cfg.scale;
    j["axis"] = {axis.axis.x(), axis.axis.y(), axis.axis.z()};
    j["axis_support"] = axis.support;
    j["align_R"] = nlohmann::ordered_json::array();
    for (int r = 0; r < 3; ++r)
        j["align_R"].push_back({aligned.transform.R(r, 0), aligned.transform.R(r, 1),
                                aligned.transform.R(r, 2)});
    j["segments"] = street_segments_to_json(segments);
    detail::write_json_file(j, detail::join_path(out, files::segments));

    if (!poses_path.empty()) {
        const auto poses = detail::load_input("poses", [&] { return read_poses(poses_path); });
        std::vector<CameraPose> work(poses.size());
        for (std::size_t i = 0; i < poses.size(); ++i) {
            work[i].R = aligned.transform.R * poses[i].R;
            work[i].C = aligned.transform.R * (cfg.scale * poses[i].C);
        }
        write_poses(work, detail::join_path(out, files::poses_work));
    }
}

struct SegmentStageData {
    PointCloud work;
    std::vector<StreetSegment> segments;
    double scale = 1.0;
};

inline SegmentStageData read_segment_stage(const std::string& out) {
    SegmentStageData d;
    d.work = detail::load_input("working cloud", [&] {
        return read_cloud(detail::join_path(out, files::work_cloud));
    });
    const nlohmann::json j = detail::load_input("segments file", [&] {
        return detail::read_json_file(detail::join_path(out, files::segments));
    });
    d.scale = j.at("scale").get<double>();
    d.segments = street_segments_from_json(j.at("segments"), d.work);
    return d;
}

// ---- over-view ingestion ----------------------------------------------------

struct OverviewData {
    std::vector<OverviewSegment> segments;
    std::vector<std::string> warnings;
    bool has_heights = false;
    double ground_height = 0.0;
};

inline OverviewData load_overview(const std::string& polygons, const std::string& mask,
                                  const std::string& georef, const std::string& cloud_path,
                                  const PipelineConfig& cfg) {
    OverviewData data;
    if (!polygons.empty()) {
        const auto rings = detail::load_input("over-view polygons",
                                              [&] { return read_polygons_json(polygons); });
        auto res = ingest_overview_polygons(rings, cfg.polygon_sample_spacing, cfg.min_diameter_m);
        data.segments = std::move(res.segments);
        data.warnings = std::move(res.warnings);
    } else if (!mask.empty()) {
        if (georef.empty()) throw InputError("a mask over-view source also needs --georef");
        const GrayImage img =
            detail::load_input("over-view mask", [&] { return read_mask_image(mask); });
        const GeoRef geo = detail::load_input("georef", [&] { return read_georef(georef); });
        data.segments = ingest_overview_mask(img, geo, cfg.min_diameter_m);
    } else {
        throw InputError("no over-view source: pass --overview-polygons or --overview-mask");
    }
    if (data.segments.size() < 2)
        throw std::runtime_error("fewer than two over-view segments; nothing to match against");

    if (!cloud_path.empty()) {
        const PointCloud ov = detail::load_input("over-view cloud",
                                                 [&] { return read_cloud(cloud_path); });
        require(ov.size() > 0, "over-view cloud is empty");
        std::vector<double> zs(ov.size());
        for (std::size_t i = 0; i < ov.size(); ++i) zs[i] = ov.points[i].z();
        data.has_heights = true;
        data.ground_height = detail::percentile05(std::move(zs));
        for (auto& s : data.segments) s.ground_height = data.ground_height;
    }
    return data;
}

// ---- matching stage ---------------------------------------------------------

struct MatchComputation {
    MatchingInstance instance;
    BPResult bp;
    std::vector<std::optional<SegmentCorrespondence>> correspondences;
    std::vector<std::optional<RigidTransform2D>> init;  // per street segment
};

namespace detail {

inline std::vector<Vec2> stride_union(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                                      int cap) {
    const std::size_t total = a.size() + b.size();
    require(total > 0, "segment pair has no footprint samples");
    const std::size_t stride =
        cap > 0 ? std::max<std::size_t>(1, (total + cap - 1) / static_cast<std::size_t>(cap)) : 1;
    std::vector<Vec2> out;
    out.reserve(total / stride + 1);
    for (std::size_t i = 0; i < total; i += stride)
        out.push_back(i < a.size() ? a[i] : b[i - a.size()]);
    return out;
}

inline DistanceMap edge_distance_map(const SegmentEdge& e,
                                     const std::vector<OverviewSegment>& over, double cell,
                                     int window_cap) {
    std::vector<Vec2> sources = over[e.a].boundary2d;
    sources.insert(sources.end(), over[e.b].boundary2d.begin(), over[e.b].boundary2d.end());
    double padding;
    if (window_cap > 0) {
        padding = (window_cap + 8) * cell;
    } else {
        Vec2 lo = sources.front(), hi = sources.front();
        for (const Vec2& p : sources) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        padding = 0.5 * (hi - lo).norm() + 8 * cell;
    }
    return build_distance_map(sources, cell, padding);
}

}  // namespace detail

inline MatchComputation compute_matching(const std::vector<StreetSegment>& street,
                                         const std::vector<OverviewSegment>& over,
                                         const PipelineConfig& cfg, int threads,
                                         const BPOptions& bp_opt_in = {}) {
    require(street.size() >= 2, "need at least two street segments to form pairs");
    require(over.size() >= 2, "need at least two over-view segments to form pairs");

    std::vector<Vec2> sc(street.size()), oc(over.size());
    for (std::size_t i = 0; i < street.size(); ++i) sc[i] = street[i].center2d;
    for (std::size_t i = 0; i < over.size(); ++i) oc[i] = over[i].center2d;

    MatchComputation mc;
    mc.instance.street_edges = build_conjugate_nodes(sc, cfg.pair_k);
    mc.instance.overview_edges = build_conjugate_nodes(oc, cfg.pair_k);
    mc.instance.params = {cfg.c1, cfg.c2, cfg.theta_th_deg, cfg.t_th_m};

    const auto& se = mc.instance.street_edges;
    const auto& oe = mc.instance.overview_edges;
    mc.instance.neighbors.resize(se.size());
    for (std::size_t i = 0; i < se.size(); ++i)
        for (std::size_t j = i + 1; j < se.size(); ++j)
            if (se[i].shares_segment(se[j])) {
                mc.instance.neighbors[i].push_back(static_cast<int>(j));
                mc.instance.neighbors[j].push_back(static_cast<int>(i));
            }

    std::vector<std::vector<Vec2>> node_samples(se.size());
    for (std::size_t i = 0; i < se.size(); ++i)
        node_samples[i] = detail::stride_union(street[se[i].a].footprint2d,
                                               street[se[i].b].footprint2d, cfg.match_sample_cap);

    // Candidate labels per node: over-view pairs whose midpoint lies within the
    // georeferencing radius of the street pair midpoint. Street data is assumed
    // roughly georeferenced, so correspondences beyond the radius are not real.
    std::vector<std::vector<int>> cand(se.size());
    std::vector<char> used(oe.size(), 0);
    for (std::size_t i = 0; i < se.size(); ++i) {
        const Vec2 mid = se[i].midpoint();
        for (std::size_t l = 0; l < oe.size(); ++l)
            if (cfg.match_radius_m <= 0.0 ||
                (oe[l].midpoint() - mid).norm() <= cfg.match_radius_m) {
                cand[i].push_back(static_cast<int>(l));
                used[l] = 1;
            }
    }

    std::vector<std::vector<Vec2>> label_samples(oe.size());
    std::vector<DistanceMap> label_maps(oe.size());
    par_for(oe.size(), threads, [&](std::size_t l) {
        if (!used[l]) return;
        label_samples[l] = over[oe[l].a].footprint2d;
        label_samples[l].insert(label_samples[l].end(), over[oe[l].b].footprint2d.begin(),
                                over[oe[l].b].footprint2d.end());
        label_maps[l] =
            detail::edge_distance_map(oe[l], over, cfg.cell_size_m, cfg.match_window_cap_cells);
    });

    mc.instance.hypotheses.assign(se.size(), {});
    std::vector<std::pair<int, int>> tasks;  // node, candidate slot
    for (std::size_t i = 0; i < se.size(); ++i) {
        mc.instance.hypotheses[i].resize(cand[i].size() + 1);
        mc.instance.hypotheses[i][0] = MatchHypothesis{};  // null label, unit cost
        for (std::size_t c = 0; c < cand[i].size(); ++c)
            tasks.emplace_back(static_cast<int>(i), static_cast<int>(c));
    }
    MatchinessOptions mopt;
    mopt.window_cap_cells = cfg.match_window_cap_cells;
    mopt.coarse_to_fine = cfg.match_coarse_to_fine;
    par_for(tasks.size(), threads, [&](std::size_t t) {
        const int i = tasks[t].first;
        const int l = cand[i][tasks[t].second];
        const Matchiness m =
            edge_matchiness(se[i], node_samples[i], oe[l], label_samples[l], label_maps[l], mopt);
        MatchHypothesis hyp;
        hyp.label = l + 1;
        hyp.cost = m.cost;
        hyp.transform = m.transform;
        hyp.swapped = m.swapped;
        hyp.all_outside = m.all_outside;
        mc.instance.hypotheses[i][tasks[t].second + 1] = hyp;
    });

    BPOptions bp_opt = bp_opt_in;
    bp_opt.max_sweeps = cfg.bp_max_sweeps;
    mc.bp = run_belief_propagation(mc.instance, bp_opt);
    mc.correspondences = decode_segment_correspondences(mc.instance, mc.bp.assignment,
                                                        static_cast<int>(street.size()));

    // Fine-stage initialization: for each matched segment, the cheapest chosen
    // incident hypothesis that maps it onto its decoded over-view segment.
    mc.init.assign(street.size(), std::nullopt);
    std::vector<double> init_cost(street.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < se.size(); ++i) {
        const auto& hyp = mc.instance.hypotheses[i][mc.bp.assignment[i]];
        if (hyp.label == 0) continue;
        const SegmentEdge& o = oe[hyp.label - 1];
        const int to_a = hyp.swapped ? o.b : o.a;
        const int to_b = hyp.swapped ? o.a : o.b;
        for (auto [s, target] : {std::pair{se[i].a, to_a}, std::pair{se[i].b, to_b}}) {
            if (!mc.correspondences[s] || mc.correspondences[s]->overview_id != target) continue;
            if (hyp.cost < init_cost[s]) {
                init_cost[s] = hyp.cost;
                mc.init[s] = hyp.transform;
            }
        }
    }
    for (std::size_t s = 0; s < street.size(); ++s)
        if (mc.correspondences[s] && !mc.init[s]) {
            RigidTransform2D t;
            t.t = over[mc.correspondences[s]->overview_id].center2d - street[s].center2d;
            mc.init[s] = t;
        }
    return mc;
}

inline bool stage_match(const std::string& out, const std::string& polygons,
                        const std::string& mask, const std::string& georef,
                        const std::string& overview_cloud, const PipelineConfig& cfg, int threads,
                        bool dump_instance) {
    const SegmentStageData seg = read_segment_stage(out);
    const OverviewData ov = load_overview(polygons, mask, georef, overview_cloud, cfg);

    nlohmann::ordered_json oj;
    oj["has_heights"] = ov.has_heights;
    oj["ground_height"] = ov.ground_height;
    oj["warnings"] = ov.warnings;
    oj["segments"] = overview_segments_to_json(ov.segments);
    detail::write_json_file(oj, detail::join_path(out, files::overview));

    const MatchComputation mc = compute_matching(seg.segments, ov.segments, cfg, threads);
    if (dump_instance) write_instance_json(mc.instance, detail::join_path(out, files::instance));

    nlohmann::ordered_json mj;
    mj["converged"] = mc.bp.converged;
    mj["sweeps"] = mc.bp.sweeps;
    mj["energy"] = mc.bp.energy;
    mj["energy_trace"] = mc.bp.energy_trace;
    mj["assignment"] = mc.bp.assignment;
    mj["correspondences"] = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < mc.correspondences.size(); ++s) {
        if (!mc.correspondences[s]) {
            mj["correspondences"].push_back(nullptr);
            continue;
        }
        const auto& c = *mc.correspondences[s];
        nlohmann::ordered_json cj;
        cj["street"] = c.street_id;
        cj["overview"] = c.overview_id;
        cj["votes"] = c.votes;
        cj["cost_sum"] = c.cost_sum;
        cj["init_angle"] = mc.init[s]->angle;
        cj["init_t"] = {mc.init[s]->t.x(), mc.init[s]->t.y()};
        mj["correspondences"].push_back(std::move(cj));
    }
    detail::write_json_file(mj, detail::join_path(out, files::match));
    return mc.bp.converged;
}

// ---- fine registration stage ------------------------------------------------

inline void stage_register(const std::string& out, const PipelineConfig& cfg, int threads) {
    const SegmentStageData seg = read_segment_stage(out);
    const nlohmann::json oj = detail::load_input("over-view segments", [&] {
        return detail::read_json_file(detail::join_path(out, files::overview));
    });
    const std::vector<OverviewSegment> over = overview_segments_from_json(oj.at("segments"));
    const bool has_heights = oj.at("has_heights").get<bool>();
    const double ground_height = oj.at("ground_height").get<double>();
    const nlohmann::json mj = detail::load_input("match result", [&] {
        return detail::read_json_file(detail::join_path(out, files::match));
    });
    const auto& corr = mj.at("correspondences");
    require(corr.size() == seg.segments.size(), "match result does not fit the segments");

    double fallback_tz = 0.0;
    if (has_heights) {
        std::vector<double> ground_z;
        for (const auto& s : seg.segments)
            for (int idx : s.ground_points) ground_z.push_back(seg.work.points[idx].z());
        if (!ground_z.empty())
            fallback_tz = ground_height - detail::lower_median(std::move(ground_z));
    }

    std::vector<std::optional<DistanceMap>> seg_maps(over.size());
    for (const auto& c : corr)
        if (!c.is_null()) {
            const int oid = c.at("overview").get<int>();
            require(oid >= 0 && static_cast<std::size_t>(oid) < over.size(),
                    "correspondence references unknown over-view segment");
            if (!seg_maps[oid])
                seg_maps[oid] = build_distance_map(over[oid].boundary2d, cfg.cell_size_m,
                                                   (cfg.refine_offset_cells + 8) * cfg.cell_size_m);
        }

    FineOptions fopt;
    fopt.angle_range_deg = cfg.refine_angle_range_deg;
    fopt.angle_step_deg = cfg.refine_angle_step_deg;
    fopt.offset_half_cells = cfg.refine_offset_cells;
    fopt.coarse_to_fine = cfg.refine_coarse_to_fine;

    std::vector<SegmentTransform3D> transforms(seg.segments.size());
    par_for(seg.segments.size(), threads, [&](std::size_t s) {
        SegmentTransform3D& t = transforms[s];
        t.segment_id = static_cast<int>(s);
        if (corr[s].is_null()) return;  // stays identity, overview_id -1
        t.overview_id = corr[s].at("overview").get<int>();

        RigidTransform2D init;
        init.angle = corr[s].at("init_angle").get<double>();
        init.t = Vec2(corr[s].at("init_t")[0].get<double>(), corr[s].at("init_t")[1].get<double>());

        std::vector<Vec2> samples =
            detail::stride_union(seg.segments[s].footprint2d, {}, cfg.refine_sample_cap);
        const FineResult fine = refine_2d(samples, init, over[t.overview_id].center2d,
                                          *seg_maps[t.overview_id], fopt);
        t.mean_dist = fine.mean_dist;

        ZAlign z;
        if (has_heights) {
            std::vector<Vec3> ground;
            ground.reserve(seg.segments[s].ground_points.size());
            for (int idx : seg.segments[s].ground_points) ground.push_back(seg.work.points[idx]);
            z = align_z(ground, ground_height, fallback_tz);
        }
        t.z_degenerate = z.degenerate;
        t.transform = compose_3d(fine.transform, z.RZ, z.tz);
    });

    write_segment_transforms(transforms, detail::join_path(out, files::transforms));
}

// ---- blending / adjustment stage ---------------------------------------------

inline void stage_adjust(const std::string& out, const std::string& observations,
                         const std::string& tracks, const PipelineConfig& cfg, int threads) {
    (void)threads;
    const SegmentStageData seg = read_segment_stage(out);
    const std::vector<SegmentTransform3D> transforms = detail::load_input(
        "segment transforms",
        [&] { return read_segment_transforms(detail::join_path(out, files::transforms)); });
    require(transforms.size() == seg.segments.size(), "transforms do not fit the segments");

    std::vector<int> owner(seg.work.size(), -1);
    std::vector<Vec2> centers(seg.segments.size());
    for (std::size_t s = 0; s < seg.segments.size(); ++s) {
        centers[s] = seg.segments[s].center2d;
        for (int idx : seg.segments[s].facade_points) owner[idx] = static_cast<int>(s);
        for (int idx : seg.segments[s].ground_points) owner[idx] = static_cast<int>(s);
    }

    const BlendField field(transforms, centers, {cfg.blend_neighbors});
    const PointCloud registered = blend_cloud(seg.work, owner, field);
    write_cloud(registered, detail::join_path(out, files::registered));

    const std::string poses_path = detail::join_path(out, files::poses_work);
    std::vector<CameraPose> poses;
    if (std::filesystem::exists(poses_path)) {
        poses = read_poses(poses_path);
        poses = blend_poses(poses, field);
        write_poses(poses, detail::join_path(out, files::poses_registered));
    }

    if (observations.empty()) return;
    if (poses.empty())
        throw InputError("pose adjustment needs poses: run segment with --poses first");
    if (tracks.empty()) throw InputError("pose adjustment needs --tracks (track id -> point index)");

    const auto obs = detail::load_input("observations",
                                        [&] { return read_observations(observations); });
    std::map<int, int> track_point;
    detail::load_input("tracks", [&] {
        std::ifstream in(tracks);
        if (!in) throw std::runtime_error("cannot open: " + tracks);
        long track, idx;
        while (in >> track >> idx) {
            require(idx >= 0 && static_cast<std::size_t>(idx) < registered.size(),
                    "track references a point outside the cloud");
            track_point[static_cast<int>(track)] = static_cast<int>(idx);
        }
        return 0;
    });

    BAProblem prob;
    prob.K = cfg.intrinsics();
    prob.lambda = cfg.lambda;
    prob.poses = poses;
    prob.anchors.reserve(poses.size());
    for (const auto& p : poses) prob.anchors.push_back(p.C);
    std::map<int, int> slot_of_track;
    for (const auto& [track, idx] : track_point) {
        slot_of_track[track] = static_cast<int>(prob.points.size());
        prob.points.push_back(registered.points[idx]);
    }
    for (const auto& o : obs) {
        const auto it = slot_of_track.find(o.track_id);
        if (it == slot_of_track.end())
            throw InputError("observation references unknown track " + std::to_string(o.track_id));
        require(o.pose_id >= 0 && static_cast<std::size_t>(o.pose_id) < prob.poses.size(),
                "observation references unknown pose");
        prob.obs.push_back({o.pose_id, it->second, o.uv});
    }

    const BAResult res = solve_bundle_adjustment(prob);
    write_poses(prob.poses, detail::join_path(out, files::poses_adjusted));
    nlohmann::ordered_json j;
    j["initial_cost"] = res.initial_cost;
    j["final_cost"] = res.final_cost;
    j["rms_reproj_px"] = res.rms_reproj_px;
    j["iterations"] = res.iterations;
    j["converged"] = res.converged;
    j["poses"] = prob.poses.size();
    j["points"] = prob.points.size();
    j["observations"] = prob.obs.size();
    detail::write_json_file(j, detail::join_path(out, files::ba_report));
}

// ---- evaluation stage ---------------------------------------------------------

inline void stage_evaluate(const std::string& out, const std::string& reference,
                           const PipelineConfig& cfg) {
    const PointCloud reg = detail::load_input("registered cloud", [&] {
        return read_cloud(detail::join_path(out, files::registered));
    });
    const PointCloud ref =
        detail::load_input("reference cloud", [&] { return read_cloud(reference); });

    ChamferOptions copt;
    copt.cutoff = cfg.chamfer_cutoff_m;
    const ChamferStats c3 = chamfer_distance(reg.points, ref.points, copt);
    copt.planar = true;
    const ChamferStats c2 = chamfer_distance(reg.points, ref.points, copt);

    nlohmann::ordered_json j;
    j["cutoff_m"] = cfg.chamfer_cutoff_m;
    j["chamfer3d"] = {{"mean", c3.mean}, {"stddev", c3.stddev}, {"pairs", c3.pair_count}};
    j["chamfer2d"] = {{"mean", c2.mean}, {"stddev", c2.stddev}, {"pairs", c2.pair_count}};
    j["registered_points"] = reg.size();
    j["reference_points"] = ref.size();
    detail::write_json_file(j, detail::join_path(out, files::chamfer));
}

// ---- full pipeline ------------------------------------------------------------

struct PipelineInputs {
    std::string street;  // required
    std::string overview_polygons, overview_mask, overview_georef, overview_cloud;
    std::string poses, observations, tracks;
};

struct PipelineOptions {
    int threads = 1;
    bool dump_instance = false;
};

inline nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
    return {{"scale", c.scale},
            {"normals_k", c.normals_k},
            {"facade_angle_deg", c.facade_angle_deg},
            {"facade_neighbor_frac", c.facade_neighbor_frac},
            {"min_diameter_m", c.min_diameter_m},
            {"region_angle_deg", c.region_angle_deg},
            {"region_radius_factor", c.region_radius_factor},
            {"ground_angle_deg", c.ground_angle_deg},
            {"pair_k", c.pair_k},
            {"c1", c.c1},
            {"c2", c.c2},
            {"theta_th_deg", c.theta_th_deg},
            {"t_th_m", c.t_th_m},
            {"bp_max_sweeps", c.bp_max_sweeps},
            {"refine_angle_range_deg", c.refine_angle_range_deg},
            {"refine_angle_step_deg", c.refine_angle_step_deg},
            {"refine_offset_cells", c.refine_offset_cells},
            {"refine_coarse_to_fine", c.refine_coarse_to_fine},
            {"lambda", c.lambda},
            {"chamfer_cutoff_m", c.chamfer_cutoff_m},
            {"cell_size_m", c.cell_size_m},
            {"polygon_sample_spacing", c.polygon_sample_spacing},
            {"match_sample_cap", c.match_sample_cap},
            {"match_window_cap_cells", c.match_window_cap_cells},
            {"match_coarse_to_fine", c.match_coarse_to_fine},
            {"match_radius_m", c.match_radius_m},
            {"refine_sample_cap", c.refine_sample_cap},
            {"blend_neighbors", c.blend_neighbors},
            {"focal_px", c.focal_px},
            {"principal_x", c.principal_x},
            {"principal_y", c.principal_y}};
}

// Runs every stage through the same file-level entry points the subcommands use, so
// a chained invocation and a single-shot run produce identical artifacts. Returns 0
// on success or 3 when message passing did not converge (summary still written).
inline int run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg,
                        const std::string& out, const PipelineOptions& opt) {
    cfg.validate();
    if (in.street.empty()) throw InputError("missing street cloud input");
    std::filesystem::create_directories(out);

    run_stage("segment", [&] { stage_segment(in.street, in.poses, cfg, out, opt.threads); });
    bool converged = true;
    run_stage("match", [&] {
        converged = stage_match(out, in.overview_polygons, in.overview_mask, in.overview_georef,
                                in.overview_cloud, cfg, opt.threads, opt.dump_instance);
    });

    nlohmann::ordered_json summary;
    summary["status"] = converged ? "ok" : "bp_diverged";
    summary["config"] = config_to_json(cfg);
    {
        const nlohmann::ordered_json sj =
            detail::read_ordered_json_file(detail::join_path(out, files::segments));
        summary["segmentation"] = {{"points", sj.at("points")},
                                   {"segments", sj.at("segments").size()},
                                   {"axis", sj.at("axis")},
                                   {"axis_support", sj.at("axis_support")}};
        const nlohmann::ordered_json ovj =
            detail::read_ordered_json_file(detail::join_path(out, files::overview));
        summary["overview"] = {{"segments", ovj.at("segments").size()},
                               {"has_heights", ovj.at("has_heights")},
                               {"ground_height", ovj.at("ground_height")},
                               {"warnings", ovj.at("warnings")}};
        summary["matching"] = detail::read_ordered_json_file(detail::join_path(out, files::match));
    }
    if (!converged) {
        detail::write_json_file(summary, detail::join_path(out, files::summary));
        return 3;
    }

    run_stage("register", [&] { stage_register(out, cfg, opt.threads); });
    run_stage("adjust", [&] { stage_adjust(out, in.observations, in.tracks, cfg, opt.threads); });
    if (!in.overview_cloud.empty())
        run_stage("evaluate", [&] { stage_evaluate(out, in.overview_cloud, cfg); });

    summary["registration"] =
        detail::read_ordered_json_file(detail::join_path(out, files::transforms));
    const std::string ba_path = detail::join_path(out, files::ba_report);
    if (std::filesystem::exists(ba_path))
        summary["adjustment"] = detail::read_ordered_json_file(ba_path);
    if (!in.overview_cloud.empty())
        summary["evaluation"] =
            detail::read_ordered_json_file(detail::join_path(out, files::chamfer));
    detail::write_json_file(summary, detail::join_path(out, files::summary));
    return 0;
}

}  // namespace crossreg
