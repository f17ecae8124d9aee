#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossreg/distance_map.hpp"
#include "crossreg/segments.hpp"

namespace crossreg {

// Pair of segments treated as one matching unit; a and b are segment ids with their
// centroids. Street-side and over-view-side edges share this shape.
struct SegmentEdge {
    int a = -1;
    int b = -1;
    Vec2 ca = Vec2::Zero();
    Vec2 cb = Vec2::Zero();

    Vec2 midpoint() const { return 0.5 * (ca + cb); }
    double length() const { return (cb - ca).norm(); }
    bool touches(int seg) const { return a == seg || b == seg; }
    bool shares_segment(const SegmentEdge& o) const {
        return touches(o.a) || touches(o.b);
    }
};

// Each segment pairs with its K nearest peers (by centroid distance); duplicate pairs
// collapse, so at most K*n edges result. Output sorted by (a, b).
inline std::vector<SegmentEdge> build_conjugate_nodes(const std::vector<Vec2>& centers, int K) {
    require(K >= 1, "K must be positive");
    require(centers.size() >= 2, "need at least two segments to form edges");
    const int n = static_cast<int>(centers.size());
    std::set<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> by_dist;
        by_dist.reserve(n - 1);
        for (int j = 0; j < n; ++j)
            if (j != i) by_dist.push_back({(centers[j] - centers[i]).squaredNorm(), j});
        const int take = std::min(K, n - 1);
        std::partial_sort(by_dist.begin(), by_dist.begin() + take, by_dist.end());
        for (int t = 0; t < take; ++t) {
            const int j = by_dist[t].second;
            pairs.insert({std::min(i, j), std::max(i, j)});
        }
    }
    std::vector<SegmentEdge> edges;
    edges.reserve(pairs.size());
    for (const auto& [a, b] : pairs) edges.push_back({a, b, centers[a], centers[b]});
    return edges;
}

struct CoarseAlign {
    RigidTransform2D transform;
    bool swapped = false;   // true when street a maps onto over-view b
    double residual = 0.0;  // summed endpoint distance after the transform
};

// Rigid 2D transform taking the street centroid line onto the over-view centroid
// line: rotation aligns the line directions, translation maps midpoint to midpoint.
// Both endpoint pairings are tried; the lower summed endpoint distance wins and
// near-exact ties keep the index-order pairing.
inline CoarseAlign coarse_edge_transform(const SegmentEdge& es, const SegmentEdge& eo) {
    const Vec2 ds = es.cb - es.ca;
    const Vec2 dov = eo.cb - eo.ca;
    require(ds.norm() > 1e-12 && dov.norm() > 1e-12,
            "edge endpoints coincide; no direction to align");

    auto fit = [&](const Vec2& target_dir, const Vec2& oa, const Vec2& ob) {
        CoarseAlign c;
        c.transform.angle = std::atan2(ds.x() * target_dir.y() - ds.y() * target_dir.x(),
                                       ds.dot(target_dir));
        c.transform.t = eo.midpoint() - c.transform.rotation() * es.midpoint();
        c.residual = (c.transform.apply(es.ca) - oa).norm() + (c.transform.apply(es.cb) - ob).norm();
        return c;
    };

    CoarseAlign keep = fit(dov, eo.ca, eo.cb);
    CoarseAlign swap = fit(-dov, eo.cb, eo.ca);
    swap.swapped = true;
    const double tie_eps = 1e-9 * (1.0 + es.length() + eo.length());
    if (swap.residual < keep.residual - tie_eps) return swap;
    return keep;
}

struct MatchinessOptions {
    int window_cap_cells = 0;    // 0: full over-view bounding box
    bool coarse_to_fine = false; // 4-cell scan, then exhaustive +/-4 refinement
    // Rotation score gaps below this many cells of mean lookup distance count as a
    // tie. Snapping samples to cell centers perturbs each mean by a sub-cell amount,
    // so a raw comparison would pick between a half-turn and its twin by noise.
    double rotation_tie_margin_cells = 0.2;
};

struct Matchiness {
    double cost = 1.0;               // normalized to [0, 1]
    RigidTransform2D transform;      // coarse transform with the winning offset folded in
    bool swapped = false;
    bool all_outside = false;        // every sample off-map at every offset
    double min_mean_dist = 0.0;
    double d_max = 0.0;              // half diagonal of the search window
    int offset_x = 0, offset_y = 0;  // winning offset in cells
};

namespace detail {

struct OffsetScore {
    double mean = 0.0;
    bool all_outside = false;
};

inline OffsetScore score_offset(const DistanceMap& dmap, const std::vector<Vec2>& placed,
                                const std::vector<int>& base_col, const std::vector<int>& base_row,
                                int dx, int dy) {
    double sum = 0.0;
    std::size_t outside = 0;
    for (std::size_t s = 0; s < placed.size(); ++s) {
        const int col = base_col[s] + dx, row = base_row[s] + dy;
        if (dmap.contains_cell(col, row)) {
            sum += dmap.at(col, row);
        } else {
            ++outside;
            const int cc = std::min(std::max(col, 0), dmap.cols - 1);
            const int cr = std::min(std::max(row, 0), dmap.rows - 1);
            const Vec2 shifted = placed[s] + Vec2(dx * dmap.cell_size, dy * dmap.cell_size);
            sum += dmap.at(cc, cr) + (shifted - dmap.cell_center(cc, cr)).norm();
        }
    }
    return {sum / static_cast<double>(placed.size()), outside == placed.size()};
}

}  // namespace detail

namespace detail {

struct CandidateScan {
    RigidTransform2D transform;
    double mean = std::numeric_limits<double>::infinity();
    int dx = 0, dy = 0;
    bool all_outside = true;
};

inline CandidateScan scan_candidate(const RigidTransform2D& transform,
                                    const std::vector<Vec2>& street_samples,
                                    const DistanceMap& dmap, int half_x, int half_y,
                                    bool coarse_to_fine) {
    CandidateScan out;
    out.transform = transform;
    std::vector<Vec2> placed(street_samples.size());
    std::vector<int> base_col(street_samples.size()), base_row(street_samples.size());
    for (std::size_t i = 0; i < street_samples.size(); ++i) {
        placed[i] = transform.apply(street_samples[i]);
        base_col[i] = static_cast<int>(std::lround((placed[i].x() - dmap.origin.x()) / dmap.cell_size));
        base_row[i] = static_cast<int>(std::lround((placed[i].y() - dmap.origin.y()) / dmap.cell_size));
    }

    auto consider = [&](int dx, int dy) {
        const auto sc = score_offset(dmap, placed, base_col, base_row, dx, dy);
        out.all_outside = out.all_outside && sc.all_outside;
        if (sc.mean < out.mean) {
            out.mean = sc.mean;
            out.dx = dx;
            out.dy = dy;
        }
    };

    if (coarse_to_fine) {
        // Multiples of 4 anchored at 0 so the identity offset is always probed; the
        // refinement window around the coarse winner contains it, so resetting the
        // best keeps the true minimum over everything scanned.
        for (int dx = -4 * (half_x / 4); dx <= half_x; dx += 4)
            for (int dy = -4 * (half_y / 4); dy <= half_y; dy += 4) consider(dx, dy);
        const int cx = out.dx, cy = out.dy;
        out.mean = std::numeric_limits<double>::infinity();
        for (int dx = std::max(-half_x, cx - 4); dx <= std::min(half_x, cx + 4); ++dx)
            for (int dy = std::max(-half_y, cy - 4); dy <= std::min(half_y, cy + 4); ++dy)
                consider(dx, dy);
    } else {
        for (int dx = -half_x; dx <= half_x; ++dx)
            for (int dy = -half_y; dy <= half_y; ++dy) consider(dx, dy);
    }
    return out;
}

}  // namespace detail

// Shape-similarity cost of matching a street edge against an over-view edge. The
// centroid line only fixes the rotation up to a half turn (both endpoint pairings
// tie on endpoint distance when anchored midpoint to midpoint), so both candidate
// rotations are slid over integer-cell offsets spanning the over-view edge's
// bounding box (optionally capped); the score of an offset is the mean distance-map
// lookup. The best mean, normalized by the half diagonal of the search window and
// clamped to [0, 1], is the cost. Offset ties keep the lexicographically smallest
// (dx, dy). Rotation scores within a sub-cell margin of each other count as a tie
// (cell snapping makes the means that noisy); a rotation tie keeps the candidate
// closer to the identity, which makes the result independent of street endpoint
// order and, on roughly georeferenced data, resolves a near-symmetric segment pair
// toward the drift-sized motion rather than its half-turn twin.
inline Matchiness edge_matchiness(const SegmentEdge& es, const std::vector<Vec2>& street_samples,
                                  const SegmentEdge& eo, const std::vector<Vec2>& overview_samples,
                                  const DistanceMap& dmap, const MatchinessOptions& opt = {}) {
    require(!street_samples.empty(), "street edge has no footprint samples");
    require(!overview_samples.empty(), "over-view edge has no footprint samples");

    const Vec2 ds = es.cb - es.ca;
    const Vec2 dov = eo.cb - eo.ca;
    require(ds.norm() > 1e-12 && dov.norm() > 1e-12,
            "edge endpoints coincide; no direction to align");
    const double cross = ds.x() * dov.y() - ds.y() * dov.x();
    const double dot = ds.dot(dov);
    // Swapping the street endpoints negates ds, which exchanges these two
    // expressions exactly, so the candidate set is identical either way.
    RigidTransform2D keep{std::atan2(cross, dot), Vec2::Zero()};
    RigidTransform2D crosswise{std::atan2(-cross, -dot), Vec2::Zero()};
    keep.t = eo.midpoint() - keep.rotation() * es.midpoint();
    crosswise.t = eo.midpoint() - crosswise.rotation() * es.midpoint();

    Vec2 lo = overview_samples.front(), hi = overview_samples.front();
    for (const Vec2& p : overview_samples) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    int half_x = static_cast<int>(std::floor(0.5 * (hi.x() - lo.x()) / dmap.cell_size));
    int half_y = static_cast<int>(std::floor(0.5 * (hi.y() - lo.y()) / dmap.cell_size));
    if (opt.window_cap_cells > 0) {
        half_x = std::min(half_x, opt.window_cap_cells);
        half_y = std::min(half_y, opt.window_cap_cells);
    }

    const detail::CandidateScan a =
        detail::scan_candidate(keep, street_samples, dmap, half_x, half_y, opt.coarse_to_fine);
    const detail::CandidateScan b = detail::scan_candidate(crosswise, street_samples, dmap,
                                                           half_x, half_y, opt.coarse_to_fine);

    bool take_b;
    const double tie = opt.rotation_tie_margin_cells * dmap.cell_size;
    if (a.all_outside != b.all_outside) {
        take_b = a.all_outside;
    } else if (std::abs(a.mean - b.mean) > tie) {
        take_b = b.mean < a.mean;
    } else {
        // The two angles differ by exactly a half turn; prefer the smaller motion
        // and break the +-90 degree tie toward the positive angle.
        const double wa = std::abs(wrap_angle(a.transform.angle));
        const double wb = std::abs(wrap_angle(b.transform.angle));
        take_b = wb != wa ? wb < wa : wrap_angle(b.transform.angle) > wrap_angle(a.transform.angle);
    }
    const detail::CandidateScan& win = take_b ? b : a;

    Matchiness out;
    out.swapped = take_b;
    out.d_max = 0.5 * std::hypot((2 * half_x + 1) * dmap.cell_size,
                                 (2 * half_y + 1) * dmap.cell_size);
    out.min_mean_dist = win.mean;
    out.offset_x = win.dx;
    out.offset_y = win.dy;
    out.transform = win.transform;
    out.transform.t += Vec2(win.dx * dmap.cell_size, win.dy * dmap.cell_size);
    if (a.all_outside && b.all_outside) {
        out.all_outside = true;
        out.cost = 1.0;
    } else {
        out.cost = std::min(1.0, std::max(0.0, win.mean / out.d_max));
    }
    return out;
}

struct SmoothParams {
    double c1 = 0.1;
    double c2 = 0.6;
    double theta_th_deg = 10.0;
    double t_th_m = 100.0;

    void validate() const {
        require(c1 >= 0.0 && c1 <= c2, "smooth costs need 0 <= c1 <= c2");
        require(theta_th_deg > 0.0 && t_th_m > 0.0, "consistency thresholds must be positive");
    }
};

// One candidate assignment of a street edge. label 0 is the null assignment (unit
// cost, identity transform); label l > 0 refers to over-view edge l-1.
struct MatchHypothesis {
    int label = 0;
    double cost = 1.0;
    RigidTransform2D transform;
    bool swapped = false;
    bool all_outside = false;
};

// Full matching problem: street edges are the graph nodes (neighbors share a street
// segment), and each node carries its candidate hypotheses sorted by label.
struct MatchingInstance {
    std::vector<SegmentEdge> street_edges;
    std::vector<SegmentEdge> overview_edges;
    std::vector<std::vector<int>> neighbors;
    std::vector<std::vector<MatchHypothesis>> hypotheses;
    SmoothParams params;

    int label_count() const { return static_cast<int>(overview_edges.size()) + 1; }

    void validate() const {
        params.validate();
        require(neighbors.size() == street_edges.size(), "neighbor table size mismatch");
        require(hypotheses.size() == street_edges.size(), "hypothesis table size mismatch");
        for (std::size_t i = 0; i < hypotheses.size(); ++i) {
            require(!hypotheses[i].empty() && hypotheses[i][0].label == 0 &&
                        hypotheses[i][0].cost == 1.0,
                    "every node needs the null hypothesis at index 0 with unit cost");
            for (std::size_t h = 1; h < hypotheses[i].size(); ++h) {
                require(hypotheses[i][h].label > hypotheses[i][h - 1].label,
                        "hypotheses must be sorted by label");
                require(hypotheses[i][h].cost >= 0.0 && hypotheses[i][h].cost <= 1.0,
                        "data costs must lie in [0, 1]");
            }
        }
        for (std::size_t i = 0; i < neighbors.size(); ++i)
            for (int j : neighbors[i])
                require(j >= 0 && static_cast<std::size_t>(j) < street_edges.size() &&
                            j != static_cast<int>(i),
                        "neighbor index out of range");
    }
};

// Pairwise term of the labeling energy. Null assignments always cost c1; two real
// assignments cost c1 when their over-view edges share a segment and their transforms
// agree within both thresholds, c2 otherwise.
inline double smooth_cost(const MatchingInstance& inst, const MatchHypothesis& hi,
                          const MatchHypothesis& hj) {
    const SmoothParams& p = inst.params;
    if (hi.label == 0 || hj.label == 0) return p.c1;
    const SegmentEdge& ei = inst.overview_edges[hi.label - 1];
    const SegmentEdge& ej = inst.overview_edges[hj.label - 1];
    if (!ei.shares_segment(ej)) return p.c2;
    if (angle_diff(hi.transform.angle, hj.transform.angle) >= deg2rad(p.theta_th_deg)) return p.c2;
    if ((hi.transform.t - hj.transform.t).norm() >= p.t_th_m) return p.c2;
    return p.c1;
}

inline nlohmann::ordered_json edge_to_json(const SegmentEdge& e) {
    return {{"a", e.a}, {"b", e.b}, {"ca", {e.ca.x(), e.ca.y()}}, {"cb", {e.cb.x(), e.cb.y()}}};
}

inline SegmentEdge edge_from_json(const nlohmann::json& j) {
    return {j.at("a").get<int>(), j.at("b").get<int>(),
            Vec2(j.at("ca")[0].get<double>(), j.at("ca")[1].get<double>()),
            Vec2(j.at("cb")[0].get<double>(), j.at("cb")[1].get<double>())};
}

inline nlohmann::ordered_json instance_to_json(const MatchingInstance& inst) {
    nlohmann::ordered_json j;
    j["params"] = {{"c1", inst.params.c1},
                   {"c2", inst.params.c2},
                   {"theta_th_deg", inst.params.theta_th_deg},
                   {"t_th_m", inst.params.t_th_m}};
    j["street_edges"] = nlohmann::ordered_json::array();
    for (const auto& e : inst.street_edges) j["street_edges"].push_back(edge_to_json(e));
    j["overview_edges"] = nlohmann::ordered_json::array();
    for (const auto& e : inst.overview_edges) j["overview_edges"].push_back(edge_to_json(e));
    j["neighbors"] = inst.neighbors;
    j["hypotheses"] = nlohmann::ordered_json::array();
    for (const auto& node : inst.hypotheses) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& h : node) {
            arr.push_back({{"label", h.label},
                           {"cost", h.cost},
                           {"angle", h.transform.angle},
                           {"t", {h.transform.t.x(), h.transform.t.y()}},
                           {"swapped", h.swapped},
                           {"all_outside", h.all_outside}});
        }
        j["hypotheses"].push_back(std::move(arr));
    }
    return j;
}

inline MatchingInstance instance_from_json(const nlohmann::json& j) {
    MatchingInstance inst;
    inst.params.c1 = j.at("params").at("c1").get<double>();
    inst.params.c2 = j.at("params").at("c2").get<double>();
    inst.params.theta_th_deg = j.at("params").at("theta_th_deg").get<double>();
    inst.params.t_th_m = j.at("params").at("t_th_m").get<double>();
    for (const auto& e : j.at("street_edges")) inst.street_edges.push_back(edge_from_json(e));
    for (const auto& e : j.at("overview_edges")) inst.overview_edges.push_back(edge_from_json(e));
    inst.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
    for (const auto& node : j.at("hypotheses")) {
        std::vector<MatchHypothesis> hyps;
        for (const auto& h : node) {
            MatchHypothesis m;
            m.label = h.at("label").get<int>();
            m.cost = h.at("cost").get<double>();
            m.transform.angle = h.at("angle").get<double>();
            m.transform.t = Vec2(h.at("t")[0].get<double>(), h.at("t")[1].get<double>());
            m.swapped = h.at("swapped").get<bool>();
            m.all_outside = h.at("all_outside").get<bool>();
            hyps.push_back(m);
        }
        inst.hypotheses.push_back(std::move(hyps));
    }
    inst.validate();
    return inst;
}

inline void write_instance_json(const MatchingInstance& inst, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << instance_to_json(inst).dump(2) << "\n";
}

inline MatchingInstance read_instance_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return instance_from_json(j);
}

}  // namespace crossreg
