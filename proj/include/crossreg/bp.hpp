#pragma once

#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "crossreg/matching.hpp"

namespace crossreg {

struct BPOptions {
    int max_sweeps = 100;
    double rel_tol = 1e-6;
    // Fraction of the previous message kept on each sweep. Damping leaves the
    // fixed points untouched but suppresses the two-sweep flip-flop that
    // synchronous updates can fall into on loopy graphs when c2 - c1 is large.
    // Off by default: it slows convergence and can settle on a worse fixed
    // point when the undamped sweep would have reached a better one.
    double damping = 0.0;
};

struct BPResult {
    std::vector<int> assignment;       // hypothesis index per node, 0 = null
    std::vector<double> energy_trace;  // decoded energy after each sweep
    int sweeps = 0;
    bool converged = false;
    double energy = 0.0;
};

// Labeling energy: sum of data costs plus the pairwise term over every ordered
// neighbor pair, so each unordered pair contributes twice.
inline double total_energy(const MatchingInstance& inst, const std::vector<int>& assignment) {
    require(assignment.size() == inst.street_edges.size(), "assignment size mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const auto& hi = inst.hypotheses[i][assignment[i]];
        e += hi.cost;
        for (int j : inst.neighbors[i]) e += smooth_cost(inst, hi, inst.hypotheses[j][assignment[j]]);
    }
    return e;
}

namespace detail {

// For each over-view label, the labels whose edge shares a segment with it (itself
// included). Label 0 never appears here; the null case is handled directly.
inline std::vector<std::vector<int>> adjacent_label_table(const MatchingInstance& inst) {
    std::map<int, std::vector<int>> by_segment;
    for (std::size_t e = 0; e < inst.overview_edges.size(); ++e) {
        by_segment[inst.overview_edges[e].a].push_back(static_cast<int>(e) + 1);
        by_segment[inst.overview_edges[e].b].push_back(static_cast<int>(e) + 1);
    }
    std::vector<std::vector<int>> adj(inst.overview_edges.size() + 1);
    for (std::size_t e = 0; e < inst.overview_edges.size(); ++e) {
        std::set<int> labels;
        labels.insert(static_cast<int>(e) + 1);
        for (int seg : {inst.overview_edges[e].a, inst.overview_edges[e].b})
            for (int l : by_segment[seg]) labels.insert(l);
        adj[e + 1].assign(labels.begin(), labels.end());
    }
    return adj;
}

inline bool transforms_consistent(const SmoothParams& p, const MatchHypothesis& hi,
                                  const MatchHypothesis& hj) {
    return angle_diff(hi.transform.angle, hj.transform.angle) < deg2rad(p.theta_th_deg) &&
           (hi.transform.t - hj.transform.t).norm() < p.t_th_m;
}

}  // namespace detail

// Min-sum loopy belief propagation over the conjugate graph. Messages start at zero,
// all nodes update synchronously from the previous sweep's messages, each update is
// optionally damped against the previous sweep's value, and each message is
// min-normalized. The
// run stops when the messages have stabilized, the decoded labeling repeats, and the
// decoded energy's relative change drops below rel_tol; hitting max_sweeps first
// leaves converged = false. Message stability is required because the decoded
// labeling can repeat before information has crossed the graph, and stopping there
// would break exactness on acyclic instances.
//
// The energy counts every unordered neighbor pair in both directions, so the
// pairwise term enters each message doubled; anything less and the decoded labeling
// minimizes a differently weighted objective than total_energy reports.
//
// The pairwise term only takes the values c1 and c2, so a message entry reduces to
// min(2 c1 + best over {null and consistent adjacent labels}, 2 c2 + best over all),
// which avoids the full label * label scan.
inline BPResult run_belief_propagation(const MatchingInstance& inst, const BPOptions& opt = {}) {
    inst.validate();
    const int n = static_cast<int>(inst.street_edges.size());
    const auto adj_labels = detail::adjacent_label_table(inst);

    // label -> hypothesis index per node (-1 when the node lacks that label)
    std::vector<std::vector<int>> hyp_of_label(n);
    for (int i = 0; i < n; ++i) {
        hyp_of_label[i].assign(inst.label_count(), -1);
        for (std::size_t h = 0; h < inst.hypotheses[i].size(); ++h)
            hyp_of_label[i][inst.hypotheses[i][h].label] = static_cast<int>(h);
    }

    // Directed messages i -> j, stored per receiving node in neighbor order.
    struct Slot {
        int from, to;
        int reverse;  // index of the opposite direction
    };
    std::vector<Slot> slots;
    std::vector<std::vector<int>> incoming(n);  // slot ids, aligned with neighbors[to]
    std::map<std::pair<int, int>, int> slot_of;
    for (int i = 0; i < n; ++i)
        for (int j : inst.neighbors[i]) {
            slot_of[{i, j}] = static_cast<int>(slots.size());
            slots.push_back({i, j, -1});
            incoming[j].push_back(static_cast<int>(slots.size()) - 1);
        }
    for (auto& s : slots) {
        auto it = slot_of.find({s.to, s.from});
        require(it != slot_of.end(), "neighbor lists must be symmetric");
        s.reverse = it->second;
    }

    std::vector<std::vector<double>> msg_old(slots.size()), msg_new(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
        msg_old[s].assign(inst.hypotheses[slots[s].to].size(), 0.0);
        msg_new[s] = msg_old[s];
    }

    auto decode = [&](std::vector<int>& out) {
        out.resize(n);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_belief = std::numeric_limits<double>::infinity();
            for (std::size_t h = 0; h < inst.hypotheses[i].size(); ++h) {
                double belief = inst.hypotheses[i][h].cost;
                for (int s : incoming[i]) belief += msg_old[s][h];
                if (belief < best_belief) {
                    best_belief = belief;
                    best = static_cast<int>(h);
                }
            }
            out[i] = best;
        }
    };

    BPResult res;
    std::vector<int> prev_assign;
    double prev_energy = std::numeric_limits<double>::infinity();
    std::vector<double> total;  // data + incoming minus the reverse message, per sender hypothesis

    const double v1 = 2.0 * inst.params.c1;
    const double v2 = 2.0 * inst.params.c2;

    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        double msg_delta = 0.0;
        for (std::size_t s = 0; s < slots.size(); ++s) {
            const int i = slots[s].from, j = slots[s].to;
            const auto& hyps_i = inst.hypotheses[i];
            const auto& hyps_j = inst.hypotheses[j];
            total.assign(hyps_i.size(), 0.0);
            for (std::size_t h = 0; h < hyps_i.size(); ++h) {
                double v = hyps_i[h].cost;
                for (int in : incoming[i]) v += msg_old[in][h];
                total[h] = v - msg_old[slots[s].reverse][h];
            }
            double min_all = total[0];
            for (std::size_t h = 1; h < total.size(); ++h) min_all = std::min(min_all, total[h]);

            auto& out = msg_new[s];
            for (std::size_t b = 0; b < hyps_j.size(); ++b) {
                const int lb = hyps_j[b].label;
                if (lb == 0) {
                    out[b] = v1 + min_all;
                    continue;
                }
                double best_c1 = total[0];  // the sender's null hypothesis
                for (int la : adj_labels[lb]) {
                    const int h = hyp_of_label[i][la];
                    if (h < 0) continue;
                    if (detail::transforms_consistent(inst.params, hyps_i[h], hyps_j[b]))
                        best_c1 = std::min(best_c1, total[h]);
                }
                out[b] = std::min(v1 + best_c1, v2 + min_all);
            }
            if (opt.damping > 0.0)
                for (std::size_t b = 0; b < out.size(); ++b)
                    out[b] = opt.damping * msg_old[s][b] + (1.0 - opt.damping) * out[b];
            double lo = out[0];
            for (std::size_t b = 1; b < out.size(); ++b) lo = std::min(lo, out[b]);
            for (double& v : out) v -= lo;
            for (std::size_t b = 0; b < out.size(); ++b)
                msg_delta = std::max(msg_delta, std::abs(out[b] - msg_old[s][b]));
        }
        msg_old.swap(msg_new);

        std::vector<int> assign;
        decode(assign);
        const double energy = total_energy(inst, assign);
        res.energy_trace.push_back(energy);
        res.sweeps = sweep;
        const bool same = (assign == prev_assign);
        const double rel = std::abs(energy - prev_energy) / std::max(1.0, std::abs(prev_energy));
        res.assignment = assign;
        res.energy = energy;
        if (same && rel < opt.rel_tol && msg_delta < 1e-9) {
            res.converged = true;
            break;
        }
        prev_assign = std::move(assign);
        prev_energy = energy;
    }
    return res;
}

struct SegmentCorrespondence {
    int street_id = -1;
    int overview_id = -1;
    int votes = 0;
    double cost_sum = 0.0;  // summed data cost of the supporting edges
};

// Per-street-segment over-view assignment by majority vote over the incident edge
// labels. Vote ties prefer the lower summed data cost, then the lower over-view id.
// Segments whose incident edges all went null get no correspondence.
inline std::vector<std::optional<SegmentCorrespondence>> decode_segment_correspondences(
    const MatchingInstance& inst, const std::vector<int>& assignment, int segment_count) {
    require(assignment.size() == inst.street_edges.size(), "assignment size mismatch");
    std::vector<std::map<int, SegmentCorrespondence>> tally(segment_count);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const auto& hyp = inst.hypotheses[i][assignment[i]];
        if (hyp.label == 0) continue;
        const SegmentEdge& se = inst.street_edges[i];
        const SegmentEdge& oe = inst.overview_edges[hyp.label - 1];
        const int to_a = hyp.swapped ? oe.b : oe.a;
        const int to_b = hyp.swapped ? oe.a : oe.b;
        for (auto [street, over] : {std::pair{se.a, to_a}, std::pair{se.b, to_b}}) {
            require(street >= 0 && street < segment_count, "street id out of range");
            auto& entry = tally[street][over];
            entry.street_id = street;
            entry.overview_id = over;
            entry.votes += 1;
            entry.cost_sum += hyp.cost;
        }
    }
    std::vector<std::optional<SegmentCorrespondence>> out(segment_count);
    for (int s = 0; s < segment_count; ++s) {
        for (const auto& [over, entry] : tally[s]) {
            if (!out[s] || entry.votes > out[s]->votes ||
                (entry.votes == out[s]->votes && entry.cost_sum < out[s]->cost_sum)) {
                out[s] = entry;  // map order makes the final tie favor the lower id
            }
        }
    }
    return out;
}

}  // namespace crossreg
