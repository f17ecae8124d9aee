#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "crossreg/types.hpp"

namespace crossreg {

struct Neighbor {
    int index = -1;
    double distance = 0.0;
};

// Exact nearest-neighbor index over a fixed point set. Results are sorted by
// (distance, index), so equidistant ties always resolve to the lowest index and
// repeated queries are reproducible.
template <int Dim>
class KdTree {
    static_assert(Dim == 2 || Dim == 3);
    using Point = Eigen::Matrix<double, Dim, 1>;

public:
    KdTree() = default;

    explicit KdTree(std::vector<Point> pts) : pts_(std::move(pts)) {
        order_.resize(pts_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        if (!pts_.empty()) build(0, static_cast<int>(pts_.size()), 0);
    }

    std::size_t size() const { return pts_.size(); }
    const Point& point(int i) const { return pts_[i]; }

    std::vector<Neighbor> knn(const Point& q, int k) const {
        require(k >= 1, "k must be positive");
        require(static_cast<std::size_t>(k) <= pts_.size(), "k exceeds point count");
        KnnState st;
        st.k = k;
        search_knn(q, 0, static_cast<int>(pts_.size()), 0, st);
        std::sort(st.heap.begin(), st.heap.end(), by_dist_index);
        std::vector<Neighbor> out(st.heap.size());
        for (std::size_t i = 0; i < st.heap.size(); ++i)
            out[i] = {st.heap[i].second, std::sqrt(st.heap[i].first)};
        return out;
    }

    std::vector<Neighbor> radius(const Point& q, double r) const {
        require(r >= 0.0, "radius must be non-negative");
        std::vector<std::pair<double, int>> hits;
        search_radius(q, r * r, 0, static_cast<int>(pts_.size()), 0, hits);
        std::sort(hits.begin(), hits.end(), by_dist_index);
        std::vector<Neighbor> out(hits.size());
        for (std::size_t i = 0; i < hits.size(); ++i)
            out[i] = {hits[i].second, std::sqrt(hits[i].first)};
        return out;
    }

private:
    using Entry = std::pair<double, int>;  // squared distance, original index

    static bool by_dist_index(const Entry& a, const Entry& b) {
        return a.first != b.first ? a.first < b.first : a.second < b.second;
    }

    struct KnnState {
        int k = 0;
        std::vector<Entry> heap;  // max-heap under by_dist_index
        double worst() const { return heap.front().first; }
        bool full() const { return static_cast<int>(heap.size()) == k; }
        void push(Entry e) {
            if (!full()) {
                heap.push_back(e);
                std::push_heap(heap.begin(), heap.end(), by_dist_index);
            } else if (by_dist_index(e, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), by_dist_index);
                heap.back() = e;
                std::push_heap(heap.begin(), heap.end(), by_dist_index);
            }
        }
    };

    void build(int lo, int hi, int depth) {
        if (hi - lo <= 1) return;
        const int axis = depth % Dim;
        const int mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) {
                             const double pa = pts_[a][axis], pb = pts_[b][axis];
                             return pa != pb ? pa < pb : a < b;
                         });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void search_knn(const Point& q, int lo, int hi, int depth, KnnState& st) const {
        if (lo >= hi) return;
        const int axis = depth % Dim;
        const int mid = (lo + hi) / 2;
        const int idx = order_[mid];
        st.push({(pts_[idx] - q).squaredNorm(), idx});
        const double delta = q[axis] - pts_[idx][axis];
        const int near_lo = delta < 0 ? lo : mid + 1;
        const int near_hi = delta < 0 ? mid : hi;
        const int far_lo = delta < 0 ? mid + 1 : lo;
        const int far_hi = delta < 0 ? hi : mid;
        search_knn(q, near_lo, near_hi, depth + 1, st);
        if (!st.full() || delta * delta <= st.worst())
            search_knn(q, far_lo, far_hi, depth + 1, st);
    }

    void search_radius(const Point& q, double r2, int lo, int hi, int depth,
                       std::vector<Entry>& hits) const {
        if (lo >= hi) return;
        const int axis = depth % Dim;
        const int mid = (lo + hi) / 2;
        const int idx = order_[mid];
        const double d2 = (pts_[idx] - q).squaredNorm();
        if (d2 <= r2) hits.push_back({d2, idx});
        const double delta = q[axis] - pts_[idx][axis];
        const int near_lo = delta < 0 ? lo : mid + 1;
        const int near_hi = delta < 0 ? mid : hi;
        const int far_lo = delta < 0 ? mid + 1 : lo;
        const int far_hi = delta < 0 ? hi : mid;
        search_radius(q, r2, near_lo, near_hi, depth + 1, hits);
        if (delta * delta <= r2) search_radius(q, r2, far_lo, far_hi, depth + 1, hits);
    }

    std::vector<Point> pts_;
    std::vector<int> order_;
};

using KdTree2 = KdTree<2>;
using KdTree3 = KdTree<3>;

}  // namespace crossreg
