#pragma once

#include <fstream>
#include <vector>

#include "crossreg/kdtree.hpp"
#include "crossreg/types.hpp"

namespace crossreg {

struct ChamferOptions {
    double cutoff = 10.0;  // pairs further apart than this are discarded
    bool planar = false;   // measure in the xy plane only
};

struct ChamferStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    std::size_t pair_count = 0;
};

// Pairs (i, j) where a[i] and b[j] are each other's nearest neighbor and within the
// cutoff. Nearest-neighbor ties resolve to the lowest index on both sides, so the
// pairing is deterministic.
inline std::vector<std::pair<int, int>> mutual_nearest_pairs(const std::vector<Vec3>& a,
                                                             const std::vector<Vec3>& b,
                                                             const ChamferOptions& opt = {}) {
    require(!a.empty() && !b.empty(), "mutual nearest pairing needs non-empty clouds");
    std::vector<std::pair<int, int>> pairs;
    auto run = [&](const auto& pa, const auto& pb) {
        using Tree = std::remove_cvref_t<decltype(*pa.data())>;
        KdTree<Tree::RowsAtCompileTime> ta(pa), tb(pb);
        std::vector<int> nn_ab(pa.size()), nn_ba(pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) nn_ab[i] = tb.knn(pa[i], 1)[0].index;
        for (std::size_t j = 0; j < pb.size(); ++j) nn_ba[j] = ta.knn(pb[j], 1)[0].index;
        for (std::size_t i = 0; i < pa.size(); ++i) {
            const int j = nn_ab[i];
            if (nn_ba[j] != static_cast<int>(i)) continue;
            if ((pa[i] - pb[j]).norm() > opt.cutoff) continue;
            pairs.push_back({static_cast<int>(i), j});
        }
    };
    if (opt.planar) {
        std::vector<Vec2> pa(a.size()), pb(b.size());
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = a[i].head<2>();
        for (std::size_t j = 0; j < b.size(); ++j) pb[j] = b[j].head<2>();
        run(pa, pb);
    } else {
        run(a, b);
    }
    return pairs;
}

// Mean and population spread of the paired distances. No pairs within the cutoff
// leaves the zero stats with pair_count = 0; callers decide how to report that.
inline ChamferStats chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                                     const ChamferOptions& opt = {}) {
    const auto pairs = mutual_nearest_pairs(a, b, opt);
    ChamferStats st;
    st.pair_count = pairs.size();
    if (pairs.empty()) return st;
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& [i, j] : pairs) {
        double d;
        if (opt.planar)
            d = (a[i].head<2>() - b[j].head<2>()).norm();
        else
            d = (a[i] - b[j]).norm();
        sum += d;
        sum_sq += d * d;
    }
    const double n = static_cast<double>(pairs.size());
    st.mean = sum / n;
    st.stddev = std::sqrt(std::max(0.0, sum_sq / n - st.mean * st.mean));
    return st;
}

inline void write_pairs_csv(const std::vector<std::pair<int, int>>& pairs,
                            const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                            const ChamferOptions& opt, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    out << "index_a,index_b,distance\n";
    for (const auto& [i, j] : pairs) {
        const double d =
            opt.planar ? (a[i].head<2>() - b[j].head<2>()).norm() : (a[i] - b[j]).norm();
        out << i << "," << j << "," << d << "\n";
    }
}

}  // namespace crossreg
