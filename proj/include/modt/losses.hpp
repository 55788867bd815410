// Ground-truth affinity construction and the three training losses:
// forward association loss on refined affinities, l1 center offset loss,
// l1 dimension size loss, combined as L = L_a + lambda_c L_c + lambda_b L_b.
#pragma once

#include <vector>

#include "modt/affinity.hpp"
#include "modt/heads.hpp"
#include "modt/scans.hpp"

namespace modt {

struct LossWeights {
    double lambda_center = 1.0;
    double lambda_size = 1.0;

    bool operator==(const LossWeights&) const = default;
};

// Scalar loss plus a flag for the no-supervision case (e.g. sum(G) = 0),
// where the term contributes 0.
struct LossTerm {
    Tensor value;
    bool supervised = false;
};

inline LossTerm zero_loss() { return {Tensor::scalar(0.0), false}; }

// Binary correspondence targets between two token sets. Sized like the
// (padded) affinity matrix; padded rows/columns stay zero. Each row and each
// column carries at most one 1 (a partial permutation).
struct GtAffinity {
    Tensor values;
    int valid_rows = 0;
    int valid_cols = 0;
    double total = 0.0;  // sum of all entries
};

// Entry (d, e) = 1 iff token d (frame t) and token e (frame t-1) are gated to
// ground-truth objects sharing a track_id, and e is d's nearest-position
// counterpart within that object. Gating: the token lies inside the
// jitter-inflated box of its nearest object. Tokens matching no object
// produce all-zero rows.
inline GtAffinity build_gt_affinity(const TokenSet& tokens_t, const TokenSet& tokens_tm1,
                                    const std::vector<GroundTruthObject>& gt_t,
                                    const std::vector<GroundTruthObject>& gt_tm1,
                                    double margin = 0.0) {
    auto assign = [margin](const TokenSet& tokens, const std::vector<GroundTruthObject>& gt) {
        std::vector<int> track_of(tokens.valid_count(), -1);
        for (int d = 0; d < tokens.valid_count(); ++d) {
            Vec3 pos = tokens.position(d);
            int best = -1;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < gt.size(); ++k) {
                double dist = distance(pos, gt[k].center);
                if (dist < best_dist) { best_dist = dist; best = static_cast<int>(k); }
            }
            if (best >= 0 && point_in_box(pos, gt[best], margin)) {
                track_of[d] = gt[best].track_id;
            }
        }
        return track_of;
    };
    std::vector<int> track_t = assign(tokens_t, gt_t);
    std::vector<int> track_tm1 = assign(tokens_tm1, gt_tm1);

    int m = std::max(tokens_t.count(), tokens_tm1.count());
    GtAffinity g;
    g.valid_rows = tokens_t.valid_count();
    g.valid_cols = tokens_tm1.valid_count();
    std::vector<double> values(static_cast<std::size_t>(m) * m, 0.0);

    struct Pair { double dist; int d, e; };
    std::vector<Pair> candidates;
    for (int d = 0; d < g.valid_rows; ++d) {
        if (track_t[d] < 0) continue;
        for (int e = 0; e < g.valid_cols; ++e) {
            if (track_tm1[e] != track_t[d]) continue;
            candidates.push_back({distance(tokens_t.position(d), tokens_tm1.position(e)), d, e});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.d != b.d) return a.d < b.d;
        return a.e < b.e;
    });
    std::vector<char> used_d(g.valid_rows, 0), used_e(g.valid_cols, 0);
    for (const Pair& p : candidates) {
        if (used_d[p.d] || used_e[p.e]) continue;
        used_d[p.d] = used_e[p.e] = 1;
        values[static_cast<std::size_t>(p.d) * m + p.e] = 1.0;
        g.total += 1.0;
    }
    g.values = Tensor::from_data(m, m, std::move(values));
    return g;
}

namespace detail {

// Top-left valid block of a possibly padded matrix.
inline Tensor valid_block(const Tensor& full, int vr, int vc) {
    Tensor block = full;
    if (full.cols() > vc) block = slice_cols(block, 0, vc);
    if (full.rows() > vr) {
        std::vector<int> idx(vr);
        std::iota(idx.begin(), idx.end(), 0);
        block = select_rows(block, idx);
    }
    return block;
}

}  // namespace detail

// Forward association loss: sum(G .* (-log P)) / sum(G), where P is the
// row-softmax of the refined affinity over the valid columns. Rows are
// interpreted as correspondence distributions, which keeps -log well-defined
// for unbounded refined values.
inline LossTerm association_loss(const AffinityMatrix& a_hat, const GtAffinity& g) {
    if (a_hat.dim() != g.values.rows()) {
        throw std::invalid_argument("association_loss: affinity and gt dimensions differ");
    }
    if (g.total <= 0.0) return zero_loss();
    Tensor p = softmax_rows(detail::valid_block(a_hat.values, g.valid_rows, g.valid_cols));
    Tensor g_block = detail::valid_block(g.values, g.valid_rows, g.valid_cols);
    Tensor nll = scale(mul(g_block, log_clamped(p)), -1.0);
    return {scale(sum(nll), 1.0 / g.total), true};
}

// Mean over rows of the l1 norm of (pred - target); shared by the center,
// size, and optional yaw terms.
inline LossTerm l1_mean_loss(const Tensor& pred, const Tensor& target) {
    if (pred.rows() == 0) return zero_loss();
    detail::check_same_shape(pred, target, "l1_mean_loss");
    return {scale(sum(abs_t(sub(pred, target))), 1.0 / pred.rows()), true};
}

inline LossTerm center_loss(const Tensor& pred_centers, const Tensor& gt_centers) {
    return l1_mean_loss(pred_centers, gt_centers);
}

inline LossTerm size_loss(const Tensor& pred_sizes, const Tensor& gt_sizes) {
    return l1_mean_loss(pred_sizes, gt_sizes);
}

inline Tensor total_loss(const LossTerm& l_a, const LossTerm& l_c, const LossTerm& l_b,
                         const LossWeights& w) {
    return add(l_a.value, add(scale(l_c.value, w.lambda_center), scale(l_b.value, w.lambda_size)));
}

// Greedy confidence-ordered matching of detections to ground-truth objects:
// each detection (already sorted by descending confidence) takes the nearest
// unused object within max_dist. Returns (detection index, gt index) pairs.
inline std::vector<std::pair<int, int>> match_predictions(const std::vector<Detection>& dets,
                                                          const std::vector<GroundTruthObject>& gt,
                                                          double max_dist = 2.0) {
    std::vector<std::pair<int, int>> pairs;
    std::vector<char> used(gt.size(), 0);
    for (std::size_t di = 0; di < dets.size(); ++di) {
        int best = -1;
        double best_dist = max_dist;
        for (std::size_t k = 0; k < gt.size(); ++k) {
            if (used[k]) continue;
            double dist = distance(dets[di].box.center, gt[k].center);
            if (dist < best_dist) { best_dist = dist; best = static_cast<int>(k); }
        }
        if (best >= 0) {
            used[best] = 1;
            pairs.emplace_back(static_cast<int>(di), best);
        }
    }
    return pairs;
}

}  // namespace modt
