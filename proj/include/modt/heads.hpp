// Network heads: per-point tracking offsets driven by the refined affinity,
// and 3D box regression from tokens (center residual, log-scale size,
// sin/cos yaw, confidence logit).
#pragma once

#include <numeric>
#include <vector>

#include "modt/affinity.hpp"
#include "modt/encoder.hpp"
#include "modt/tensor.hpp"

namespace modt {

struct Box3D {
    Vec3 center;
    Vec3 size;   // (w, l, h); exp-decoded, strictly positive
    double yaw = 0.0;  // [-pi, pi)
};

struct Detection {
    Box3D box;
    std::vector<double> embedding;  // anchor token feature, 64-d
    double confidence = 0.0;
    int token_index = -1;
};

// Spatio-temporal displacement field over the raw points of frame t,
// pointing from t back to t-1. Background points carry zero.
struct OffsetField {
    std::vector<Vec3> points;         // positions the field is defined on
    std::vector<Vec3> displacements;  // N x 3
    int frame = -1;
    bool skip = false;

    // Offset of the point nearest to the query (ties by lower index).
    Vec3 offset_near(const Vec3& query) const {
        if (points.empty()) return {};
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < points.size(); ++i) {
            Vec3 d = points[i] - query;
            double d2 = d.dot(d);
            if (d2 < best_d2) { best_d2 = d2; best = static_cast<int>(i); }
        }
        return displacements[best];
    }
};

struct HeadConfig {
    double conf_threshold = 0.5;
    double nms_radius = 1.0;         // survivors closer than this merge, best confidence wins
    double background_radius = 2.0;  // points beyond this from every token get zero offset
    double offset_sharpness = 10.0;  // softmax temperature on affinity rows for offsets
    int offset_hidden = 16;

    bool operator==(const HeadConfig&) const = default;
};

struct HeadParams {
    Tensor off_w1, off_b1, off_w2, off_b2;  // offset residual: 64 -> hidden -> 3
    Tensor ctr_w, ctr_b;                    // center residual: 64 -> 3
    Tensor size_w, size_b;                  // log-size: 64 -> 3
    Tensor yaw_w, yaw_b;                    // (sin, cos): 64 -> 2
    Tensor conf_w, conf_b;                  // confidence logit: 64 -> 1

    template <class Engine>
    static HeadParams init(const HeadConfig& cfg, Engine& rng) {
        HeadParams p;
        auto u = [&rng](int r, int c) {
            double s = 1.0 / std::sqrt(static_cast<double>(r));
            return Tensor::uniform(r, c, rng, -s, s).set_requires_grad(true);
        };
        auto b = [](int c) { return Tensor::zeros(1, c).set_requires_grad(true); };
        p.off_w1 = u(kFeatureDim, cfg.offset_hidden);
        p.off_b1 = b(cfg.offset_hidden);
        // Zero-initialized output layer: the residual branch starts inert, so
        // fresh models emit pure affinity-driven offsets.
        p.off_w2 = Tensor::zeros(cfg.offset_hidden, 3).set_requires_grad(true);
        p.off_b2 = b(3);
        p.ctr_w = u(kFeatureDim, 3);
        p.ctr_b = b(3);
        p.size_w = u(kFeatureDim, 3);
        p.size_b = b(3);
        p.yaw_w = u(kFeatureDim, 2);
        p.yaw_b = b(2);
        p.conf_w = u(kFeatureDim, 1);
        p.conf_b = b(1);
        return p;
    }

    template <class Fn>
    void for_each(Fn fn) {
        fn("heads.off_w1", off_w1); fn("heads.off_b1", off_b1);
        fn("heads.off_w2", off_w2); fn("heads.off_b2", off_b2);
        fn("heads.ctr_w", ctr_w); fn("heads.ctr_b", ctr_b);
        fn("heads.size_w", size_w); fn("heads.size_b", size_b);
        fn("heads.yaw_w", yaw_w); fn("heads.yaw_b", yaw_b);
        fn("heads.conf_w", conf_w); fn("heads.conf_b", conf_b);
    }
};

// ---------------------------------------------------------------------------
// Offset head

// Differentiable per-token offsets for the valid tokens of frame t:
// sharpened softmax over the refined affinity row gives an expected t-1
// position, minus the token's own position, plus a learned residual from the
// token feature.
inline Tensor token_offsets(const TokenSet& tokens_t, const TokenSet& tokens_tm1,
                            const AffinityMatrix& a_hat, const HeadParams& params,
                            const HeadConfig& cfg) {
    int vr = a_hat.valid_rows, vc = a_hat.valid_cols;
    if (tokens_t.valid_count() != vr || tokens_tm1.valid_count() != vc) {
        throw std::invalid_argument("token_offsets: affinity does not relate these token sets");
    }
    std::vector<int> row_idx(vr);
    std::iota(row_idx.begin(), row_idx.end(), 0);

    Tensor block = slice_cols(a_hat.values, 0, vc);
    if (a_hat.dim() > vr) block = select_rows(block, row_idx);
    Tensor soft = softmax_rows(scale(block, cfg.offset_sharpness));

    Tensor pos_tm1 = tokens_tm1.positions;
    if (pos_tm1.rows() > vc) {
        std::vector<int> col_rows(vc);
        std::iota(col_rows.begin(), col_rows.end(), 0);
        pos_tm1 = select_rows(pos_tm1, col_rows);
    }
    Tensor expected = matmul(soft, pos_tm1);

    Tensor pos_t = tokens_t.positions;
    if (pos_t.rows() > vr) pos_t = select_rows(pos_t, row_idx);
    Tensor feats = tokens_t.features;
    if (feats.rows() > vr) feats = select_rows(feats, row_idx);

    Tensor hidden = tanh_t(add(matmul(feats, params.off_w1), broadcast_row(params.off_b1, vr)));
    Tensor residual = add(matmul(hidden, params.off_w2), broadcast_row(params.off_b2, vr));
    return add(sub(expected, pos_t), residual);
}

// Scatters token offsets to the raw points of frame t: each point takes the
// offset of its nearest token; points beyond background_radius of every
// token stay zero. Empty token set -> zero field flagged skip.
inline OffsetField predict_offsets(const TokenSet& tokens_t, const TokenSet& tokens_tm1,
                                   const AffinityMatrix& a_hat, const HeadParams& params,
                                   const HeadConfig& cfg, const PointCloud& cloud_t) {
    OffsetField field;
    field.frame = cloud_t.frame;
    field.points = cloud_t.points;
    field.displacements.assign(cloud_t.points.size(), Vec3{});
    if (tokens_t.skip || tokens_t.valid_count() == 0 ||
        tokens_tm1.skip || tokens_tm1.valid_count() == 0) {
        field.skip = true;
        return field;
    }
    Tensor offs = token_offsets(tokens_t, tokens_tm1, a_hat, params, cfg);
    double r2 = cfg.background_radius * cfg.background_radius;
    for (std::size_t i = 0; i < cloud_t.points.size(); ++i) {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int tkn = 0; tkn < tokens_t.valid_count(); ++tkn) {
            Vec3 d = cloud_t.points[i] - tokens_t.position(tkn);
            double d2 = d.dot(d);
            if (d2 < best_d2) { best_d2 = d2; best = tkn; }
        }
        if (best >= 0 && best_d2 <= r2) {
            field.displacements[i] = Vec3{offs.at(best, 0), offs.at(best, 1), offs.at(best, 2)};
        }
    }
    return field;
}

// ---------------------------------------------------------------------------
// Detection head

// Differentiable per-token regressions (valid tokens only).
struct BoxRegression {
    Tensor centers;  // V x 3, token position + residual
    Tensor sizes;    // V x 3, exp-decoded meters
    Tensor sincos;   // V x 2
    Tensor conf;     // V x 1, sigmoid
};

inline BoxRegression box_head_forward(const TokenSet& tokens, const HeadParams& params) {
    int v = tokens.valid_count();
    if (v == 0) throw std::invalid_argument("box_head_forward: empty token set");
    Tensor feats = tokens.features;
    Tensor pos = tokens.positions;
    if (feats.rows() > v) {
        std::vector<int> idx(v);
        std::iota(idx.begin(), idx.end(), 0);
        feats = select_rows(feats, idx);
        pos = select_rows(pos, idx);
    }
    BoxRegression reg;
    reg.centers = add(pos, add(matmul(feats, params.ctr_w), broadcast_row(params.ctr_b, v)));
    reg.sizes = exp_clamped(add(matmul(feats, params.size_w), broadcast_row(params.size_b, v)));
    reg.sincos = add(matmul(feats, params.yaw_w), broadcast_row(params.yaw_b, v));
    reg.conf = sigmoid(add(matmul(feats, params.conf_w), broadcast_row(params.conf_b, v)));
    return reg;
}

inline double decode_yaw(double s, double c) {
    double yaw = std::atan2(s, c);
    if (yaw >= M_PI) yaw = -M_PI;
    return yaw;
}

// Thresholds and merges the per-token regressions into a discrete detection
// set: confidence below threshold drops a token; among survivors, centers
// closer than nms_radius collapse onto the most confident one. Result is
// ordered by descending confidence (ties by token index).
inline std::vector<Detection> predict_boxes_from(const BoxRegression& reg, const TokenSet& tokens,
                                                 const HeadConfig& cfg) {
    int v = tokens.valid_count();
    std::vector<int> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double ca = reg.conf.at(a, 0), cb = reg.conf.at(b, 0);
        if (ca != cb) return ca > cb;
        return a < b;
    });
    std::vector<Detection> kept;
    for (int ti : order) {
        double conf = reg.conf.at(ti, 0);
        if (conf < cfg.conf_threshold) continue;
        Vec3 center{reg.centers.at(ti, 0), reg.centers.at(ti, 1), reg.centers.at(ti, 2)};
        bool merged = false;
        for (const Detection& d : kept) {
            if (distance(d.box.center, center) < cfg.nms_radius) { merged = true; break; }
        }
        if (merged) continue;
        Detection det;
        det.box.center = center;
        det.box.size = {reg.sizes.at(ti, 0), reg.sizes.at(ti, 1), reg.sizes.at(ti, 2)};
        det.box.yaw = decode_yaw(reg.sincos.at(ti, 0), reg.sincos.at(ti, 1));
        det.confidence = conf;
        det.token_index = ti;
        det.embedding.resize(kFeatureDim);
        for (int j = 0; j < kFeatureDim; ++j) det.embedding[j] = tokens.features.at(ti, j);
        kept.push_back(std::move(det));
    }
    return kept;
}

inline std::vector<Detection> predict_boxes(const TokenSet& tokens, const HeadParams& params,
                                            const HeadConfig& cfg) {
    return predict_boxes_from(box_head_forward(tokens, params), tokens, cfg);
}

// ---------------------------------------------------------------------------
// Detection dump: text lines `frame conf cx cy cz w l h yaw`.

inline void save_detections(const std::string& path,
                            const std::vector<std::pair<int, Detection>>& dets) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_detections: cannot open '" + path + "'");
    for (const auto& [frame, d] : dets) {
        out << frame << ' ' << format_double(d.confidence) << ' '
            << format_double(d.box.center.x) << ' ' << format_double(d.box.center.y) << ' '
            << format_double(d.box.center.z) << ' '
            << format_double(d.box.size.x) << ' ' << format_double(d.box.size.y) << ' '
            << format_double(d.box.size.z) << ' ' << format_double(d.box.yaw) << '\n';
    }
}

}  // namespace modt
