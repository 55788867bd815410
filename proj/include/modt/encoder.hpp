// Scan -> feature tokens: farthest-point sampling picks M anchors, a shared
// pointwise 2-layer map + max-pool aggregates each anchor's k-nearest raw
// points (relative coordinates), and one multi-head self-attention block over
// tokens mixes global context. Output contract per scan: M x 64 features plus
// M x 3 positions.
#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "modt/scans.hpp"
#include "modt/tensor.hpp"

namespace modt {

inline constexpr int kFeatureDim = 64;

struct TokenSet {
    Tensor features;                // M x 64
    Tensor positions;               // M x 3, constant (sampled point coordinates)
    std::vector<int> source_index;  // token -> index into the original cloud
    int frame = -1;
    bool skip = false;              // set when the source cloud was empty

    // Row count including zero padding; valid_count() excludes padded rows.
    int count() const { return features.empty() ? 0 : features.rows(); }
    int valid_count() const { return static_cast<int>(source_index.size()); }
    Vec3 position(int i) const {
        return Vec3{positions.at(i, 0), positions.at(i, 1), positions.at(i, 2)};
    }
};

struct EncoderConfig {
    int tokens = 64;     // M
    int neighbors = 8;   // k
    int hidden = 16;     // width of the pointwise map's hidden layer
    int heads = 4;

    bool operator==(const EncoderConfig&) const = default;
};

struct EncoderParams {
    Tensor w1, b1;            // pointwise map: 3 -> hidden
    Tensor w2, b2;            // hidden -> 64
    Tensor wq, wk, wv, wo;    // token self-attention, 64 -> 64
    Tensor ln_gamma, ln_beta; // layer-norm scale/shift, 1 x 64
    Tensor w_out;             // final projection, 64 -> 64

    template <class Engine>
    static EncoderParams init(const EncoderConfig& cfg, Engine& rng) {
        if (cfg.hidden < 1 || cfg.heads < 1 || kFeatureDim % cfg.heads != 0) {
            throw std::invalid_argument("EncoderParams: bad hidden/head config");
        }
        EncoderParams p;
        auto u = [&rng](int r, int c) {
            double s = 1.0 / std::sqrt(static_cast<double>(r));
            return Tensor::uniform(r, c, rng, -s, s).set_requires_grad(true);
        };
        p.w1 = u(3, cfg.hidden);
        p.b1 = Tensor::zeros(1, cfg.hidden).set_requires_grad(true);
        p.w2 = u(cfg.hidden, kFeatureDim);
        p.b2 = Tensor::zeros(1, kFeatureDim).set_requires_grad(true);
        p.wq = u(kFeatureDim, kFeatureDim);
        p.wk = u(kFeatureDim, kFeatureDim);
        p.wv = u(kFeatureDim, kFeatureDim);
        p.wo = u(kFeatureDim, kFeatureDim);
        p.ln_gamma = Tensor::filled(1, kFeatureDim, 1.0).set_requires_grad(true);
        p.ln_beta = Tensor::zeros(1, kFeatureDim).set_requires_grad(true);
        p.w_out = u(kFeatureDim, kFeatureDim);
        return p;
    }

    template <class Fn>
    void for_each(Fn fn) {
        fn("encoder.w1", w1); fn("encoder.b1", b1);
        fn("encoder.w2", w2); fn("encoder.b2", b2);
        fn("encoder.wq", wq); fn("encoder.wk", wk);
        fn("encoder.wv", wv); fn("encoder.wo", wo);
        fn("encoder.ln_gamma", ln_gamma); fn("encoder.ln_beta", ln_beta);
        fn("encoder.w_out", w_out);
    }
};

// Deterministic farthest-point sampling: seeded at index 0, each pick
// maximizes min-distance to the chosen set, ties go to the smallest index.
// With pad_allowed, m > N repeats the last chosen index.
inline std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, bool pad_allowed = false) {
    int n = cloud.size();
    if (m < 1) throw std::invalid_argument("farthest_point_sample: m must be >= 1");
    if (n == 0) throw std::invalid_argument("farthest_point_sample: empty cloud");
    if (m > n && !pad_allowed) {
        throw std::invalid_argument("farthest_point_sample: m=" + std::to_string(m) +
                                    " exceeds cloud size " + std::to_string(n));
    }
    std::vector<int> chosen;
    chosen.reserve(m);
    chosen.push_back(0);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    taken[0] = 1;
    while (static_cast<int>(chosen.size()) < std::min(m, n)) {
        const Vec3& last = cloud.points[chosen.back()];
        int best = -1;
        double best_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
            Vec3 d = cloud.points[i] - last;
            min_d2[i] = std::min(min_d2[i], d.dot(d));
            if (!taken[i] && min_d2[i] > best_d2) { best_d2 = min_d2[i]; best = i; }
        }
        taken[best] = 1;
        chosen.push_back(best);
    }
    while (static_cast<int>(chosen.size()) < m) chosen.push_back(chosen.back());
    return chosen;
}

namespace detail {

// Indices of the k nearest points to `anchor` (ascending distance, ties by index).
inline std::vector<int> k_nearest(const PointCloud& cloud, const Vec3& anchor, int k) {
    int n = cloud.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        Vec3 da = cloud.points[a] - anchor;
        Vec3 db = cloud.points[b] - anchor;
        double d2a = da.dot(da), d2b = db.dot(db);
        if (d2a != d2b) return d2a < d2b;
        return a < b;
    });
    order.resize(std::min(k, n));
    return order;
}

// Per-row layer normalization: zero mean / unit variance per token, then
// learned scale and shift.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    int cols = x.cols();
    Tensor mu = scale(row_sum(x), 1.0 / cols);
    Tensor centered = sub(x, broadcast_col(mu, cols));
    Tensor var = scale(row_sum(mul(centered, centered)), 1.0 / cols);
    Tensor denom = sqrt_clamped(add_const(var, 1e-12), 1e-18);
    Tensor normalized = div(centered, broadcast_col(denom, cols));
    return add(mul(normalized, broadcast_row(gamma, x.rows())),
               broadcast_row(beta, x.rows()));
}

inline Tensor multi_head_self_attention(const Tensor& x, const EncoderParams& p, int heads) {
    int dim = x.cols();
    int head_dim = dim / heads;
    Tensor q = matmul(x, p.wq);
    Tensor k = matmul(x, p.wk);
    Tensor v = matmul(x, p.wv);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
        Tensor kh = slice_cols(k, h * head_dim, (h + 1) * head_dim);
        Tensor vh = slice_cols(v, h * head_dim, (h + 1) * head_dim);
        Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        head_outputs.push_back(matmul(attn, vh));
    }
    return matmul(hconcat(head_outputs), p.wo);
}

}  // namespace detail

// Encodes a scan into m tokens. Features are built from coordinates relative
// to each token anchor, so a translated cloud yields translated positions and
// unchanged features. Empty cloud -> empty TokenSet flagged skip.
inline TokenSet encode(const PointCloud& cloud, const EncoderParams& params,
                       const EncoderConfig& cfg, int m) {
    TokenSet tokens;
    tokens.frame = cloud.frame;
    if (cloud.size() == 0) {
        tokens.skip = true;
        return tokens;
    }
    if (m < 1 || m > cloud.size()) {
        throw std::invalid_argument("encode: need 1 <= m <= N");
    }
    tokens.source_index = farthest_point_sample(cloud, m);

    std::vector<double> pos_data;
    pos_data.reserve(static_cast<std::size_t>(m) * 3);
    std::vector<Tensor> token_rows;
    token_rows.reserve(m);
    for (int ti = 0; ti < m; ++ti) {
        const Vec3 anchor = cloud.points[tokens.source_index[ti]];
        pos_data.insert(pos_data.end(), {anchor.x, anchor.y, anchor.z});

        std::vector<int> nbrs = detail::k_nearest(cloud, anchor, cfg.neighbors);
        std::vector<double> rel;
        rel.reserve(nbrs.size() * 3);
        for (int ni : nbrs) {
            Vec3 d = cloud.points[ni] - anchor;
            rel.insert(rel.end(), {d.x, d.y, d.z});
        }
        Tensor rel_t = Tensor::from_data(static_cast<int>(nbrs.size()), 3, std::move(rel));
        Tensor hidden = tanh_t(add(matmul(rel_t, params.w1),
                                   broadcast_row(params.b1, rel_t.rows())));
        Tensor mapped = add(matmul(hidden, params.w2), broadcast_row(params.b2, rel_t.rows()));
        token_rows.push_back(col_max(mapped));
    }
    Tensor h = vconcat(token_rows);
    Tensor x = add(h, detail::multi_head_self_attention(h, params, cfg.heads));
    Tensor y = detail::layer_norm_rows(x, params.ln_gamma, params.ln_beta);
    tokens.features = matmul(y, params.w_out);
    tokens.positions = Tensor::from_data(m, 3, std::move(pos_data));
    return tokens;
}

}  // namespace modt
