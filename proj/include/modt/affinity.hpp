// Affinity matrices between consecutive scans and their attention-guided
// refinement: cosine similarity of feature tokens, then self-attention within
// each matrix, then cross-attention across the pair. Queries for the
// cross step come from the temporally adjacent matrix.
#pragma once

#include <vector>

#include "modt/encoder.hpp"
#include "modt/tensor.hpp"

namespace modt {

struct AffinityMatrix {
    Tensor values;        // M x M
    int later_frame = -1;   // row tokens' frame (t)
    int earlier_frame = -1; // column tokens' frame (t-1)
    int valid_rows = 0;     // unpadded token counts, the pad mask
    int valid_cols = 0;

    int dim() const { return values.empty() ? 0 : values.rows(); }
};

// Q/K/V are produced from an affinity matrix by a per-entry channel
// expansion (1x1 convolution to 64 channels) collapsed back by a linear
// projection, then a square transformation over the row dimension. The
// per-entry stage is what keeps the stack permutation-equivariant.
struct ProjectionStack {
    Tensor conv_w;  // 1 x 64
    Tensor conv_b;  // 1 x 64
    Tensor proj_w;  // 64 x 1
    Tensor proj_b;  // 1 x 1
    Tensor w;       // M x M

    Tensor apply(const Tensor& a) const {
        Tensor s = matmul(conv_w, proj_w);                       // effective per-entry gain
        Tensor t = add(matmul(conv_b, proj_w), proj_b);          // effective per-entry offset
        return matmul(add_scalar_t(scale_t(a, s), t), w);
    }

    template <class Engine>
    static ProjectionStack init(int m, Engine& rng, double w_scale) {
        ProjectionStack p;
        p.conv_w = Tensor::uniform(1, kFeatureDim, rng, -0.5, 0.5).set_requires_grad(true);
        p.conv_b = Tensor::zeros(1, kFeatureDim).set_requires_grad(true);
        p.proj_w = Tensor::uniform(kFeatureDim, 1, rng, -0.5, 0.5).set_requires_grad(true);
        p.proj_b = Tensor::zeros(1, 1).set_requires_grad(true);
        p.w = Tensor::uniform(m, m, rng, -w_scale, w_scale).set_requires_grad(true);
        return p;
    }

    template <class Fn>
    void for_each(const std::string& prefix, Fn fn) {
        fn(prefix + ".conv_w", conv_w);
        fn(prefix + ".conv_b", conv_b);
        fn(prefix + ".proj_w", proj_w);
        fn(prefix + ".proj_b", proj_b);
        fn(prefix + ".w", w);
    }
};

struct AttentionWeights {
    ProjectionStack q, k, v;

    template <class Engine>
    static AttentionWeights init(int m, Engine& rng, double w_scale = 0.25) {
        AttentionWeights w;
        w.q = ProjectionStack::init(m, rng, w_scale / std::sqrt(static_cast<double>(m)));
        w.k = ProjectionStack::init(m, rng, w_scale / std::sqrt(static_cast<double>(m)));
        w.v = ProjectionStack::init(m, rng, w_scale / std::sqrt(static_cast<double>(m)));
        return w;
    }

    int dim() const { return q.w.rows(); }

    template <class Fn>
    void for_each(const std::string& prefix, Fn fn) {
        q.for_each(prefix + ".q", fn);
        k.for_each(prefix + ".k", fn);
        v.for_each(prefix + ".v", fn);
    }
};

// Extends a token set with zero tokens up to m rows (positions zero, no
// source indices). Zero features map to affinity 0 via the norm guard.
inline TokenSet pad_tokens(const TokenSet& tokens, int m) {
    if (tokens.count() > m) throw std::invalid_argument("pad_tokens: target smaller than input");
    if (tokens.count() == m) return tokens;
    TokenSet out = tokens;
    int extra = m - tokens.count();
    out.features = vconcat({tokens.features, Tensor::zeros(extra, tokens.features.cols())});
    out.positions = vconcat({tokens.positions, Tensor::zeros(extra, 3)});
    return out;
}

// Cosine-similarity affinity: entry (d, e) relates token d of the later scan
// to token e of the earlier scan. Zero-norm features yield entry 0 via an
// epsilon guard on the denominators; results are clamped to [-1, 1] (the
// clamp only trims float drift, gradient passes through the closed interval).
inline AffinityMatrix build_affinity(const TokenSet& tokens_later, const TokenSet& tokens_earlier) {
    if (tokens_later.count() == 0 || tokens_earlier.count() == 0) {
        throw std::invalid_argument("build_affinity: empty token set");
    }
    if (tokens_later.features.cols() != tokens_earlier.features.cols()) {
        throw std::invalid_argument("build_affinity: feature width mismatch (" +
                                    std::to_string(tokens_later.features.cols()) + " vs " +
                                    std::to_string(tokens_earlier.features.cols()) + ")");
    }
    int m = std::max(tokens_later.count(), tokens_earlier.count());
    TokenSet a = pad_tokens(tokens_later, m);
    TokenSet b = pad_tokens(tokens_earlier, m);

    const double huge = std::numeric_limits<double>::max();
    Tensor dots = matmul(a.features, transpose(b.features));
    Tensor norm_a = clamp(sqrt_clamped(row_sum(mul(a.features, a.features)), 0.0), 1e-12, huge);
    Tensor norm_b = clamp(sqrt_clamped(row_sum(mul(b.features, b.features)), 0.0), 1e-12, huge);
    Tensor denom = matmul(norm_a, transpose(norm_b));

    AffinityMatrix out;
    out.values = clamp(div(dots, denom), -1.0, 1.0);
    out.later_frame = tokens_later.frame;
    out.earlier_frame = tokens_earlier.frame;
    out.valid_rows = tokens_later.valid_count();
    out.valid_cols = tokens_earlier.valid_count();
    return out;
}

namespace detail {

inline void check_square(const AffinityMatrix& a, const char* op) {
    if (a.values.empty() || a.values.rows() != a.values.cols()) {
        throw std::invalid_argument(std::string(op) + ": affinity matrix must be square");
    }
}

inline void check_weights_compatible(const AffinityMatrix& a, const AttentionWeights& w, const char* op) {
    if (w.dim() != a.dim()) {
        throw std::invalid_argument(std::string(op) + ": weights sized for M=" +
                                    std::to_string(w.dim()) + ", affinity has M=" +
                                    std::to_string(a.dim()));
    }
}

}  // namespace detail

// Self-attention within one affinity matrix: softmax(QK^T) V over the
// projected matrix. No residual here; refine() owns the residual sums.
inline AffinityMatrix self_attend(const AffinityMatrix& a, const AttentionWeights& w) {
    detail::check_square(a, "self_attend");
    detail::check_weights_compatible(a, w, "self_attend");
    Tensor qb = w.q.apply(a.values);
    Tensor kb = w.k.apply(a.values);
    Tensor vb = w.v.apply(a.values);
    AffinityMatrix out = a;
    out.values = matmul(softmax_rows(matmul(qb, transpose(kb))), vb);
    return out;
}

// Cross-attention across the pair: each output re-weights its own values
// with queries taken from the other matrix.
inline std::pair<AffinityMatrix, AffinityMatrix> cross_attend(const AffinityMatrix& s_t,
                                                              const AffinityMatrix& s_tm1,
                                                              const AttentionWeights& w) {
    detail::check_square(s_t, "cross_attend");
    detail::check_square(s_tm1, "cross_attend");
    if (s_t.dim() != s_tm1.dim()) {
        throw std::invalid_argument("cross_attend: affinity matrices differ in M");
    }
    detail::check_weights_compatible(s_t, w, "cross_attend");
    Tensor q_t = w.q.apply(s_t.values);
    Tensor q_tm1 = w.q.apply(s_tm1.values);
    Tensor k_t = w.k.apply(s_t.values);
    Tensor k_tm1 = w.k.apply(s_tm1.values);
    Tensor v_t = w.v.apply(s_t.values);
    Tensor v_tm1 = w.v.apply(s_tm1.values);

    AffinityMatrix out_t = s_t;
    out_t.values = matmul(softmax_rows(matmul(q_tm1, transpose(k_t))), v_t);
    AffinityMatrix out_tm1 = s_tm1;
    out_tm1.values = matmul(softmax_rows(matmul(q_t, transpose(k_tm1))), v_tm1);
    return {out_t, out_tm1};
}

struct RefineFlags {
    bool self_attention = true;
    bool cross_attention = true;

    bool operator==(const RefineFlags&) const = default;
};

// Refinement stages: the post-self intermediates (S) and the final refined
// matrices. Disabled stages pass their input through.
struct RefineResult {
    AffinityMatrix s_t, s_tm1;        // after self-attention + residual
    AffinityMatrix refined_t, refined_tm1;
};

// Two-step refinement with a residual sum at each step. With all attention
// weights zeroed this is the identity on both inputs.
inline RefineResult refine_full(const AffinityMatrix& a_t, const AffinityMatrix& a_tm1,
                                const AttentionWeights& w_self, const AttentionWeights& w_cross,
                                const RefineFlags& flags = {}) {
    RefineResult r;
    r.s_t = a_t;
    r.s_tm1 = a_tm1;
    if (flags.self_attention) {
        AffinityMatrix z_t = self_attend(a_t, w_self);
        AffinityMatrix z_tm1 = self_attend(a_tm1, w_self);
        r.s_t.values = add(z_t.values, a_t.values);
        r.s_tm1.values = add(z_tm1.values, a_tm1.values);
    }
    r.refined_t = r.s_t;
    r.refined_tm1 = r.s_tm1;
    if (flags.cross_attention) {
        auto [c_t, c_tm1] = cross_attend(r.s_t, r.s_tm1, w_cross);
        r.refined_t.values = add(c_t.values, r.s_t.values);
        r.refined_tm1.values = add(c_tm1.values, r.s_tm1.values);
    }
    return r;
}

inline std::pair<AffinityMatrix, AffinityMatrix> refine(const AffinityMatrix& a_t,
                                                        const AffinityMatrix& a_tm1,
                                                        const AttentionWeights& w_self,
                                                        const AttentionWeights& w_cross,
                                                        const RefineFlags& flags = {}) {
    RefineResult r = refine_full(a_t, a_tm1, w_self, w_cross, flags);
    return {r.refined_t, r.refined_tm1};
}

}  // namespace modt
