// Dense 2-D tensors with tape-based reverse-mode autodiff.
//
// A GradTape is live for one forward pass (activate it with TapeScope).
// Ops executed under an active tape record backward closures; without a
// tape they are plain value computations. Gradients live on the tensors
// and are readable after GradTape::backward().
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "modt/common.hpp"

namespace modt {

class GradTape;

namespace detail {

struct TensorNode {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;       // sized while registered on a tape
    bool requires_grad = false;     // leaf parameter flag
    std::uint64_t tape_mark = 0;    // id of the tape this node last joined
};

inline std::uint64_t next_tape_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols) { return filled(rows, cols, 0.0); }

    static Tensor filled(int rows, int cols, double v) {
        check_dims(rows, cols);
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->value.assign(static_cast<std::size_t>(rows) * cols, v);
        return t;
    }

    static Tensor from_data(int rows, int cols, std::vector<double> data) {
        check_dims(rows, cols);
        if (data.size() != static_cast<std::size_t>(rows) * cols) {
            throw std::invalid_argument("Tensor::from_data: size mismatch");
        }
        Tensor t = zeros(rows, cols);
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return filled(1, 1, v); }

    // Uniform init from raw engine bits (bit-reproducible across builds).
    template <class Engine>
    static Tensor uniform(int rows, int cols, Engine& rng, double lo, double hi) {
        Tensor t = zeros(rows, cols);
        for (auto& v : t.node_->value) v = draw_uniform(rng, lo, hi);
        return t;
    }

    bool empty() const { return node_ == nullptr; }
    int rows() const { return node_ ? node_->rows : 0; }
    int cols() const { return node_ ? node_->cols : 0; }
    std::size_t size() const { return node_ ? node_->value.size() : 0; }

    double at(int r, int c) const { return node_->value[idx(r, c)]; }
    double item() const {
        if (rows() != 1 || cols() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return node_->value[0];
    }
    const std::vector<double>& values() const { return node_->value; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool f) { node_->requires_grad = f; return *this; }

    // Gradient access; valid after a backward() on the tape this tensor joined.
    double grad_at(int r, int c) const { return node_->grad[idx(r, c)]; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

    // In-place value mutation; caller must not mutate while a tape that saw
    // this tensor is still pending backward (optimizer updates run between passes).
    void set_at(int r, int c, double v) { node_->value[idx(r, c)] = v; }
    void set_values(const std::vector<double>& data) {
        if (data.size() != node_->value.size()) throw std::invalid_argument("set_values: size mismatch");
        node_->value = data;
    }

    Tensor clone_values() const {
        Tensor t = zeros(rows(), cols());
        t.node_->value = node_->value;
        return t;
    }

    bool same_values(const Tensor& o) const {
        return rows() == o.rows() && cols() == o.cols() && node_->value == o.node_->value;
    }

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    static void check_dims(int rows, int cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
    }
    std::size_t idx(int r, int c) const {
        return static_cast<std::size_t>(r) * node_->cols + c;
    }

    std::shared_ptr<detail::TensorNode> node_;
};

// Records one forward pass. Backward replays closures in reverse recording
// order, which is a valid topological order for a define-by-run graph.
class GradTape {
public:
    GradTape() : id_(detail::next_tape_id()) {}
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void register_node(const std::shared_ptr<detail::TensorNode>& n) {
        if (n->tape_mark != id_) {
            n->tape_mark = id_;
            n->grad.assign(n->value.size(), 0.0);
            nodes_.push_back(n);
        }
    }

    bool owns(const std::shared_ptr<detail::TensorNode>& n) const { return n->tape_mark == id_; }

    void record(std::function<void()> backward_op) { ops_.push_back(std::move(backward_op)); }

    std::size_t op_count() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1 and pulls gradients back through every
    // recorded op exactly once. Gradients of registered tensors are zeroed
    // first, so repeated calls do not accumulate.
    void backward(const Tensor& loss) {
        if (loss.rows() != 1 || loss.cols() != 1) {
            throw std::invalid_argument("backward: loss must be a 1x1 scalar");
        }
        if (!owns(loss.node())) {
            throw std::invalid_argument("backward: loss was not produced under this tape");
        }
        for (auto& n : nodes_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
        loss.node()->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    std::uint64_t id() const { return id_; }

private:
    std::uint64_t id_;
    std::vector<std::function<void()>> ops_;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
};

namespace detail {

inline GradTape*& active_tape() {
    thread_local GradTape* tape = nullptr;
    return tape;
}

}  // namespace detail

// Activates a tape for the current scope (one execution context).
class TapeScope {
public:
    explicit TapeScope(GradTape& tape) : prev_(detail::active_tape()) {
        detail::active_tape() = &tape;
    }
    ~TapeScope() { detail::active_tape() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* prev_;
};

namespace detail {

inline bool tracked(const Tensor& t, GradTape* tape) {
    return t.requires_grad() || (tape != nullptr && tape->owns(t.node()));
}

inline void ensure_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw std::domain_error(std::string(op) + ": produced a non-finite value");
        }
    }
}

// Shared op epilogue: finite check, then backward registration when a tape
// is active and at least one input participates.
template <class BackwardFn>
Tensor finish_op(const char* name, Tensor out, std::initializer_list<const Tensor*> inputs,
                 BackwardFn make_backward) {
    ensure_finite(out, name);
    GradTape* tape = active_tape();
    if (tape == nullptr) return out;
    bool any = false;
    for (const Tensor* in : inputs) {
        if (tracked(*in, tape)) { any = true; break; }
    }
    if (!any) return out;
    for (const Tensor* in : inputs) {
        if (tracked(*in, tape)) tape->register_node(in->node());
    }
    tape->register_node(out.node());
    tape->record(make_backward(tape));
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

inline void check_nonempty(const Tensor& t, const char* op) {
    if (t.empty() || t.rows() == 0 || t.cols() == 0) {
        throw std::invalid_argument(std::string(op) + ": empty tensor");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_nonempty(a, "add");
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] + b.values()[i];
    return detail::finish_op("add", out, {&a, &b}, [&](GradTape* tape) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
        return [an, bn, on, ta, tb]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (ta) an->grad[i] += on->grad[i];
                if (tb) bn->grad[i] += on->grad[i];
            }
        };
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_nonempty(a, "sub");
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] - b.values()[i];
    return detail::finish_op("sub", out, {&a, &b}, [&](GradTape* tape) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
        return [an, bn, on, ta, tb]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (ta) an->grad[i] += on->grad[i];
                if (tb) bn->grad[i] -= on->grad[i];
            }
        };
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_nonempty(a, "mul");
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] * b.values()[i];
    return detail::finish_op("mul", out, {&a, &b}, [&](GradTape* tape) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
        return [an, bn, on, ta, tb]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (ta) an->grad[i] += bn->value[i] * on->grad[i];
                if (tb) bn->grad[i] += an->value[i] * on->grad[i];
            }
        };
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_nonempty(a, "div");
    detail::check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] / b.values()[i];
    return detail::finish_op("div", out, {&a, &b}, [&](GradTape* tape) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
        return [an, bn, on, ta, tb]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double inv = 1.0 / bn->value[i];
                if (ta) an->grad[i] += inv * on->grad[i];
                if (tb) bn->grad[i] -= an->value[i] * inv * inv * on->grad[i];
            }
        };
    });
}

inline Tensor scale(const Tensor& a, double c) {
    detail::check_nonempty(a, "scale");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] * c;
    return detail::finish_op("scale", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, c]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
        };
    });
}

inline Tensor add_const(const Tensor& a, double c) {
    detail::check_nonempty(a, "add_const");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] + c;
    return detail::finish_op("add_const", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        };
    });
}

// out = a * s where s is a 1x1 tensor (differentiable scalar scaling).
inline Tensor scale_t(const Tensor& a, const Tensor& s) {
    detail::check_nonempty(a, "scale_t");
    if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale_t: scale must be 1x1");
    double sv = s.item();
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] * sv;
    return detail::finish_op("scale_t", out, {&a, &s}, [&](GradTape* tape) {
        auto an = a.node(), sn = s.node(), on = out.node();
        bool ta = detail::tracked(a, tape), ts = detail::tracked(s, tape);
        return [an, sn, on, ta, ts]() {
            double sv2 = sn->value[0];
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (ta) an->grad[i] += sv2 * on->grad[i];
                if (ts) sn->grad[0] += an->value[i] * on->grad[i];
            }
        };
    });
}

// out = a + t (t is 1x1, added to every entry).
inline Tensor add_scalar_t(const Tensor& a, const Tensor& t) {
    detail::check_nonempty(a, "add_scalar_t");
    if (t.rows() != 1 || t.cols() != 1) throw std::invalid_argument("add_scalar_t: addend must be 1x1");
    double tv = t.item();
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.values()[i] + tv;
    return detail::finish_op("add_scalar_t", out, {&a, &t}, [&](GradTape* tape) {
        auto an = a.node(), tn = t.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tt = detail::tracked(t, tape);
        return [an, tn, on, ta, tt]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (ta) an->grad[i] += on->grad[i];
                if (tt) tn->grad[0] += on->grad[i];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_nonempty(a, "matmul");
    detail::check_nonempty(b, "matmul");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    }
    int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    auto& ov = out.node()->value;
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
            ov[i * n + j] = acc;
        }
    }
    return detail::finish_op("matmul", out, {&a, &b}, [&](GradTape* tape) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
        return [an, bn, on, ta, tb, m, k, n]() {
            // dA += dOut * B^T ; dB += A^T * dOut
            if (ta) {
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += on->grad[i * n + j] * bn->value[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (tb) {
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += an->value[i * k + p] * on->grad[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        };
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_nonempty(a, "transpose");
    int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(n, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.node()->value[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
    return detail::finish_op("transpose", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(j) * m + i];
        };
    });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

inline Tensor sum(const Tensor& a) {
    detail::check_nonempty(a, "sum");
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    return detail::finish_op("sum", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on]() {
            for (auto& g : an->grad) g += on->grad[0];
        };
    });
}

inline Tensor row_sum(const Tensor& a) {
    detail::check_nonempty(a, "row_sum");
    int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(m, 1);
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a.at(i, j);
        out.node()->value[i] = acc;
    }
    return detail::finish_op("row_sum", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) an->grad[static_cast<std::size_t>(i) * n + j] += on->grad[i];
        };
    });
}

inline Tensor col_sum(const Tensor& a) {
    detail::check_nonempty(a, "col_sum");
    int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(1, n);
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += a.at(i, j);
        out.node()->value[j] = acc;
    }
    return detail::finish_op("col_sum", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) an->grad[static_cast<std::size_t>(i) * n + j] += on->grad[j];
        };
    });
}

inline Tensor broadcast_col(const Tensor& v, int cols) {
    detail::check_nonempty(v, "broadcast_col");
    if (v.cols() != 1) throw std::invalid_argument("broadcast_col: input must be Mx1");
    if (cols < 1) throw std::invalid_argument("broadcast_col: cols must be >= 1");
    int m = v.rows();
    Tensor out = Tensor::zeros(m, cols);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cols; ++j) out.node()->value[static_cast<std::size_t>(i) * cols + j] = v.at(i, 0);
    return detail::finish_op("broadcast_col", out, {&v}, [&](GradTape*) {
        auto vn = v.node(); auto on = out.node();
        return [vn, on, m, cols]() {
            for (int i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) acc += on->grad[static_cast<std::size_t>(i) * cols + j];
                vn->grad[i] += acc;
            }
        };
    });
}

inline Tensor broadcast_row(const Tensor& v, int rows) {
    detail::check_nonempty(v, "broadcast_row");
    if (v.rows() != 1) throw std::invalid_argument("broadcast_row: input must be 1xC");
    if (rows < 1) throw std::invalid_argument("broadcast_row: rows must be >= 1");
    int n = v.cols();
    Tensor out = Tensor::zeros(rows, n);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) out.node()->value[static_cast<std::size_t>(i) * n + j] = v.at(0, j);
    return detail::finish_op("broadcast_row", out, {&v}, [&](GradTape*) {
        auto vn = v.node(); auto on = out.node();
        return [vn, on, rows, n]() {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < rows; ++i) acc += on->grad[static_cast<std::size_t>(i) * n + j];
                vn->grad[j] += acc;
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
    detail::check_nonempty(a, "softmax_rows");
    int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(m, n);
    for (int i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(a.at(i, j) - mx);
            out.node()->value[static_cast<std::size_t>(i) * n + j] = e;
            denom += e;
        }
        for (int j = 0; j < n; ++j) out.node()->value[static_cast<std::size_t>(i) * n + j] /= denom;
    }
    return detail::finish_op("softmax_rows", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, m, n]() {
            // dx = y .* (dy - <dy, y>) per row
            for (int i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * n + j;
                    dot += on->grad[k] * on->value[k];
                }
                for (int j = 0; j < n; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * n + j;
                    an->grad[k] += on->value[k] * (on->grad[k] - dot);
                }
            }
        };
    });
}

inline Tensor tanh_t(const Tensor& a) {
    detail::check_nonempty(a, "tanh");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = std::tanh(a.values()[i]);
    return detail::finish_op("tanh", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double y = on->value[i];
                an->grad[i] += (1.0 - y * y) * on->grad[i];
            }
        };
    });
}

inline Tensor sigmoid(const Tensor& a) {
    detail::check_nonempty(a, "sigmoid");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a.values()[i];
        out.node()->value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
    }
    return detail::finish_op("sigmoid", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double y = on->value[i];
                an->grad[i] += y * (1.0 - y) * on->grad[i];
            }
        };
    });
}

inline Tensor abs_t(const Tensor& a) {
    detail::check_nonempty(a, "abs");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = std::fabs(a.values()[i]);
    return detail::finish_op("abs", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double x = an->value[i];
                double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                an->grad[i] += s * on->grad[i];
            }
        };
    });
}

// log with arguments clamped to >= floor; subgradient 0 where clamped.
inline Tensor log_clamped(const Tensor& a, double floor = 1e-12) {
    detail::check_nonempty(a, "log_clamped");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = std::log(std::max(a.values()[i], floor));
    return detail::finish_op("log_clamped", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, floor]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] > floor) an->grad[i] += on->grad[i] / an->value[i];
            }
        };
    });
}

// exp with the input clamped to [lo, hi]: keeps box-size decoding finite
// above and strictly positive below (no underflow to zero).
inline Tensor exp_clamped(const Tensor& a, double lo = -50.0, double hi = 50.0) {
    detail::check_nonempty(a, "exp_clamped");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.node()->value[i] = std::exp(std::clamp(a.values()[i], lo, hi));
    }
    return detail::finish_op("exp_clamped", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, lo, hi]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] > lo && an->value[i] < hi) an->grad[i] += on->value[i] * on->grad[i];
            }
        };
    });
}

inline Tensor sqrt_clamped(const Tensor& a, double floor = 1e-12) {
    detail::check_nonempty(a, "sqrt_clamped");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = std::sqrt(std::max(a.values()[i], floor));
    return detail::finish_op("sqrt_clamped", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, floor]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] > floor) an->grad[i] += 0.5 / on->value[i] * on->grad[i];
            }
        };
    });
}

// Clamp to [lo, hi]; gradient passes through on the closed interval, so values
// sitting exactly on a bound (e.g. cosine = 1 for identical features) keep it.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    detail::check_nonempty(a, "clamp");
    Tensor out = Tensor::zeros(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.node()->value[i] = std::clamp(a.values()[i], lo, hi);
    return detail::finish_op("clamp", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, lo, hi]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] >= lo && an->value[i] <= hi) an->grad[i] += on->grad[i];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Structure ops

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    detail::check_nonempty(a, "slice_cols");
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    int m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros(m, w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out.node()->value[static_cast<std::size_t>(i) * w + j] = a.at(i, c0 + j);
    return detail::finish_op("slice_cols", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, m, n, w, c0]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    an->grad[static_cast<std::size_t>(i) * n + c0 + j] += on->grad[static_cast<std::size_t>(i) * w + j];
        };
    });
}

inline Tensor select_rows(const Tensor& a, const std::vector<int>& indices) {
    detail::check_nonempty(a, "select_rows");
    if (indices.empty()) throw std::invalid_argument("select_rows: empty index list");
    for (int r : indices) {
        if (r < 0 || r >= a.rows()) throw std::invalid_argument("select_rows: index out of range");
    }
    int n = a.cols(), k = static_cast<int>(indices.size());
    Tensor out = Tensor::zeros(k, n);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j) out.node()->value[static_cast<std::size_t>(i) * n + j] = a.at(indices[i], j);
    return detail::finish_op("select_rows", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        auto idx = indices;
        return [an, on, idx, n]() {
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(idx[i]) * n + j] += on->grad[i * n + j];
        };
    });
}

inline Tensor hconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("hconcat: no parts");
    int m = parts[0].rows(), total = 0;
    for (const Tensor& p : parts) {
        detail::check_nonempty(p, "hconcat");
        if (p.rows() != m) throw std::invalid_argument("hconcat: row mismatch");
        total += p.cols();
    }
    Tensor out = Tensor::zeros(m, total);
    int off = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
                out.node()->value[static_cast<std::size_t>(i) * total + off + j] = p.at(i, j);
        off += p.cols();
    }
    GradTape* tape = detail::active_tape();
    bool any = false;
    if (tape != nullptr) {
        for (const Tensor& p : parts)
            if (detail::tracked(p, tape)) { any = true; break; }
    }
    detail::ensure_finite(out, "hconcat");
    if (!any) return out;
    std::vector<std::shared_ptr<detail::TensorNode>> tracked_nodes;
    std::vector<int> offsets;
    int o2 = 0;
    for (const Tensor& p : parts) {
        if (detail::tracked(p, tape)) {
            tape->register_node(p.node());
            tracked_nodes.push_back(p.node());
            offsets.push_back(o2);
        }
        o2 += p.cols();
    }
    tape->register_node(out.node());
    auto on = out.node();
    tape->record([on, tracked_nodes, offsets, m, total]() {
        for (std::size_t k = 0; k < tracked_nodes.size(); ++k) {
            auto& pn = tracked_nodes[k];
            int w = pn->cols, off3 = offsets[k];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    pn->grad[static_cast<std::size_t>(i) * w + j] += on->grad[static_cast<std::size_t>(i) * total + off3 + j];
        }
    });
    return out;
}

inline Tensor vconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("vconcat: no parts");
    int n = parts[0].cols(), total = 0;
    for (const Tensor& p : parts) {
        detail::check_nonempty(p, "vconcat");
        if (p.cols() != n) throw std::invalid_argument("vconcat: column mismatch");
        total += p.rows();
    }
    Tensor out = Tensor::zeros(total, n);
    int off = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < n; ++j)
                out.node()->value[static_cast<std::size_t>(off + i) * n + j] = p.at(i, j);
        off += p.rows();
    }
    GradTape* tape = detail::active_tape();
    bool any = false;
    if (tape != nullptr) {
        for (const Tensor& p : parts)
            if (detail::tracked(p, tape)) { any = true; break; }
    }
    detail::ensure_finite(out, "vconcat");
    if (!any) return out;
    std::vector<std::shared_ptr<detail::TensorNode>> tracked_nodes;
    std::vector<int> offsets;
    int o2 = 0;
    for (const Tensor& p : parts) {
        if (detail::tracked(p, tape)) {
            tape->register_node(p.node());
            tracked_nodes.push_back(p.node());
            offsets.push_back(o2);
        }
        o2 += p.rows();
    }
    tape->register_node(out.node());
    auto on = out.node();
    tape->record([on, tracked_nodes, offsets, n]() {
        for (std::size_t k = 0; k < tracked_nodes.size(); ++k) {
            auto& pn = tracked_nodes[k];
            int h = pn->rows, off3 = offsets[k];
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < n; ++j)
                    pn->grad[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(off3 + i) * n + j];
        }
    });
    return out;
}

// Column-wise max over rows -> 1xC; gradient routes to the first argmax row.
inline Tensor col_max(const Tensor& a) {
    detail::check_nonempty(a, "col_max");
    int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(1, n);
    std::vector<int> arg(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < n; ++j) {
        double best = a.at(0, j);
        int bi = 0;
        for (int i = 1; i < m; ++i) {
            if (a.at(i, j) > best) { best = a.at(i, j); bi = i; }
        }
        out.node()->value[j] = best;
        arg[j] = bi;
    }
    return detail::finish_op("col_max", out, {&a}, [&](GradTape*) {
        auto an = a.node(); auto on = out.node();
        return [an, on, arg, n]() {
            for (int j = 0; j < n; ++j) an->grad[static_cast<std::size_t>(arg[j]) * n + j] += on->grad[j];
        };
    });
}

// ---------------------------------------------------------------------------
// Gradient checking

// Central finite differences (f(x+h e) - f(x-h e)) / 2h per coordinate.
// f receives value-only tensors; it must be deterministic.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
    Tensor g = Tensor::zeros(x.rows(), x.cols());
    Tensor probe = x.clone_values();
    for (int r = 0; r < x.rows(); ++r) {
        for (int c = 0; c < x.cols(); ++c) {
            double orig = probe.at(r, c);
            probe.set_at(r, c, orig + h);
            double fp = f(probe);
            probe.set_at(r, c, orig - h);
            double fm = f(probe);
            probe.set_at(r, c, orig);
            g.set_at(r, c, (fp - fm) / (2.0 * h));
        }
    }
    return g;
}

// Error metric for analytic-vs-finite-difference comparisons: relative error
// with entries of |analytic| below abs_floor compared absolutely. Differences
// under noise_floor count as zero; central differences at h ~ 1e-5 carry
// cancellation noise of roughly |f| * 1e-11, so 1e-8 cannot be told apart
// from an exact match.
inline double fd_error(double analytic, double fd, double abs_floor = 1e-6,
                       double noise_floor = 1e-8) {
    double diff = std::fabs(analytic - fd);
    if (diff <= noise_floor) return 0.0;
    if (std::fabs(analytic) < abs_floor) return diff;
    return diff / std::max(std::fabs(analytic), std::fabs(fd));
}

struct GradCompareResult {
    bool ok = true;
    double worst = 0.0;
    int worst_row = -1;
    int worst_col = -1;
};

inline GradCompareResult compare_gradients(const Tensor& analytic, const Tensor& fd,
                                           double rel_tol, double abs_floor = 1e-6) {
    GradCompareResult res;
    for (int r = 0; r < analytic.rows(); ++r) {
        for (int c = 0; c < analytic.cols(); ++c) {
            double err = fd_error(analytic.at(r, c), fd.at(r, c), abs_floor);
            if (err > res.worst) {
                res.worst = err;
                res.worst_row = r;
                res.worst_col = c;
            }
        }
    }
    res.ok = res.worst < rel_tol;
    return res;
}

}  // namespace modt
