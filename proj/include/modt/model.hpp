// The full trainable pipeline: parameter registry, checkpoint I/O, the
// triplet forward pass (encode -> affinities -> refine -> heads -> losses),
// the Adam training loop, and finite-difference gradient verification.
#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <ostream>

#include "modt/config.hpp"
#include "modt/losses.hpp"

namespace modt {

struct Model {
    EncoderParams encoder;
    AttentionWeights w_self;
    AttentionWeights w_cross;
    HeadParams heads;
    int tokens = 0;  // M the attention weights are sized for

    static Model init(const RunConfig& cfg, std::uint64_t seed) {
        Model m;
        std::mt19937_64 rng(seed);
        m.tokens = cfg.encoder.tokens;
        m.encoder = EncoderParams::init(cfg.encoder, rng);
        m.w_self = AttentionWeights::init(cfg.encoder.tokens, rng);
        // The cross branch sits after the self stage behind a residual; a
        // smaller init keeps it near-identity early so training builds on the
        // self-refined solution instead of fighting it.
        m.w_cross = AttentionWeights::init(cfg.encoder.tokens, rng, 0.1);
        m.heads = HeadParams::init(cfg.heads, rng);
        return m;
    }

    template <class Fn>
    void for_each_param(Fn fn) {
        encoder.for_each(fn);
        w_self.for_each("affinity.self", fn);
        w_cross.for_each("affinity.cross", fn);
        heads.for_each(fn);
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> out;
        for_each_param([&out](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
        return out;
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: binary little-endian float64 values plus a text manifest of
// names and shapes (`<path>.manifest`, lines `name rows cols`).

namespace detail {

inline void write_f64_le(std::ofstream& os, double v) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(const unsigned char* b) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    std::ofstream man(path + ".manifest", std::ios::trunc);
    if (!man) throw std::runtime_error("save_checkpoint: cannot open '" + path + ".manifest'");
    for (const auto& [name, t] : tensors) {
        man << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
        for (double v : t.values()) detail::write_f64_le(bin, v);
    }
    if (!bin || !man) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream man(path + ".manifest");
    if (!man) throw FormatError("load_checkpoint: cannot open '" + path + ".manifest'");
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw FormatError("load_checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                     std::istreambuf_iterator<char>());
    NamedTensors out;
    std::string line;
    std::size_t offset = 0;
    int line_no = 0;
    while (std::getline(man, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name;
        long rows = 0, cols = 0;
        if (!(ss >> name >> rows >> cols) || rows < 0 || cols < 0) {
            throw FormatError("load_checkpoint: '" + path + ".manifest' line " +
                              std::to_string(line_no) + ": expected 'name rows cols'");
        }
        std::size_t count = static_cast<std::size_t>(rows) * cols;
        if (offset + count * 8 > bytes.size()) {
            throw FormatError("load_checkpoint: '" + path + "' truncated at tensor '" + name + "'");
        }
        std::vector<double> data(count);
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = detail::read_f64_le(&bytes[offset + i * 8]);
        }
        offset += count * 8;
        out.emplace_back(name, Tensor::from_data(static_cast<int>(rows), static_cast<int>(cols),
                                                 std::move(data)));
    }
    if (offset != bytes.size()) {
        throw FormatError("load_checkpoint: '" + path + "' has " +
                          std::to_string(bytes.size() - offset) + " trailing bytes");
    }
    return out;
}

// Applies checkpointed values onto the model's parameters, by name.
inline void load_model_params(Model& model, const NamedTensors& ckpt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt) by_name[name] = &t;
    model.for_each_param([&by_name](const std::string& name, Tensor& param) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint: missing tensor '" + name + "'");
        }
        const Tensor& src = *it->second;
        if (src.rows() != param.rows() || src.cols() != param.cols()) {
            throw FormatError("checkpoint: shape mismatch for '" + name + "': checkpoint " +
                              std::to_string(src.rows()) + "x" + std::to_string(src.cols()) +
                              ", model " + std::to_string(param.rows()) + "x" +
                              std::to_string(param.cols()) + " (encoder.tokens must match)");
        }
        param.set_values(src.values());
    });
}

// ---------------------------------------------------------------------------
// Forward pass over one frame triplet

struct TripletForward {
    TokenSet tok_t, tok_tm1, tok_tm2;
    AffinityMatrix a_t, a_tm1;  // raw cosine affinities
    RefineResult refined;
    bool skip = false;  // some frame had no points
};

// Encodes a frame and pads it to the configured token count.
inline TokenSet encode_frame(const Model& model, const PointCloud& cloud, const RunConfig& cfg) {
    int m_eff = std::min(cfg.encoder.tokens, cloud.size());
    if (m_eff == 0) {
        TokenSet t;
        t.frame = cloud.frame;
        t.skip = true;
        return t;
    }
    TokenSet t = encode(cloud, model.encoder, cfg.encoder, m_eff);
    return pad_tokens(t, cfg.encoder.tokens);
}

// Affinity construction + refinement over already-encoded tokens.
inline TripletForward forward_tokens(const Model& model, TokenSet tok_t, TokenSet tok_tm1,
                                     TokenSet tok_tm2, const RunConfig& cfg) {
    TripletForward fwd;
    fwd.tok_t = std::move(tok_t);
    fwd.tok_tm1 = std::move(tok_tm1);
    fwd.tok_tm2 = std::move(tok_tm2);
    if (fwd.tok_t.skip || fwd.tok_tm1.skip || fwd.tok_tm2.skip) {
        fwd.skip = true;
        return fwd;
    }
    fwd.a_t = build_affinity(fwd.tok_t, fwd.tok_tm1);
    fwd.a_tm1 = build_affinity(fwd.tok_tm1, fwd.tok_tm2);
    fwd.refined = refine_full(fwd.a_t, fwd.a_tm1, model.w_self, model.w_cross, cfg.affinity.flags);
    return fwd;
}

inline TripletForward forward_triplet(const Model& model, const PointCloud& cloud_t,
                                      const PointCloud& cloud_tm1, const PointCloud& cloud_tm2,
                                      const RunConfig& cfg) {
    return forward_tokens(model, encode_frame(model, cloud_t, cfg),
                          encode_frame(model, cloud_tm1, cfg),
                          encode_frame(model, cloud_tm2, cfg), cfg);
}

// ---------------------------------------------------------------------------
// Loss assembly (Eq. 9 analog: L_a + lambda_c L_c + lambda_b L_b, optional yaw)

struct TripletLoss {
    Tensor total;
    double l_a = 0.0, l_c = 0.0, l_b = 0.0, l_yaw = 0.0;
    bool supervised = false;
};

inline TripletLoss triplet_loss(const Model& model, const TripletForward& fwd, const Frame& frame_t,
                                const Frame& frame_tm1, const Frame& frame_tm2,
                                const RunConfig& cfg) {
    TripletLoss out;
    if (fwd.skip) {
        out.total = Tensor::scalar(0.0);
        return out;
    }
    double margin = jitter_margin(cfg.scene);
    GtAffinity g_t = build_gt_affinity(fwd.tok_t, fwd.tok_tm1, frame_t.objects,
                                       frame_tm1.objects, margin);
    GtAffinity g_tm1 = build_gt_affinity(fwd.tok_tm1, fwd.tok_tm2, frame_tm1.objects,
                                         frame_tm2.objects, margin);

    // The association loss averages over both refined matrices; the optional
    // intermediate-supervision flag folds in the post-self matrices too.
    std::vector<LossTerm> assoc;
    assoc.push_back(association_loss(fwd.refined.refined_t, g_t));
    assoc.push_back(association_loss(fwd.refined.refined_tm1, g_tm1));
    if (cfg.affinity.supervise_intermediate) {
        assoc.push_back(association_loss(fwd.refined.s_t, g_t));
        assoc.push_back(association_loss(fwd.refined.s_tm1, g_tm1));
    }
    LossTerm l_a = zero_loss();
    int n_assoc = 0;
    for (const LossTerm& term : assoc) {
        if (!term.supervised) continue;
        l_a.value = n_assoc == 0 ? term.value : add(l_a.value, term.value);
        ++n_assoc;
    }
    if (n_assoc > 0) {
        l_a.value = scale(l_a.value, 1.0 / n_assoc);
        l_a.supervised = true;
    }

    BoxRegression reg = box_head_forward(fwd.tok_t, model.heads);
    std::vector<Detection> dets = predict_boxes_from(reg, fwd.tok_t, cfg.heads);
    std::vector<std::pair<int, int>> pairs =
        match_predictions(dets, frame_t.objects, cfg.loss.match_radius);

    LossTerm l_c = zero_loss(), l_b = zero_loss(), l_yaw = zero_loss();
    if (!pairs.empty()) {
        std::vector<int> token_idx;
        std::vector<double> gt_centers, gt_sizes, gt_sincos;
        for (const auto& [di, gi] : pairs) {
            token_idx.push_back(dets[di].token_index);
            const GroundTruthObject& obj = frame_t.objects[gi];
            gt_centers.insert(gt_centers.end(), {obj.center.x, obj.center.y, obj.center.z});
            gt_sizes.insert(gt_sizes.end(), {obj.size.x, obj.size.y, obj.size.z});
            gt_sincos.insert(gt_sincos.end(), {std::sin(obj.yaw), std::cos(obj.yaw)});
        }
        int r = static_cast<int>(pairs.size());
        l_c = center_loss(select_rows(reg.centers, token_idx),
                          Tensor::from_data(r, 3, std::move(gt_centers)));
        l_b = size_loss(select_rows(reg.sizes, token_idx),
                        Tensor::from_data(r, 3, std::move(gt_sizes)));
        if (cfg.loss.yaw_loss) {
            l_yaw = l1_mean_loss(select_rows(reg.sincos, token_idx),
                                 Tensor::from_data(r, 2, std::move(gt_sincos)));
        }
    }

    out.total = total_loss(l_a, l_c, l_b, cfg.loss.weights);
    if (cfg.loss.yaw_loss && l_yaw.supervised) {
        out.total = add(out.total, scale(l_yaw.value, cfg.loss.lambda_yaw));
    }
    out.l_a = l_a.value.item();
    out.l_c = l_c.value.item();
    out.l_b = l_b.value.item();
    out.l_yaw = l_yaw.value.item();
    out.supervised = l_a.supervised || l_c.supervised || l_b.supervised ||
                     (cfg.loss.yaw_loss && l_yaw.supervised);
    return out;
}

// ---------------------------------------------------------------------------
// Adam optimizer with step decay

struct AdamTrainer {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::map<std::string, std::vector<double>> m, v;

    double learning_rate(const TrainOptions& opt) const {
        double lr = opt.learning_rate;
        if (opt.lr_decay_every > 0) {
            long decays = step / opt.lr_decay_every;
            for (long i = 0; i < decays; ++i) lr /= opt.lr_decay_factor;
        }
        return lr;
    }

    void update(Model& model, double lr) {
        ++step;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        model.for_each_param([&](const std::string& name, Tensor& param) {
            auto& mm = m[name];
            auto& vv = v[name];
            if (mm.size() != param.size()) mm.assign(param.size(), 0.0);
            if (vv.size() != param.size()) vv.assign(param.size(), 0.0);
            bool has_grad = param.has_grad();
            for (std::size_t i = 0; i < param.size(); ++i) {
                double g = has_grad ? param.grad()[i] : 0.0;
                mm[i] = beta1 * mm[i] + (1.0 - beta1) * g;
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g;
                double mhat = mm[i] / bc1;
                double vhat = vv[i] / bc2;
                int r = static_cast<int>(i) / param.cols();
                int c = static_cast<int>(i) % param.cols();
                param.set_at(r, c, param.at(r, c) - lr * mhat / (std::sqrt(vhat) + eps));
            }
        });
    }

    // Optimizer state rides in the checkpoint as extra named tensors, so a
    // resumed run reproduces the continued loss curve exactly.
    void append_state(Model& model, NamedTensors& out) const {
        out.emplace_back("adam.step", Tensor::scalar(static_cast<double>(step)));
        model.for_each_param([&](const std::string& name, Tensor& param) {
            auto mi = m.find(name);
            auto vi = v.find(name);
            std::vector<double> mdata = mi != m.end() ? mi->second
                                                      : std::vector<double>(param.size(), 0.0);
            std::vector<double> vdata = vi != v.end() ? vi->second
                                                      : std::vector<double>(param.size(), 0.0);
            out.emplace_back("adam.m." + name,
                             Tensor::from_data(param.rows(), param.cols(), std::move(mdata)));
            out.emplace_back("adam.v." + name,
                             Tensor::from_data(param.rows(), param.cols(), std::move(vdata)));
        });
    }

    bool restore_state(Model& model, const NamedTensors& ckpt) {
        std::map<std::string, const Tensor*> by_name;
        for (const auto& [name, t] : ckpt) by_name[name] = &t;
        auto it = by_name.find("adam.step");
        if (it == by_name.end()) return false;
        step = static_cast<long>(it->second->item());
        model.for_each_param([&](const std::string& name, Tensor& param) {
            auto mi = by_name.find("adam.m." + name);
            auto vi = by_name.find("adam.v." + name);
            if (mi == by_name.end() || vi == by_name.end()) {
                throw FormatError("checkpoint: incomplete optimizer state for '" + name + "'");
            }
            if (mi->second->size() != param.size() || vi->second->size() != param.size()) {
                throw FormatError("checkpoint: optimizer state shape mismatch for '" + name + "'");
            }
            m[name] = mi->second->values();
            v[name] = vi->second->values();
        });
        return true;
    }
};

// ---------------------------------------------------------------------------
// Training loop: full-batch Adam over all triplets of the sequence.

struct TrainLog {
    std::vector<double> losses;  // batch-mean loss per iteration, pre-update
};

inline TrainLog train_model(Model& model, AdamTrainer& adam, const SyntheticSequence& data,
                            const RunConfig& cfg, int iterations, std::ostream* csv = nullptr) {
    if (data.frames.size() < 3) {
        throw std::invalid_argument("train_model: need at least 3 frames");
    }
    int n_frames = static_cast<int>(data.frames.size());
    TrainLog log;
    if (csv != nullptr) *csv << "iteration,loss\n";
    for (int it = 0; it < iterations; ++it) {
        GradTape tape;
        TapeScope scope(tape);
        // Each frame is encoded once per iteration; triplets share the token
        // subgraphs and gradients accumulate across all consumers.
        std::vector<TokenSet> tokens(n_frames);
        for (int f = 0; f < n_frames; ++f) {
            tokens[f] = encode_frame(model, data.frames[f].cloud, cfg);
        }
        Tensor batch;
        int count = 0;
        for (int i = 0; i + 2 < n_frames; ++i) {
            TripletForward fwd = forward_tokens(model, tokens[i + 2], tokens[i + 1], tokens[i], cfg);
            TripletLoss tl = triplet_loss(model, fwd, data.frames[i + 2], data.frames[i + 1],
                                          data.frames[i], cfg);
            if (!tl.supervised) continue;
            batch = count == 0 ? tl.total : add(batch, tl.total);
            ++count;
        }
        if (count == 0) {
            throw std::runtime_error("train_model: no triplet provided any supervision");
        }
        Tensor mean_loss = scale(batch, 1.0 / count);
        double loss_value = mean_loss.item();
        if (!std::isfinite(loss_value)) {
            throw std::domain_error("train_model: non-finite loss at iteration " + std::to_string(it));
        }
        tape.backward(mean_loss);
        adam.update(model, adam.learning_rate(cfg.train));
        log.losses.push_back(loss_value);
        if (csv != nullptr) *csv << adam.step << ',' << format_double(loss_value) << '\n';
    }
    return log;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradcheckResult {
    std::string name;
    bool ok = false;
    double worst = 0.0;
    std::string detail;
};

// Finite-difference check of the full pipeline loss against the tape
// gradients, on sampled parameter coordinates. The harness zeroes the
// confidence threshold and merge radius so the discrete detection selection
// is stable under the +-h probes.
inline GradcheckResult gradcheck_pipeline(const RunConfig& base_cfg, std::uint64_t seed,
                                          int coords_per_tensor = 4, double h = 1e-5,
                                          double rel_tol = 1e-4) {
    GradcheckResult res;
    res.name = "pipeline seed=" + std::to_string(seed);
    RunConfig cfg = base_cfg;
    cfg.heads.conf_threshold = 0.0;
    cfg.heads.nms_radius = 0.0;

    SyntheticSequence scene = synth_scene(cfg.scene, seed);
    if (scene.frames.size() < 3) {
        res.detail = "scene too short";
        return res;
    }
    Model model = Model::init(cfg, seed + 1000);
    FrameTriplet trip = window_triplets(scene).front();

    auto loss_value = [&]() {
        TripletForward fwd = forward_triplet(model, trip.t->cloud, trip.t_minus_1->cloud,
                                             trip.t_minus_2->cloud, cfg);
        TripletLoss tl = triplet_loss(model, fwd, *trip.t, *trip.t_minus_1, *trip.t_minus_2, cfg);
        return tl.total.item();
    };

    GradTape tape;
    {
        TapeScope scope(tape);
        TripletForward fwd = forward_triplet(model, trip.t->cloud, trip.t_minus_1->cloud,
                                             trip.t_minus_2->cloud, cfg);
        TripletLoss tl = triplet_loss(model, fwd, *trip.t, *trip.t_minus_1, *trip.t_minus_2, cfg);
        if (!tl.supervised) {
            res.detail = "loss has no supervised component";
            return res;
        }
        tape.backward(tl.total);
    }

    std::mt19937_64 coord_rng(seed * 7919 + 13);
    res.ok = true;
    model.for_each_param([&](const std::string& name, Tensor& param) {
        int total = static_cast<int>(param.size());
        std::vector<int> coords;
        if (total <= coords_per_tensor) {
            for (int i = 0; i < total; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < coords_per_tensor; ++i) {
                coords.push_back(static_cast<int>(coord_rng() % static_cast<std::uint64_t>(total)));
            }
        }
        for (int flat : coords) {
            int r = flat / param.cols(), c = flat % param.cols();
            double orig = param.at(r, c);
            param.set_at(r, c, orig + h);
            double fp = loss_value();
            param.set_at(r, c, orig - h);
            double fm = loss_value();
            param.set_at(r, c, orig);
            double fd = (fp - fm) / (2.0 * h);
            double analytic = param.has_grad() ? param.grad_at(r, c) : 0.0;
            double err = fd_error(analytic, fd);
            if (err > res.worst) {
                res.worst = err;
                res.detail = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
            }
        }
    });
    res.ok = res.worst < rel_tol;
    return res;
}

namespace detail {

// Checks d(f)/d(x) from the tape against central differences for a scalar
// function built with tensor ops.
inline GradcheckResult check_scalar_fn(const std::string& name,
                                       const std::function<Tensor(const Tensor&)>& fn,
                                       const Tensor& x0, double h = 1e-5, double rel_tol = 1e-4) {
    GradcheckResult res;
    res.name = name;
    Tensor x = x0.clone_values();
    x.set_requires_grad(true);
    GradTape tape;
    {
        TapeScope scope(tape);
        Tensor loss = fn(x);
        tape.backward(loss);
    }
    Tensor analytic = Tensor::from_data(x.rows(), x.cols(), x.grad());
    Tensor fd = finite_difference_gradient(
        [&fn](const Tensor& probe) { return fn(probe).item(); }, x, h);
    GradCompareResult cmp = compare_gradients(analytic, fd, rel_tol);
    res.ok = cmp.ok;
    res.worst = cmp.worst;
    if (!cmp.ok) {
        res.detail = "worst at [" + std::to_string(cmp.worst_row) + "," +
                     std::to_string(cmp.worst_col) + "]";
    }
    return res;
}

}  // namespace detail

// Randomized per-op gradient checks covering every differentiable primitive.
inline std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradcheckResult> results;
    auto rnd = [&rng](int r, int c, double lo = -2.0, double hi = 2.0) {
        return Tensor::uniform(r, c, rng, lo, hi);
    };
    auto run = [&results](const std::string& name, const std::function<Tensor(const Tensor&)>& fn,
                          const Tensor& x0) {
        results.push_back(detail::check_scalar_fn(name, fn, x0));
    };

    Tensor other = rnd(3, 3);
    Tensor weight = rnd(3, 4);
    run("add", [&](const Tensor& x) { return sum(mul(add(x, other), add(x, other))); }, rnd(3, 3));
    run("sub", [&](const Tensor& x) { return sum(mul(sub(x, other), sub(x, other))); }, rnd(3, 3));
    run("mul", [&](const Tensor& x) { return sum(mul(x, other)); }, rnd(3, 3));
    run("div", [&](const Tensor& x) { return sum(div(other, x)); }, rnd(3, 3, 0.5, 2.0));
    run("matmul", [&](const Tensor& x) { return sum(mul(matmul(x, weight), matmul(x, weight))); },
        rnd(3, 3));
    run("transpose", [&](const Tensor& x) { return sum(mul(transpose(x), transpose(other))); },
        rnd(3, 3));
    run("softmax+sq", [&](const Tensor& x) {
        Tensor y = softmax_rows(x);
        return sum(mul(y, y));
    }, rnd(3, 3));
    run("tanh", [&](const Tensor& x) { return sum(mul(tanh_t(x), other)); }, rnd(3, 3));
    run("sigmoid", [&](const Tensor& x) { return sum(mul(sigmoid(x), other)); }, rnd(3, 3));
    run("abs", [&](const Tensor& x) { return sum(abs_t(x)); }, rnd(3, 3, 0.2, 2.0));
    run("log_clamped", [&](const Tensor& x) { return sum(log_clamped(x)); }, rnd(3, 3, 0.5, 3.0));
    run("exp_clamped", [&](const Tensor& x) { return sum(exp_clamped(x)); }, rnd(3, 3));
    run("sqrt_clamped", [&](const Tensor& x) { return sum(sqrt_clamped(x)); }, rnd(3, 3, 0.5, 3.0));
    run("row_sum", [&](const Tensor& x) { return sum(mul(row_sum(x), row_sum(x))); }, rnd(3, 4));
    run("col_sum/broadcast", [&](const Tensor& x) {
        return sum(mul(broadcast_row(col_sum(x), 3), broadcast_col(row_sum(x), 4)));
    }, rnd(3, 4));
    run("col_max", [&](const Tensor& x) { return sum(col_max(x)); }, rnd(4, 3));
    run("slice/concat", [&](const Tensor& x) {
        Tensor left = slice_cols(x, 0, 2);
        Tensor right = slice_cols(x, 2, 4);
        return sum(mul(hconcat({right, left}), hconcat({right, left})));
    }, rnd(3, 4));
    run("select_rows", [&](const Tensor& x) {
        return sum(mul(select_rows(x, {2, 0, 2}), select_rows(x, {2, 0, 2})));
    }, rnd(4, 3));
    run("scale_t", [&](const Tensor& x) {
        Tensor s = sum(x);
        return sum(scale_t(add_scalar_t(other, s), s));
    }, rnd(3, 3));
    run("clamp", [&](const Tensor& x) { return sum(clamp(x, -0.9, 0.9)); }, rnd(3, 3));
    return results;
}

// Gradient check of encode() on a 6-point cloud with m = 3: the probe scalar
// contracts the token features against fixed random coefficients.
inline GradcheckResult gradcheck_encoder(std::uint64_t seed, double h = 1e-5, double rel_tol = 1e-4) {
    GradcheckResult res;
    res.name = "encoder";
    std::mt19937_64 rng(seed);
    PointCloud cloud;
    for (int i = 0; i < 6; ++i) {
        cloud.points.push_back(Vec3{draw_uniform(rng, -2.0, 2.0), draw_uniform(rng, -2.0, 2.0),
                                    draw_uniform(rng, -0.5, 0.5)});
    }
    EncoderConfig cfg;
    cfg.tokens = 3;
    cfg.neighbors = 4;
    cfg.hidden = 8;
    EncoderParams params = EncoderParams::init(cfg, rng);
    Tensor coeff = Tensor::uniform(3, kFeatureDim, rng, -1.0, 1.0);

    auto loss_value = [&]() {
        TokenSet t = encode(cloud, params, cfg, 3);
        return sum(mul(t.features, coeff)).item();
    };

    GradTape tape;
    {
        TapeScope scope(tape);
        TokenSet t = encode(cloud, params, cfg, 3);
        tape.backward(sum(mul(t.features, coeff)));
    }
    res.ok = true;
    params.for_each([&](const std::string& name, Tensor& param) {
        for (int r = 0; r < param.rows(); ++r) {
            for (int c = 0; c < param.cols(); ++c) {
                double orig = param.at(r, c);
                param.set_at(r, c, orig + h);
                double fp = loss_value();
                param.set_at(r, c, orig - h);
                double fm = loss_value();
                param.set_at(r, c, orig);
                double fd = (fp - fm) / (2.0 * h);
                double analytic = param.has_grad() ? param.grad_at(r, c) : 0.0;
                double err = fd_error(analytic, fd);
                if (err > res.worst) {
                    res.worst = err;
                    res.detail = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
                }
            }
        }
    });
    res.ok = res.worst < rel_tol;
    return res;
}

}  // namespace modt
