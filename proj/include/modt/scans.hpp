// Scan loading, the synthetic ground-truth scene generator, and the
// three-frame windowing the network consumes.
//
// Scan files are the common LiDAR binary layout: little-endian float32
// records (x, y, z, intensity). Ground truth rides in a text sidecar,
// one `frame track_id cx cy cz w l h yaw` line per object per frame.
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "modt/common.hpp"

namespace modt {

struct PointCloud {
    std::vector<Vec3> points;
    int frame = 0;

    int size() const { return static_cast<int>(points.size()); }
};

struct GroundTruthObject {
    int track_id = 0;
    Vec3 center;
    Vec3 size;  // (w, l, h), all > 0
    double yaw = 0.0;
    std::vector<int> point_indices;  // membership in the frame's cloud; empty for sidecar-loaded gt
};

struct Frame {
    PointCloud cloud;
    std::vector<GroundTruthObject> objects;
};

struct SyntheticSequence {
    std::vector<Frame> frames;
    std::uint64_t seed = 0;
};

// Ground truth per frame index, as loaded from a sidecar file.
using GroundTruthMap = std::map<int, std::vector<GroundTruthObject>>;

struct FrameTriplet {
    const Frame* t = nullptr;
    const Frame* t_minus_1 = nullptr;
    const Frame* t_minus_2 = nullptr;
};

// Point membership test in an object's box, inflated by `margin` per axis.
inline bool point_in_box(const Vec3& p, const GroundTruthObject& obj, double margin = 0.0) {
    Vec3 d = p - obj.center;
    double c = std::cos(obj.yaw), s = std::sin(obj.yaw);
    double u = c * d.x + s * d.y;
    double v = -s * d.x + c * d.y;
    return std::fabs(u) <= obj.size.x / 2.0 + margin &&
           std::fabs(v) <= obj.size.y / 2.0 + margin &&
           std::fabs(d.z) <= obj.size.z / 2.0 + margin;
}

// ---------------------------------------------------------------------------
// Binary scan I/O

namespace detail {

inline float read_f32_le(const unsigned char* b) {
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                      (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(u);
}

inline void write_f32_le(std::ofstream& os, float v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                          static_cast<unsigned char>((u >> 8) & 0xff),
                          static_cast<unsigned char>((u >> 16) & 0xff),
                          static_cast<unsigned char>((u >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline PointCloud load_scan(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_scan: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    constexpr std::size_t record = 16;  // 4 x float32
    if (bytes.size() % record != 0) {
        throw FormatError("load_scan: '" + path + "' truncated at byte offset " +
                          std::to_string((bytes.size() / record) * record));
    }
    PointCloud cloud;
    cloud.points.reserve(bytes.size() / record);
    for (std::size_t i = 0; i < bytes.size(); i += record) {
        float x = detail::read_f32_le(&bytes[i]);
        float y = detail::read_f32_le(&bytes[i + 4]);
        float z = detail::read_f32_le(&bytes[i + 8]);
        float intensity = detail::read_f32_le(&bytes[i + 12]);  // parsed, unused (geometry-only pipeline)
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(intensity)) {
            throw FormatError("load_scan: '" + path + "' non-finite value in record " +
                              std::to_string(i / record));
        }
        cloud.points.push_back(Vec3{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
    }
    return cloud;
}

inline void save_scan(const std::string& path, const PointCloud& cloud) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_scan: cannot open '" + path + "' for writing");
    for (const Vec3& p : cloud.points) {
        detail::write_f32_le(out, static_cast<float>(p.x));
        detail::write_f32_le(out, static_cast<float>(p.y));
        detail::write_f32_le(out, static_cast<float>(p.z));
        detail::write_f32_le(out, 0.0f);
    }
    if (!out) throw std::runtime_error("save_scan: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar I/O

inline void save_ground_truth(const std::string& path, const SyntheticSequence& seq) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_ground_truth: cannot open '" + path + "'");
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
        for (const GroundTruthObject& obj : seq.frames[f].objects) {
            out << f << ' ' << obj.track_id << ' '
                << format_double(obj.center.x) << ' ' << format_double(obj.center.y) << ' '
                << format_double(obj.center.z) << ' '
                << format_double(obj.size.x) << ' ' << format_double(obj.size.y) << ' '
                << format_double(obj.size.z) << ' '
                << format_double(obj.yaw) << '\n';
        }
    }
}

inline GroundTruthMap load_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_ground_truth: cannot open '" + path + "'");
    GroundTruthMap gt;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::vector<std::string> tok;
        std::string t;
        while (ss >> t) tok.push_back(t);
        if (tok.size() != 9) {
            throw FormatError("load_ground_truth: '" + path + "' line " + std::to_string(line_no) +
                              ": expected 9 fields, got " + std::to_string(tok.size()));
        }
        const std::string ctx = path + " line " + std::to_string(line_no);
        int frame = static_cast<int>(parse_long(tok[0], ctx));
        GroundTruthObject obj;
        obj.track_id = static_cast<int>(parse_long(tok[1], ctx));
        obj.center = {parse_double(tok[2], ctx), parse_double(tok[3], ctx), parse_double(tok[4], ctx)};
        obj.size = {parse_double(tok[5], ctx), parse_double(tok[6], ctx), parse_double(tok[7], ctx)};
        obj.yaw = parse_double(tok[8], ctx);
        if (obj.size.x <= 0.0 || obj.size.y <= 0.0 || obj.size.z <= 0.0) {
            throw FormatError("load_ground_truth: '" + path + "' line " + std::to_string(line_no) +
                              ": non-positive box size");
        }
        gt[frame].push_back(obj);
    }
    return gt;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneConfig {
    int objects = 3;
    int frames = 20;
    int points_per_object = 60;
    int clutter_points = 0;
    double noise_sigma = 0.02;     // per-point Gaussian jitter, clamped to +-3 sigma
    double vel_max = 0.35;         // per-axis speed bound, xy (meters/frame)
    double vel_max_z = 0.0;
    double perturb_max = 0.0;      // per-frame bounded random trajectory perturbation
    double arena_half_extent = 8.0;
    double spacing_min = 4.0;      // minimum initial center-to-center distance
    double size_min = 0.8;
    double size_max = 1.6;

    bool operator==(const SceneConfig&) const = default;
};

// Jitter-inflation margin used for membership guarantees and gt-affinity
// token gating.
inline double jitter_margin(const SceneConfig& cfg) { return 3.0 * cfg.noise_sigma; }

// Generates K boxes on constant-velocity trajectories with optional bounded
// perturbation. Each object carries a fixed local point pattern, advected by
// the object pose per frame, so cross-frame point correspondences are exact.
inline SyntheticSequence synth_scene(const SceneConfig& cfg, std::uint64_t seed) {
    if (cfg.objects < 0 || cfg.frames < 0 || cfg.points_per_object < 0 || cfg.clutter_points < 0) {
        throw std::invalid_argument("synth_scene: negative count in config");
    }
    if (cfg.noise_sigma < 0.0 || cfg.size_min <= 0.0 || cfg.size_max < cfg.size_min) {
        throw std::invalid_argument("synth_scene: bad noise/size config");
    }
    std::mt19937_64 rng(seed);

    struct ObjectSpec {
        Vec3 start, velocity, size;
        double yaw;
        std::vector<Vec3> pattern;  // local-frame points, fixed for the sequence
    };
    std::vector<ObjectSpec> specs;
    for (int k = 0; k < cfg.objects; ++k) {
        ObjectSpec spec;
        spec.size = {draw_uniform(rng, cfg.size_min, cfg.size_max),
                     draw_uniform(rng, cfg.size_min, cfg.size_max),
                     draw_uniform(rng, cfg.size_min, cfg.size_max)};
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            Vec3 c{draw_uniform(rng, -cfg.arena_half_extent, cfg.arena_half_extent),
                   draw_uniform(rng, -cfg.arena_half_extent, cfg.arena_half_extent), 0.0};
            placed = true;
            for (const ObjectSpec& other : specs) {
                if (distance(c, other.start) < cfg.spacing_min) { placed = false; break; }
            }
            if (placed) spec.start = c;
        }
        if (!placed) {
            throw std::runtime_error("synth_scene: failed to place non-overlapping boxes after 1000 attempts");
        }
        spec.velocity = {draw_uniform(rng, -cfg.vel_max, cfg.vel_max),
                         draw_uniform(rng, -cfg.vel_max, cfg.vel_max),
                         draw_uniform(rng, -cfg.vel_max_z, cfg.vel_max_z)};
        spec.yaw = wrap_angle(draw_uniform(rng, -M_PI, M_PI));
        spec.pattern.reserve(cfg.points_per_object);
        for (int p = 0; p < cfg.points_per_object; ++p) {
            spec.pattern.push_back(Vec3{draw_uniform(rng, -spec.size.x / 2.0, spec.size.x / 2.0),
                                        draw_uniform(rng, -spec.size.y / 2.0, spec.size.y / 2.0),
                                        draw_uniform(rng, -spec.size.z / 2.0, spec.size.z / 2.0)});
        }
        specs.push_back(std::move(spec));
    }

    auto clamped_jitter = [&rng](double sigma) {
        double j = draw_normal(rng, sigma);
        return std::clamp(j, -3.0 * sigma, 3.0 * sigma);
    };

    SyntheticSequence seq;
    seq.seed = seed;
    std::vector<Vec3> drift(specs.size(), Vec3{});
    for (int f = 0; f < cfg.frames; ++f) {
        Frame frame;
        frame.cloud.frame = f;
        for (std::size_t k = 0; k < specs.size(); ++k) {
            if (f > 0 && cfg.perturb_max > 0.0) {
                drift[k] += Vec3{draw_uniform(rng, -cfg.perturb_max, cfg.perturb_max),
                                 draw_uniform(rng, -cfg.perturb_max, cfg.perturb_max),
                                 draw_uniform(rng, -cfg.perturb_max, cfg.perturb_max)};
            }
            const ObjectSpec& spec = specs[k];
            Vec3 center = spec.start + spec.velocity * static_cast<double>(f) + drift[k];
            GroundTruthObject obj;
            obj.track_id = static_cast<int>(k);
            obj.center = center;
            obj.size = spec.size;
            obj.yaw = spec.yaw;
            double c = std::cos(spec.yaw), s = std::sin(spec.yaw);
            for (const Vec3& local : spec.pattern) {
                // Jitter in the object frame keeps the 3-sigma membership bound exact.
                Vec3 q = local;
                if (cfg.noise_sigma > 0.0) {
                    q += Vec3{clamped_jitter(cfg.noise_sigma), clamped_jitter(cfg.noise_sigma),
                              clamped_jitter(cfg.noise_sigma)};
                }
                Vec3 world{c * q.x - s * q.y + center.x, s * q.x + c * q.y + center.y, q.z + center.z};
                obj.point_indices.push_back(frame.cloud.size());
                frame.cloud.points.push_back(world);
            }
            frame.objects.push_back(std::move(obj));
        }
        for (int p = 0; p < cfg.clutter_points; ++p) {
            frame.cloud.points.push_back(
                Vec3{draw_uniform(rng, -cfg.arena_half_extent, cfg.arena_half_extent),
                     draw_uniform(rng, -cfg.arena_half_extent, cfg.arena_half_extent),
                     draw_uniform(rng, -cfg.size_max, cfg.size_max)});
        }
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

// Overlapping (t, t-1, t-2) windows in temporal order; triplet i covers
// frames (i+2, i+1, i).
inline std::vector<FrameTriplet> window_triplets(const SyntheticSequence& seq) {
    if (seq.frames.size() < 3) {
        throw std::invalid_argument("window_triplets: need at least 3 frames, got " +
                                    std::to_string(seq.frames.size()));
    }
    std::vector<FrameTriplet> out;
    for (std::size_t i = 0; i + 2 < seq.frames.size(); ++i) {
        out.push_back(FrameTriplet{&seq.frames[i + 2], &seq.frames[i + 1], &seq.frames[i]});
    }
    return out;
}

}  // namespace modt
