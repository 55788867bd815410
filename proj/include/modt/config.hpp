// One flat key-value config file drives every stage; sections map to
// modules. Unknown sections or keys are rejected, values are validated
// before any run, and parse -> serialize -> parse is the identity.
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "modt/affinity.hpp"
#include "modt/encoder.hpp"
#include "modt/heads.hpp"
#include "modt/losses.hpp"
#include "modt/metrics.hpp"
#include "modt/scans.hpp"
#include "modt/tracker.hpp"

namespace modt {

struct AffinityOptions {
    RefineFlags flags;
    bool supervise_intermediate = false;  // adds the association loss on the post-self matrices

    bool operator==(const AffinityOptions&) const = default;
};

struct LossOptions {
    LossWeights weights;
    bool yaw_loss = false;    // optional (sin, cos) l1 term
    double lambda_yaw = 1.0;
    double match_radius = 2.0;  // prediction-to-gt matching for the center/size terms

    bool operator==(const LossOptions&) const = default;
};

struct TrainOptions {
    int iterations = 50;
    double learning_rate = 0.001;
    int lr_decay_every = 0;      // iterations between step decays; 0 disables
    double lr_decay_factor = 5.0;
    std::uint64_t seed = 1;

    bool operator==(const TrainOptions&) const = default;
};

struct MetricsOptions {
    double dist_max = 1.0;  // center-distance matching threshold (meters)

    bool operator==(const MetricsOptions&) const = default;
};

struct RunConfig {
    SceneConfig scene;
    std::uint64_t scene_seed = 7;
    EncoderConfig encoder;
    AffinityOptions affinity;
    HeadConfig heads;
    LossOptions loss;
    TrackerConfig tracker;
    TrainOptions train;
    MetricsOptions metrics;

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

struct ConfigField {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline bool parse_bool(const std::string& v, const std::string& ctx) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw FormatError(ctx + ": bad boolean '" + v + "'");
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        auto field = [&f](const std::string& sec, const std::string& key, auto getter) {
            using Ref = decltype(getter(std::declval<RunConfig&>()));
            using T = std::remove_reference_t<Ref>;
            f.push_back({sec, key,
                         [getter](RunConfig& c, const std::string& v, const std::string& ctx) {
                             if constexpr (std::is_same_v<T, int>) {
                                 getter(c) = static_cast<int>(parse_long(v, ctx));
                             } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                                 long x = parse_long(v, ctx);
                                 if (x < 0) throw FormatError(ctx + ": seed must be >= 0");
                                 getter(c) = static_cast<std::uint64_t>(x);
                             } else if constexpr (std::is_same_v<T, double>) {
                                 getter(c) = parse_double(v, ctx);
                             } else {
                                 getter(c) = parse_bool(v, ctx);
                             }
                         },
                         [getter](const RunConfig& c) -> std::string {
                             RunConfig& mut = const_cast<RunConfig&>(c);
                             if constexpr (std::is_same_v<T, int>) {
                                 return std::to_string(getter(mut));
                             } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                                 return std::to_string(getter(mut));
                             } else if constexpr (std::is_same_v<T, double>) {
                                 return format_double(getter(mut));
                             } else {
                                 return getter(mut) ? "true" : "false";
                             }
                         }});
        };

        field("scene", "objects", [](RunConfig& c) -> int& { return c.scene.objects; });
        field("scene", "frames", [](RunConfig& c) -> int& { return c.scene.frames; });
        field("scene", "points_per_object", [](RunConfig& c) -> int& { return c.scene.points_per_object; });
        field("scene", "clutter_points", [](RunConfig& c) -> int& { return c.scene.clutter_points; });
        field("scene", "noise_sigma", [](RunConfig& c) -> double& { return c.scene.noise_sigma; });
        field("scene", "vel_max", [](RunConfig& c) -> double& { return c.scene.vel_max; });
        field("scene", "vel_max_z", [](RunConfig& c) -> double& { return c.scene.vel_max_z; });
        field("scene", "perturb_max", [](RunConfig& c) -> double& { return c.scene.perturb_max; });
        field("scene", "arena_half_extent", [](RunConfig& c) -> double& { return c.scene.arena_half_extent; });
        field("scene", "spacing_min", [](RunConfig& c) -> double& { return c.scene.spacing_min; });
        field("scene", "size_min", [](RunConfig& c) -> double& { return c.scene.size_min; });
        field("scene", "size_max", [](RunConfig& c) -> double& { return c.scene.size_max; });
        field("scene", "seed", [](RunConfig& c) -> std::uint64_t& { return c.scene_seed; });

        field("encoder", "tokens", [](RunConfig& c) -> int& { return c.encoder.tokens; });
        field("encoder", "neighbors", [](RunConfig& c) -> int& { return c.encoder.neighbors; });
        field("encoder", "hidden", [](RunConfig& c) -> int& { return c.encoder.hidden; });
        field("encoder", "heads", [](RunConfig& c) -> int& { return c.encoder.heads; });

        field("affinity", "self_attention", [](RunConfig& c) -> bool& { return c.affinity.flags.self_attention; });
        field("affinity", "cross_attention", [](RunConfig& c) -> bool& { return c.affinity.flags.cross_attention; });
        field("affinity", "supervise_intermediate",
              [](RunConfig& c) -> bool& { return c.affinity.supervise_intermediate; });

        field("heads", "conf_threshold", [](RunConfig& c) -> double& { return c.heads.conf_threshold; });
        field("heads", "nms_radius", [](RunConfig& c) -> double& { return c.heads.nms_radius; });
        field("heads", "background_radius", [](RunConfig& c) -> double& { return c.heads.background_radius; });
        field("heads", "offset_sharpness", [](RunConfig& c) -> double& { return c.heads.offset_sharpness; });
        field("heads", "offset_hidden", [](RunConfig& c) -> int& { return c.heads.offset_hidden; });

        field("loss", "lambda_center", [](RunConfig& c) -> double& { return c.loss.weights.lambda_center; });
        field("loss", "lambda_size", [](RunConfig& c) -> double& { return c.loss.weights.lambda_size; });
        field("loss", "yaw_loss", [](RunConfig& c) -> bool& { return c.loss.yaw_loss; });
        field("loss", "lambda_yaw", [](RunConfig& c) -> double& { return c.loss.lambda_yaw; });
        field("loss", "match_radius", [](RunConfig& c) -> double& { return c.loss.match_radius; });

        field("tracker", "r1", [](RunConfig& c) -> double& { return c.tracker.r1; });
        field("tracker", "r2", [](RunConfig& c) -> double& { return c.tracker.r2; });
        field("tracker", "sim_min", [](RunConfig& c) -> double& { return c.tracker.sim_min; });
        field("tracker", "max_misses", [](RunConfig& c) -> int& { return c.tracker.max_misses; });
        field("tracker", "ema", [](RunConfig& c) -> double& { return c.tracker.ema; });

        field("train", "iterations", [](RunConfig& c) -> int& { return c.train.iterations; });
        field("train", "learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
        field("train", "lr_decay_every", [](RunConfig& c) -> int& { return c.train.lr_decay_every; });
        field("train", "lr_decay_factor", [](RunConfig& c) -> double& { return c.train.lr_decay_factor; });
        field("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });

        field("metrics", "dist_max", [](RunConfig& c) -> double& { return c.metrics.dist_max; });
        return f;
    }();
    return fields;
}

}  // namespace detail

inline void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw FormatError("config: " + msg); };
    if (c.scene.objects < 0 || c.scene.frames < 0 || c.scene.points_per_object < 0 ||
        c.scene.clutter_points < 0) fail("scene counts must be >= 0");
    if (c.scene.noise_sigma < 0.0) fail("scene.noise_sigma must be >= 0");
    if (c.scene.size_min <= 0.0 || c.scene.size_max < c.scene.size_min) fail("bad scene size range");
    if (c.encoder.tokens < 1) fail("encoder.tokens must be >= 1");
    if (c.encoder.neighbors < 1) fail("encoder.neighbors must be >= 1");
    if (c.encoder.hidden < 1) fail("encoder.hidden must be >= 1");
    if (c.encoder.heads < 1 || kFeatureDim % c.encoder.heads != 0) {
        fail("encoder.heads must divide " + std::to_string(kFeatureDim));
    }
    if (c.heads.conf_threshold < 0.0 || c.heads.conf_threshold > 1.0) fail("heads.conf_threshold must be in [0, 1]");
    if (c.heads.nms_radius < 0.0 || c.heads.background_radius < 0.0) fail("heads radii must be >= 0");
    if (c.heads.offset_sharpness <= 0.0) fail("heads.offset_sharpness must be > 0");
    if (c.heads.offset_hidden < 1) fail("heads.offset_hidden must be >= 1");
    if (c.loss.weights.lambda_center < 0.0 || c.loss.weights.lambda_size < 0.0 || c.loss.lambda_yaw < 0.0) {
        fail("loss weights must be >= 0");
    }
    if (c.loss.match_radius <= 0.0) fail("loss.match_radius must be > 0");
    if (c.tracker.r1 <= 0.0 || c.tracker.r2 < c.tracker.r1) fail("need 0 < tracker.r1 <= tracker.r2");
    if (c.tracker.sim_min <= -1.0 || c.tracker.sim_min >= 1.0) fail("tracker.sim_min must be in (-1, 1)");
    if (c.tracker.max_misses < 0) fail("tracker.max_misses must be >= 0");
    if (c.tracker.ema < 0.0 || c.tracker.ema > 1.0) fail("tracker.ema must be in [0, 1]");
    if (c.train.iterations < 0) fail("train.iterations must be >= 0");
    if (c.train.learning_rate <= 0.0) fail("train.learning_rate must be > 0");
    if (c.train.lr_decay_every < 0) fail("train.lr_decay_every must be >= 0");
    if (c.train.lr_decay_factor <= 0.0) fail("train.lr_decay_factor must be > 0");
    if (c.metrics.dist_max <= 0.0) fail("metrics.dist_max must be > 0");
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string ctx = origin + " line " + std::to_string(line_no);
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw FormatError(ctx + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : detail::config_fields()) {
                if (f.section == section) { known = true; break; }
            }
            if (!known) throw FormatError(ctx + ": unknown section '" + section + "'");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(ctx + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw FormatError(ctx + ": empty key or value");
        const detail::ConfigField* match = nullptr;
        for (const auto& f : detail::config_fields()) {
            if (f.section == section && f.key == key) { match = &f; break; }
        }
        if (match == nullptr) {
            throw FormatError(ctx + ": unknown key '" + key + "' in section [" + section + "]");
        }
        match->set(cfg, value, ctx);
    }
    validate_config(cfg);
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : detail::config_fields()) {
        if (f.section != section) {
            if (!out.empty()) out += "\n";
            out += "[" + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_config: cannot open '" + path + "'");
    out << serialize_config(cfg);
}

}  // namespace modt
