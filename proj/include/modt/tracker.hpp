// Tracklet generation: detections are connected across frames by a greedy
// cascade. Stage 1 matches each detection's offset-predicted t-1 location to
// active tracks within r1; stage 2 retries within r2; stage 3 falls back to
// embedding cosine similarity; leftovers start new tracks.
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "modt/heads.hpp"

namespace modt {

struct TrackerConfig {
    double r1 = 1.0;        // primary search radius (meters)
    double r2 = 3.0;        // expanded search radius
    double sim_min = 0.7;   // minimum embedding cosine for stage 3
    int max_misses = 3;     // consecutive unmatched frames before termination
    double ema = 0.9;       // embedding update rate (weight on the old embedding)

    bool operator==(const TrackerConfig&) const = default;
};

struct TrackEntry {
    int frame = 0;
    Box3D box;
    double confidence = 0.0;
};

struct Track {
    int id = 0;
    std::vector<TrackEntry> history;  // frames strictly increasing
    std::vector<double> embedding;    // exponential moving average
    int misses = 0;

    Vec3 last_center() const { return history.back().box.center; }
    int last_frame() const { return history.back().frame; }
};

struct TrackerState {
    std::vector<Track> active;
    std::vector<Track> terminated;
    int next_id = 1;
    int frame = -1;  // last processed frame
};

namespace detail {

inline double embedding_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

}  // namespace detail

// Advances the tracker by one frame. Greedy orders are fully specified
// (ascending distance / descending similarity, ties by lower detection index
// then lower track id), so identical inputs give identical assignments.
inline void step(TrackerState& state, const std::vector<Detection>& dets,
                 const OffsetField& offsets, const TrackerConfig& cfg, int frame) {
    if (frame != state.frame + 1) {
        throw std::invalid_argument("tracker step: expected frame " + std::to_string(state.frame + 1) +
                                    ", got " + std::to_string(frame));
    }
    state.frame = frame;

    int n_dets = static_cast<int>(dets.size());
    int n_tracks = static_cast<int>(state.active.size());
    std::vector<char> det_used(n_dets, 0), track_used(n_tracks, 0);
    std::vector<int> det_to_track(n_dets, -1);

    // Offset-predicted previous-frame location per detection.
    std::vector<Vec3> predicted(n_dets);
    for (int i = 0; i < n_dets; ++i) {
        predicted[i] = dets[i].box.center + offsets.offset_near(dets[i].box.center);
    }

    struct Cand { double key; int det, track_pos; };
    auto greedy_match = [&](std::vector<Cand> cands, bool ascending) {
        std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
            if (a.key != b.key) return ascending ? a.key < b.key : a.key > b.key;
            if (a.det != b.det) return a.det < b.det;
            return state.active[a.track_pos].id < state.active[b.track_pos].id;
        });
        for (const Cand& c : cands) {
            if (det_used[c.det] || track_used[c.track_pos]) continue;
            det_used[c.det] = track_used[c.track_pos] = 1;
            det_to_track[c.det] = c.track_pos;
        }
    };

    // Stages 1 and 2: distance between the predicted location and a track's
    // last center, within r1 then within the expanded r2.
    for (double radius : {cfg.r1, cfg.r2}) {
        std::vector<Cand> cands;
        for (int i = 0; i < n_dets; ++i) {
            if (det_used[i]) continue;
            for (int j = 0; j < n_tracks; ++j) {
                if (track_used[j]) continue;
                double d = distance(predicted[i], state.active[j].last_center());
                if (d <= radius) cands.push_back({d, i, j});
            }
        }
        greedy_match(std::move(cands), /*ascending=*/true);
    }

    // Stage 3: embedding cosine against still-unmatched tracks.
    {
        std::vector<Cand> cands;
        for (int i = 0; i < n_dets; ++i) {
            if (det_used[i]) continue;
            for (int j = 0; j < n_tracks; ++j) {
                if (track_used[j]) continue;
                double sim = detail::embedding_cosine(dets[i].embedding, state.active[j].embedding);
                if (sim >= cfg.sim_min) cands.push_back({sim, i, j});
            }
        }
        greedy_match(std::move(cands), /*ascending=*/false);
    }

    for (int i = 0; i < n_dets; ++i) {
        if (det_to_track[i] < 0) continue;
        Track& tr = state.active[det_to_track[i]];
        tr.history.push_back({frame, dets[i].box, dets[i].confidence});
        tr.misses = 0;
        for (std::size_t j = 0; j < tr.embedding.size() && j < dets[i].embedding.size(); ++j) {
            tr.embedding[j] = cfg.ema * tr.embedding[j] + (1.0 - cfg.ema) * dets[i].embedding[j];
        }
    }

    // Stage 4: new tracks for leftovers; unmatched tracks age and terminate.
    for (int i = 0; i < n_dets; ++i) {
        if (det_used[i]) continue;
        Track tr;
        tr.id = state.next_id++;
        tr.history.push_back({frame, dets[i].box, dets[i].confidence});
        tr.embedding = dets[i].embedding;
        state.active.push_back(std::move(tr));
    }
    std::vector<Track> remaining;
    remaining.reserve(state.active.size());
    for (int j = 0; j < static_cast<int>(state.active.size()); ++j) {
        bool was_existing = j < n_tracks;
        if (was_existing && !track_used[j]) {
            Track& tr = state.active[j];
            ++tr.misses;
            if (tr.misses > cfg.max_misses) {
                state.terminated.push_back(std::move(tr));
                continue;
            }
        }
        remaining.push_back(std::move(state.active[j]));
    }
    state.active = std::move(remaining);
}

struct FrameInput {
    std::vector<Detection> detections;
    OffsetField offsets;
};

// Folds step() over a frame-ordered sequence; returns every track seen,
// sorted by id.
inline std::vector<Track> run(const std::vector<FrameInput>& frames, const TrackerConfig& cfg) {
    TrackerState state;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        step(state, frames[f].detections, frames[f].offsets, cfg, static_cast<int>(f));
    }
    std::vector<Track> all = std::move(state.terminated);
    for (Track& t : state.active) all.push_back(std::move(t));
    std::sort(all.begin(), all.end(), [](const Track& a, const Track& b) { return a.id < b.id; });
    return all;
}

// ---------------------------------------------------------------------------
// Track file: text lines `frame track_id cx cy cz w l h yaw conf`.

struct TrackedBox {
    int track_id = 0;
    Box3D box;
    double confidence = 0.0;
};

using TrackMap = std::map<int, std::vector<TrackedBox>>;  // frame -> boxes

inline void save_tracks(const std::string& path, const std::vector<Track>& tracks) {
    // Rows ordered by frame, then track id.
    std::map<int, std::vector<std::pair<int, const TrackEntry*>>> by_frame;
    for (const Track& t : tracks) {
        for (const TrackEntry& e : t.history) by_frame[e.frame].emplace_back(t.id, &e);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_tracks: cannot open '" + path + "'");
    for (auto& [frame, rows] : by_frame) {
        std::sort(rows.begin(), rows.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [id, e] : rows) {
            out << frame << ' ' << id << ' '
                << format_double(e->box.center.x) << ' ' << format_double(e->box.center.y) << ' '
                << format_double(e->box.center.z) << ' '
                << format_double(e->box.size.x) << ' ' << format_double(e->box.size.y) << ' '
                << format_double(e->box.size.z) << ' '
                << format_double(e->box.yaw) << ' ' << format_double(e->confidence) << '\n';
        }
    }
}

inline TrackMap load_tracks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_tracks: cannot open '" + path + "'");
    TrackMap tracks;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::vector<std::string> tok;
        std::string t;
        while (ss >> t) tok.push_back(t);
        if (tok.size() != 10) {
            throw FormatError("load_tracks: '" + path + "' line " + std::to_string(line_no) +
                              ": expected 10 fields, got " + std::to_string(tok.size()));
        }
        const std::string ctx = path + " line " + std::to_string(line_no);
        int frame = static_cast<int>(parse_long(tok[0], ctx));
        TrackedBox b;
        b.track_id = static_cast<int>(parse_long(tok[1], ctx));
        b.box.center = {parse_double(tok[2], ctx), parse_double(tok[3], ctx), parse_double(tok[4], ctx)};
        b.box.size = {parse_double(tok[5], ctx), parse_double(tok[6], ctx), parse_double(tok[7], ctx)};
        b.box.yaw = parse_double(tok[8], ctx);
        b.confidence = parse_double(tok[9], ctx);
        tracks[frame].push_back(b);
    }
    return tracks;
}

}  // namespace modt
