#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "modt/metrics.hpp"
#include "modt/tracker.hpp"

using namespace modt;
namespace fs = std::filesystem;

namespace {

Detection det_at(Vec3 center, double conf = 1.0, std::vector<double> embedding = {}) {
    Detection d;
    d.box.center = center;
    d.box.size = {1, 1, 1};
    d.confidence = conf;
    d.embedding = std::move(embedding);
    return d;
}

OffsetField field_for(const std::vector<Vec3>& points, const std::vector<Vec3>& offsets) {
    OffsetField f;
    f.points = points;
    f.displacements = offsets;
    return f;
}

TrackerState state_with_track_at(Vec3 center, int frame = 0,
                                 std::vector<double> embedding = {}) {
    TrackerState s;
    Track t;
    t.id = s.next_id++;
    t.history.push_back({frame, Box3D{center, {1, 1, 1}, 0.0}, 1.0});
    t.embedding = std::move(embedding);
    s.active.push_back(std::move(t));
    s.frame = frame;
    return s;
}

}  // namespace

TEST(TrackerStep, Stage1MatchesThroughOffsetPrediction) {
    TrackerState s = state_with_track_at({0, 0, 0});
    TrackerConfig cfg;
    cfg.r1 = 0.5;
    std::vector<Detection> dets = {det_at({1, 0, 0})};
    OffsetField offsets = field_for({{1, 0, 0}}, {{-1, 0, 0}});
    step(s, dets, offsets, cfg, 1);
    ASSERT_EQ(s.active.size(), 1u);
    EXPECT_EQ(s.active[0].history.size(), 2u);
    EXPECT_EQ(s.active[0].misses, 0);
}

TEST(TrackerStep, FarPredictionWithoutEmbeddingStartsNewTrack) {
    TrackerState s = state_with_track_at({0, 0, 0});
    TrackerConfig cfg;
    std::vector<Detection> dets = {det_at({100, 0, 0})};
    step(s, dets, field_for({{100, 0, 0}}, {{0, 0, 0}}), cfg, 1);
    ASSERT_EQ(s.active.size(), 2u);
    EXPECT_EQ(s.active[0].misses, 1);
    EXPECT_EQ(s.active[1].history.front().frame, 1);
}

TEST(TrackerStep, BijectiveMatchingForWellSeparatedTracks) {
    TrackerConfig cfg;
    cfg.r1 = 1.0;
    for (bool swap_order : {false, true}) {
        TrackerState s;
        for (Vec3 c : {Vec3{0, 0, 0}, Vec3{10, 0, 0}}) {
            Track t;
            t.id = s.next_id++;
            t.history.push_back({0, Box3D{c, {1, 1, 1}, 0.0}, 1.0});
            s.active.push_back(std::move(t));
        }
        s.frame = 0;
        std::vector<Detection> dets = {det_at({0.3, 0, 0}), det_at({10.2, 0, 0})};
        if (swap_order) std::swap(dets[0], dets[1]);
        step(s, dets, field_for({}, {}), cfg, 1);
        ASSERT_EQ(s.active.size(), 2u);
        // each track extended exactly once, nearest pairing regardless of order
        EXPECT_EQ(s.active[0].history.size(), 2u);
        EXPECT_EQ(s.active[1].history.size(), 2u);
        EXPECT_NEAR(s.active[0].last_center().x, 0.3, 1e-12);
        EXPECT_NEAR(s.active[1].last_center().x, 10.2, 1e-12);
    }
}

TEST(TrackerStep, Stage2ExpandsSearchRadius) {
    TrackerState s = state_with_track_at({0, 0, 0});
    TrackerConfig cfg;
    cfg.r1 = 0.5;
    cfg.r2 = 3.0;
    std::vector<Detection> dets = {det_at({2.0, 0, 0})};
    step(s, dets, field_for({}, {}), cfg, 1);  // no offsets: prediction = center
    ASSERT_EQ(s.active.size(), 1u);
    EXPECT_EQ(s.active[0].history.size(), 2u);
}

TEST(TrackerStep, Stage3MatchesByEmbeddingCosine) {
    std::vector<double> emb(8, 0.0);
    emb[0] = 1.0;
    TrackerState s = state_with_track_at({0, 0, 0}, 0, emb);
    TrackerConfig cfg;
    cfg.r1 = 0.5;
    cfg.r2 = 1.0;
    cfg.sim_min = 0.9;
    std::vector<double> close = emb;
    close[1] = 0.05;  // cosine ~0.999
    std::vector<Detection> dets = {det_at({100, 0, 0}, 1.0, close)};
    step(s, dets, field_for({}, {}), cfg, 1);
    ASSERT_EQ(s.active.size(), 1u);
    EXPECT_EQ(s.active[0].history.size(), 2u);
}

TEST(TrackerStep, LowSimilarityFailsStage3) {
    std::vector<double> emb(8, 0.0);
    emb[0] = 1.0;
    TrackerState s = state_with_track_at({0, 0, 0}, 0, emb);
    TrackerConfig cfg;
    cfg.sim_min = 0.9;
    std::vector<double> orth(8, 0.0);
    orth[1] = 1.0;
    std::vector<Detection> dets = {det_at({100, 0, 0}, 1.0, orth)};
    step(s, dets, field_for({}, {}), cfg, 1);
    EXPECT_EQ(s.active.size(), 2u);
}

TEST(TrackerStep, EmptyDetectionsAgeAndTerminateTracks) {
    TrackerState s = state_with_track_at({0, 0, 0});
    TrackerConfig cfg;
    cfg.max_misses = 2;
    for (int f = 1; f <= 2; ++f) {
        step(s, {}, field_for({}, {}), cfg, f);
        EXPECT_EQ(s.active.size(), 1u);
    }
    step(s, {}, field_for({}, {}), cfg, 3);  // third consecutive miss: past max_misses
    EXPECT_TRUE(s.active.empty());
    ASSERT_EQ(s.terminated.size(), 1u);
    EXPECT_EQ(s.terminated[0].misses, 3);
}

TEST(TrackerStep, FrameContractEnforced) {
    TrackerState s;
    TrackerConfig cfg;
    EXPECT_THROW(step(s, {}, field_for({}, {}), cfg, 5), std::invalid_argument);
    step(s, {}, field_for({}, {}), cfg, 0);
    EXPECT_THROW(step(s, {}, field_for({}, {}), cfg, 0), std::invalid_argument);
}

TEST(TrackerStep, EmbeddingUpdatesWithEma) {
    std::vector<double> emb = {1.0, 0.0};
    TrackerState s = state_with_track_at({0, 0, 0}, 0, emb);
    TrackerConfig cfg;
    cfg.ema = 0.9;
    std::vector<Detection> dets = {det_at({0.1, 0, 0}, 1.0, {0.0, 1.0})};
    step(s, dets, field_for({}, {}), cfg, 1);
    EXPECT_NEAR(s.active[0].embedding[0], 0.9, 1e-12);
    EXPECT_NEAR(s.active[0].embedding[1], 0.1, 1e-12);
}

TEST(TrackerRun, EmptySequenceGivesNoTracks) {
    EXPECT_TRUE(run({}, TrackerConfig{}).empty());
}

TEST(TrackerRun, StationaryDetectionFormsSingleFullLengthTrack) {
    TrackerConfig cfg;
    std::vector<FrameInput> frames(6);
    for (int f = 0; f < 6; ++f) {
        frames[f].detections = {det_at({2, 3, 0})};
        frames[f].offsets = field_for({{2, 3, 0}}, {{0, 0, 0}});
    }
    std::vector<Track> tracks = run(frames, cfg);
    ASSERT_EQ(tracks.size(), 1u);
    EXPECT_EQ(tracks[0].history.size(), 6u);
    EXPECT_EQ(tracks[0].id, 1);
}

TEST(TrackerRun, DeterministicAcrossRepeats) {
    std::mt19937_64 rng(44);
    std::vector<FrameInput> frames(10);
    for (int f = 0; f < 10; ++f) {
        for (int k = 0; k < 4; ++k) {
            frames[f].detections.push_back(det_at(
                {draw_uniform(rng, -5, 5), draw_uniform(rng, -5, 5), 0}, draw_uniform(rng, 0.4, 1.0)));
        }
        frames[f].offsets = field_for({}, {});
    }
    TrackerConfig cfg;
    std::vector<Track> a = run(frames, cfg);
    std::vector<Track> b = run(frames, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        ASSERT_EQ(a[i].history.size(), b[i].history.size());
        for (std::size_t j = 0; j < a[i].history.size(); ++j) {
            EXPECT_EQ(a[i].history[j].frame, b[i].history[j].frame);
            EXPECT_EQ(a[i].history[j].box.center, b[i].history[j].box.center);
        }
    }
}

TEST(TrackerRun, PerFrameAssignmentIsInjective) {
    std::mt19937_64 rng(45);
    std::vector<FrameInput> frames(8);
    for (int f = 0; f < 8; ++f) {
        int n = 1 + static_cast<int>(rng() % 5);
        for (int k = 0; k < n; ++k) {
            frames[f].detections.push_back(det_at(
                {draw_uniform(rng, -3, 3), draw_uniform(rng, -3, 3), 0}));
        }
        frames[f].offsets = field_for({}, {});
    }
    std::vector<Track> tracks = run(frames, TrackerConfig{});
    std::map<int, int> per_frame_entries;
    for (const Track& t : tracks) {
        int prev = -1;
        for (const TrackEntry& e : t.history) {
            EXPECT_GT(e.frame, prev);  // strictly increasing frames per track
            prev = e.frame;
            per_frame_entries[e.frame]++;
        }
    }
    for (int f = 0; f < 8; ++f) {
        EXPECT_LE(per_frame_entries[f], static_cast<int>(frames[f].detections.size()));
    }
}

TEST(TrackerRun, IdsNeverReused) {
    TrackerConfig cfg;
    cfg.max_misses = 0;
    std::vector<FrameInput> frames(4);
    frames[0].detections = {det_at({0, 0, 0})};
    frames[1].detections = {};  // track dies
    frames[2].detections = {det_at({0, 0, 0})};  // new track appears at same spot
    frames[3].detections = {det_at({0, 0, 0})};
    for (auto& f : frames) f.offsets = field_for({}, {});
    std::vector<Track> tracks = run(frames, cfg);
    ASSERT_EQ(tracks.size(), 2u);
    EXPECT_NE(tracks[0].id, tracks[1].id);
}

TEST(TrackerRun, CrossingSceneWithGroundTruthOffsetsHasNoSwitches) {
    // Three objects on intersecting trajectories (closest approach ~0.5 m);
    // exact detections and offsets keep all identities.
    SceneConfig scfg;
    scfg.objects = 3;
    scfg.frames = 20;
    scfg.points_per_object = 30;
    scfg.noise_sigma = 0.0;
    scfg.vel_max = 0.6;
    scfg.arena_half_extent = 5.0;
    scfg.spacing_min = 6.0;
    SyntheticSequence scene = synth_scene(scfg, 6);
    double min_spacing = std::numeric_limits<double>::infinity();
    for (const Frame& fr : scene.frames) {
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b)
                min_spacing = std::min(min_spacing, distance(fr.objects[a].center, fr.objects[b].center));
    }
    ASSERT_LT(min_spacing, 1.0);  // the trajectories genuinely cross

    std::vector<FrameInput> inputs(scfg.frames);
    for (int f = 0; f < scfg.frames; ++f) {
        const Frame& frame = scene.frames[f];
        OffsetField field;
        field.frame = f;
        field.points = frame.cloud.points;
        field.displacements.assign(frame.cloud.points.size(), Vec3{});
        if (f > 0) {
            const Frame& prev = scene.frames[f - 1];
            for (std::size_t k = 0; k < frame.objects.size(); ++k) {
                for (std::size_t i = 0; i < frame.objects[k].point_indices.size(); ++i) {
                    field.displacements[frame.objects[k].point_indices[i]] =
                        prev.cloud.points[prev.objects[k].point_indices[i]] -
                        frame.cloud.points[frame.objects[k].point_indices[i]];
                }
            }
        }
        inputs[f].offsets = std::move(field);
        for (const GroundTruthObject& o : frame.objects) {
            inputs[f].detections.push_back(det_at(o.center));
        }
    }
    std::vector<Track> tracks = run(inputs, TrackerConfig{});
    EXPECT_EQ(tracks.size(), 3u);
    GroundTruthMap gt;
    for (int f = 0; f < scfg.frames; ++f) gt[f] = scene.frames[f].objects;
    TrackMap pred;
    for (const Track& t : tracks) {
        for (const TrackEntry& e : t.history) pred[e.frame].push_back({t.id, e.box, e.confidence});
    }
    MotReport rep = clear_mot(gt, pred, 1.0);
    EXPECT_EQ(rep.ids, 0);
    EXPECT_DOUBLE_EQ(rep.mota, 1.0);
}

TEST(TrackFile, SaveLoadRoundTrip) {
    std::vector<Track> tracks(2);
    tracks[0].id = 1;
    tracks[0].history = {{0, Box3D{{1.5, 0.25, -0.125}, {1, 2, 1}, 0.5}, 0.875},
                         {1, Box3D{{1.75, 0.5, 0}, {1, 2, 1}, 0.5}, 0.75}};
    tracks[1].id = 2;
    tracks[1].history = {{1, Box3D{{-3, 4, 0}, {2, 2, 2}, -1.25}, 1.0}};
    std::string path = (fs::temp_directory_path() / "modt_tracks_rt.txt").string();
    save_tracks(path, tracks);
    TrackMap loaded = load_tracks(path);
    ASSERT_EQ(loaded.size(), 2u);
    ASSERT_EQ(loaded[0].size(), 1u);
    ASSERT_EQ(loaded[1].size(), 2u);
    EXPECT_EQ(loaded[0][0].track_id, 1);
    EXPECT_EQ(loaded[0][0].box.center, (Vec3{1.5, 0.25, -0.125}));
    EXPECT_DOUBLE_EQ(loaded[0][0].confidence, 0.875);
    EXPECT_EQ(loaded[1][0].track_id, 1);
    EXPECT_EQ(loaded[1][1].track_id, 2);
    EXPECT_DOUBLE_EQ(loaded[1][1].box.yaw, -1.25);
    fs::remove(path);
}

TEST(TrackFile, MalformedLineReportsLineNumber) {
    std::string path = (fs::temp_directory_path() / "modt_tracks_bad.txt").string();
    {
        std::ofstream out(path);
        out << "0 1 0 0 0 1 1 1 0 1\n";
        out << "0 2 0 0 0 1 1 1 0\n";  // 9 fields
    }
    try {
        load_tracks(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    fs::remove(path);
}
