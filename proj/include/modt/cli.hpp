// Command implementations behind the `modt` tool: synthetic data generation,
// toy training, tracking inference, evaluation, and gradient checking.
// These throw FormatError for malformed inputs (exit 2) and other exceptions
// for runtime failures (exit 1); main() does the mapping.
#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <set>

#include "modt/metrics.hpp"
#include "modt/model.hpp"

namespace modt::cli {

namespace fs = std::filesystem;

inline std::vector<std::string> list_scan_files(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw FormatError("scan directory '" + dir + "' does not exist");
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".bin") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// Loads a scan directory (sorted .bin files, frame index = position) and, if
// present or required, the gt.txt sidecar.
inline SyntheticSequence load_sequence(const std::string& dir, bool require_gt) {
    SyntheticSequence seq;
    std::vector<std::string> files = list_scan_files(dir);
    std::string gt_path = (fs::path(dir) / "gt.txt").string();
    GroundTruthMap gt;
    if (fs::exists(gt_path)) {
        gt = load_ground_truth(gt_path);
    } else if (require_gt) {
        throw FormatError("ground-truth sidecar '" + gt_path + "' not found");
    }
    for (std::size_t f = 0; f < files.size(); ++f) {
        Frame frame;
        frame.cloud = load_scan(files[f]);
        frame.cloud.frame = static_cast<int>(f);
        auto it = gt.find(static_cast<int>(f));
        if (it != gt.end()) frame.objects = it->second;
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

inline void run_synth(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    SyntheticSequence seq = synth_scene(cfg.scene, cfg.scene_seed);
    char name[32];
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
        std::snprintf(name, sizeof(name), "scan_%06zu.bin", f);
        save_scan((fs::path(out_dir) / name).string(), seq.frames[f].cloud);
    }
    save_ground_truth((fs::path(out_dir) / "gt.txt").string(), seq);
    std::cout << "wrote " << seq.frames.size() << " scans to " << out_dir << "\n";
}

inline void run_train(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& out_ckpt, const std::string& resume_path = "",
                      const std::string& log_csv = "") {
    SyntheticSequence seq = load_sequence(data_dir, /*require_gt=*/true);
    Model model = Model::init(cfg, cfg.train.seed);
    AdamTrainer adam;
    if (!resume_path.empty()) {
        NamedTensors ckpt = load_checkpoint(resume_path);
        load_model_params(model, ckpt);
        adam.restore_state(model, ckpt);
    }
    std::ofstream csv;
    if (!log_csv.empty()) {
        csv.open(log_csv, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot open loss log '" + log_csv + "'");
    }
    TrainLog log = train_model(model, adam, seq, cfg, cfg.train.iterations,
                               log_csv.empty() ? nullptr : &csv);
    NamedTensors out = model.named_params();
    adam.append_state(model, out);
    save_checkpoint(out_ckpt, out);
    if (!log.losses.empty()) {
        std::cout << "trained " << log.losses.size() << " iterations, loss "
                  << format_double(log.losses.front()) << " -> "
                  << format_double(log.losses.back()) << "\n";
    } else {
        std::cout << "wrote initialization checkpoint (0 iterations)\n";
    }
    std::cout << "checkpoint: " << out_ckpt << "\n";
}

inline OffsetField zero_offsets(const PointCloud& cloud) {
    OffsetField field;
    field.frame = cloud.frame;
    field.points = cloud.points;
    field.displacements.assign(cloud.points.size(), Vec3{});
    return field;
}

// Full inference: encoder -> affinity -> refine -> heads -> tracker.
// Frames 0 and 1 are bootstrapped from the first triplet (frame 1 uses the
// (1, 0) refined affinity; frame 0 tracks with zero offsets).
inline void run_track(const RunConfig& cfg, const std::string& ckpt_path,
                      const std::string& scan_dir, const std::string& out_path,
                      const std::string& dets_out = "") {
    std::vector<std::string> files = list_scan_files(scan_dir);
    if (files.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + out_path + "'");
        if (!dets_out.empty()) save_detections(dets_out, {});
        std::cout << "no scans in " << scan_dir << "; wrote empty track file\n";
        return;
    }
    Model model = Model::init(cfg, cfg.train.seed);
    load_model_params(model, load_checkpoint(ckpt_path));

    int n = static_cast<int>(files.size());
    std::vector<PointCloud> clouds(n);
    std::vector<TokenSet> tokens(n);
    parallel_for(n, env_thread_cap(), [&](int f) {
        clouds[f] = load_scan(files[f]);
        clouds[f].frame = f;
        tokens[f] = encode_frame(model, clouds[f], cfg);
    });

    std::vector<FrameInput> inputs(n);
    for (int f = 0; f < n; ++f) {
        inputs[f].offsets = zero_offsets(clouds[f]);
        if (!tokens[f].skip && tokens[f].valid_count() > 0) {
            inputs[f].detections = predict_boxes(tokens[f], model.heads, cfg.heads);
        }
    }
    for (int f = 2; f < n; ++f) {
        TripletForward fwd = forward_tokens(model, tokens[f], tokens[f - 1], tokens[f - 2], cfg);
        if (fwd.skip) continue;
        inputs[f].offsets = predict_offsets(tokens[f], tokens[f - 1], fwd.refined.refined_t,
                                            model.heads, cfg.heads, clouds[f]);
        if (f == 2) {
            inputs[1].offsets = predict_offsets(tokens[1], tokens[0], fwd.refined.refined_tm1,
                                                model.heads, cfg.heads, clouds[1]);
        }
    }

    std::vector<Track> tracks = run(inputs, cfg.tracker);
    save_tracks(out_path, tracks);
    if (!dets_out.empty()) {
        std::vector<std::pair<int, Detection>> all;
        for (int f = 0; f < n; ++f) {
            for (const Detection& d : inputs[f].detections) all.emplace_back(f, d);
        }
        save_detections(dets_out, all);
    }
    std::size_t boxes = 0;
    for (const Track& t : tracks) boxes += t.history.size();
    std::cout << "tracked " << n << " frames: " << tracks.size() << " tracks, " << boxes
              << " boxes -> " << out_path << "\n";
}

inline MotReport run_eval(const std::string& tracks_path, const std::string& gt_path,
                          const std::string& report_out, double dist_max,
                          const std::string& csv_out = "") {
    GroundTruthMap gt = load_ground_truth(gt_path);
    TrackMap pred = load_tracks(tracks_path);
    MotReport rep = clear_mot(gt, pred, dist_max);

    // Averaged metrics: sweep the confidence thresholds present in the file.
    std::set<double> confs;
    for (const auto& [frame, boxes] : pred) {
        for (const TrackedBox& b : boxes) confs.insert(b.confidence);
    }
    std::vector<ThresholdedRun> runs;
    for (double threshold : confs) {
        ThresholdedRun run;
        run.threshold = threshold;
        for (const auto& [frame, boxes] : pred) {
            for (const TrackedBox& b : boxes) {
                if (b.confidence >= threshold) run.pred[frame].push_back(b);
            }
        }
        runs.push_back(std::move(run));
    }
    AveragedReport avg = averaged_mot(runs, gt, dist_max);

    std::cout << format_mot_summary(rep);
    if (avg.valid) {
        std::cout << "AMOTA  " << format_double(avg.amota) << "\n"
                  << "sAMOTA " << format_double(avg.samota) << "\n"
                  << "AMOTP  " << format_double(avg.amotp) << "\n";
    }
    if (!report_out.empty()) save_report(report_out, rep, &avg);
    if (!csv_out.empty()) save_recall_csv(csv_out, avg);
    return rep;
}

inline bool run_gradcheck(const RunConfig& cfg, std::uint64_t seed, std::ostream& log) {
    bool ok = true;
    auto report = [&](const GradcheckResult& r) {
        log << (r.ok ? "ok   " : "FAIL ") << r.name << "  worst err " << format_double(r.worst);
        if (!r.detail.empty()) log << "  (" << r.detail << ")";
        log << "\n";
        ok = ok && r.ok;
    };
    for (const GradcheckResult& r : gradcheck_ops(seed)) report(r);
    report(gradcheck_encoder(seed));
    report(gradcheck_pipeline(cfg, seed));
    return ok;
}

}  // namespace modt::cli
