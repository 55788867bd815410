// CLEAR-MOT evaluation (MOTA, MOTP, IDS, FP, FN, MT, ML, FRAG) plus the
// averaged variants (AMOTA, sAMOTA, AMOTP) over a fixed 40-point recall grid.
// Matching is by center distance with previous-frame continuity preferred.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "modt/scans.hpp"
#include "modt/tracker.hpp"

namespace modt {

struct FrameMatch {
    int gt_id = 0;
    int pred_id = 0;
    double dist = 0.0;
};

struct FrameMatching {
    std::vector<FrameMatch> matches;
    std::vector<int> unmatched_gt;    // FN ids
    std::vector<int> unmatched_pred;  // FP ids
};

// Greedy center-distance matching for one frame. Pairings from the previous
// frame are kept first when both sides are present and still within dist_max
// (CLEAR convention); the remainder matches by ascending distance with ties
// broken by lower gt id then lower pred id.
inline FrameMatching match_frame(const std::vector<GroundTruthObject>& gt,
                                 const std::vector<TrackedBox>& pred, double dist_max,
                                 const std::map<int, int>& prev = {}) {
    FrameMatching out;
    std::map<int, int> gt_pos, pred_pos;  // id -> index (first occurrence wins)
    for (std::size_t i = 0; i < gt.size(); ++i) gt_pos.emplace(gt[i].track_id, static_cast<int>(i));
    for (std::size_t i = 0; i < pred.size(); ++i) pred_pos.emplace(pred[i].track_id, static_cast<int>(i));

    std::set<int> gt_used, pred_used;
    for (const auto& [gt_id, pred_id] : prev) {
        auto gi = gt_pos.find(gt_id);
        auto pi = pred_pos.find(pred_id);
        if (gi == gt_pos.end() || pi == pred_pos.end()) continue;
        if (gt_used.count(gt_id) || pred_used.count(pred_id)) continue;
        double d = distance(gt[gi->second].center, pred[pi->second].box.center);
        if (d <= dist_max) {
            out.matches.push_back({gt_id, pred_id, d});
            gt_used.insert(gt_id);
            pred_used.insert(pred_id);
        }
    }

    struct Cand { double dist; int gt_id, pred_id; };
    std::vector<Cand> cands;
    for (const auto& [gid, gidx] : gt_pos) {
        if (gt_used.count(gid)) continue;
        for (const auto& [pid, pidx] : pred_pos) {
            if (pred_used.count(pid)) continue;
            double d = distance(gt[gidx].center, pred[pidx].box.center);
            if (d <= dist_max) cands.push_back({d, gid, pid});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.gt_id != b.gt_id) return a.gt_id < b.gt_id;
        return a.pred_id < b.pred_id;
    });
    for (const Cand& c : cands) {
        if (gt_used.count(c.gt_id) || pred_used.count(c.pred_id)) continue;
        gt_used.insert(c.gt_id);
        pred_used.insert(c.pred_id);
        out.matches.push_back({c.gt_id, c.pred_id, c.dist});
    }
    for (const auto& [gid, gidx] : gt_pos) {
        if (!gt_used.count(gid)) out.unmatched_gt.push_back(gid);
    }
    for (const auto& [pid, pidx] : pred_pos) {
        if (!pred_used.count(pid)) out.unmatched_pred.push_back(pid);
    }
    return out;
}

struct MotReport {
    double mota = std::numeric_limits<double>::quiet_NaN();  // fraction, <= 1
    double motp = 0.0;   // percent: 100 * mean(1 - d / dist_max) over matches
    int ids = 0;
    int fp = 0;
    int fn = 0;
    int frag = 0;
    int gt_total = 0;           // ground-truth boxes over all frames
    int gt_trajectories = 0;
    int matches_total = 0;
    double mt = 0.0;  // fraction of trajectories tracked >= 80% of their span
    double ml = 0.0;  // fraction tracked < 20%
    bool valid = false;  // false when gt_total == 0 (MOTA undefined)

    double recall() const {
        return gt_total > 0 ? static_cast<double>(gt_total - fn) / gt_total : 0.0;
    }
};

// Accumulates CLEAR-MOT counts over a sequence. IDS is counted when a gt
// trajectory's matched pred id differs from its previously matched pred id
// (gaps allowed); FRAG counts tracked -> untracked transitions along each
// trajectory's lifespan.
inline MotReport clear_mot(const GroundTruthMap& gt, const TrackMap& pred, double dist_max) {
    MotReport rep;
    std::set<int> frames;
    for (const auto& [f, boxes] : gt) frames.insert(f);
    for (const auto& [f, boxes] : pred) frames.insert(f);

    static const std::vector<GroundTruthObject> no_gt;
    static const std::vector<TrackedBox> no_pred;

    std::map<int, int> prev_matches;           // last frame's (gt id -> pred id)
    std::map<int, int> last_matched_pred;      // persists across gaps, for IDS
    std::map<int, std::vector<char>> tracked_by_traj;  // per gt id, in lifespan order
    double similarity_sum = 0.0;

    for (int f : frames) {
        auto git = gt.find(f);
        auto pit = pred.find(f);
        const auto& gt_boxes = git != gt.end() ? git->second : no_gt;
        const auto& pred_boxes = pit != pred.end() ? pit->second : no_pred;

        FrameMatching m = match_frame(gt_boxes, pred_boxes, dist_max, prev_matches);
        rep.gt_total += static_cast<int>(gt_boxes.size());
        rep.fp += static_cast<int>(m.unmatched_pred.size());
        rep.fn += static_cast<int>(m.unmatched_gt.size());
        rep.matches_total += static_cast<int>(m.matches.size());
        // Matching is id-keyed; duplicated ids within a frame are spurious
        // boxes and count as plain errors.
        std::set<int> gt_ids, pred_ids;
        for (const auto& b : gt_boxes) gt_ids.insert(b.track_id);
        for (const auto& b : pred_boxes) pred_ids.insert(b.track_id);
        rep.fn += static_cast<int>(gt_boxes.size() - gt_ids.size());
        rep.fp += static_cast<int>(pred_boxes.size() - pred_ids.size());

        prev_matches.clear();
        for (const FrameMatch& fm : m.matches) {
            similarity_sum += 1.0 - fm.dist / dist_max;
            auto it = last_matched_pred.find(fm.gt_id);
            if (it != last_matched_pred.end() && it->second != fm.pred_id) ++rep.ids;
            last_matched_pred[fm.gt_id] = fm.pred_id;
            prev_matches[fm.gt_id] = fm.pred_id;
            tracked_by_traj[fm.gt_id].push_back(1);
        }
        for (int gid : m.unmatched_gt) tracked_by_traj[gid].push_back(0);
    }

    rep.gt_trajectories = static_cast<int>(tracked_by_traj.size());
    int mt_count = 0, ml_count = 0;
    for (const auto& [gid, flags] : tracked_by_traj) {
        int tracked = 0;
        for (std::size_t i = 0; i < flags.size(); ++i) {
            tracked += flags[i];
            if (i > 0 && flags[i - 1] == 1 && flags[i] == 0) ++rep.frag;
        }
        double ratio = static_cast<double>(tracked) / flags.size();
        if (ratio >= 0.8) ++mt_count;
        if (ratio < 0.2) ++ml_count;
    }
    if (rep.gt_trajectories > 0) {
        rep.mt = static_cast<double>(mt_count) / rep.gt_trajectories;
        rep.ml = static_cast<double>(ml_count) / rep.gt_trajectories;
    }
    if (rep.matches_total > 0) rep.motp = 100.0 * similarity_sum / rep.matches_total;
    if (rep.gt_total > 0) {
        rep.valid = true;
        rep.mota = 1.0 - static_cast<double>(rep.fn + rep.fp + rep.ids) / rep.gt_total;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Averaged metrics over the recall grid {0.025, 0.05, ..., 1.0}

struct ThresholdedRun {
    double threshold = 0.0;
    TrackMap pred;
};

struct RecallPoint {
    double target = 0.0;
    bool reachable = false;
    double threshold = 0.0;
    double recall = 0.0;
    double mota = 0.0;   // clamped to >= 0 per the averaging protocol
    double motp = 0.0;
    double smota = 0.0;  // recall-rescaled MOTA, clamped to [0, 1]
};

struct AveragedReport {
    double amota = 0.0;
    double samota = 0.0;
    double amotp = 0.0;
    std::vector<RecallPoint> points;
    bool valid = false;
};

inline constexpr int kRecallGridSize = 40;

// Evaluates each run, then assigns to every grid recall the feasible run with
// the smallest recall >= target (ties: larger threshold). Unreachable grid
// points contribute 0. sMOTA at target r rescales the error mass by r*GT
// after discounting the (1-r)*GT misses the target itself allows.
inline AveragedReport averaged_mot(const std::vector<ThresholdedRun>& runs,
                                   const GroundTruthMap& gt, double dist_max) {
    AveragedReport rep;
    struct RunEval { double threshold, recall; MotReport mot; };
    std::vector<RunEval> evals;
    for (const ThresholdedRun& run : runs) {
        MotReport r = clear_mot(gt, run.pred, dist_max);
        if (!r.valid) continue;
        evals.push_back({run.threshold, r.recall(), r});
    }
    if (evals.empty()) return rep;
    rep.valid = true;

    int gt_total = evals.front().mot.gt_total;
    for (int j = 1; j <= kRecallGridSize; ++j) {
        RecallPoint pt;
        pt.target = 0.025 * j;
        const RunEval* chosen = nullptr;
        for (const RunEval& e : evals) {
            if (e.recall + 1e-9 < pt.target) continue;
            if (chosen == nullptr || e.recall < chosen->recall ||
                (e.recall == chosen->recall && e.threshold > chosen->threshold)) {
                chosen = &e;
            }
        }
        if (chosen != nullptr) {
            pt.reachable = true;
            pt.threshold = chosen->threshold;
            pt.recall = chosen->recall;
            pt.mota = std::max(0.0, chosen->mot.mota);
            pt.motp = chosen->mot.motp;
            double errors = chosen->mot.fp + chosen->mot.fn + chosen->mot.ids;
            double smota = 1.0 - (errors - (1.0 - pt.target) * gt_total) / (pt.target * gt_total);
            pt.smota = std::clamp(smota, 0.0, 1.0);
        }
        rep.amota += pt.mota;
        rep.samota += pt.smota;
        rep.amotp += pt.motp;
        rep.points.push_back(pt);
    }
    rep.amota /= kRecallGridSize;
    rep.samota /= kRecallGridSize;
    rep.amotp /= kRecallGridSize;
    return rep;
}

// ---------------------------------------------------------------------------
// Report output

inline std::string format_mot_summary(const MotReport& r) {
    std::string s;
    s += "MOTA   " + (r.valid ? format_double(r.mota) : std::string("undefined (no ground truth)")) + "\n";
    s += "MOTP   " + format_double(r.motp) + "%\n";
    s += "IDS    " + std::to_string(r.ids) + "\n";
    s += "FP     " + std::to_string(r.fp) + "\n";
    s += "FN     " + std::to_string(r.fn) + "\n";
    s += "FRAG   " + std::to_string(r.frag) + "\n";
    s += "MT     " + format_double(r.mt) + "\n";
    s += "ML     " + format_double(r.ml) + "\n";
    s += "GT     " + std::to_string(r.gt_total) + " boxes / " +
         std::to_string(r.gt_trajectories) + " trajectories\n";
    return s;
}

inline void save_report(const std::string& path, const MotReport& r,
                        const AveragedReport* avg = nullptr) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_report: cannot open '" + path + "'");
    out << "mota = " << (r.valid ? format_double(r.mota) : "nan") << "\n";
    out << "motp = " << format_double(r.motp) << "\n";
    out << "ids = " << r.ids << "\n";
    out << "fp = " << r.fp << "\n";
    out << "fn = " << r.fn << "\n";
    out << "frag = " << r.frag << "\n";
    out << "mt = " << format_double(r.mt) << "\n";
    out << "ml = " << format_double(r.ml) << "\n";
    out << "gt_boxes = " << r.gt_total << "\n";
    out << "gt_trajectories = " << r.gt_trajectories << "\n";
    if (avg != nullptr && avg->valid) {
        out << "amota = " << format_double(avg->amota) << "\n";
        out << "samota = " << format_double(avg->samota) << "\n";
        out << "amotp = " << format_double(avg->amotp) << "\n";
    }
}

inline void save_recall_csv(const std::string& path, const AveragedReport& avg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_recall_csv: cannot open '" + path + "'");
    out << "target_recall,reachable,threshold,recall,mota,motp,smota\n";
    for (const RecallPoint& p : avg.points) {
        out << format_double(p.target) << ',' << (p.reachable ? 1 : 0) << ','
            << format_double(p.threshold) << ',' << format_double(p.recall) << ','
            << format_double(p.mota) << ',' << format_double(p.motp) << ','
            << format_double(p.smota) << '\n';
    }
}

}  // namespace modt
