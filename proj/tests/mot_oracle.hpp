// Test-only brute-force CLEAR-MOT counting: naive per-frame matching with
// continuity, plain loops, no reuse of the library's accumulation code.
#pragma once

#include <map>
#include <set>

#include "modt/metrics.hpp"

namespace oracle {

struct MotCounts {
    int fp = 0, fn = 0, ids = 0, gt_total = 0, matches = 0;
    double similarity = 0.0;

    double recall() const {
        return gt_total > 0 ? static_cast<double>(gt_total - fn) / gt_total : 0.0;
    }
    double mota() const {
        return 1.0 - static_cast<double>(fp + fn + ids) / gt_total;
    }
    double motp() const { return matches > 0 ? 100.0 * similarity / matches : 0.0; }
};

inline MotCounts count_mot(const modt::GroundTruthMap& gt, const modt::TrackMap& pred,
                           double dist_max) {
    using modt::GroundTruthObject;
    using modt::TrackedBox;
    MotCounts c;
    std::set<int> frames;
    for (const auto& [f, v] : gt) frames.insert(f);
    for (const auto& [f, v] : pred) frames.insert(f);
    std::map<int, int> prev, last;
    for (int f : frames) {
        std::vector<GroundTruthObject> g;
        std::vector<TrackedBox> p;
        if (gt.count(f)) g = gt.at(f);
        if (pred.count(f)) p = pred.at(f);
        c.gt_total += static_cast<int>(g.size());
        // drop duplicate ids (first occurrence wins), count extras as errors
        {
            std::set<int> seen;
            std::vector<GroundTruthObject> gd;
            for (const auto& x : g) {
                if (seen.insert(x.track_id).second) gd.push_back(x);
                else ++c.fn;
            }
            g = gd;
            seen.clear();
            std::vector<TrackedBox> pd;
            for (const auto& x : p) {
                if (seen.insert(x.track_id).second) pd.push_back(x);
                else ++c.fp;
            }
            p = pd;
        }
        std::set<int> gu, pu;
        std::map<int, int> now;
        for (const auto& [gid, pid] : prev) {
            const GroundTruthObject* gp = nullptr;
            const TrackedBox* pp = nullptr;
            for (const auto& x : g) if (x.track_id == gid) { gp = &x; break; }
            for (const auto& x : p) if (x.track_id == pid) { pp = &x; break; }
            if (!gp || !pp) continue;
            double d = modt::distance(gp->center, pp->box.center);
            if (d <= dist_max) {
                now[gid] = pid;
                gu.insert(gid);
                pu.insert(pid);
                c.similarity += 1.0 - d / dist_max;
                ++c.matches;
                if (last.count(gid) && last[gid] != pid) ++c.ids;
                last[gid] = pid;
            }
        }
        while (true) {
            double best = dist_max;
            int bg = -1, bp = -1;
            bool found = false;
            for (const auto& go : g) {
                if (gu.count(go.track_id)) continue;
                for (const auto& po : p) {
                    if (pu.count(po.track_id)) continue;
                    double d = modt::distance(go.center, po.box.center);
                    if (d <= dist_max &&
                        (!found || d < best ||
                         (d == best && (go.track_id < bg || (go.track_id == bg && po.track_id < bp))))) {
                        best = d;
                        bg = go.track_id;
                        bp = po.track_id;
                        found = true;
                    }
                }
            }
            if (!found) break;
            gu.insert(bg);
            pu.insert(bp);
            now[bg] = bp;
            c.similarity += 1.0 - best / dist_max;
            ++c.matches;
            if (last.count(bg) && last[bg] != bp) ++c.ids;
            last[bg] = bp;
        }
        for (const auto& go : g) if (!gu.count(go.track_id)) ++c.fn;
        for (const auto& po : p) if (!pu.count(po.track_id)) ++c.fp;
        prev = now;
    }
    return c;
}

}  // namespace oracle
