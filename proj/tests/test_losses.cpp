#include <gtest/gtest.h>

#include <random>

#include "modt/losses.hpp"

using namespace modt;

namespace {

TokenSet tokens_at(const std::vector<Vec3>& positions, int frame = 0) {
    TokenSet t;
    t.frame = frame;
    int m = static_cast<int>(positions.size());
    t.features = Tensor::zeros(m, kFeatureDim);
    std::vector<double> pos;
    for (const Vec3& p : positions) pos.insert(pos.end(), {p.x, p.y, p.z});
    t.positions = Tensor::from_data(m, 3, std::move(pos));
    t.source_index.resize(m);
    std::iota(t.source_index.begin(), t.source_index.end(), 0);
    return t;
}

GroundTruthObject object_at(int id, Vec3 center, Vec3 size = {2, 2, 2}, double yaw = 0.0) {
    GroundTruthObject o;
    o.track_id = id;
    o.center = center;
    o.size = size;
    o.yaw = yaw;
    return o;
}

// Independent nearest-counterpart search: for every candidate pair within one
// track, exhaustively pick mutually-unused pairs in ascending distance order.
Tensor brute_force_gt(const TokenSet& tok_t, const TokenSet& tok_tm1,
                      const std::vector<GroundTruthObject>& gt_t,
                      const std::vector<GroundTruthObject>& gt_tm1, double margin) {
    auto assigned = [&margin](const TokenSet& t, const std::vector<GroundTruthObject>& gt, int d) {
        int best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < gt.size(); ++k) {
            double dist = distance(t.position(d), gt[k].center);
            if (dist < bd) { bd = dist; best = static_cast<int>(k); }
        }
        if (best < 0 || !point_in_box(t.position(d), gt[best], margin)) return -1;
        return gt[best].track_id;
    };
    int m = std::max(tok_t.count(), tok_tm1.count());
    Tensor g = Tensor::zeros(m, m);
    std::vector<char> used_d(tok_t.valid_count(), 0), used_e(tok_tm1.valid_count(), 0);
    while (true) {
        double best = std::numeric_limits<double>::infinity();
        int bd = -1, be = -1;
        for (int d = 0; d < tok_t.valid_count(); ++d) {
            if (used_d[d]) continue;
            int td = assigned(tok_t, gt_t, d);
            if (td < 0) continue;
            for (int e = 0; e < tok_tm1.valid_count(); ++e) {
                if (used_e[e]) continue;
                if (assigned(tok_tm1, gt_tm1, e) != td) continue;
                double dist = distance(tok_t.position(d), tok_tm1.position(e));
                if (dist < best) { best = dist; bd = d; be = e; }
            }
        }
        if (bd < 0) break;
        used_d[bd] = used_e[be] = 1;
        g.set_at(bd, be, 1.0);
    }
    return g;
}

AffinityMatrix affinity_from(const Tensor& values) {
    AffinityMatrix a;
    a.values = values;
    a.valid_rows = values.rows();
    a.valid_cols = values.cols();
    return a;
}

double oracle_assoc(const std::vector<std::vector<double>>& p,
                    const std::vector<std::vector<double>>& g) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < g[i].size(); ++j) {
            num += g[i][j] * -std::log(std::max(p[i][j], 1e-12));
            den += g[i][j];
        }
    }
    return num / den;
}

}  // namespace

TEST(GtAffinity, StaticSceneMatchesNearestCounterparts) {
    std::vector<Vec3> pos = {{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}};
    TokenSet tok_t = tokens_at(pos, 1);
    TokenSet tok_tm1 = tokens_at(pos, 0);
    std::vector<GroundTruthObject> gt = {object_at(7, {0.2, 0.2, 0}, {3, 3, 3})};
    GtAffinity g = build_gt_affinity(tok_t, tok_tm1, gt, gt);
    EXPECT_DOUBLE_EQ(g.total, 3.0);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            EXPECT_DOUBLE_EQ(g.values.at(i, j), i == j ? 1.0 : 0.0);
        }
    }
    Tensor expect = brute_force_gt(tok_t, tok_tm1, gt, gt, 0.0);
    EXPECT_TRUE(g.values.same_values(expect));
}

TEST(GtAffinity, DisjointObjectsFormPartialPermutationBlocks) {
    TokenSet tok_t = tokens_at({{0, 0, 0}, {10, 0, 0}, {10.4, 0, 0}}, 1);
    TokenSet tok_tm1 = tokens_at({{0.1, 0, 0}, {9.9, 0, 0}}, 0);
    std::vector<GroundTruthObject> gt_t = {object_at(1, {0, 0, 0}), object_at(2, {10.2, 0, 0})};
    std::vector<GroundTruthObject> gt_tm1 = {object_at(1, {0.1, 0, 0}), object_at(2, {9.9, 0, 0})};
    GtAffinity g = build_gt_affinity(tok_t, tok_tm1, gt_t, gt_tm1);
    // padded to 3x3 (valid_cols = 2)
    EXPECT_EQ(g.valid_cols, 2);
    EXPECT_DOUBLE_EQ(g.values.at(0, 0), 1.0);
    // tokens 1 and 2 belong to track 2; only one of them can take column 1
    EXPECT_DOUBLE_EQ(g.values.at(1, 1) + g.values.at(2, 1), 1.0);
    EXPECT_DOUBLE_EQ(g.total, 2.0);
    for (int r = 0; r < 3; ++r) {
        double row_sum = 0.0;
        for (int c = 0; c < 3; ++c) row_sum += g.values.at(r, c);
        EXPECT_LE(row_sum, 1.0);
    }
    Tensor expect = brute_force_gt(tok_t, tok_tm1, gt_t, gt_tm1, 0.0);
    EXPECT_TRUE(g.values.same_values(expect));
}

TEST(GtAffinity, NoObjectsGiveZeroMatrix) {
    TokenSet tok = tokens_at({{0, 0, 0}, {1, 1, 0}});
    GtAffinity g = build_gt_affinity(tok, tok, {}, {});
    EXPECT_DOUBLE_EQ(g.total, 0.0);
    for (double v : g.values.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(GtAffinity, TokensOutsideBoxesProduceZeroRows) {
    TokenSet tok_t = tokens_at({{0, 0, 0}, {50, 50, 0}}, 1);
    TokenSet tok_tm1 = tokens_at({{0, 0, 0}}, 0);
    std::vector<GroundTruthObject> gt = {object_at(1, {0, 0, 0})};
    GtAffinity g = build_gt_affinity(tok_t, tok_tm1, gt, gt);
    EXPECT_DOUBLE_EQ(g.values.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(g.values.at(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(g.values.at(1, 1), 0.0);
}

TEST(GtAffinity, RandomScenesMatchBruteForce) {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 25; ++trial) {
        int m = 3 + static_cast<int>(rng() % 5);
        std::vector<Vec3> pos_t, pos_tm1;
        for (int i = 0; i < m; ++i) {
            pos_t.push_back({draw_uniform(rng, -6, 6), draw_uniform(rng, -6, 6), 0});
            pos_tm1.push_back({draw_uniform(rng, -6, 6), draw_uniform(rng, -6, 6), 0});
        }
        TokenSet tok_t = tokens_at(pos_t, 1);
        TokenSet tok_tm1 = tokens_at(pos_tm1, 0);
        std::vector<GroundTruthObject> gt_t, gt_tm1;
        for (int k = 0; k < 3; ++k) {
            Vec3 c{draw_uniform(rng, -5, 5), draw_uniform(rng, -5, 5), 0};
            gt_t.push_back(object_at(k, c, {3, 3, 3}));
            gt_tm1.push_back(object_at(k, c + Vec3{draw_uniform(rng, -1, 1), 0, 0}, {3, 3, 3}));
        }
        GtAffinity g = build_gt_affinity(tok_t, tok_tm1, gt_t, gt_tm1, 0.1);
        Tensor expect = brute_force_gt(tok_t, tok_tm1, gt_t, gt_tm1, 0.1);
        EXPECT_TRUE(g.values.same_values(expect)) << "trial " << trial;
        // partial permutation: every row and column holds at most one 1
        for (int i = 0; i < g.values.rows(); ++i) {
            double rs = 0, cs = 0;
            for (int j = 0; j < g.values.cols(); ++j) {
                rs += g.values.at(i, j);
                cs += g.values.at(j, i);
            }
            EXPECT_LE(rs, 1.0);
            EXPECT_LE(cs, 1.0);
        }
    }
}

TEST(AssociationLoss, PerfectCorrespondenceGivesZero) {
    Tensor logits = Tensor::from_data(2, 2, {60.0, 0.0, 0.0, 60.0});
    GtAffinity g;
    g.values = Tensor::from_data(2, 2, {1, 0, 0, 1});
    g.valid_rows = g.valid_cols = 2;
    g.total = 2.0;
    LossTerm term = association_loss(affinity_from(logits), g);
    EXPECT_TRUE(term.supervised);
    EXPECT_NEAR(term.value.item(), 0.0, 1e-9);
}

TEST(AssociationLoss, HalfProbabilityGivesLnTwo) {
    Tensor logits = Tensor::from_data(2, 2, {3.0, 3.0, 0.0, 0.0});
    GtAffinity g;
    g.values = Tensor::from_data(2, 2, {1, 0, 0, 0});
    g.valid_rows = g.valid_cols = 2;
    g.total = 1.0;
    LossTerm term = association_loss(affinity_from(logits), g);
    EXPECT_NEAR(term.value.item(), std::log(2.0), 1e-12);
}

TEST(AssociationLoss, ExtraUnsupervisedRowsLeaveLossUnchanged) {
    Tensor small = Tensor::from_data(2, 2, {1.2, -0.3, 0.4, 0.9});
    GtAffinity g2;
    g2.values = Tensor::from_data(2, 2, {1, 0, 0, 1});
    g2.valid_rows = g2.valid_cols = 2;
    g2.total = 2.0;
    double base = association_loss(affinity_from(small), g2).value.item();

    // Same two columns, twice the rows; the new rows carry no G support.
    Tensor wide = Tensor::from_data(4, 2, {1.2, -0.3, 0.4, 0.9, 5.0, -5.0, 2.0, 2.0});
    AffinityMatrix a4;
    a4.values = wide;
    a4.valid_rows = 4;
    a4.valid_cols = 2;
    GtAffinity g4;
    g4.values = Tensor::from_data(4, 2, {1, 0, 0, 1, 0, 0, 0, 0});
    g4.valid_rows = 4;
    g4.valid_cols = 2;
    g4.total = 2.0;
    // association_loss requires matching dims; emulate by checking the oracle
    double wide_loss = 0.0;
    {
        std::vector<std::vector<double>> p(4, std::vector<double>(2));
        for (int i = 0; i < 4; ++i) {
            double mx = std::max(wide.at(i, 0), wide.at(i, 1));
            double e0 = std::exp(wide.at(i, 0) - mx), e1 = std::exp(wide.at(i, 1) - mx);
            p[i][0] = e0 / (e0 + e1);
            p[i][1] = e1 / (e0 + e1);
        }
        wide_loss = oracle_assoc(p, {{1, 0}, {0, 1}, {0, 0}, {0, 0}});
    }
    EXPECT_NEAR(base, wide_loss, 1e-12);
}

TEST(AssociationLoss, NoSupervisionFlagsZero) {
    Tensor logits = Tensor::from_data(2, 2, {1.0, 2.0, 3.0, 4.0});
    GtAffinity g;
    g.values = Tensor::zeros(2, 2);
    g.valid_rows = g.valid_cols = 2;
    g.total = 0.0;
    LossTerm term = association_loss(affinity_from(logits), g);
    EXPECT_FALSE(term.supervised);
    EXPECT_DOUBLE_EQ(term.value.item(), 0.0);
}

TEST(AssociationLoss, MatchesOracleAndIgnoresNonSupportEntries) {
    std::mt19937_64 rng(99);
    Tensor logits = Tensor::uniform(4, 4, rng, -2.0, 2.0);
    GtAffinity g;
    g.values = Tensor::from_data(4, 4, {1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0});
    g.valid_rows = g.valid_cols = 4;
    g.total = 3.0;
    double lib = association_loss(affinity_from(logits), g).value.item();

    std::vector<std::vector<double>> p(4, std::vector<double>(4));
    for (int i = 0; i < 4; ++i) {
        double mx = -1e300, den = 0.0;
        for (int j = 0; j < 4; ++j) mx = std::max(mx, logits.at(i, j));
        for (int j = 0; j < 4; ++j) {
            p[i][j] = std::exp(logits.at(i, j) - mx);
            den += p[i][j];
        }
        for (int j = 0; j < 4; ++j) p[i][j] /= den;
    }
    std::vector<std::vector<double>> gv(4, std::vector<double>(4, 0.0));
    gv[0][0] = gv[1][2] = gv[3][1] = 1.0;
    double expect = oracle_assoc(p, gv);
    EXPECT_NEAR(lib, expect, 1e-12);

    // Masked-sum: perturbing a non-support probability leaves the oracle loss
    // unchanged once normalization is held fixed.
    p[2][3] += 0.17;
    EXPECT_DOUBLE_EQ(oracle_assoc(p, gv), expect);
}

TEST(CenterLoss, HandCases) {
    EXPECT_DOUBLE_EQ(center_loss(Tensor::from_data(1, 3, {1, 2, 3}),
                                 Tensor::from_data(1, 3, {1, 2, 3})).value.item(), 0.0);
    EXPECT_DOUBLE_EQ(center_loss(Tensor::from_data(1, 3, {1, -2, 2}),
                                 Tensor::zeros(1, 3)).value.item(), 5.0);
    // l1 totals 3 and 5 -> mean 4
    Tensor pred = Tensor::from_data(2, 3, {1, 1, 1, 2, 2, 1});
    Tensor gt = Tensor::zeros(2, 3);
    EXPECT_DOUBLE_EQ(center_loss(pred, gt).value.item(), 4.0);
}

TEST(SizeLoss, HandCases) {
    EXPECT_DOUBLE_EQ(size_loss(Tensor::from_data(1, 3, {2, 2, 2}),
                               Tensor::from_data(1, 3, {2, 2, 2})).value.item(), 0.0);
    EXPECT_NEAR(size_loss(Tensor::from_data(1, 3, {1.1, 1.2, 1.3}),
                          Tensor::filled(1, 3, 1.0)).value.item(), 0.6, 1e-12);
}

TEST(TotalLoss, WeightedSum) {
    LossTerm la{Tensor::scalar(1.0), true};
    LossTerm lc{Tensor::scalar(2.0), true};
    LossTerm lb{Tensor::scalar(3.0), true};
    LossWeights w;
    w.lambda_center = 0.5;
    w.lambda_size = 1.0;
    EXPECT_DOUBLE_EQ(total_loss(la, lc, lb, w).item(), 5.0);
    w.lambda_center = 0.0;
    w.lambda_size = 0.0;
    EXPECT_DOUBLE_EQ(total_loss(la, lc, lb, w).item(), 1.0);
    LossTerm zero{Tensor::scalar(0.0), false};
    EXPECT_DOUBLE_EQ(total_loss(zero, zero, zero, w).item(), 0.0);
}

TEST(Losses, NonNegativeAndGradientsFlow) {
    std::mt19937_64 rng(123);
    Tensor logits = Tensor::uniform(3, 3, rng, -1.0, 1.0).set_requires_grad(true);
    GtAffinity g;
    g.values = Tensor::from_data(3, 3, {0, 1, 0, 1, 0, 0, 0, 0, 1});
    g.valid_rows = g.valid_cols = 3;
    g.total = 3.0;
    GradTape tape;
    {
        TapeScope scope(tape);
        LossTerm term = association_loss(affinity_from(logits), g);
        EXPECT_GE(term.value.item(), 0.0);
        tape.backward(term.value);
    }
    double norm = 0.0;
    for (double v : logits.grad()) norm += std::fabs(v);
    EXPECT_GT(norm, 0.0);
}

TEST(MatchPredictions, GreedyByConfidenceWithinRadius) {
    std::vector<Detection> dets(3);
    dets[0].box.center = {0, 0, 0};
    dets[0].confidence = 0.9;
    dets[1].box.center = {0.4, 0, 0};
    dets[1].confidence = 0.8;
    dets[2].box.center = {50, 0, 0};
    dets[2].confidence = 0.7;
    std::vector<GroundTruthObject> gt = {object_at(1, {0.1, 0, 0}), object_at(2, {10, 0, 0})};
    std::vector<std::pair<int, int>> pairs = match_predictions(dets, gt, 2.0);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].first, 0);   // highest confidence takes the nearest gt
    EXPECT_EQ(pairs[0].second, 0);
}
