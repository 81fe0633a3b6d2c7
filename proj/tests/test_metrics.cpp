// Copyright 2026 The texsort Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <array>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"
#include "texsort/dataset.hpp"
#include "texsort/metrics.hpp"

namespace texsort {
namespace {

using Rows = std::vector<std::vector<long long>>;

// Every row of length 4 summing to n, in lexicographic order.
std::vector<std::array<int, 4>> compositions(int n) {
    std::vector<std::array<int, 4>> out;
    for (int a = 0; a <= n; ++a)
        for (int b = 0; a + b <= n; ++b)
            for (int c = 0; a + b + c <= n; ++c) out.push_back({a, b, c, n - a - b - c});
    return out;
}

double f1_by_hand(const Rows& m, int k) {
    double tp = m[k][k], fp = 0, fn = 0;
    for (int i = 0; i < 4; ++i)
        if (i != k) fp += m[i][k], fn += m[k][i];
    const double p = tp + fp == 0 ? 0 : tp / (tp + fp), r = tp + fn == 0 ? 0 : tp / (tp + fn);
    return p + r == 0 ? 0 : 2 * p * r / (p + r);
}

// Searches all 4x4 count matrices with row supports 6/6/6/14 for those that fit
// the known error pattern of the reference model on the standard test set:
//   - Cotton: every sample correct;
//   - ViscosePolyester: 13 of 14 correct, and nothing else predicted as it;
//   - CottonPolyester: 2 correct, 2 predicted Cotton, 2 predicted Polyester;
//   - exactly 1 Polyester predicted CottonPolyester;
// and whose per-class F1 rounds to (0.8571, 0.7692, 0.4000, 0.9630).
std::vector<Rows> reconstruct_confusion() {
    const std::array<double, 4> target_f1{0.8571, 0.7692, 0.4000, 0.9630};
    std::vector<Rows> found;
    const auto six = compositions(6), fourteen = compositions(14);
    for (const auto& r0 : six) {
        if (r0[0] != 6) continue;
        for (const auto& r1 : six) {
            if (r1[2] != 1) continue;
            for (const auto& r2 : six) {
                if (r2[0] != 2 || r2[1] != 2 || r2[2] != 2) continue;
                for (const auto& r3 : fourteen) {
                    if (r3[3] != 13) continue;
                    if (r0[3] + r1[3] + r2[3] != 0) continue;
                    const Rows m{{r0.begin(), r0.end()}, {r1.begin(), r1.end()}, {r2.begin(), r2.end()},
                                 {r3.begin(), r3.end()}};
                    bool ok = true;
                    for (int k = 0; k < 4 && ok; ++k) ok = std::fabs(f1_by_hand(m, k) - target_f1[k]) < 5e-5;
                    if (ok) found.push_back(m);
                }
            }
        }
    }
    return found;
}

const Rows kReconstructed{{6, 0, 0, 0}, {0, 5, 1, 0}, {2, 2, 2, 0}, {0, 0, 1, 13}};

std::vector<std::string> classes() { return {kClassOrder.begin(), kClassOrder.end()}; }

TEST(Reconstruction, SearchFindsExactlyTheExpectedMatrix) {
    const auto found = reconstruct_confusion();
    ASSERT_EQ(found.size(), 1u);
    EXPECT_EQ(found[0], kReconstructed);
}

TEST(Reconstruction, ReportMatchesTargetFigures) {
    const auto r = classification_report(ConfusionMatrix::from_rows(kReconstructed), classes());
    EXPECT_EQ(r.accuracy, 0.8125);
    const std::array<double, 4> f1{0.8571, 0.7692, 0.4000, 0.9630};
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(r.per_class[k].f1, f1[k], 1e-4) << kClassOrder[k];
    EXPECT_NEAR(r.weighted_f1, 0.8012, 1e-4);
    EXPECT_EQ(r.matrix.trace(), 26);
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
    std::vector<int> t;
    for (int i = 0; i < 32; ++i) t.push_back(i % 4);
    const auto cm = confusion(t, t, 4);
    EXPECT_EQ(cm.trace(), 32);
    EXPECT_EQ(accuracy(cm), 1.0);
}

TEST(Confusion, EmptyInputIsAllZero) {
    const auto cm = confusion(std::vector<int>{}, std::vector<int>{}, 4);
    EXPECT_EQ(cm.total(), 0);
    EXPECT_THROW(accuracy(cm), ValidationError);
}

TEST(Confusion, UnknownLabelIsRejected) {
    EXPECT_THROW(confusion({"Cotton"}, {"Silk"}, classes()), ValidationError);
    EXPECT_THROW(confusion(std::vector<int>{0, 1}, std::vector<int>{0}, 4), ValidationError);
}

TEST(Confusion, AllOffDiagonalHasZeroAccuracy) {
    const auto cm = ConfusionMatrix::from_rows({{0, 3, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 2}, {0, 5, 0, 0}});
    EXPECT_EQ(accuracy(cm), 0.0);
}

TEST(PerClass, ZeroTruePositivesGiveZeroF1) {
    // CottonPolyester never predicted correctly, and never predicted at all in the second case.
    const auto a = per_class_prf(ConfusionMatrix::from_rows({{6, 0, 0, 0}, {0, 6, 0, 0}, {3, 3, 0, 0}, {0, 0, 0, 14}}));
    EXPECT_EQ(a[2].precision, 0.0);
    EXPECT_EQ(a[2].recall, 0.0);
    EXPECT_EQ(a[2].f1, 0.0);
    const auto b = per_class_prf(ConfusionMatrix::from_rows({{6, 0, 1, 0}, {0, 6, 0, 0}, {3, 3, 0, 0}, {0, 0, 0, 14}}));
    EXPECT_EQ(b[2].f1, 0.0);
    EXPECT_FALSE(std::isnan(b[2].precision));
}

TEST(PerClass, EmptyClassIsAllZero) {
    const auto r = per_class_prf(ConfusionMatrix::from_rows({{3, 1, 0, 0}, {0, 4, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 2}}));
    EXPECT_EQ(r[2].precision, 0.0);
    EXPECT_EQ(r[2].recall, 0.0);
    EXPECT_EQ(r[2].f1, 0.0);
    EXPECT_EQ(r[2].support, 0);
}

TEST(PerClass, MatchesPerSampleCountingOracle) {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 500; ++t) {
        const int n = static_cast<int>(rng() % 60);
        std::vector<int> truth, pred;
        for (int i = 0; i < n; ++i) {
            truth.push_back(static_cast<int>(rng() % 4));
            pred.push_back(rng() % 3 == 0 ? truth.back() : static_cast<int>(rng() % 4));
        }
        const auto r = per_class_prf(confusion(truth, pred, 4));
        for (int k = 0; k < 4; ++k) {
            int tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < n; ++i) {
                tp += truth[i] == k && pred[i] == k;
                fp += truth[i] != k && pred[i] == k;
                fn += truth[i] == k && pred[i] != k;
            }
            const double p = tp + fp ? double(tp) / (tp + fp) : 0.0;
            const double rc = tp + fn ? double(tp) / (tp + fn) : 0.0;
            EXPECT_DOUBLE_EQ(r[k].precision, p);
            EXPECT_DOUBLE_EQ(r[k].recall, rc);
            EXPECT_DOUBLE_EQ(r[k].f1, p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0);
            EXPECT_EQ(r[k].support, tp + fn);
        }
    }
}

TEST(WeightedF1, UniformF1GivesThatValue) {
    std::vector<ClassMetrics> m{{0, 0, 0.37, 3}, {0, 0, 0.37, 9}, {0, 0, 0.37, 1}};
    EXPECT_DOUBLE_EQ(weighted_f1(m), 0.37);
}

TEST(WeightedF1, TwoClassCaseByHand) {
    // Truth: 3 of class 0, 1 of class 1. Predictions: 0,0,1 | 1.
    // Class 0: P 2/2, R 2/3, F1 0.8. Class 1: P 1/2, R 1/1, F1 2/3.
    const auto cm = ConfusionMatrix::from_rows({{2, 1}, {0, 1}});
    const auto r = per_class_prf(cm);
    EXPECT_DOUBLE_EQ(r[0].f1, 0.8);
    EXPECT_DOUBLE_EQ(r[1].f1, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(weighted_f1(r), (3 * 0.8 + 1 * (2.0 / 3.0)) / 4);
}

TEST(ReportCsv, RoundTripsExactly) {
    const auto r = classification_report(ConfusionMatrix::from_rows(kReconstructed), classes());
    const auto back = class_report_from_csv(class_report_to_csv(r));
    EXPECT_EQ(back.classes, r.classes);
    EXPECT_EQ(back.accuracy, r.accuracy);
    EXPECT_EQ(back.weighted_f1, r.weighted_f1);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(back.per_class[k].precision, r.per_class[k].precision);
        EXPECT_EQ(back.per_class[k].recall, r.per_class[k].recall);
        EXPECT_EQ(back.per_class[k].f1, r.per_class[k].f1);
        EXPECT_EQ(back.per_class[k].support, r.per_class[k].support);
    }
    const auto [cm, names] = confusion_from_csv(confusion_to_csv(r.matrix, r.classes));
    EXPECT_EQ(cm, r.matrix);
    EXPECT_EQ(names, r.classes);
}

// ---------------------------------------------------------------------------
// IoU

TEST(MaskIou, IdenticalDisjointAndEmpty) {
    Mask a(10, 10), b(10, 10);
    a.fill_box({0, 0, 5, 5});
    b.fill_box({5, 5, 10, 10});
    EXPECT_EQ(mask_iou(a, a), 1.0);
    EXPECT_EQ(mask_iou(a, b), 0.0);
    EXPECT_EQ(mask_iou(Mask(10, 10), Mask(10, 10)), 0.0);
    EXPECT_THROW(mask_iou(Mask(10, 10), Mask(10, 11)), ValidationError);
}

TEST(MaskIou, EqualsPixelCountingOnRandomPairs) {
    std::mt19937_64 rng(1234);
    for (int t = 0; t < 100; ++t) {
        const int h = 1 + static_cast<int>(rng() % 50), w = 1 + static_cast<int>(rng() % 50);
        const auto a = testing::random_mask(h, w, static_cast<double>(rng() % 100) / 100.0, rng);
        const auto b = testing::random_mask(h, w, static_cast<double>(rng() % 100) / 100.0, rng);
        EXPECT_EQ(mask_iou(a, b), testing::brute_mask_iou(a, b));
        EXPECT_EQ(mask_iou(a, b), mask_iou(b, a));
    }
}

TEST(MaskIou, InvariantUnderNearestUpsampling) {
    std::mt19937_64 rng(4321);
    for (int t = 0; t < 20; ++t) {
        const auto a = testing::random_mask(12, 9, 0.4, rng), b = testing::random_mask(12, 9, 0.4, rng);
        const int s = 2 + static_cast<int>(rng() % 3);
        auto up = [&](const Mask& m) {
            Mask o(m.height() * s, m.width() * s);
            for (int y = 0; y < o.height(); ++y)
                for (int x = 0; x < o.width(); ++x) o.set(y, x, m(y / s, x / s));
            return o;
        };
        EXPECT_DOUBLE_EQ(mask_iou(up(a), up(b)), mask_iou(a, b));
    }
}

TEST(BoxIou, HandCases) {
    EXPECT_EQ(box_iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
    EXPECT_EQ(box_iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
    EXPECT_EQ(box_iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0);
    EXPECT_EQ(box_iou({0, 0, 4, 4}, {1, 1, 3, 3}), 4.0 / 16.0);
    EXPECT_EQ(box_iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
    EXPECT_THROW(box_iou({0, 0, 0, 5}, {0, 0, 1, 1}), ValidationError);
}

TEST(BoxIou, MatchesRasterizedBoxes) {
    std::mt19937_64 rng(55);
    for (int t = 0; t < 200; ++t) {
        auto rb = [&] {
            const int x1 = static_cast<int>(rng() % 30), y1 = static_cast<int>(rng() % 30);
            return Box{x1, y1, x1 + 1 + static_cast<int>(rng() % 20), y1 + 1 + static_cast<int>(rng() % 20)};
        };
        const auto a = rb(), b = rb();
        EXPECT_EQ(box_iou(a, b), testing::brute_box_iou(a, b));
    }
}

// ---------------------------------------------------------------------------
// Matching

struct Inst {
    std::string label;
    Mask mask;
};

std::vector<RegionRef> refs(const std::vector<Inst>& v) {
    std::vector<RegionRef> r;
    for (const auto& i : v) r.push_back({i.label, &i.mask, *tight_box(i.mask)});
    return r;
}

Mask rect(int x1, int y1, int x2, int y2) {
    Mask m(40, 60);
    m.fill_box({x1, y1, x2, y2});
    return m;
}

TEST(Match, ReplayMatchesEverythingAtOne) {
    const std::vector<Inst> gts{{"button", rect(0, 0, 5, 5)}, {"zipper", rect(10, 10, 30, 14)}};
    const auto pr = refs(gts);
    const auto m = match_instances(pr, pr);
    ASSERT_EQ(m.pairs.size(), 2u);
    for (const auto& p : m.pairs) EXPECT_EQ(p.iou, 1.0);
    EXPECT_TRUE(m.unmatched_preds.empty());
    EXPECT_TRUE(m.unmatched_gts.empty());
}

TEST(Match, GreedyTakesTheHigherIouGroundTruth) {
    // Pred is a 10x10 square. A keeps 80 of its pixels (IoU 0.8); B keeps 75
    // and adds 25 outside (75 / 125 = 0.6).
    const Mask pred = rect(0, 0, 10, 10);
    const Mask a = rect(0, 0, 8, 10);
    Mask b(40, 60);
    b.fill_box({0, 0, 10, 7});
    b.fill_box({0, 7, 5, 8});
    b.fill_box({10, 0, 15, 5});
    ASSERT_DOUBLE_EQ(mask_iou(pred, a), 0.8);
    ASSERT_DOUBLE_EQ(mask_iou(pred, b), 0.6);
    const std::vector<Inst> preds{{"button", pred}};
    const std::vector<Inst> gts{{"button", b}, {"button", a}};
    const auto pr = refs(preds), gr = refs(gts);
    const auto m = match_instances(pr, gr);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.pairs[0].gt, 1);
    EXPECT_DOUBLE_EQ(m.pairs[0].iou, 0.8);
    EXPECT_EQ(m.unmatched_gts, std::vector<int>{0});
}

TEST(Match, LabelMismatchIsNeverMatched) {
    const std::vector<Inst> preds{{"zipper", rect(0, 0, 5, 5)}};
    const std::vector<Inst> gts{{"button", rect(0, 0, 5, 5)}};
    const auto pr = refs(preds), gr = refs(gts);
    const auto m = match_instances(pr, gr);
    EXPECT_TRUE(m.pairs.empty());
    EXPECT_EQ(m.unmatched_preds.size(), 1u);
    EXPECT_EQ(m.unmatched_gts.size(), 1u);
}

TEST(Match, NeverDoubleAssignsAndThresholdIsMonotone) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
        std::vector<Inst> preds, gts;
        const char* labels[] = {"button", "zipper"};
        auto random_rect = [&] {
            const int x = static_cast<int>(rng() % 40), y = static_cast<int>(rng() % 25);
            return rect(x, y, x + 3 + static_cast<int>(rng() % 15), y + 3 + static_cast<int>(rng() % 12));
        };
        for (int i = 0, n = static_cast<int>(rng() % 6); i < n; ++i) preds.push_back({labels[rng() % 2], random_rect()});
        for (int i = 0, n = static_cast<int>(rng() % 6); i < n; ++i) gts.push_back({labels[rng() % 2], random_rect()});
        const auto pr = refs(preds), gr = refs(gts);
        std::size_t prev = 0;
        for (double thr : {0.9, 0.7, 0.5, 0.3, 0.1}) {
            const auto m = match_instances(pr, gr, thr);
            std::set<int> ps, gs;
            for (const auto& p : m.pairs) {
                EXPECT_TRUE(ps.insert(p.pred).second);
                EXPECT_TRUE(gs.insert(p.gt).second);
                EXPECT_GE(p.iou, thr);
            }
            EXPECT_EQ(m.pairs.size() + m.unmatched_preds.size(), preds.size());
            EXPECT_EQ(m.pairs.size() + m.unmatched_gts.size(), gts.size());
            EXPECT_GE(m.pairs.size(), prev);
            prev = m.pairs.size();
        }
    }
}

TEST(DetectionPrf, ThreeMatchedOneExtraOneMissed) {
    MatchResult m;
    m.pairs = {{0, 0, 0.9}, {1, 1, 0.8}, {2, 2, 0.7}};
    m.unmatched_preds = {3};
    m.unmatched_gts = {3};
    const auto r = detection_prf(m);
    EXPECT_DOUBLE_EQ(r.precision, 0.75);
    EXPECT_DOUBLE_EQ(r.recall, 0.75);
    EXPECT_DOUBLE_EQ(r.f1, 0.75);
}

TEST(DetectionPrf, NoPredictions) {
    MatchResult m;
    m.unmatched_gts = {0, 1};
    const auto r = detection_prf(m);
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_EQ(r.recall, 0.0);
    EXPECT_EQ(r.f1, 0.0);
}

TEST(MeanIou, OneMatchedAtPointEightOneMissed) {
    MatchResult m;
    m.pairs = {{0, 0, 0.8}};
    m.unmatched_gts = {1};
    EXPECT_DOUBLE_EQ(mean_iou(m, 2), 0.4);
    EXPECT_EQ(mean_iou(MatchResult{}, 0), 0.0);
}

}  // namespace
}  // namespace texsort
