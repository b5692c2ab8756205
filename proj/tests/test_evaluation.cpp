#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "maskmeta/evaluation.hpp"

using namespace maskmeta;

namespace {

const FrameDims kDims{100, 160};

PixelMask block(int r0, int c0, int h, int w, FrameDims dims = kDims) {
    std::vector<std::pair<int, int>> px;
    for (int r = r0; r < r0 + h; ++r) {
        for (int c = c0; c < c0 + w; ++c) px.push_back({r, c});
    }
    return PixelMask::from_pixels(dims, px);
}

// Independent counting oracle: P(random positive outranks random negative),
// ties count one half.
double auroc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("assign_iou") {
    GroundTruthFrame gt;
    gt.index = 1;
    gt.instances.push_back({7, 0, block(10, 10, 10, 10)});

    Frame pred;
    pred.index = 1;
    pred.dims = kDims;
    pred.instances.push_back({1, 0, 0.9, block(10, 10, 10, 10)});

    auto a = assign_iou(pred, gt);
    REQUIRE(a.size() == 1);
    CHECK(a[0].iou == 1.0);
    CHECK(a[0].gt_track == 7);
    CHECK_FALSE(a[0].false_positive);

    SUBCASE("no ground truth means false positive") {
        GroundTruthFrame empty;
        empty.index = 1;
        auto b = assign_iou(pred, empty);
        CHECK(b[0].iou == 0.0);
        CHECK(b[0].gt_track == -1);
        CHECK(b[0].false_positive);
    }

    SUBCASE("prediction picks the larger overlap") {
        GroundTruthFrame two;
        two.index = 1;
        two.instances.push_back({1, 0, block(10, 0, 10, 10)});   // overlap 30 px
        two.instances.push_back({2, 0, block(10, 12, 10, 10)});  // overlap 50 px
        Frame p;
        p.index = 1;
        p.dims = kDims;
        p.instances.push_back({1, 0, 0.9, block(10, 7, 10, 10)});
        auto c = assign_iou(p, two);
        CHECK(c[0].gt_track == 2);
    }

    SUBCASE("class must agree") {
        Frame p;
        p.index = 1;
        p.dims = kDims;
        p.instances.push_back({1, 3, 0.9, block(10, 10, 10, 10)});
        auto c = assign_iou(p, gt);
        CHECK(c[0].gt_track == -1);
        CHECK(c[0].iou == 0.0);
    }
}

TEST_CASE("assign_iou is order independent") {
    GroundTruthFrame gt;
    gt.index = 1;
    gt.instances.push_back({3, 0, block(10, 10, 10, 10)});
    gt.instances.push_back({9, 0, block(40, 40, 12, 12)});

    Frame pred;
    pred.index = 1;
    pred.dims = kDims;
    pred.instances.push_back({1, 0, 0.9, block(10, 12, 10, 10)});
    pred.instances.push_back({2, 0, 0.8, block(41, 40, 12, 12)});
    pred.instances.push_back({3, 0, 0.7, block(80, 100, 6, 6)});

    auto a = assign_iou(pred, gt);
    auto again = assign_iou(pred, gt);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].iou == again[i].iou);
        CHECK(a[i].gt_track == again[i].gt_track);
    }

    Frame reversed = pred;
    std::reverse(reversed.instances.begin(), reversed.instances.end());
    auto b = assign_iou(reversed, gt);
    std::map<int, double> iou_by_local;
    std::map<int, std::int64_t> gt_by_local;
    for (const IoUAssignment& x : b) {
        iou_by_local[x.local_id] = x.iou;
        gt_by_local[x.local_id] = x.gt_track;
    }
    for (const IoUAssignment& x : a) {
        CHECK(iou_by_local.at(x.local_id) == x.iou);
        CHECK(gt_by_local.at(x.local_id) == x.gt_track);
    }
}

TEST_CASE("auroc") {
    std::vector<double> perfect{0.1, 0.2, 0.8, 0.9};
    std::vector<int> labels{0, 0, 1, 1};
    CHECK(auroc(perfect, labels) == 1.0);

    std::vector<double> example{0.1, 0.4, 0.35, 0.8};
    CHECK(auroc(example, labels) == 0.75);

    std::vector<int> single{1, 1, 1, 1};
    CHECK_THROWS_AS(auroc(example, single), std::invalid_argument);

    // Invariance under strictly monotone transforms.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::bernoulli_distribution bd(0.4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores;
        std::vector<int> lab;
        int n = 5 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            double s = std::round(ud(rng) * 10.0) / 10.0;  // coarse grid forces ties
            scores.push_back(s);
            lab.push_back(bd(rng) ? 1 : 0);
        }
        bool has_pos = std::count(lab.begin(), lab.end(), 1) > 0;
        bool has_neg = std::count(lab.begin(), lab.end(), 0) > 0;
        if (!has_pos || !has_neg) continue;
        double a = auroc(scores, lab);
        CHECK(a == auroc_oracle(scores, lab));
        std::vector<double> transformed;
        for (double s : scores) transformed.push_back(std::exp(3.0 * s) + 1.0);
        CHECK(auroc(transformed, lab) == doctest::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("regression measures") {
    std::vector<double> targets{0.0, 1.0, 2.0};
    std::vector<double> preds{0.0, 1.0, 1.0};
    CHECK(r_squared(preds, targets) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std_error(preds, targets) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-12));

    bool degenerate = false;
    std::vector<double> constant{1.0, 1.0};
    CHECK(r_squared(constant, constant, &degenerate) == 1.0);
    CHECK(degenerate);
}

TEST_CASE("pearson") {
    std::vector<double> x{1.0, 2.0, 3.0};
    std::vector<double> y_linear{5.0, 7.0, 9.0};
    CHECK(pearson(x, y_linear) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> y_neg{3.0, 2.0, 1.0};
    CHECK(pearson(x, y_neg) == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<double> y{1.0, 3.0, 2.0};
    CHECK(pearson(x, y) == doctest::Approx(0.5).epsilon(1e-12));

    std::vector<double> constant{2.0, 2.0, 2.0};
    CHECK_THROWS_AS(pearson(x, constant), std::invalid_argument);
}

namespace {

GroundTruthSequence straight_gt(int frames) {
    GroundTruthSequence gt;
    gt.id = "gt";
    for (int t = 1; t <= frames; ++t) {
        GroundTruthFrame f;
        f.index = t;
        f.instances.push_back({1, 0, block(10, 10 + 2 * t, 10, 10)});
        f.instances.push_back({2, 0, block(60, 100 - 2 * t, 12, 12)});
        gt.frames.push_back(f);
    }
    return gt;
}

std::vector<TrackedFrame> tracks_from_gt(const GroundTruthSequence& gt) {
    std::vector<TrackedFrame> out;
    for (const GroundTruthFrame& f : gt.frames) {
        TrackedFrame tf;
        tf.index = f.index;
        int local = 1;
        for (const GroundTruthInstance& g : f.instances) {
            tf.instances.push_back({{local++, g.class_label, 0.9, g.mask}, 1000 + g.track_id});
        }
        out.push_back(tf);
    }
    return out;
}

}  // namespace

TEST_CASE("mot_evaluate on perfect tracking") {
    GroundTruthSequence gt = straight_gt(10);
    auto pred = tracks_from_gt(gt);
    MotReport r = mot_evaluate(pred, gt);
    CHECK(r.mota == 1.0);
    CHECK(r.motp_geo == 0.0);
    CHECK(r.motp_bb == 0.0);
    CHECK(r.mismatches == 0);
    CHECK(r.gt_tracks == 2);
    CHECK(r.mostly_tracked == 2);
    CHECK(r.mostly_lost == 0);
    CHECK(r.gt_tracks == r.mostly_tracked + r.partially_tracked + r.mostly_lost);
}

TEST_CASE("mot_evaluate with no predictions") {
    GroundTruthSequence gt = straight_gt(5);
    std::vector<TrackedFrame> pred;
    for (int t = 1; t <= 5; ++t) pred.push_back({t, {}});
    MotReport r = mot_evaluate(pred, gt);
    CHECK(r.mota == 0.0);
    CHECK(r.fn_ratio == 1.0);
    CHECK(r.mostly_lost == r.gt_tracks);
}

TEST_CASE("mot_evaluate counts an id switch once") {
    GroundTruthSequence gt;
    gt.id = "gt";
    for (int t = 1; t <= 10; ++t) {
        GroundTruthFrame f;
        f.index = t;
        f.instances.push_back({1, 0, block(10, 10 + 2 * t, 10, 10)});
        gt.frames.push_back(f);
    }
    std::vector<TrackedFrame> pred;
    for (int t = 1; t <= 10; ++t) {
        TrackedFrame tf;
        tf.index = t;
        std::int64_t id = t < 6 ? 100 : 200;  // switches at frame 6
        tf.instances.push_back({{1, 0, 0.9, block(10, 10 + 2 * t, 10, 10)}, id});
        pred.push_back(tf);
    }
    MotReport r = mot_evaluate(pred, gt);
    CHECK(r.mismatches == 1);
    CHECK(r.mostly_tracked == 1);  // matched in all 10 frames despite the switch
    CHECK(r.mota == doctest::Approx(1.0 - 1.0 / 10.0).epsilon(1e-12));
}

TEST_CASE("removing one matched prediction lowers mota by exactly one observation") {
    GroundTruthSequence gt = straight_gt(10);
    auto pred = tracks_from_gt(gt);
    double total = 20.0;  // 2 tracks x 10 frames
    pred[4].instances.erase(pred[4].instances.begin());
    MotReport r = mot_evaluate(pred, gt);
    CHECK(r.mota == doctest::Approx(1.0 - 1.0 / total).epsilon(1e-12));
    CHECK(r.mismatches == 0);
}

TEST_CASE("threshold sweep") {
    std::vector<SweepInput> preds{
        {0.2, 0.1, 1, -1}, {0.5, 0.7, 1, 1}, {0.6, 0.3, 1, -1}, {0.9, 0.8, 1, 2}};
    std::int64_t total_gt = 2;

    SweepCurve curve = threshold_sweep(preds, total_gt, "score");
    REQUIRE(curve.points.size() == 30);
    CHECK(curve.points.front().threshold == doctest::Approx(0.01));
    CHECK(curve.points.back().threshold == doctest::Approx(0.98));

    // At 0.01 everything is kept: 2 FPs, no FN.
    CHECK(curve.points.front().fp == 2);
    CHECK(curve.points.front().fn == 0);
    // Above the maximum value nothing is kept.
    CHECK(curve.points.back().fp == 0);
    CHECK(curve.points.back().fn == total_gt);

    // Hand-enumerated point near threshold 0.55: keeps values 0.6 and 0.9.
    const SweepPoint* at_055 = nullptr;
    for (const SweepPoint& p : curve.points) {
        if (std::abs(p.threshold - 0.5451724137931034) < 1e-9) at_055 = &p;
    }
    REQUIRE(at_055 != nullptr);
    CHECK(at_055->fp == 1);
    CHECK(at_055->fn == 1);

    // Monotonicity along thresholds.
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i].threshold > curve.points[i - 1].threshold);
        CHECK(curve.points[i].fp <= curve.points[i - 1].fp);
        CHECK(curve.points[i].fn >= curve.points[i - 1].fn);
    }
}

TEST_CASE("average precision at iou 0.5") {
    GroundTruthSequence gt;
    gt.id = "gt";
    GroundTruthFrame f;
    f.index = 1;
    f.instances.push_back({1, 0, block(10, 10, 10, 10)});
    f.instances.push_back({2, 0, block(50, 50, 10, 10)});
    gt.frames.push_back(f);

    PixelMask m1 = block(10, 10, 10, 10);
    PixelMask m2 = block(80, 120, 10, 10);
    PixelMask m3 = block(50, 50, 10, 10);

    SUBCASE("ranked TP, FP, TP gives 5/6") {
        std::vector<ApInput> preds{{0.9, 1, 1, 0, &m1}, {0.5, 1, 2, 0, &m2}, {0.2, 1, 3, 0, &m3}};
        CHECK(average_precision_50(preds, gt) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    }

    SUBCASE("all correct is 1, all wrong is 0") {
        std::vector<ApInput> good{{0.9, 1, 1, 0, &m1}, {0.1, 1, 2, 0, &m3}};
        CHECK(average_precision_50(good, gt) == 1.0);
        std::vector<ApInput> bad{{0.9, 1, 1, 0, &m2}};
        CHECK(average_precision_50(bad, gt) == 0.0);
    }

    SUBCASE("a second prediction of the same object is a false positive") {
        std::vector<ApInput> preds{{0.9, 1, 1, 0, &m1}, {0.8, 1, 2, 0, &m1}};
        CHECK(average_precision_50(preds, gt) < 1.0);
    }
}

TEST_CASE("assign_iou ties go to the smaller ground-truth track id") {
    GroundTruthFrame gt;
    gt.index = 1;
    gt.instances.push_back({9, 0, block(10, 16, 10, 10)});
    gt.instances.push_back({4, 0, block(10, 4, 10, 10)});

    Frame pred;
    pred.index = 1;
    pred.dims = kDims;
    pred.instances.push_back({1, 0, 0.9, block(10, 10, 10, 10)});  // equidistant
    auto a = assign_iou(pred, gt);
    CHECK(a[0].gt_track == 4);
}

TEST_CASE("threshold sweep counts a doubly-covered ground truth once") {
    std::vector<SweepInput> preds{
        {0.9, 0.8, 1, 5}, {0.8, 0.7, 1, 5},  // both cover gt 5 in frame 1
        {0.9, 0.9, 2, 5}};
    SweepCurve curve = threshold_sweep(preds, 2, "score");
    CHECK(curve.points.front().fn == 0);
    CHECK(curve.points.front().fp == 0);
}

TEST_CASE("combined MOT reports weight MOTP by matched pairs") {
    MotReport a;
    a.gt_observations = 10;
    a.false_negatives = 2;
    a.matched_pairs = 8;
    a.motp_geo = 1.0;
    a.motp_bb = 2.0;
    a.gt_tracks = 1;
    a.mostly_tracked = 1;
    a.mota = 0.8;
    MotReport b;
    b.gt_observations = 10;
    b.false_positives = 3;
    b.matched_pairs = 2;
    b.motp_geo = 6.0;
    b.motp_bb = 7.0;
    b.gt_tracks = 2;
    b.partially_tracked = 2;
    b.mota = 0.7;

    MotReport total = combine_mot_reports({a, b});
    CHECK(total.gt_observations == 20);
    CHECK(total.mota == doctest::Approx(1.0 - 5.0 / 20.0).epsilon(1e-12));
    CHECK(total.motp_geo == doctest::Approx((8 * 1.0 + 2 * 6.0) / 10.0).epsilon(1e-12));
    CHECK(total.motp_bb == doctest::Approx((8 * 2.0 + 2 * 7.0) / 10.0).epsilon(1e-12));
    CHECK(total.gt_tracks == 3);
    CHECK(total.gt_tracks ==
          total.mostly_tracked + total.partially_tracked + total.mostly_lost);
}
