#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskmeta/data_model.hpp"
#include "maskmeta/tracker.hpp"

namespace maskmeta {

/// Per-prediction assignment against ground truth: argmax-overlap same-class
/// ground-truth instance (ties to the smaller gt track id). Multiple
/// predictions may be assigned the same ground-truth instance.
struct IoUAssignment {
    int local_id = 0;
    double iou = 0.0;                // 0 when unmatched
    std::int64_t gt_track = -1;      // -1 when unmatched
    bool false_positive = true;      // iou < 0.5
};

std::vector<IoUAssignment> assign_iou(const Frame& pred, const GroundTruthFrame& gt);

/// Rank-statistic AUROC with ties counted 1/2. Throws when labels are
/// single-class.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of correct binary decisions at threshold 0.5 on probabilities.
double accuracy(std::span<const double> probabilities, std::span<const int> labels);

/// 1 - SSE/SST. `degenerate` (when given) reports a constant target column,
/// in which case the value is 1 for a perfect fit and 0 otherwise.
double r_squared(std::span<const double> predictions, std::span<const double> targets,
                 bool* degenerate = nullptr);

/// Root-mean-squared prediction error.
double std_error(std::span<const double> predictions, std::span<const double> targets);

/// Product-moment correlation; throws on constant columns or size < 2.
double pearson(std::span<const double> x, std::span<const double> y);

struct MotReport {
    double motp_bb = 0.0;   // mean bounding-box center distance, pixels
    double motp_geo = 0.0;  // mean geometric center distance, pixels
    double mota = 0.0;
    double fn_ratio = 0.0;
    double fp_ratio = 0.0;
    double mme_ratio = 0.0;
    std::int64_t gt_tracks = 0;
    std::int64_t mostly_tracked = 0;
    std::int64_t partially_tracked = 0;
    std::int64_t mostly_lost = 0;
    std::int64_t false_negatives = 0;
    std::int64_t false_positives = 0;
    std::int64_t mismatches = 0;
    std::int64_t gt_observations = 0;
    std::int64_t matched_pairs = 0;
};

/// CLEAR-MOT over mask IoU >= 0.5 correspondences with continuity preference:
/// a ground-truth track keeps its previous prediction ID while that pairing
/// remains valid; remaining pairs are matched greedily by descending IoU.
MotReport mot_evaluate(const std::vector<TrackedFrame>& pred, const GroundTruthSequence& gt);

/// Aggregates per-sequence reports by summing the underlying counts.
MotReport combine_mot_reports(const std::vector<MotReport>& reports);

struct SweepInput {
    double value = 0.0;  // filter value: network score or meta TP-probability
    double iou = 0.0;
    int frame = 0;
    std::int64_t gt_track = -1;
};

struct SweepPoint {
    double threshold = 0.0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
};

struct SweepCurve {
    std::string mode;
    std::vector<SweepPoint> points;  // 30 strictly increasing thresholds
};

/// 30 evenly spaced thresholds on [0.01, 0.98]; a prediction is kept when its
/// filter value >= threshold. FP = kept predictions with iou < 0.5; FN =
/// ground-truth observations not covered by any kept prediction with
/// iou >= 0.5 assigned to them.
SweepCurve threshold_sweep(std::span<const SweepInput> predictions,
                           std::int64_t total_gt_observations, const std::string& mode);

struct ApInput {
    double score = 0.0;
    int frame = 0;
    int local_id = 0;
    int class_label = 0;
    const PixelMask* mask = nullptr;
};

/// Average precision at IoU 0.5 with all-point interpolation and per-GT
/// single assignment in descending score order.
double average_precision_50(std::vector<ApInput> predictions, const GroundTruthSequence& gt);

}  // namespace maskmeta
