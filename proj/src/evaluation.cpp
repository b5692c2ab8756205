#include "maskmeta/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

namespace maskmeta {

std::vector<IoUAssignment> assign_iou(const Frame& pred, const GroundTruthFrame& gt) {
    std::vector<IoUAssignment> out;
    out.reserve(pred.instances.size());

    std::vector<const GroundTruthInstance*> gt_sorted;
    for (const GroundTruthInstance& g : gt.instances) gt_sorted.push_back(&g);
    std::sort(gt_sorted.begin(), gt_sorted.end(),
              [](const GroundTruthInstance* a, const GroundTruthInstance* b) {
                  return a->track_id < b->track_id;
              });

    for (const Instance& inst : pred.instances) {
        IoUAssignment a;
        a.local_id = inst.local_id;
        for (const GroundTruthInstance* g : gt_sorted) {
            if (g->class_label != inst.class_label) continue;
            double o = overlap(inst.mask, g->mask);
            if (o > a.iou) {  // strict: ties keep the smaller track id
                a.iou = o;
                a.gt_track = g->track_id;
            }
        }
        a.false_positive = a.iou < 0.5;
        out.push_back(a);
    }
    return out;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: size mismatch");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += l != 0;
    std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("auroc: needs both a positive and a negative example");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of positive mid-ranks.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) rank_sum += mid_rank;
        }
        i = j;
    }
    double np = static_cast<double>(n_pos);
    double nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double accuracy(std::span<const double> probabilities, std::span<const int> labels) {
    if (probabilities.size() != labels.size() || probabilities.empty()) {
        throw std::invalid_argument("accuracy: bad input sizes");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        correct += (probabilities[i] >= 0.5 ? 1 : 0) == (labels[i] != 0 ? 1 : 0);
    }
    return static_cast<double>(correct) / static_cast<double>(probabilities.size());
}

double r_squared(std::span<const double> predictions, std::span<const double> targets,
                 bool* degenerate) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw std::invalid_argument("r_squared: bad input sizes");
    }
    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= static_cast<double>(targets.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        sse += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
        sst += (targets[i] - mean) * (targets[i] - mean);
    }
    if (degenerate) *degenerate = sst == 0.0;
    if (sst == 0.0) return sse <= 1e-18 ? 1.0 : 0.0;
    return 1.0 - sse / sst;
}

double std_error(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw std::invalid_argument("std_error: bad input sizes");
    }
    double sse = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        sse += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
    }
    return std::sqrt(sse / static_cast<double>(targets.size()));
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("pearson: needs two equally sized columns of length >= 2");
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw std::invalid_argument("pearson: undefined for a constant column");
    }
    return sxy / std::sqrt(sxx * syy);
}

MotReport mot_evaluate(const std::vector<TrackedFrame>& pred, const GroundTruthSequence& gt) {
    if (gt.frames.empty()) throw std::invalid_argument("mot_evaluate: empty ground truth");
    if (pred.size() != gt.frames.size()) {
        throw std::invalid_argument(
            fmt::format("mot_evaluate: {} predicted frames vs {} ground-truth frames",
                        pred.size(), gt.frames.size()));
    }

    MotReport report;
    double center_distance_sum = 0.0;
    double bb_distance_sum = 0.0;

    std::map<std::int64_t, std::int64_t> correspondence;       // gt track -> pred track
    std::map<std::int64_t, std::int64_t> last_matched_pred;    // across gaps, for mismatches
    std::map<std::int64_t, std::int64_t> gt_frames_total;      // gt track -> #frames present
    std::map<std::int64_t, std::int64_t> gt_frames_matched;

    for (std::size_t fi = 0; fi < gt.frames.size(); ++fi) {
        const GroundTruthFrame& gt_frame = gt.frames[fi];
        const TrackedFrame& pred_frame = pred[fi];

        std::map<std::int64_t, const GroundTruthInstance*> gts;
        for (const GroundTruthInstance& g : gt_frame.instances) {
            gts[g.track_id] = &g;
            ++gt_frames_total[g.track_id];
        }
        std::map<std::int64_t, const TrackedInstance*> preds;
        for (const TrackedInstance& p : pred_frame.instances) preds[p.track_id] = &p;

        report.gt_observations += static_cast<std::int64_t>(gt_frame.instances.size());

        std::vector<std::pair<std::int64_t, std::int64_t>> matches;  // (gt track, pred track)

        // Continuity: keep the previous pairing while it is still valid.
        for (auto it = correspondence.begin(); it != correspondence.end();) {
            auto g = gts.find(it->first);
            auto p = preds.find(it->second);
            if (g != gts.end() && p != preds.end() &&
                overlap(g->second->mask, p->second->instance.mask) >= 0.5) {
                matches.push_back({it->first, it->second});
                ++it;
            } else {
                it = correspondence.erase(it);
            }
        }

        // Remaining pairs greedily by descending IoU.
        std::set<std::int64_t> used_gt, used_pred;
        for (const auto& [g, p] : matches) {
            used_gt.insert(g);
            used_pred.insert(p);
        }
        struct Pair {
            double iou;
            std::int64_t gt;
            std::int64_t pred;
        };
        std::vector<Pair> candidates;
        for (const auto& [gid, g] : gts) {
            if (used_gt.count(gid)) continue;
            for (const auto& [pid, p] : preds) {
                if (used_pred.count(pid)) continue;
                double o = overlap(g->mask, p->instance.mask);
                if (o >= 0.5) candidates.push_back({o, gid, pid});
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Pair& a, const Pair& b) {
            if (a.iou != b.iou) return a.iou > b.iou;
            return std::tie(a.gt, a.pred) < std::tie(b.gt, b.pred);
        });
        for (const Pair& c : candidates) {
            if (used_gt.count(c.gt) || used_pred.count(c.pred)) continue;
            used_gt.insert(c.gt);
            used_pred.insert(c.pred);
            matches.push_back({c.gt, c.pred});
        }

        for (const auto& [gid, pid] : matches) {
            auto last = last_matched_pred.find(gid);
            if (last != last_matched_pred.end() && last->second != pid) ++report.mismatches;
            last_matched_pred[gid] = pid;
            correspondence[gid] = pid;
            ++gt_frames_matched[gid];

            const GroundTruthInstance& g = *gts.at(gid);
            const TrackedInstance& p = *preds.at(pid);
            center_distance_sum +=
                center_distance(geometric_center(g.mask), geometric_center(p.instance.mask));
            bb_distance_sum += center_distance(bounding_box(g.mask).center(),
                                               bounding_box(p.instance.mask).center());
            ++report.matched_pairs;
        }

        report.false_negatives +=
            static_cast<std::int64_t>(gt_frame.instances.size() - matches.size());
        report.false_positives +=
            static_cast<std::int64_t>(pred_frame.instances.size() - matches.size());
    }

    report.gt_tracks = static_cast<std::int64_t>(gt_frames_total.size());
    for (const auto& [gid, total] : gt_frames_total) {
        // >= 80% mostly tracked, < 20% mostly lost (integer-exact thresholds).
        if (5 * gt_frames_matched[gid] >= 4 * total) {
            ++report.mostly_tracked;
        } else if (5 * gt_frames_matched[gid] < total) {
            ++report.mostly_lost;
        } else {
            ++report.partially_tracked;
        }
    }

    double total_gt = static_cast<double>(report.gt_observations);
    if (total_gt > 0) {
        report.fn_ratio = static_cast<double>(report.false_negatives) / total_gt;
        report.fp_ratio = static_cast<double>(report.false_positives) / total_gt;
        report.mme_ratio = static_cast<double>(report.mismatches) / total_gt;
        report.mota = 1.0 - static_cast<double>(report.false_negatives +
                                                report.false_positives + report.mismatches) /
                                total_gt;
    }
    if (report.matched_pairs > 0) {
        report.motp_geo = center_distance_sum / static_cast<double>(report.matched_pairs);
        report.motp_bb = bb_distance_sum / static_cast<double>(report.matched_pairs);
    }
    return report;
}

MotReport combine_mot_reports(const std::vector<MotReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("combine_mot_reports: no reports");
    MotReport total;
    double geo_sum = 0.0, bb_sum = 0.0;
    for (const MotReport& r : reports) {
        total.gt_tracks += r.gt_tracks;
        total.mostly_tracked += r.mostly_tracked;
        total.partially_tracked += r.partially_tracked;
        total.mostly_lost += r.mostly_lost;
        total.false_negatives += r.false_negatives;
        total.false_positives += r.false_positives;
        total.mismatches += r.mismatches;
        total.gt_observations += r.gt_observations;
        total.matched_pairs += r.matched_pairs;
        geo_sum += r.motp_geo * static_cast<double>(r.matched_pairs);
        bb_sum += r.motp_bb * static_cast<double>(r.matched_pairs);
    }
    if (total.gt_observations > 0) {
        double n = static_cast<double>(total.gt_observations);
        total.fn_ratio = static_cast<double>(total.false_negatives) / n;
        total.fp_ratio = static_cast<double>(total.false_positives) / n;
        total.mme_ratio = static_cast<double>(total.mismatches) / n;
        total.mota = 1.0 - static_cast<double>(total.false_negatives + total.false_positives +
                                               total.mismatches) /
                               n;
    }
    if (total.matched_pairs > 0) {
        total.motp_geo = geo_sum / static_cast<double>(total.matched_pairs);
        total.motp_bb = bb_sum / static_cast<double>(total.matched_pairs);
    }
    return total;
}

SweepCurve threshold_sweep(std::span<const SweepInput> predictions,
                           std::int64_t total_gt_observations, const std::string& mode) {
    constexpr int kPoints = 30;
    constexpr double kLow = 0.01;
    constexpr double kHigh = 0.98;
    SweepCurve curve;
    curve.mode = mode;
    for (int i = 0; i < kPoints; ++i) {
        double threshold = kLow + (kHigh - kLow) * static_cast<double>(i) / (kPoints - 1);
        SweepPoint point;
        point.threshold = threshold;
        std::set<std::pair<int, std::int64_t>> covered;
        for (const SweepInput& p : predictions) {
            if (p.value < threshold) continue;
            if (p.iou < 0.5) {
                ++point.fp;
            } else if (p.gt_track >= 0) {
                covered.insert({p.frame, p.gt_track});
            }
        }
        point.fn = total_gt_observations - static_cast<std::int64_t>(covered.size());
        curve.points.push_back(point);
    }
    return curve;
}

double average_precision_50(std::vector<ApInput> predictions, const GroundTruthSequence& gt) {
    std::int64_t total_gt = 0;
    for (const GroundTruthFrame& f : gt.frames) {
        total_gt += static_cast<std::int64_t>(f.instances.size());
    }
    if (total_gt == 0) throw std::invalid_argument("average_precision_50: no ground truth");
    if (predictions.empty()) return 0.0;

    std::sort(predictions.begin(), predictions.end(), [](const ApInput& a, const ApInput& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.frame, a.local_id) < std::tie(b.frame, b.local_id);
    });

    std::set<std::pair<int, std::int64_t>> claimed;  // (frame, gt track)
    std::vector<int> is_tp;
    is_tp.reserve(predictions.size());
    for (const ApInput& p : predictions) {
        const GroundTruthFrame& gt_frame = gt.frames.at(static_cast<std::size_t>(p.frame - 1));
        double best = 0.0;
        std::int64_t best_track = -1;
        for (const GroundTruthInstance& g : gt_frame.instances) {
            if (g.class_label != p.class_label) continue;
            if (claimed.count({p.frame, g.track_id})) continue;
            double o = overlap(*p.mask, g.mask);
            if (o > best) {
                best = o;
                best_track = g.track_id;
            }
        }
        if (best >= 0.5) {
            claimed.insert({p.frame, best_track});
            is_tp.push_back(1);
        } else {
            is_tp.push_back(0);
        }
    }

    // All-point interpolated area under precision-recall.
    std::vector<double> precision, recall;
    std::int64_t tp = 0;
    for (std::size_t i = 0; i < is_tp.size(); ++i) {
        tp += is_tp[i];
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }
    for (std::size_t i = precision.size(); i-- > 1;) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

}  // namespace maskmeta
