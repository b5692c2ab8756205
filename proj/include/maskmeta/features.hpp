#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskmeta/data_model.hpp"
#include "maskmeta/tracker.hpp"

namespace maskmeta {

/// Geometry metrics are always available; dispersion metrics require a
/// per-pixel probability map. All "_in"/"_bd" values are means over the
/// inner / boundary part; an empty inner falls back to the whole-mask mean.
struct SingleFrameMetrics {
    double size = 0;
    double size_in = 0;
    double size_bd = 0;
    double rel_bd = 0;     // size_bd / size
    double center_v = 0;   // normalized by frame height
    double center_h = 0;   // normalized by frame width
    double height = 0;
    double width = 0;

    bool has_dispersion = false;
    double ent_mean = 0, ent_in = 0, ent_bd = 0;           // normalized entropy
    double var_mean = 0, var_in = 0, var_bd = 0;           // variation ratio 1 - max p
    double margin_mean = 0, margin_in = 0, margin_bd = 0;  // top-1 minus top-2 prob
};

SingleFrameMetrics single_frame_metrics(const Instance& inst, const ProbMap* prob_map);

/// Overlap after translating `prev` so both geometric centers coincide
/// (integer-rounded shift); 0 when the shift clips the mask away entirely.
double shape_preservation(const PixelMask& prev, const PixelMask& curr);

struct Deviation {
    double d_c = 0.0;
    double d_s = 0.0;
    bool defined = false;  // false when fewer than 2 observations in t-5..t-1
};

/// Linear-regression deviation of center and size at frame t, regressed over
/// the track's observations in frames t-5..t-1.
Deviation center_and_size_deviation(const TrackHistory& history, int t);

/// Mean ground-truth height/width ratio per class over all instance
/// observations. Throws listing any class in `required_classes` that has no
/// ground-truth instance.
std::map<int, double> gt_class_ratios(const std::vector<const GroundTruthSequence*>& gts,
                                      const std::vector<int>& required_classes);

double ratio_metric(const Instance& inst, const std::map<int, double>& ratios);

std::map<int, double> read_ratios_json(const std::string& path);
void write_ratios_json(const std::string& path, const std::map<int, double>& ratios);

/// One row per (track, frame); slot k holds the metrics of frame t-k. Slots
/// where the track was unobserved copy the nearest observed earlier frame in
/// the window (or the frame-t values) and carry a false presence flag.
struct FeatureTable {
    std::vector<std::string> metric_names;
    int window = 0;  // n_c
    bool has_targets = false;

    struct Row {
        std::string sequence;
        std::int64_t track_id = 0;
        int frame = 0;
        int local_id = 0;
        int class_label = 0;
        std::vector<double> values;         // (window+1) x metric_names, slot-major
        std::vector<std::uint8_t> present;  // window+1 flags
        double iou = 0.0;
        std::int64_t gt_track = -1;
        int label = 0;  // 1 when iou >= 0.5 (true positive)
    };
    std::vector<Row> rows;

    int metric_index(const std::string& name) const;
    double value(const Row& row, int slot, int metric) const {
        return row.values[static_cast<std::size_t>(slot) * metric_names.size() + metric];
    }
};

FeatureTable assemble_timeseries(const Sequence& seq, const std::vector<TrackedFrame>& tracked,
                                 const std::map<int, double>& gt_ratios, int n_c);

struct RowTarget {
    double iou = 0.0;
    std::int64_t gt_track = -1;
};

/// Joins per-instance targets keyed by (frame, local_id); label = iou >= 0.5.
void attach_targets(FeatureTable& table,
                    const std::map<std::pair<int, int>, RowTarget>& targets);

void write_feature_csv(const std::string& path, const FeatureTable& table);
FeatureTable read_feature_csv(const std::string& path);

/// Concatenates rows; schemas must match exactly.
void append_rows(FeatureTable& dst, const FeatureTable& src);

/// Frame source used to fill slot k of the row at frame t (padding rule).
int slot_source_frame(const std::vector<int>& observed_frames, int t, int k, int n_c);

}  // namespace maskmeta
