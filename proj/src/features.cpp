#include "maskmeta/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskmeta/csv.hpp"

using nlohmann::json;

namespace maskmeta {

namespace {

constexpr int kDeviationWindow = 5;  // regression over frames t-5..t-1

struct PixelDispersion {
    double entropy = 0;  // normalized by log(channels)
    double variation = 0;
    double margin = 0;
};

PixelDispersion pixel_dispersion(const ProbMap& pm, int r, int c) {
    const double log_c = std::log(static_cast<double>(pm.channels));
    double ent = 0.0;
    double top1 = 0.0, top2 = 0.0;
    for (int ch = 0; ch < pm.channels; ++ch) {
        double p = pm.at(r, c, ch);
        if (p > 0.0) ent -= p * std::log(p);
        if (p > top1) {
            top2 = top1;
            top1 = p;
        } else if (p > top2) {
            top2 = p;
        }
    }
    return {ent / log_c, 1.0 - top1, top1 - top2};
}

struct DispersionMeans {
    double entropy = 0, variation = 0, margin = 0;
};

DispersionMeans mean_dispersion(const ProbMap& pm, const PixelMask& mask) {
    DispersionMeans sums;
    mask.for_each_pixel([&](int r, int c) {
        PixelDispersion d = pixel_dispersion(pm, r, c);
        sums.entropy += d.entropy;
        sums.variation += d.variation;
        sums.margin += d.margin;
    });
    double n = static_cast<double>(mask.area());
    return {sums.entropy / n, sums.variation / n, sums.margin / n};
}

std::vector<std::string> metric_names_for(bool with_dispersion) {
    std::vector<std::string> names = {"size",     "size_in", "size_bd", "rel_bd",
                                      "center_v", "center_h", "height",  "width"};
    if (with_dispersion) {
        for (const char* n : {"ent_mean", "ent_in", "ent_bd", "var_mean", "var_in", "var_bd",
                              "margin_mean", "margin_in", "margin_bd"}) {
            names.push_back(n);
        }
    }
    for (const char* n : {"score", "shape_f", "dev_center", "dev_size", "ratio"}) {
        names.push_back(n);
    }
    return names;
}

}  // namespace

SingleFrameMetrics single_frame_metrics(const Instance& inst, const ProbMap* prob_map) {
    if (inst.mask.empty()) throw std::invalid_argument("single_frame_metrics: empty mask");
    SingleFrameMetrics m;
    MaskSplit split = split_inner_boundary(inst.mask);
    m.size = static_cast<double>(inst.mask.area());
    m.size_in = static_cast<double>(split.inner.area());
    m.size_bd = static_cast<double>(split.boundary.area());
    m.rel_bd = m.size_bd / m.size;
    Center c = geometric_center(inst.mask);
    m.center_v = c.v / inst.mask.dims().height;
    m.center_h = c.h / inst.mask.dims().width;
    Extent e = bounding_extent(inst.mask);
    m.height = e.height;
    m.width = e.width;

    if (prob_map) {
        m.has_dispersion = true;
        DispersionMeans whole = mean_dispersion(*prob_map, inst.mask);
        DispersionMeans bd = mean_dispersion(*prob_map, split.boundary);
        // An empty inner region inherits the whole-mask means.
        DispersionMeans in = split.inner.empty() ? whole : mean_dispersion(*prob_map, split.inner);
        m.ent_mean = whole.entropy;
        m.var_mean = whole.variation;
        m.margin_mean = whole.margin;
        m.ent_in = in.entropy;
        m.var_in = in.variation;
        m.margin_in = in.margin;
        m.ent_bd = bd.entropy;
        m.var_bd = bd.variation;
        m.margin_bd = bd.margin;
    }
    return m;
}

double shape_preservation(const PixelMask& prev, const PixelMask& curr) {
    Center cp = geometric_center(prev);
    Center cc = geometric_center(curr);
    auto shifted = shift(prev, cc.v - cp.v, cc.h - cp.h);
    if (!shifted) return 0.0;
    return overlap(*shifted, curr);
}

Deviation center_and_size_deviation(const TrackHistory& history, int t) {
    const TrackObservation* current = nullptr;
    std::vector<std::pair<int, Center>> centers;
    std::vector<std::pair<int, Center>> sizes;  // size carried in .v
    for (const TrackObservation& obs : history.observations) {
        if (obs.frame == t) current = &obs;
        if (obs.frame >= t - kDeviationWindow && obs.frame <= t - 1) {
            centers.push_back({obs.frame, obs.center});
            sizes.push_back({obs.frame, {static_cast<double>(obs.size), 0.0}});
        }
    }
    if (!current) {
        throw std::invalid_argument(
            fmt::format("center_and_size_deviation: track {} not observed at frame {}",
                        history.track_id, t));
    }
    if (centers.size() < 2) return {};
    Center predicted = predict_center(centers, t);
    double predicted_size = predict_center(sizes, t).v;
    Deviation d;
    d.defined = true;
    d.d_c = center_distance(predicted, current->center);
    d.d_s = std::abs(predicted_size - static_cast<double>(current->size));
    return d;
}

std::map<int, double> gt_class_ratios(const std::vector<const GroundTruthSequence*>& gts,
                                      const std::vector<int>& required_classes) {
    std::map<int, std::pair<double, std::int64_t>> acc;  // class -> (sum, count)
    for (const GroundTruthSequence* gt : gts) {
        for (const GroundTruthFrame& frame : gt->frames) {
            for (const GroundTruthInstance& inst : frame.instances) {
                Extent e = bounding_extent(inst.mask);
                auto& [sum, count] = acc[inst.class_label];
                sum += static_cast<double>(e.height) / static_cast<double>(e.width);
                ++count;
            }
        }
    }
    std::vector<int> missing;
    for (int c : required_classes) {
        if (!acc.count(c)) missing.push_back(c);
    }
    if (!missing.empty()) {
        throw std::runtime_error(
            fmt::format("no ground-truth instances for class(es) [{}]", fmt::join(missing, ", ")));
    }
    std::map<int, double> out;
    for (const auto& [c, sc] : acc) out[c] = sc.first / static_cast<double>(sc.second);
    return out;
}

double ratio_metric(const Instance& inst, const std::map<int, double>& ratios) {
    auto it = ratios.find(inst.class_label);
    if (it == ratios.end()) {
        throw std::runtime_error(
            fmt::format("no ground-truth ratio for class {}", inst.class_label));
    }
    Extent e = bounding_extent(inst.mask);
    return (static_cast<double>(e.height) / static_cast<double>(e.width)) / it->second;
}

std::map<int, double> read_ratios_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    json doc;
    in >> doc;
    std::map<int, double> out;
    for (const auto& [key, value] : doc.at("ratios").items()) {
        out[std::stoi(key)] = value.get<double>();
    }
    return out;
}

void write_ratios_json(const std::string& path, const std::map<int, double>& ratios) {
    json obj = json::object();
    for (const auto& [c, r] : ratios) obj[fmt::format("{}", c)] = r;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    out << json{{"ratios", obj}}.dump(2) << '\n';
}

int FeatureTable::metric_index(const std::string& name) const {
    for (std::size_t i = 0; i < metric_names.size(); ++i) {
        if (metric_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int slot_source_frame(const std::vector<int>& observed_frames, int t, int k, int n_c) {
    const int target = t - k;
    auto observed = [&](int f) {
        return std::binary_search(observed_frames.begin(), observed_frames.end(), f);
    };
    if (observed(target)) return target;
    for (int f = target - 1; f >= t - n_c && f >= 1; --f) {
        if (observed(f)) return f;
    }
    return t;
}

FeatureTable assemble_timeseries(const Sequence& seq, const std::vector<TrackedFrame>& tracked,
                                 const std::map<int, double>& gt_ratios, int n_c) {
    if (n_c < 0 || n_c > 10) {
        throw std::invalid_argument(fmt::format("n_c = {} outside [0, 10]", n_c));
    }
    if (tracked.size() != seq.frames.size()) {
        throw std::invalid_argument("assemble_timeseries: tracked frames do not cover sequence");
    }
    const bool with_dispersion = seq.frames.front().prob_map.has_value();
    for (const Frame& f : seq.frames) {
        if (f.prob_map.has_value() != with_dispersion) {
            throw std::runtime_error(
                fmt::format("frame {}: probability map presence differs across frames", f.index));
        }
    }

    FeatureTable table;
    table.metric_names = metric_names_for(with_dispersion);
    table.window = n_c;

    struct TrackSlice {
        const Instance* instance = nullptr;
        std::vector<double> metrics;
    };
    // track -> frame -> per-frame metric vector
    std::map<std::int64_t, std::map<int, TrackSlice>> per_track;
    std::map<std::int64_t, TrackHistory> histories;

    for (std::size_t i = 0; i < tracked.size(); ++i) {
        const int t = tracked[i].index;
        const ProbMap* pm =
            seq.frames[i].prob_map.has_value() ? &*seq.frames[i].prob_map : nullptr;
        for (const TrackedInstance& ti : tracked[i].instances) {
            TrackSlice slice;
            slice.instance = &ti.instance;
            SingleFrameMetrics m = single_frame_metrics(ti.instance, pm);
            slice.metrics = {m.size,     m.size_in,  m.size_bd, m.rel_bd,
                             m.center_v, m.center_h, m.height,  m.width};
            if (with_dispersion) {
                for (double v : {m.ent_mean, m.ent_in, m.ent_bd, m.var_mean, m.var_in, m.var_bd,
                                 m.margin_mean, m.margin_in, m.margin_bd}) {
                    slice.metrics.push_back(v);
                }
            }
            per_track[ti.track_id][t] = std::move(slice);

            TrackHistory& hist = histories[ti.track_id];
            hist.track_id = ti.track_id;
            hist.class_label = ti.instance.class_label;
            hist.observations.push_back(
                {t, geometric_center(ti.instance.mask), ti.instance.mask.area()});
        }
    }

    // Temporal metrics per observation, then windowed rows.
    for (auto& [track_id, frames] : per_track) {
        const TrackHistory& hist = histories.at(track_id);
        std::vector<int> observed;
        for (const auto& [t, slice] : frames) observed.push_back(t);

        for (auto& [t, slice] : frames) {
            double f_value = 0.0;
            auto prev_it = frames.find(t - 1);
            if (prev_it != frames.end()) {
                f_value =
                    shape_preservation(prev_it->second.instance->mask, slice.instance->mask);
            }
            Deviation dev = center_and_size_deviation(hist, t);
            double r = ratio_metric(*slice.instance, gt_ratios);
            slice.metrics.push_back(slice.instance->score);
            slice.metrics.push_back(f_value);
            slice.metrics.push_back(dev.d_c);
            slice.metrics.push_back(dev.d_s);
            slice.metrics.push_back(r);
        }

        for (const auto& [t, slice] : frames) {
            FeatureTable::Row row;
            row.sequence = seq.id;
            row.track_id = track_id;
            row.frame = t;
            row.local_id = slice.instance->local_id;
            row.class_label = slice.instance->class_label;
            row.values.reserve(static_cast<std::size_t>(n_c + 1) * table.metric_names.size());
            for (int k = 0; k <= n_c; ++k) {
                int source = slot_source_frame(observed, t, k, n_c);
                const TrackSlice& src = frames.at(source);
                row.values.insert(row.values.end(), src.metrics.begin(), src.metrics.end());
                row.present.push_back(source == t - k ? 1 : 0);
            }
            table.rows.push_back(std::move(row));
        }
    }

    std::sort(table.rows.begin(), table.rows.end(),
              [](const FeatureTable::Row& a, const FeatureTable::Row& b) {
                  return std::tie(a.frame, a.local_id) < std::tie(b.frame, b.local_id);
              });
    return table;
}

void attach_targets(FeatureTable& table,
                    const std::map<std::pair<int, int>, RowTarget>& targets) {
    for (FeatureTable::Row& row : table.rows) {
        auto it = targets.find({row.frame, row.local_id});
        if (it == targets.end()) {
            throw std::runtime_error(fmt::format(
                "attach_targets: no target for frame {} instance {}", row.frame, row.local_id));
        }
        row.iou = it->second.iou;
        row.gt_track = it->second.gt_track;
        row.label = it->second.iou >= 0.5 ? 1 : 0;
    }
    table.has_targets = true;
}

void write_feature_csv(const std::string& path, const FeatureTable& table) {
    if (table.rows.empty()) throw std::runtime_error("write_feature_csv: no rows");
    csv::Document doc;
    doc.header = {"sequence", "track_id", "frame", "local_id", "class_label"};
    if (table.has_targets) {
        for (const char* c : {"iou", "gt_track", "label"}) doc.header.push_back(c);
    }
    for (int k = 0; k <= table.window; ++k) {
        for (const std::string& name : table.metric_names) {
            doc.header.push_back(fmt::format("{}_{}", name, k));
        }
    }
    for (int k = 0; k <= table.window; ++k) doc.header.push_back(fmt::format("present_{}", k));

    for (const FeatureTable::Row& row : table.rows) {
        std::vector<std::string> fields = {row.sequence, fmt::format("{}", row.track_id),
                                           fmt::format("{}", row.frame),
                                           fmt::format("{}", row.local_id),
                                           fmt::format("{}", row.class_label)};
        if (table.has_targets) {
            fields.push_back(csv::format_double(row.iou));
            fields.push_back(fmt::format("{}", row.gt_track));
            fields.push_back(fmt::format("{}", row.label));
        }
        for (double v : row.values) fields.push_back(csv::format_double(v));
        for (std::uint8_t p : row.present) fields.push_back(p ? "1" : "0");
        doc.rows.push_back(std::move(fields));
    }
    csv::write_file(path, doc);
}

FeatureTable read_feature_csv(const std::string& path) {
    csv::Document doc = csv::read_file(path);
    FeatureTable table;
    table.has_targets = doc.column("iou") >= 0;

    // Metric names are everything between the id/target block and present_0,
    // with the _0 suffix stripped.
    int first_metric = table.has_targets ? 8 : 5;
    int present_0 = doc.require_column("present_0");
    table.window = static_cast<int>(doc.header.size()) - present_0 - 1;
    int metrics_per_slot = (present_0 - first_metric) / (table.window + 1);
    if (metrics_per_slot * (table.window + 1) != present_0 - first_metric) {
        throw std::runtime_error(fmt::format("'{}': inconsistent feature column layout", path));
    }
    for (int i = 0; i < metrics_per_slot; ++i) {
        const std::string& col = doc.header[first_metric + i];
        std::size_t underscore = col.rfind("_0");
        if (underscore == std::string::npos || underscore + 2 != col.size()) {
            throw std::runtime_error(fmt::format("'{}': unexpected column '{}'", path, col));
        }
        table.metric_names.push_back(col.substr(0, underscore));
    }

    for (const auto& fields : doc.rows) {
        FeatureTable::Row row;
        row.sequence = fields[0];
        row.track_id = csv::parse_int(fields[1]);
        row.frame = static_cast<int>(csv::parse_int(fields[2]));
        row.local_id = static_cast<int>(csv::parse_int(fields[3]));
        row.class_label = static_cast<int>(csv::parse_int(fields[4]));
        if (table.has_targets) {
            row.iou = csv::parse_double(fields[5]);
            row.gt_track = csv::parse_int(fields[6]);
            row.label = static_cast<int>(csv::parse_int(fields[7]));
        }
        for (int i = first_metric; i < present_0; ++i) {
            row.values.push_back(csv::parse_double(fields[i]));
        }
        for (int k = 0; k <= table.window; ++k) {
            row.present.push_back(fields[present_0 + k] == "1" ? 1 : 0);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void append_rows(FeatureTable& dst, const FeatureTable& src) {
    if (dst.rows.empty() && dst.metric_names.empty()) {
        dst = src;
        return;
    }
    if (dst.metric_names != src.metric_names || dst.window != src.window ||
        dst.has_targets != src.has_targets) {
        throw std::runtime_error("append_rows: incompatible feature schemas");
    }
    dst.rows.insert(dst.rows.end(), src.rows.begin(), src.rows.end());
}

}  // namespace maskmeta
