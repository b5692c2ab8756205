#include "maskmeta/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "maskmeta/io.hpp"

namespace maskmeta {

namespace {

ObjectSpec::Shape parse_shape(const std::string& s) {
    if (s == "rectangle") return ObjectSpec::Shape::Rectangle;
    if (s == "ellipse") return ObjectSpec::Shape::Ellipse;
    throw std::runtime_error(fmt::format("unknown object shape '{}'", s));
}

PixelMask render_object(const ObjectSpec& spec, int top, int left, FrameDims dims) {
    std::vector<std::pair<int, int>> px;
    if (spec.shape == ObjectSpec::Shape::Rectangle) {
        for (int r = top; r < top + spec.height; ++r) {
            for (int c = left; c < left + spec.width; ++c) px.push_back({r, c});
        }
    } else {
        double cy = top + (spec.height - 1) / 2.0;
        double cx = left + (spec.width - 1) / 2.0;
        double a = spec.height / 2.0;
        double b = spec.width / 2.0;
        for (int r = top; r < top + spec.height; ++r) {
            for (int c = left; c < left + spec.width; ++c) {
                double dv = (r - cy) / a;
                double dh = (c - cx) / b;
                if (dv * dv + dh * dh <= 1.0) px.push_back({r, c});
            }
        }
    }
    return PixelMask::from_pixels(dims, std::move(px));
}

PixelMask dilate_once(const PixelMask& m) {
    const int H = m.dims().height;
    const int W = m.dims().width;
    std::vector<std::pair<int, int>> px;
    m.for_each_pixel([&](int r, int c) {
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                int rr = r + dr, cc = c + dc;
                if (rr >= 0 && rr < H && cc >= 0 && cc < W) px.push_back({rr, cc});
            }
        }
    });
    return PixelMask::from_pixels(m.dims(), std::move(px));
}

std::int64_t bbox_gap(const BoundingBox& a, const BoundingBox& b) {
    std::int64_t dv = 0, dh = 0;
    if (a.row_max < b.row_min) dv = b.row_min - a.row_max;
    if (b.row_max < a.row_min) dv = a.row_min - b.row_max;
    if (a.col_max < b.col_min) dh = b.col_min - a.col_max;
    if (b.col_max < a.col_min) dh = a.col_min - b.col_max;
    return std::max(dv, dh);
}

}  // namespace

SynthConfig parse_synth_config(const toml::Table& table) {
    SynthConfig cfg;
    const toml::Table& seq = toml::get(table, "sequence", "synth config").as_table();
    cfg.id = toml::get_string_or(seq, "id", "synth");
    cfg.dims.height = static_cast<int>(toml::get_int(seq, "height", "[sequence]"));
    cfg.dims.width = static_cast<int>(toml::get_int(seq, "width", "[sequence]"));
    cfg.frames = static_cast<int>(toml::get_int(seq, "frames", "[sequence]"));
    cfg.num_classes = static_cast<int>(toml::get_int_or(seq, "classes", 1));
    cfg.seed = static_cast<std::uint64_t>(toml::get_int_or(seq, "seed", 0));

    if (const toml::Value* objs = toml::find(table, "objects")) {
        for (const toml::Value& v : objs->as_array()) {
            const toml::Table& o = v.as_table();
            ObjectSpec spec;
            spec.shape = parse_shape(toml::get_string_or(o, "shape", "rectangle"));
            spec.height = static_cast<int>(toml::get_int(o, "height", "[[objects]]"));
            spec.width = static_cast<int>(toml::get_int(o, "width", "[[objects]]"));
            spec.class_label = static_cast<int>(toml::get_int_or(o, "class", 0));
            spec.start_v = toml::get_double(o, "start_v", "[[objects]]");
            spec.start_h = toml::get_double(o, "start_h", "[[objects]]");
            spec.vel_v = toml::get_double_or(o, "vel_v", 0.0);
            spec.vel_h = toml::get_double_or(o, "vel_h", 0.0);
            spec.birth = static_cast<int>(toml::get_int_or(o, "birth", 1));
            spec.death = static_cast<int>(toml::get_int_or(o, "death", cfg.frames));
            if (const toml::Value* ff = toml::find(o, "flicker_frames")) {
                for (const toml::Value& f : ff->as_array()) {
                    spec.flicker_frames.push_back(static_cast<int>(f.as_int()));
                }
            }
            cfg.objects.push_back(std::move(spec));
        }
    }
    if (const toml::Value* regions = toml::find(table, "ignore_regions")) {
        for (const toml::Value& v : regions->as_array()) {
            const toml::Table& r = v.as_table();
            cfg.ignore_regions.push_back(
                {static_cast<int>(toml::get_int(r, "top", "[[ignore_regions]]")),
                 static_cast<int>(toml::get_int(r, "left", "[[ignore_regions]]")),
                 static_cast<int>(toml::get_int(r, "height", "[[ignore_regions]]")),
                 static_cast<int>(toml::get_int(r, "width", "[[ignore_regions]]"))});
        }
    }
    if (const toml::Value* deg = toml::find(table, "degradation")) {
        const toml::Table& d = deg->as_table();
        Degradation& g = cfg.degradation;
        g.mask_noise = static_cast<int>(toml::get_int_or(d, "mask_noise", 0));
        g.score_base = toml::get_double_or(d, "score_base", g.score_base);
        g.score_slope = toml::get_double_or(d, "score_slope", g.score_slope);
        g.score_noise = toml::get_double_or(d, "score_noise", 0.0);
        g.clutter_rate = toml::get_double_or(d, "clutter_rate", 0.0);
        g.clutter_min_distance = toml::get_double_or(d, "clutter_min_distance", 50.0);
        g.clutter_size_min = static_cast<int>(toml::get_int_or(d, "clutter_size_min", 6));
        g.clutter_size_max = static_cast<int>(toml::get_int_or(d, "clutter_size_max", 16));
        g.flicker_prob = toml::get_double_or(d, "flicker_prob", 0.0);
        g.prob_softness = toml::get_double_or(d, "prob_softness", 0.1);
        g.prob_softness_clutter = toml::get_double_or(d, "prob_softness_clutter", 0.5);
        g.emit_prob_maps = toml::get_bool_or(d, "emit_prob_maps", true);
    }
    return cfg;
}

SynthConfig load_synth_config(const std::string& path) {
    return parse_synth_config(toml::parse_file(path));
}

SynthResult generate(const SynthConfig& config) {
    if (config.frames < 1) throw std::runtime_error("synth: frames must be >= 1");
    if (!config.dims.valid()) throw std::runtime_error("synth: invalid dims");
    for (const ObjectSpec& o : config.objects) {
        if (o.birth < 1 || o.death > config.frames || o.birth > o.death) {
            throw std::runtime_error("synth: object lifetime outside the sequence");
        }
        if (o.class_label < 0 || o.class_label >= config.num_classes) {
            throw std::runtime_error(
                fmt::format("synth: object class {} outside [0, {})", o.class_label,
                            config.num_classes));
        }
    }

    std::mt19937_64 rng(config.seed);
    const Degradation& deg = config.degradation;
    const FrameDims dims = config.dims;
    const int channels = config.num_classes + 1;

    PixelMask ignore_mask;
    if (!config.ignore_regions.empty()) {
        std::vector<Run> runs;
        for (const IgnoreRegionSpec& r : config.ignore_regions) {
            for (int row = r.top; row < r.top + r.height; ++row) {
                runs.push_back({row, r.left, r.width});
            }
        }
        ignore_mask = PixelMask(dims, std::move(runs));
    }

    SynthResult result;
    result.pred.id = config.id;
    result.gt.id = config.id;

    for (int t = 1; t <= config.frames; ++t) {
        // Ground truth, drawn in object order; later objects occlude earlier.
        IdMap gt_map{dims.height, dims.width,
                     std::vector<std::uint16_t>(
                         static_cast<std::size_t>(dims.height) * dims.width, 0)};
        if (!ignore_mask.empty()) {
            ignore_mask.for_each_pixel([&](int r, int c) { gt_map.at(r, c) = kIgnoreRegionId; });
        }
        std::vector<PixelMask> full_masks(config.objects.size());
        for (std::size_t i = 0; i < config.objects.size(); ++i) {
            const ObjectSpec& o = config.objects[i];
            if (t < o.birth || t > o.death) continue;
            int age = t - o.birth;
            int top = static_cast<int>(std::llround(o.start_v + age * o.vel_v));
            int left = static_cast<int>(std::llround(o.start_h + age * o.vel_h));
            if (top < 0 || left < 0 || top + o.height > dims.height ||
                left + o.width > dims.width) {
                throw std::runtime_error(fmt::format(
                    "synth: object {} leaves the frame at t={} (top={}, left={})", i + 1, t, top,
                    left));
            }
            full_masks[i] = render_object(o, top, left, dims);
            std::uint16_t id = static_cast<std::uint16_t>(i + 1);
            full_masks[i].for_each_pixel([&](int r, int c) { gt_map.at(r, c) = id; });
        }

        GroundTruthFrame gt_frame;
        gt_frame.index = t;
        if (!ignore_mask.empty()) gt_frame.ignore_mask = ignore_mask;
        std::map<std::uint16_t, PixelMask> gt_masks;
        for (auto& [id, mask] : masks_from_id_map(gt_map, kIgnoreRegionId)) {
            gt_masks.emplace(id, std::move(mask));
        }
        for (const auto& [id, mask] : gt_masks) {
            gt_frame.instances.push_back({id, config.objects[id - 1].class_label, mask});
        }

        // Predictions: perturbed copies of the visible ground truth.
        struct Draft {
            PixelMask mask;
            int class_label = 0;
            bool clutter = false;
        };
        std::vector<Draft> drafts;
        for (const auto& [id, gt_mask] : gt_masks) {
            const ObjectSpec& o = config.objects[id - 1];
            bool flicker = std::find(o.flicker_frames.begin(), o.flicker_frames.end(), t) !=
                           o.flicker_frames.end();
            if (deg.flicker_prob > 0.0 &&
                std::bernoulli_distribution(deg.flicker_prob)(rng)) {
                flicker = true;
            }
            if (flicker) continue;
            PixelMask mask = gt_mask;
            if (deg.mask_noise > 0) {
                int steps = std::uniform_int_distribution<int>(0, deg.mask_noise)(rng);
                bool grow = std::bernoulli_distribution(0.5)(rng);
                for (int s = 0; s < steps; ++s) {
                    if (grow) {
                        mask = dilate_once(mask);
                    } else {
                        PixelMask eroded = split_inner_boundary(mask).inner;
                        if (eroded.empty()) break;
                        mask = eroded;
                    }
                }
            }
            drafts.push_back({std::move(mask), o.class_label, false});
        }

        // Clutter false positives, kept clear of every ground-truth object.
        std::vector<BoundingBox> gt_boxes;
        for (const auto& [id, mask] : gt_masks) gt_boxes.push_back(bounding_box(mask));
        int clutter_count = deg.clutter_rate > 0.0
                                ? std::poisson_distribution<int>(deg.clutter_rate)(rng)
                                : 0;
        for (int k = 0; k < clutter_count; ++k) {
            for (int attempt = 0; attempt < 50; ++attempt) {
                int h = std::uniform_int_distribution<int>(deg.clutter_size_min,
                                                           deg.clutter_size_max)(rng);
                int w = std::uniform_int_distribution<int>(deg.clutter_size_min,
                                                           deg.clutter_size_max)(rng);
                if (h >= dims.height || w >= dims.width) continue;
                int top = std::uniform_int_distribution<int>(0, dims.height - h)(rng);
                int left = std::uniform_int_distribution<int>(0, dims.width - w)(rng);
                BoundingBox box{top, top + h - 1, left, left + w - 1};
                bool clear = true;
                for (const BoundingBox& gb : gt_boxes) {
                    if (static_cast<double>(bbox_gap(box, gb)) < deg.clutter_min_distance) {
                        clear = false;
                        break;
                    }
                }
                if (!clear) continue;
                std::vector<std::pair<int, int>> px;
                for (int r = top; r <= box.row_max; ++r) {
                    for (int c = left; c <= box.col_max; ++c) px.push_back({r, c});
                }
                int cls = std::uniform_int_distribution<int>(0, config.num_classes - 1)(rng);
                drafts.push_back({PixelMask::from_pixels(dims, std::move(px)), cls, true});
                break;
            }
        }

        // Rasterize to the id map (single owner per pixel) and re-extract.
        IdMap pred_map{dims.height, dims.width,
                       std::vector<std::uint16_t>(
                           static_cast<std::size_t>(dims.height) * dims.width, 0)};
        for (std::size_t i = 0; i < drafts.size(); ++i) {
            std::uint16_t id = static_cast<std::uint16_t>(i + 1);
            drafts[i].mask.for_each_pixel([&](int r, int c) { pred_map.at(r, c) = id; });
        }

        Frame pred_frame;
        pred_frame.index = t;
        pred_frame.dims = dims;
        std::map<int, bool> clutter_by_local;
        for (auto& [id, mask] : masks_from_id_map(pred_map)) {
            const Draft& d = drafts[id - 1];
            double iou = 0.0;
            for (const auto& [gid, gt_mask] : gt_masks) {
                if (config.objects[gid - 1].class_label != d.class_label) continue;
                iou = std::max(iou, overlap(mask, gt_mask));
            }
            double score = deg.score_base + deg.score_slope * iou;
            if (deg.score_noise > 0.0) {
                score += std::normal_distribution<double>(0.0, deg.score_noise)(rng);
            }
            score = std::clamp(score, 0.0, 1.0);
            pred_frame.instances.push_back({id, d.class_label, score, std::move(mask)});
            clutter_by_local[id] = d.clutter;
        }

        if (deg.emit_prob_maps) {
            ProbMap pm{dims.height, dims.width, channels, {}};
            pm.data.resize(static_cast<std::size_t>(dims.height) * dims.width * channels);
            auto fill = [&](int r, int c, int peak, double softness) {
                float rest = static_cast<float>(softness / (channels - 1));
                for (int ch = 0; ch < channels; ++ch) pm.at(r, c, ch) = rest;
                pm.at(r, c, peak) = static_cast<float>(1.0 - softness);
            };
            for (int r = 0; r < dims.height; ++r) {
                for (int c = 0; c < dims.width; ++c) fill(r, c, 0, deg.prob_softness);
            }
            for (const Instance& inst : pred_frame.instances) {
                double base = clutter_by_local[inst.local_id] ? deg.prob_softness_clutter
                                                              : deg.prob_softness;
                MaskSplit split = split_inner_boundary(inst.mask);
                double edge = std::min(0.95, base * 1.5);
                split.inner.for_each_pixel(
                    [&](int r, int c) { fill(r, c, inst.class_label + 1, base); });
                split.boundary.for_each_pixel(
                    [&](int r, int c) { fill(r, c, inst.class_label + 1, edge); });
            }
            pred_frame.prob_map = std::move(pm);
        }

        result.gt.frames.push_back(std::move(gt_frame));
        result.pred.frames.push_back(std::move(pred_frame));
    }

    validate_sequence(result.pred);
    validate_ground_truth(result.gt, dims, config.frames);
    return result;
}

std::vector<OracleIoU> oracle_iou(const Frame& pred, const GroundTruthFrame& gt) {
    std::vector<OracleIoU> out;
    for (const Instance& inst : pred.instances) {
        std::set<std::pair<int, int>> pset;
        inst.mask.for_each_pixel([&](int r, int c) { pset.insert({r, c}); });
        OracleIoU best{inst.local_id, 0.0, -1};
        std::vector<const GroundTruthInstance*> gts;
        for (const GroundTruthInstance& g : gt.instances) gts.push_back(&g);
        std::sort(gts.begin(), gts.end(),
                  [](const GroundTruthInstance* a, const GroundTruthInstance* b) {
                      return a->track_id < b->track_id;
                  });
        for (const GroundTruthInstance* g : gts) {
            if (g->class_label != inst.class_label) continue;
            std::set<std::pair<int, int>> gset;
            g->mask.for_each_pixel([&](int r, int c) { gset.insert({r, c}); });
            std::size_t inter = 0;
            for (const auto& p : pset) inter += gset.count(p);
            std::size_t uni = pset.size() + gset.size() - inter;
            double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
            if (iou > best.iou) {
                best.iou = iou;
                best.gt_track = g->track_id;
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace maskmeta
