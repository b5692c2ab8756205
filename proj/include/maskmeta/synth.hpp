#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskmeta/data_model.hpp"
#include "maskmeta/toml.hpp"

namespace maskmeta {

struct ObjectSpec {
    enum class Shape { Rectangle, Ellipse };
    Shape shape = Shape::Rectangle;
    int height = 10;
    int width = 10;
    int class_label = 0;
    double start_v = 0.0;  // top-left at birth
    double start_h = 0.0;
    double vel_v = 0.0;  // pixels per frame
    double vel_h = 0.0;
    int birth = 1;
    int death = 1;  // inclusive
    std::vector<int> flicker_frames;  // frames where the prediction is omitted
};

struct IgnoreRegionSpec {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

struct Degradation {
    int mask_noise = 0;  // max erode/dilate iterations per instance
    double score_base = 0.2;
    double score_slope = 0.7;  // score ~ clamp(base + slope * iou + noise)
    double score_noise = 0.0;
    double clutter_rate = 0.0;  // expected clutter false positives per frame
    double clutter_min_distance = 50.0;
    int clutter_size_min = 6;
    int clutter_size_max = 16;
    double flicker_prob = 0.0;
    double prob_softness = 0.1;
    double prob_softness_clutter = 0.5;
    bool emit_prob_maps = true;
};

struct SynthConfig {
    std::string id = "synth";
    FrameDims dims{256, 320};
    int frames = 10;
    int num_classes = 1;
    std::uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
    std::vector<IgnoreRegionSpec> ignore_regions;
    Degradation degradation;
};

SynthConfig parse_synth_config(const toml::Table& table);
SynthConfig load_synth_config(const std::string& path);

struct SynthResult {
    Sequence pred;
    GroundTruthSequence gt;
};

/// Deterministic given the seed. Ground truth follows the object kinematics;
/// predictions are the ground-truth masks perturbed per the degradation spec,
/// plus clutter false positives placed away from every ground-truth object.
/// Throws when an object leaves the frame during its lifetime.
SynthResult generate(const SynthConfig& config);

struct OracleIoU {
    int local_id = 0;
    double iou = 0.0;
    std::int64_t gt_track = -1;
};

/// Brute-force per-instance IoU via naive pixel sets; reference for the
/// run-length-encoded assignment path.
std::vector<OracleIoU> oracle_iou(const Frame& pred, const GroundTruthFrame& gt);

}  // namespace maskmeta
