#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskmeta/geometry.hpp"

namespace maskmeta {

/// Per-pixel class distribution, channel 0 = background, channel c+1 = class c.
/// Layout is pixel-major: data[(row * width + col) * channels + channel].
struct ProbMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    float at(int row, int col, int channel) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + channel];
    }
    float& at(int row, int col, int channel) {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + channel];
    }
};

struct Instance {
    int local_id = 0;
    int class_label = 0;
    double score = 0.0;
    PixelMask mask;
};

struct Frame {
    int index = 0;  // 1-based
    FrameDims dims;
    std::vector<Instance> instances;
    std::optional<ProbMap> prob_map;
};

struct Sequence {
    std::string id;
    std::vector<Frame> frames;

    FrameDims dims() const { return frames.empty() ? FrameDims{} : frames.front().dims; }
    int length() const { return static_cast<int>(frames.size()); }
};

struct GroundTruthInstance {
    std::int64_t track_id = 0;
    int class_label = 0;
    PixelMask mask;
};

struct GroundTruthFrame {
    int index = 0;
    std::vector<GroundTruthInstance> instances;
    std::optional<PixelMask> ignore_mask;
};

struct GroundTruthSequence {
    std::string id;
    std::vector<GroundTruthFrame> frames;
};

/// Throws std::runtime_error (message names the frame) on any violated invariant.
void validate_frame(const Frame& frame);
void validate_sequence(const Sequence& seq);
void validate_ground_truth(const GroundTruthSequence& gt, FrameDims dims, int length);

/// Drops every instance with at least 80% of its pixels inside the ignore
/// region. Identity when the ground-truth frame carries no ignore mask.
Frame filter_ignored(const Frame& frame, const GroundTruthFrame& gt);

/// Drops every instance with score below `min_score` (no-op at 0).
Frame filter_score(const Frame& frame, double min_score);

}  // namespace maskmeta
