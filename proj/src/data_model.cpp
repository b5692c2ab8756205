#include "maskmeta/data_model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

namespace maskmeta {

void validate_frame(const Frame& frame) {
    if (frame.index < 1) {
        throw std::runtime_error(fmt::format("frame index {} < 1", frame.index));
    }
    if (!frame.dims.valid()) {
        throw std::runtime_error(fmt::format("frame {}: invalid dims", frame.index));
    }
    std::unordered_set<int> ids;
    for (const Instance& inst : frame.instances) {
        if (!ids.insert(inst.local_id).second) {
            throw std::runtime_error(
                fmt::format("frame {}: duplicate local id {}", frame.index, inst.local_id));
        }
        if (inst.mask.empty()) {
            throw std::runtime_error(
                fmt::format("frame {}: instance {} has empty mask", frame.index, inst.local_id));
        }
        if (!(inst.mask.dims() == frame.dims)) {
            throw std::runtime_error(
                fmt::format("frame {}: instance {} mask dims mismatch", frame.index,
                            inst.local_id));
        }
        if (!(inst.score >= 0.0 && inst.score <= 1.0)) {
            throw std::runtime_error(fmt::format("frame {}: instance {} score {} outside [0,1]",
                                                 frame.index, inst.local_id, inst.score));
        }
        if (inst.class_label < 0) {
            throw std::runtime_error(fmt::format("frame {}: instance {} negative class",
                                                 frame.index, inst.local_id));
        }
    }
    if (frame.prob_map) {
        const ProbMap& pm = *frame.prob_map;
        if (pm.height != frame.dims.height || pm.width != frame.dims.width || pm.channels < 2) {
            throw std::runtime_error(
                fmt::format("frame {}: prob map shape {}x{}x{} inconsistent with {}x{} frame",
                            frame.index, pm.height, pm.width, pm.channels, frame.dims.height,
                            frame.dims.width));
        }
        for (int r = 0; r < pm.height; ++r) {
            for (int c = 0; c < pm.width; ++c) {
                double sum = 0.0;
                for (int ch = 0; ch < pm.channels; ++ch) {
                    float p = pm.at(r, c, ch);
                    if (!(p >= 0.0f)) {
                        throw std::runtime_error(
                            fmt::format("frame {}: negative probability at pixel ({},{})",
                                        frame.index, r, c));
                    }
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-6) {
                    throw std::runtime_error(
                        fmt::format("frame {}: probabilities at pixel ({},{}) sum to {}",
                                    frame.index, r, c, sum));
                }
            }
        }
    }
}

void validate_sequence(const Sequence& seq) {
    if (seq.frames.empty()) {
        throw std::runtime_error(fmt::format("sequence '{}' has no frames", seq.id));
    }
    FrameDims dims = seq.frames.front().dims;
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const Frame& f = seq.frames[i];
        if (f.index != static_cast<int>(i) + 1) {
            throw std::runtime_error(fmt::format(
                "sequence '{}': frame index {} at position {} (expected {})", seq.id, f.index,
                i, i + 1));
        }
        if (!(f.dims == dims)) {
            throw std::runtime_error(
                fmt::format("sequence '{}': frame {} dims change", seq.id, f.index));
        }
        validate_frame(f);
    }
}

void validate_ground_truth(const GroundTruthSequence& gt, FrameDims dims, int length) {
    if (static_cast<int>(gt.frames.size()) != length) {
        throw std::runtime_error(fmt::format("ground truth '{}': {} frames, expected {}", gt.id,
                                             gt.frames.size(), length));
    }
    for (std::size_t i = 0; i < gt.frames.size(); ++i) {
        const GroundTruthFrame& f = gt.frames[i];
        if (f.index != static_cast<int>(i) + 1) {
            throw std::runtime_error(
                fmt::format("ground truth '{}': frame index {} at position {}", gt.id, f.index,
                            i));
        }
        std::unordered_set<std::int64_t> ids;
        for (const GroundTruthInstance& inst : f.instances) {
            if (!ids.insert(inst.track_id).second) {
                throw std::runtime_error(fmt::format(
                    "ground truth '{}': frame {} duplicate track id {}", gt.id, f.index,
                    inst.track_id));
            }
            if (inst.mask.empty() || !(inst.mask.dims() == dims)) {
                throw std::runtime_error(
                    fmt::format("ground truth '{}': frame {} track {} bad mask", gt.id, f.index,
                                inst.track_id));
            }
        }
        if (f.ignore_mask && !(f.ignore_mask->dims() == dims)) {
            throw std::runtime_error(
                fmt::format("ground truth '{}': frame {} ignore mask dims mismatch", gt.id,
                            f.index));
        }
    }
}

Frame filter_ignored(const Frame& frame, const GroundTruthFrame& gt) {
    if (!gt.ignore_mask) return frame;
    Frame out = frame;
    out.instances.clear();
    for (const Instance& inst : frame.instances) {
        std::int64_t inside = intersection_area(inst.mask, *gt.ignore_mask);
        // Removal threshold is >= 80% of the instance's pixels; integer
        // comparison keeps the boundary case exact.
        if (10 * inside < 8 * inst.mask.area()) {
            out.instances.push_back(inst);
        }
    }
    return out;
}

Frame filter_score(const Frame& frame, double min_score) {
    if (min_score <= 0.0) return frame;
    Frame out = frame;
    out.instances.clear();
    for (const Instance& inst : frame.instances) {
        if (inst.score >= min_score) out.instances.push_back(inst);
    }
    return out;
}

}  // namespace maskmeta
