#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskmeta/data_model.hpp"

namespace maskmeta {

struct TrackingParams {
    double c_o = 0.35;   // overlap threshold
    double c_d = 100.0;  // distance threshold, pixels
    double c_l = 50.0;   // regression-distance threshold, pixels
    int t_l = 5;         // regression window, frames

    // Diagnostic switch: disables the regression stage so its causal effect
    // on re-linking flickering tracks can be measured. On by default.
    bool regression_stage = true;

    void validate() const;
};

struct TrackedInstance {
    Instance instance;
    std::int64_t track_id = 0;
};

struct TrackedFrame {
    int index = 0;
    std::vector<TrackedInstance> instances;
};

/// Per-track observation history as recorded by the tracker.
struct TrackObservation {
    int frame = 0;
    Center center;
    std::int64_t size = 0;
};

struct TrackHistory {
    std::int64_t track_id = 0;
    int class_label = 0;
    std::vector<TrackObservation> observations;  // strictly increasing frames
};

struct TrackingResult {
    std::vector<TrackedFrame> frames;
    std::vector<TrackHistory> histories;
};

/// Least-squares line per coordinate over frame index, evaluated at `target`.
/// Requires at least two observations.
Center predict_center(const std::vector<std::pair<int, Center>>& centers, int target_frame);

/// Sequential matching of instances across frames. Frame-1 instances receive
/// fresh IDs from a seeded generator; later frames are matched through the
/// shift / distance / overlap / regression stages in that order, visiting
/// prior instances in descending mask-size order and considering only
/// unmatched same-class candidates. Tracks unseen for up to t_l - 2 frames
/// stay eligible for the regression stage.
TrackingResult track_sequence(const Sequence& seq, const TrackingParams& params,
                              std::uint64_t seed);

/// Deterministic ID stream: a seeded bijective permutation of a counter.
class TrackIdGenerator {
public:
    explicit TrackIdGenerator(std::uint64_t seed);
    std::int64_t next();

private:
    std::uint64_t multiplier_;
    std::uint64_t offset_;
    std::uint64_t counter_ = 0;
};

/// tracks.json round trip; the file maps frame index -> [(local_id, track_id)].
void write_tracks_json(const std::string& path, const std::string& sequence_id,
                       const TrackingParams& params, std::uint64_t seed,
                       const TrackingResult& result);
std::vector<TrackedFrame> read_tracks_json(const std::string& path, const Sequence& seq);

}  // namespace maskmeta
