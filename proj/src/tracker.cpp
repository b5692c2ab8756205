#include "maskmeta/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace maskmeta {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct StoredObservation {
    PixelMask mask;
    Center center;
    std::int64_t size = 0;
};

struct TrackState {
    std::int64_t track_id = 0;
    int class_label = 0;
    std::map<int, StoredObservation> observations;  // frame -> observation

    int last_frame() const { return observations.rbegin()->first; }
    const StoredObservation* at(int frame) const {
        auto it = observations.find(frame);
        return it == observations.end() ? nullptr : &it->second;
    }
};

struct Detection {
    const Instance* instance = nullptr;
    Center center;
    bool matched = false;
};

// Argmax overlap over unmatched same-class detections; ties keep the
// smaller local_id (detections are scanned in ascending local_id order).
int best_overlap(const PixelMask& mask, const std::vector<Detection>& dets, int class_label,
                 double threshold, double* out_value = nullptr) {
    int best = -1;
    double best_value = 0.0;
    for (std::size_t j = 0; j < dets.size(); ++j) {
        if (dets[j].matched || dets[j].instance->class_label != class_label) continue;
        double o = overlap(mask, dets[j].instance->mask);
        if (o > best_value) {
            best_value = o;
            best = static_cast<int>(j);
        }
    }
    if (out_value) *out_value = best_value;
    return (best >= 0 && best_value >= threshold) ? best : -1;
}

template <typename DistFn>
int best_distance(const std::vector<Detection>& dets, int class_label, double threshold,
                  DistFn&& dist) {
    int best = -1;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < dets.size(); ++j) {
        if (dets[j].matched || dets[j].instance->class_label != class_label) continue;
        double d = dist(dets[j]);
        if (d < best_value) {
            best_value = d;
            best = static_cast<int>(j);
        }
    }
    return (best >= 0 && best_value <= threshold) ? best : -1;
}

}  // namespace

void TrackingParams::validate() const {
    // c_o > 1 is allowed as a degenerate never-match-by-overlap setting.
    if (!(c_o > 0.0)) {
        throw std::invalid_argument(fmt::format("c_o = {} must be positive", c_o));
    }
    if (!(c_d > 0.0) || !(c_l > 0.0)) {
        throw std::invalid_argument("c_d and c_l must be positive");
    }
    if (t_l < 3) throw std::invalid_argument(fmt::format("t_l = {} < 3", t_l));
}

TrackIdGenerator::TrackIdGenerator(std::uint64_t seed) {
    std::uint64_t state = seed;
    multiplier_ = splitmix64(state) | 1ULL;  // odd, hence invertible mod 2^31
    offset_ = splitmix64(state);
}

std::int64_t TrackIdGenerator::next() {
    std::uint64_t value = (counter_ * multiplier_ + offset_) & 0x7fffffffULL;
    ++counter_;
    return static_cast<std::int64_t>(value) + 1;
}

Center predict_center(const std::vector<std::pair<int, Center>>& centers, int target_frame) {
    if (centers.size() < 2) {
        throw std::invalid_argument("predict_center: needs at least two observations");
    }
    double n = static_cast<double>(centers.size());
    double mean_t = 0.0, mean_v = 0.0, mean_h = 0.0;
    for (const auto& [frame, c] : centers) {
        mean_t += frame;
        mean_v += c.v;
        mean_h += c.h;
    }
    mean_t /= n;
    mean_v /= n;
    mean_h /= n;
    double sxx = 0.0, sxv = 0.0, sxh = 0.0;
    for (const auto& [frame, c] : centers) {
        double dt = frame - mean_t;
        sxx += dt * dt;
        sxv += dt * (c.v - mean_v);
        sxh += dt * (c.h - mean_h);
    }
    double slope_v = sxx > 0.0 ? sxv / sxx : 0.0;
    double slope_h = sxx > 0.0 ? sxh / sxx : 0.0;
    double dt = target_frame - mean_t;
    return {mean_v + slope_v * dt, mean_h + slope_h * dt};
}

TrackingResult track_sequence(const Sequence& seq, const TrackingParams& params,
                              std::uint64_t seed) {
    params.validate();
    if (seq.frames.empty()) throw std::invalid_argument("track_sequence: empty sequence");

    TrackIdGenerator ids(seed);
    std::vector<TrackState> tracks;
    TrackingResult result;

    for (const Frame& frame : seq.frames) {
        const int t = frame.index;

        std::vector<Detection> dets;
        dets.reserve(frame.instances.size());
        std::vector<const Instance*> ordered;
        for (const Instance& inst : frame.instances) ordered.push_back(&inst);
        std::sort(ordered.begin(), ordered.end(),
                  [](const Instance* a, const Instance* b) { return a->local_id < b->local_id; });
        for (const Instance* inst : ordered) {
            dets.push_back({inst, geometric_center(inst->mask), false});
        }

        std::vector<std::pair<int, std::int64_t>> assignment;  // det index -> track id

        if (t > 1) {
            // Candidate tracks: seen at most t_l - 2 frames ago. Visited in
            // descending size of their most recent observation.
            std::vector<TrackState*> candidates;
            for (TrackState& tr : tracks) {
                int gap = t - tr.last_frame();
                if (gap >= 1 && gap <= params.t_l - 2) candidates.push_back(&tr);
            }
            std::sort(candidates.begin(), candidates.end(),
                      [](const TrackState* a, const TrackState* b) {
                          std::int64_t sa = a->observations.rbegin()->second.size;
                          std::int64_t sb = b->observations.rbegin()->second.size;
                          if (sa != sb) return sa > sb;
                          return a->track_id < b->track_id;
                      });

            for (TrackState* tr : candidates) {
                const StoredObservation* prev = tr->at(t - 1);
                const StoredObservation* prev2 = tr->at(t - 2);
                int match = -1;

                // Shift stage: move the previous mask by its last center step.
                if (t > 2 && prev && prev2) {
                    double dv = prev->center.v - prev2->center.v;
                    double dh = prev->center.h - prev2->center.h;
                    if (auto shifted = shift(prev->mask, dv, dh)) {
                        match = best_overlap(*shifted, dets, tr->class_label, params.c_o);
                    }
                    if (match < 0) {
                        match = best_distance(
                            dets, tr->class_label, params.c_d, [&](const Detection& d) {
                                double step_v = prev->center.v - prev2->center.v;
                                double step_h = prev->center.h - prev2->center.h;
                                double move_v = d.center.v - prev->center.v;
                                double move_h = d.center.h - prev->center.h;
                                return std::hypot(move_v, move_h) +
                                       std::hypot(step_v - move_v, step_h - move_h);
                            });
                    }
                }

                // Distance stage: only when the track was absent two frames ago.
                if (match < 0 && prev && !prev2) {
                    match = best_distance(dets, tr->class_label, params.c_d,
                                          [&](const Detection& d) {
                                              return center_distance(d.center, prev->center);
                                          });
                }

                // Overlap stage on the unshifted previous mask.
                if (match < 0 && prev) {
                    match = best_overlap(prev->mask, dets, tr->class_label, params.c_o);
                }

                // Regression stage: linear extrapolation of the center over the
                // last t_l frames; also re-links tracks that skipped frames.
                if (match < 0 && params.regression_stage && t > 3) {
                    std::vector<std::pair<int, Center>> window;
                    for (int k = t - params.t_l; k <= t - 1; ++k) {
                        if (const StoredObservation* obs = tr->at(k)) {
                            window.push_back({k, obs->center});
                        }
                    }
                    if (window.size() >= 2) {
                        Center predicted = predict_center(window, t);
                        match = best_distance(dets, tr->class_label, params.c_l,
                                              [&](const Detection& d) {
                                                  return center_distance(d.center, predicted);
                                              });
                        if (match < 0) {
                            // Fall back to overlap after shifting the largest
                            // recent mask onto the predicted center.
                            int t_max = -1;
                            std::int64_t max_size = -1;
                            for (const auto& [k, obs] : tr->observations) {
                                if (k < t - params.t_l || k > t - 1) continue;
                                if (obs.size >= max_size) {
                                    max_size = obs.size;
                                    t_max = k;
                                }
                            }
                            const StoredObservation* ref = tr->at(t_max);
                            if (auto shifted = shift(ref->mask, predicted.v - ref->center.v,
                                                     predicted.h - ref->center.h)) {
                                match =
                                    best_overlap(*shifted, dets, tr->class_label, params.c_o);
                            }
                        }
                    }
                }

                if (match >= 0) {
                    dets[match].matched = true;
                    const Detection& d = dets[match];
                    tr->observations[t] = {d.instance->mask, d.center, d.instance->mask.area()};
                    assignment.push_back({match, tr->track_id});
                }
            }
        }

        // Unmatched detections start new tracks with fresh IDs.
        for (std::size_t j = 0; j < dets.size(); ++j) {
            if (dets[j].matched) continue;
            TrackState tr;
            tr.track_id = ids.next();
            tr.class_label = dets[j].instance->class_label;
            tr.observations[t] = {dets[j].instance->mask, dets[j].center,
                                  dets[j].instance->mask.area()};
            tracks.push_back(std::move(tr));
            assignment.push_back({static_cast<int>(j), tracks.back().track_id});
        }

        TrackedFrame out;
        out.index = t;
        std::unordered_set<std::int64_t> seen;
        for (const auto& [det_index, track_id] : assignment) {
            if (!seen.insert(track_id).second) {
                throw std::logic_error(
                    fmt::format("frame {}: track id {} assigned twice", t, track_id));
            }
            out.instances.push_back({*dets[det_index].instance, track_id});
        }
        std::sort(out.instances.begin(), out.instances.end(),
                  [](const TrackedInstance& a, const TrackedInstance& b) {
                      return a.instance.local_id < b.instance.local_id;
                  });
        result.frames.push_back(std::move(out));
    }

    for (const TrackState& tr : tracks) {
        TrackHistory hist;
        hist.track_id = tr.track_id;
        hist.class_label = tr.class_label;
        for (const auto& [frame, obs] : tr.observations) {
            hist.observations.push_back({frame, obs.center, obs.size});
        }
        result.histories.push_back(std::move(hist));
    }
    std::sort(result.histories.begin(), result.histories.end(),
              [](const TrackHistory& a, const TrackHistory& b) { return a.track_id < b.track_id; });
    return result;
}

void write_tracks_json(const std::string& path, const std::string& sequence_id,
                       const TrackingParams& params, std::uint64_t seed,
                       const TrackingResult& result) {
    json frames = json::object();
    for (const TrackedFrame& frame : result.frames) {
        json list = json::array();
        for (const TrackedInstance& ti : frame.instances) {
            list.push_back({{"local_id", ti.instance.local_id}, {"track_id", ti.track_id}});
        }
        frames[fmt::format("{}", frame.index)] = std::move(list);
    }
    json doc{{"sequence", sequence_id},
             {"seed", seed},
             {"params",
              {{"c_o", params.c_o}, {"c_d", params.c_d}, {"c_l", params.c_l}, {"t_l", params.t_l}}},
             {"frames", frames}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error(fmt::format("write failure on '{}'", path));
}

std::vector<TrackedFrame> read_tracks_json(const std::string& path, const Sequence& seq) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error(fmt::format("invalid json in '{}': {}", path, e.what()));
    }
    const json& frames = doc.at("frames");
    std::vector<TrackedFrame> out;
    for (const Frame& frame : seq.frames) {
        std::string key = fmt::format("{}", frame.index);
        if (!frames.contains(key)) {
            throw std::runtime_error(
                fmt::format("'{}': missing frame {} in tracks file", path, frame.index));
        }
        TrackedFrame tf;
        tf.index = frame.index;
        std::map<int, std::int64_t> by_local;
        for (const auto& e : frames.at(key)) {
            by_local[e.at("local_id").get<int>()] = e.at("track_id").get<std::int64_t>();
        }
        for (const Instance& inst : frame.instances) {
            auto it = by_local.find(inst.local_id);
            if (it == by_local.end()) {
                throw std::runtime_error(
                    fmt::format("'{}': frame {} instance {} has no track assignment", path,
                                frame.index, inst.local_id));
            }
            tf.instances.push_back({inst, it->second});
        }
        if (by_local.size() != frame.instances.size()) {
            throw std::runtime_error(fmt::format(
                "'{}': frame {} has {} assignments for {} instances", path, frame.index,
                by_local.size(), frame.instances.size()));
        }
        out.push_back(std::move(tf));
    }
    return out;
}

}  // namespace maskmeta
