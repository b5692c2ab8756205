#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskmeta/data_model.hpp"

namespace maskmeta {

/// On-disk layout of one sequence directory:
///   pred/frame_{t:06}.png   16-bit instance-ID map, 0 = background
///   pred/frame_{t:06}.json  {"instances":[{"id":..,"class":..,"score":..},..]}
///   pred/frame_{t:06}.prob  optional raw prob map (see prob file format below)
///   gt/frame_{t:06}.png     like pred, ID 65535 marks the ignore region
///   gt/frame_{t:06}.json    {"instances":[{"track":..,"class":..},..]}
/// Frame indices are contiguous starting at 1.
struct LoadedSequence {
    Sequence pred;
    std::optional<GroundTruthSequence> gt;
};

LoadedSequence load_sequence(const std::string& directory);
void save_sequence(const std::string& directory, const Sequence& pred,
                   const GroundTruthSequence* gt);

/// Loads only the ground-truth tree. `directory` may be the sequence
/// directory (containing gt/) or the gt/ directory itself.
GroundTruthSequence load_ground_truth(const std::string& directory);

/// 16-bit single-channel image helpers (row-major values).
struct IdMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint16_t> values;

    std::uint16_t at(int r, int c) const {
        return values[static_cast<std::size_t>(r) * width + c];
    }
    std::uint16_t& at(int r, int c) {
        return values[static_cast<std::size_t>(r) * width + c];
    }
};

IdMap read_id_map(const std::string& path);
void write_id_map(const std::string& path, const IdMap& map);

/// Prob file format: little-endian, magic "MMPR" (4 bytes), then uint32
/// height, width, channels, then height*width*channels float32 values in
/// pixel-major order (channel fastest).
ProbMap read_prob_map(const std::string& path);
void write_prob_map(const std::string& path, const ProbMap& pm);

/// Extracts one PixelMask per distinct nonzero id (skipping `skip_id` if >= 0).
std::vector<std::pair<std::uint16_t, PixelMask>> masks_from_id_map(const IdMap& map,
                                                                   int skip_id = -1);

constexpr std::uint16_t kIgnoreRegionId = 65535;

}  // namespace maskmeta
