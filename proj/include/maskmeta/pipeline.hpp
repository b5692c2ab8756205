#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskmeta/evaluation.hpp"
#include "maskmeta/features.hpp"
#include "maskmeta/io.hpp"
#include "maskmeta/meta_models.hpp"
#include "maskmeta/synth.hpp"
#include "maskmeta/tracker.hpp"

namespace maskmeta {

struct PipelineConfig {
    std::string config_dir;  // resolved base for relative paths
    std::uint64_t seed = 0;
    int n_c = 5;
    int runs = 10;
    double score_min = 0.0;
    std::vector<std::string> families = {"lr_l1", "gb", "nn_l2"};
    std::vector<std::string> tasks = {"clf", "reg"};
    std::string sweep_family = "gb";
    int sweep_n_c = 5;
    int survival_window = 5;
    bool enable_survival = true;
    TrackingParams tracking;
    std::vector<std::string> synth_configs;  // synth config files to generate
    std::vector<std::string> sequence_dirs;  // pre-existing sequence directories
    std::optional<std::string> gt_ratios_path;  // precomputed ratios for gt-less data
    std::uint64_t config_hash = 0;           // content hash for stage stamps
};

PipelineConfig load_pipeline_config(const std::string& path);

/// Runs synth -> track -> features -> survival -> meta -> evaluate -> sweep
/// and writes a bundled report.json. Stages whose stamp matches the current
/// config hash are skipped unless `force` is set; a failing stage raises with
/// its name and leaves partial artifacts in place.
void run_pipeline(const PipelineConfig& config, const std::string& out_dir, bool force = false);

// Helpers shared between the CLI commands and the pipeline ------------------

/// Load + score pre-filter + ignored-region filter (when ground truth exists).
LoadedSequence load_filtered_sequence(const std::string& directory, double score_min);

/// Per-instance targets for one sequence, keyed by (frame, local_id).
std::map<std::pair<int, int>, RowTarget> compute_targets(const Sequence& pred,
                                                         const GroundTruthSequence& gt);

void write_targets_csv(const std::string& path, const Sequence& pred,
                       const std::map<std::pair<int, int>, RowTarget>& targets);
std::map<std::tuple<std::string, int, int>, RowTarget> read_targets_csv(
    const std::string& path);

void write_mot_json(const std::string& path, const MotReport& report);
void write_protocol_json(const std::string& path, const ProtocolResult& result,
                         const std::string& feature_set, int n_c);
void write_sweep_json(const std::string& path, const std::vector<SweepCurve>& curves,
                      std::int64_t total_predictions, std::int64_t total_gt_observations);
void write_sweep_csv(const std::string& path, const SweepCurve& curve);

/// Sweep rows assembled from a feature table with targets; predictions from
/// different sequences are disambiguated by a per-sequence frame offset.
std::vector<SweepInput> sweep_inputs_from_table(const FeatureTable& table,
                                                const std::vector<double>& filter_values);

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace maskmeta
