#include "maskmeta/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskmeta/csv.hpp"
#include "maskmeta/survival.hpp"
#include "maskmeta/toml.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskmeta {

namespace {

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json_file(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error(fmt::format("write failure on '{}'", path.string()));
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    json doc;
    in >> doc;
    return doc;
}

std::string resolve(const std::string& base, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute() || base.empty()) return path;
    return (fs::path(base) / p).string();
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t basis) {
    std::uint64_t hash = basis;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    toml::Table table = toml::parse_file(path);
    PipelineConfig cfg;
    cfg.config_dir = fs::path(path).parent_path().string();
    std::uint64_t hash = fnv1a(read_file_bytes(path));

    if (const toml::Value* p = toml::find(table, "pipeline")) {
        const toml::Table& t = p->as_table();
        cfg.seed = static_cast<std::uint64_t>(toml::get_int_or(t, "seed", 0));
        cfg.n_c = static_cast<int>(toml::get_int_or(t, "n_c", 5));
        cfg.runs = static_cast<int>(toml::get_int_or(t, "runs", 10));
        cfg.score_min = toml::get_double_or(t, "score_min", 0.0);
        cfg.sweep_family = toml::get_string_or(t, "sweep_family", "gb");
        cfg.sweep_n_c = static_cast<int>(toml::get_int_or(t, "sweep_n_c", 5));
        cfg.survival_window = static_cast<int>(toml::get_int_or(t, "survival_window", 5));
        cfg.enable_survival = toml::get_bool_or(t, "enable_survival", true);
        if (const toml::Value* fams = toml::find(t, "families")) {
            cfg.families.clear();
            for (const toml::Value& v : fams->as_array()) cfg.families.push_back(v.as_string());
        }
        if (const toml::Value* tasks = toml::find(t, "tasks")) {
            cfg.tasks.clear();
            for (const toml::Value& v : tasks->as_array()) cfg.tasks.push_back(v.as_string());
        }
        if (const toml::Value* ratios = toml::find(t, "gt_ratios")) {
            cfg.gt_ratios_path = resolve(cfg.config_dir, ratios->as_string());
        }
    }
    if (const toml::Value* t = toml::find(table, "tracking")) {
        const toml::Table& tr = t->as_table();
        cfg.tracking.c_o = toml::get_double_or(tr, "c_o", cfg.tracking.c_o);
        cfg.tracking.c_d = toml::get_double_or(tr, "c_d", cfg.tracking.c_d);
        cfg.tracking.c_l = toml::get_double_or(tr, "c_l", cfg.tracking.c_l);
        cfg.tracking.t_l = static_cast<int>(toml::get_int_or(tr, "t_l", cfg.tracking.t_l));
        cfg.tracking.regression_stage = toml::get_bool_or(tr, "regression_stage", true);
    }
    if (const toml::Value* inputs = toml::find(table, "inputs")) {
        const toml::Table& in = inputs->as_table();
        if (const toml::Value* v = toml::find(in, "synth_configs")) {
            for (const toml::Value& e : v->as_array()) {
                std::string synth_path = resolve(cfg.config_dir, e.as_string());
                cfg.synth_configs.push_back(synth_path);
                hash = fnv1a(read_file_bytes(synth_path), hash);
            }
        }
        if (const toml::Value* v = toml::find(in, "sequence_dirs")) {
            for (const toml::Value& e : v->as_array()) {
                cfg.sequence_dirs.push_back(resolve(cfg.config_dir, e.as_string()));
            }
        }
    }
    if (cfg.synth_configs.empty() && cfg.sequence_dirs.empty()) {
        throw std::runtime_error("pipeline config lists no synth_configs or sequence_dirs");
    }
    cfg.config_hash = hash;
    return cfg;
}

LoadedSequence load_filtered_sequence(const std::string& directory, double score_min) {
    LoadedSequence data = load_sequence(directory);
    for (std::size_t i = 0; i < data.pred.frames.size(); ++i) {
        data.pred.frames[i] = filter_score(data.pred.frames[i], score_min);
        if (data.gt) data.pred.frames[i] = filter_ignored(data.pred.frames[i], data.gt->frames[i]);
    }
    return data;
}

std::map<std::pair<int, int>, RowTarget> compute_targets(const Sequence& pred,
                                                         const GroundTruthSequence& gt) {
    std::map<std::pair<int, int>, RowTarget> out;
    for (std::size_t i = 0; i < pred.frames.size(); ++i) {
        for (const IoUAssignment& a : assign_iou(pred.frames[i], gt.frames[i])) {
            out[{pred.frames[i].index, a.local_id}] = {a.iou, a.gt_track};
        }
    }
    return out;
}

void write_targets_csv(const std::string& path, const Sequence& pred,
                       const std::map<std::pair<int, int>, RowTarget>& targets) {
    csv::Document doc;
    doc.header = {"sequence", "frame", "local_id", "score", "iou", "gt_track", "label"};
    for (const Frame& frame : pred.frames) {
        for (const Instance& inst : frame.instances) {
            const RowTarget& t = targets.at({frame.index, inst.local_id});
            doc.rows.push_back({pred.id, fmt::format("{}", frame.index),
                                fmt::format("{}", inst.local_id), csv::format_double(inst.score),
                                csv::format_double(t.iou), fmt::format("{}", t.gt_track),
                                t.iou >= 0.5 ? "1" : "0"});
        }
    }
    csv::write_file(path, doc);
}

std::map<std::tuple<std::string, int, int>, RowTarget> read_targets_csv(
    const std::string& path) {
    csv::Document doc = csv::read_file(path);
    int seq_col = doc.require_column("sequence");
    int frame_col = doc.require_column("frame");
    int local_col = doc.require_column("local_id");
    int iou_col = doc.require_column("iou");
    int gt_col = doc.require_column("gt_track");
    std::map<std::tuple<std::string, int, int>, RowTarget> out;
    for (const auto& row : doc.rows) {
        out[{row[seq_col], static_cast<int>(csv::parse_int(row[frame_col])),
             static_cast<int>(csv::parse_int(row[local_col]))}] = {
            csv::parse_double(row[iou_col]), csv::parse_int(row[gt_col])};
    }
    return out;
}

void write_mot_json(const std::string& path, const MotReport& r) {
    write_json_file(path, json{{"motp_bb", r.motp_bb},
                               {"motp_geo", r.motp_geo},
                               {"mota", r.mota},
                               {"fn_ratio", r.fn_ratio},
                               {"fp_ratio", r.fp_ratio},
                               {"mme_ratio", r.mme_ratio},
                               {"gt", r.gt_tracks},
                               {"mt", r.mostly_tracked},
                               {"pt", r.partially_tracked},
                               {"ml", r.mostly_lost},
                               {"counts",
                                {{"false_negatives", r.false_negatives},
                                 {"false_positives", r.false_positives},
                                 {"mismatches", r.mismatches},
                                 {"gt_observations", r.gt_observations},
                                 {"matched_pairs", r.matched_pairs}}}});
}

void write_protocol_json(const std::string& path, const ProtocolResult& result,
                         const std::string& feature_set, int n_c) {
    json measures = json::object();
    for (const auto& [name, m] : result.measures) {
        measures[name] = {{"mean", m.mean}, {"std", m.stddev}, {"values", m.values}};
    }
    write_json_file(path, json{{"family", family_name(result.family)},
                               {"task", task_name(result.task)},
                               {"feature_set", feature_set},
                               {"n_c", n_c},
                               {"runs", result.runs},
                               {"seed", result.seed},
                               {"split",
                                {{"train", result.n_train},
                                 {"val", result.n_val},
                                 {"test", result.n_test},
                                 {"fractions", {0.7, 0.1, 0.2}}}},
                               {"measures", measures}});
}

void write_sweep_json(const std::string& path, const std::vector<SweepCurve>& curves,
                      std::int64_t total_predictions, std::int64_t total_gt_observations) {
    json modes = json::object();
    for (const SweepCurve& curve : curves) {
        json points = json::array();
        for (const SweepPoint& p : curve.points) {
            points.push_back({{"threshold", p.threshold}, {"fp", p.fp}, {"fn", p.fn}});
        }
        modes[curve.mode] = std::move(points);
    }
    write_json_file(path, json{{"modes", modes},
                               {"total_predictions", total_predictions},
                               {"total_gt_observations", total_gt_observations}});
}

void write_sweep_csv(const std::string& path, const SweepCurve& curve) {
    csv::Document doc;
    doc.header = {"threshold", "fp", "fn"};
    for (const SweepPoint& p : curve.points) {
        doc.rows.push_back({csv::format_double(p.threshold), fmt::format("{}", p.fp),
                            fmt::format("{}", p.fn)});
    }
    csv::write_file(path, doc);
}

std::vector<SweepInput> sweep_inputs_from_table(const FeatureTable& table,
                                                const std::vector<double>& filter_values) {
    if (filter_values.size() != table.rows.size()) {
        throw std::invalid_argument("sweep_inputs_from_table: one filter value per row");
    }
    std::map<std::string, int> sequence_offset;
    for (const FeatureTable::Row& row : table.rows) {
        sequence_offset.try_emplace(row.sequence, 0);
    }
    int offset = 0;
    for (auto& [seq, off] : sequence_offset) {
        off = offset;
        offset += 1000000;
    }
    std::vector<SweepInput> out;
    out.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const FeatureTable::Row& row = table.rows[i];
        out.push_back({filter_values[i], row.iou, sequence_offset.at(row.sequence) + row.frame,
                       row.gt_track});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct StageRunner {
    fs::path out_dir;
    std::uint64_t config_hash;
    bool force;
    std::vector<std::string> executed;
    std::vector<std::string> skipped;

    bool should_run(const std::string& stage) {
        fs::path stamp = out_dir / (stage + ".stamp");
        std::string expected = fmt::format("{:016x}\n", fnv1a(stage, config_hash));
        if (!force && fs::exists(stamp)) {
            std::ifstream in(stamp);
            std::string found((std::istreambuf_iterator<char>(in)), {});
            if (found == expected) {
                skipped.push_back(stage);
                return false;
            }
        }
        return true;
    }

    void mark_done(const std::string& stage) {
        std::ofstream out(out_dir / (stage + ".stamp"), std::ios::binary);
        out << fmt::format("{:016x}\n", fnv1a(stage, config_hash));
        executed.push_back(stage);
    }

    template <typename Fn>
    void run(const std::string& stage, Fn&& fn) {
        if (!should_run(stage)) return;
        try {
            fn();
        } catch (const std::exception& e) {
            throw std::runtime_error(fmt::format("stage '{}' failed: {}", stage, e.what()));
        }
        mark_done(stage);
    }
};

std::string score_curve_name() { return "score"; }
std::string meta_curve_name() { return "meta_probability"; }

}  // namespace

void run_pipeline(const PipelineConfig& config, const std::string& out_dir, bool force) {
    fs::path out(out_dir);
    fs::create_directories(out);
    StageRunner runner{out, config.config_hash, force, {}, {}};

    // Sequence directories in play (generated plus provided).
    std::vector<std::string> sequence_dirs = config.sequence_dirs;
    std::vector<std::string> generated;
    for (const std::string& synth_path : config.synth_configs) {
        SynthConfig sc = load_synth_config(synth_path);
        generated.push_back((out / "sequences" / sc.id).string());
    }
    sequence_dirs.insert(sequence_dirs.end(), generated.begin(), generated.end());
    {
        std::set<std::string> ids;
        for (const std::string& dir : sequence_dirs) {
            if (!ids.insert(fs::path(dir).filename().string()).second) {
                throw std::runtime_error(
                    fmt::format("duplicate sequence id '{}'", fs::path(dir).filename().string()));
            }
        }
    }

    runner.run("synth", [&] {
        for (const std::string& synth_path : config.synth_configs) {
            SynthConfig sc = load_synth_config(synth_path);
            SynthResult res = generate(sc);
            save_sequence((out / "sequences" / sc.id).string(), res.pred, &res.gt);
        }
    });

    fs::create_directories(out / "tracks");
    runner.run("track", [&] {
        for (std::size_t i = 0; i < sequence_dirs.size(); ++i) {
            LoadedSequence data = load_filtered_sequence(sequence_dirs[i], config.score_min);
            std::uint64_t seed = fnv1a(data.pred.id, config.seed ^ 0x9e3779b97f4a7c15ULL);
            TrackingResult tracks = track_sequence(data.pred, config.tracking, seed);
            write_tracks_json((out / "tracks" / (data.pred.id + ".json")).string(), data.pred.id,
                              config.tracking, seed, tracks);
        }
    });

    fs::create_directories(out / "features");
    runner.run("features", [&] {
        // Class ratios from the ground truth of every sequence that has any.
        std::map<int, double> ratios;
        if (config.gt_ratios_path) {
            ratios = read_ratios_json(*config.gt_ratios_path);
        } else {
            std::vector<GroundTruthSequence> gts;
            std::set<int> classes;
            for (const std::string& dir : sequence_dirs) {
                LoadedSequence data = load_filtered_sequence(dir, config.score_min);
                if (data.gt) gts.push_back(std::move(*data.gt));
                for (const Frame& f : data.pred.frames) {
                    for (const Instance& inst : f.instances) classes.insert(inst.class_label);
                }
            }
            if (gts.empty()) {
                throw std::runtime_error(
                    "no ground truth available for class ratios; provide pipeline.gt_ratios");
            }
            std::vector<const GroundTruthSequence*> refs;
            for (const GroundTruthSequence& g : gts) refs.push_back(&g);
            ratios = gt_class_ratios(refs, std::vector<int>(classes.begin(), classes.end()));
        }
        write_ratios_json((out / "features" / "ratios.json").string(), ratios);

        FeatureTable merged;
        for (const std::string& dir : sequence_dirs) {
            LoadedSequence data = load_filtered_sequence(dir, config.score_min);
            auto tracked = read_tracks_json(
                (out / "tracks" / (data.pred.id + ".json")).string(), data.pred);
            FeatureTable table = assemble_timeseries(data.pred, tracked, ratios, config.n_c);
            if (data.gt) {
                attach_targets(table, compute_targets(data.pred, *data.gt));
            }
            write_feature_csv((out / "features" / (data.pred.id + ".csv")).string(), table);
            append_rows(merged, table);
        }
        write_feature_csv((out / "features" / "all.csv").string(), merged);
    });

    const std::string features_all = (out / "features" / "all.csv").string();
    const std::string features_with_survival = (out / "features" / "all_v.csv").string();

    fs::create_directories(out / "survival");
    if (config.enable_survival) {
        runner.run("survival", [&] {
            FeatureTable merged = read_feature_csv(features_all);
            if (!merged.has_targets) {
                throw std::runtime_error(
                    "survival model requires ground-truth targets (no gt/ in inputs)");
            }
            SurvivalDataset dataset;
            for (const std::string& dir : sequence_dirs) {
                GroundTruthSequence gt = load_ground_truth(dir);
                FeatureTable slice;
                slice.metric_names = merged.metric_names;
                slice.window = merged.window;
                slice.has_targets = merged.has_targets;
                std::string id = fs::path(dir).filename().string();
                for (const FeatureTable::Row& row : merged.rows) {
                    if (row.sequence == id) slice.rows.push_back(row);
                }
                SurvivalDataset part =
                    build_survival_records(slice, gt, config.survival_window);
                if (dataset.covariate_names.empty()) {
                    dataset.covariate_names = part.covariate_names;
                }
                dataset.records.insert(dataset.records.end(), part.records.begin(),
                                       part.records.end());
            }
            CoxModel model = fit_cox(dataset);
            write_cox_json((out / "survival" / "cox.json").string(), model);

            std::vector<double> v =
                predict_survival_for_rows(model, merged, config.survival_window);
            augment_with_survival(merged, v);
            write_feature_csv(features_with_survival, merged);
        });
    }

    const std::string meta_features =
        config.enable_survival ? features_with_survival : features_all;

    fs::create_directories(out / "meta");
    runner.run("meta", [&] {
        FeatureTable table = read_feature_csv(meta_features);
        if (!table.has_targets) {
            throw std::runtime_error(
                "meta training requires ground-truth targets (no gt/ in inputs)");
        }
        MetaDataset dataset = make_meta_dataset(table, FeatureSet::All, config.n_c);
        for (const std::string& family : config.families) {
            for (const std::string& task : config.tasks) {
                ProtocolOptions opts;
                opts.runs = config.runs;
                opts.seed = fnv1a(family + "/" + task, config.seed);
                ProtocolResult result =
                    run_protocol(dataset, parse_family(family), parse_task(task), opts);
                write_protocol_json(
                    (out / "meta" / fmt::format("{}_{}.json", family, task)).string(), result,
                    "all", config.n_c);
            }
        }
    });

    fs::create_directories(out / "eval");
    runner.run("evaluate", [&] {
        std::vector<MotReport> reports;
        std::vector<ApInput> ap_inputs;
        std::vector<Sequence> kept_sequences;  // keeps masks alive for AP
        GroundTruthSequence merged_gt;
        int frame_offset = 0;
        std::int64_t counted_predictions = 0;
        bool any_gt = false;

        for (const std::string& dir : sequence_dirs) {
            LoadedSequence data = load_filtered_sequence(dir, config.score_min);
            if (!data.gt) continue;
            any_gt = true;
            auto tracked = read_tracks_json(
                (out / "tracks" / (data.pred.id + ".json")).string(), data.pred);
            MotReport report = mot_evaluate(tracked, *data.gt);
            write_mot_json((out / "eval" / fmt::format("mot_{}.json", data.pred.id)).string(),
                           report);
            reports.push_back(report);

            kept_sequences.push_back(data.pred);
            for (const GroundTruthFrame& f : data.gt->frames) {
                GroundTruthFrame shifted = f;
                shifted.index = f.index + frame_offset;
                merged_gt.frames.push_back(std::move(shifted));
            }
            const Sequence& seq = kept_sequences.back();
            for (const Frame& frame : seq.frames) {
                for (const Instance& inst : frame.instances) {
                    ap_inputs.push_back({inst.score, frame.index + frame_offset, inst.local_id,
                                         inst.class_label, &inst.mask});
                    ++counted_predictions;
                }
            }
            frame_offset += seq.length();
        }
        if (!any_gt) {
            throw std::runtime_error("evaluation requires ground truth (no gt/ in inputs)");
        }
        write_mot_json((out / "eval" / "mot.json").string(), combine_mot_reports(reports));

        double ap = average_precision_50(ap_inputs, merged_gt);
        std::int64_t gt_total = 0;
        for (const GroundTruthFrame& f : merged_gt.frames) {
            gt_total += static_cast<std::int64_t>(f.instances.size());
        }
        write_json_file(out / "eval" / "detection.json",
                        json{{"ap50", ap},
                             {"predictions", counted_predictions},
                             {"gt_observations", gt_total}});

        // Correlation of the temporal metrics against the IoU target.
        FeatureTable table = read_feature_csv(meta_features);
        json corr = json::object();
        std::vector<double> iou;
        for (const FeatureTable::Row& row : table.rows) iou.push_back(row.iou);
        for (const std::string& name :
             {std::string("score"), std::string("shape_f"), std::string("dev_center"),
              std::string("dev_size"), std::string("survival"), std::string("ratio")}) {
            int mi = table.metric_index(name);
            if (mi < 0) continue;
            std::vector<double> column;
            for (const FeatureTable::Row& row : table.rows) {
                column.push_back(table.value(row, 0, mi));
            }
            try {
                corr[name] = pearson(column, iou);
            } catch (const std::exception&) {
                corr[name] = nullptr;  // constant column
            }
        }
        write_json_file(out / "eval" / "corr.json",
                        json{{"n_rows", table.rows.size()}, {"pearson_iou", corr}});
    });

    runner.run("sweep", [&] {
        FeatureTable table = read_feature_csv(meta_features);
        if (!table.has_targets) {
            throw std::runtime_error("sweep requires ground-truth targets (no gt/ in inputs)");
        }
        int score_idx = table.metric_index("score");
        std::vector<double> scores;
        for (const FeatureTable::Row& row : table.rows) {
            scores.push_back(table.value(row, 0, score_idx));
        }

        std::int64_t gt_total = 0;
        for (const std::string& dir : sequence_dirs) {
            GroundTruthSequence gt = load_ground_truth(dir);
            for (const GroundTruthFrame& f : gt.frames) {
                gt_total += static_cast<std::int64_t>(f.instances.size());
            }
        }

        SweepCurve score_curve = threshold_sweep(sweep_inputs_from_table(table, scores), gt_total,
                                                 score_curve_name());
        std::vector<SweepCurve> curves{score_curve};
        bool any_fp = false, any_tp = false;
        for (const FeatureTable::Row& row : table.rows) {
            (row.label ? any_tp : any_fp) = true;
        }
        if (any_fp && any_tp) {
            MetaDataset dataset = make_meta_dataset(table, FeatureSet::All, config.sweep_n_c);
            MetaModel classifier =
                fit_meta_on_random_split(dataset, parse_family(config.sweep_family),
                                         MetaTask::Classification, fnv1a("sweep", config.seed),
                                         {});
            Eigen::VectorXd tp_probability = predict(classifier, dataset);
            std::vector<double> meta_values(
                tp_probability.data(), tp_probability.data() + tp_probability.size());
            curves.push_back(threshold_sweep(sweep_inputs_from_table(table, meta_values),
                                             gt_total, meta_curve_name()));
        }
        write_sweep_json((out / "eval" / "sweep.json").string(), curves,
                         static_cast<std::int64_t>(table.rows.size()), gt_total);
        write_sweep_csv((out / "eval" / "sweep_score.csv").string(), score_curve);
        if (curves.size() == 2) {
            write_sweep_csv((out / "eval" / "sweep_meta_probability.csv").string(),
                            curves.back());
        }
    });

    runner.run("report", [&] {
        json bundle;
        bundle["config_hash"] = fmt::format("{:016x}", config.config_hash);
        bundle["seed"] = config.seed;
        bundle["n_c"] = config.n_c;
        bundle["score_min"] = config.score_min;
        bundle["tracking"] = {{"c_o", config.tracking.c_o},
                              {"c_d", config.tracking.c_d},
                              {"c_l", config.tracking.c_l},
                              {"t_l", config.tracking.t_l}};
        json sequences = json::array();
        for (const std::string& dir : sequence_dirs) {
            sequences.push_back(fs::path(dir).filename().string());
        }
        bundle["sequences"] = sequences;
        bundle["mot"] = read_json_file(out / "eval" / "mot.json");
        bundle["detection"] = read_json_file(out / "eval" / "detection.json");
        bundle["correlation"] = read_json_file(out / "eval" / "corr.json");
        bundle["sweep"] = read_json_file(out / "eval" / "sweep.json");
        json meta = json::object();
        for (const std::string& family : config.families) {
            for (const std::string& task : config.tasks) {
                std::string name = fmt::format("{}_{}", family, task);
                meta[name] = read_json_file(out / "meta" / (name + ".json"));
            }
        }
        bundle["meta"] = meta;
        write_json_file(out / "report.json", bundle);
    });
}

}  // namespace maskmeta
