// Command-line front end: synth, track, features, survival-fit, meta-train,
// evaluate, sweep and run (full pipeline).

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskmeta/csv.hpp"
#include "maskmeta/evaluation.hpp"
#include "maskmeta/features.hpp"
#include "maskmeta/io.hpp"
#include "maskmeta/meta_models.hpp"
#include "maskmeta/pipeline.hpp"
#include "maskmeta/survival.hpp"
#include "maskmeta/synth.hpp"
#include "maskmeta/tracker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maskmeta;

namespace {

void write_json_to(const std::string& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    out << doc.dump(2) << '\n';
}

struct TrackArgs {
    std::string in, out;
    TrackingParams params;
    std::uint64_t seed = 0;
    double score_min = 0.0;
    bool disable_regression = false;
};

struct FeatureArgs {
    std::string in, tracks, out;
    std::string gt_ratios_in, gt_ratios_out;
    int n_c = 5;
    double score_min = 0.0;
};

struct SurvivalArgs {
    std::string features, gt, out;
    std::string model_in, out_features;
    int window = 5;
};

struct MetaArgs {
    std::string features, targets, out;
    std::string family = "gb", task = "clf", feature_set = "all";
    int n_c = 5;
    int runs = 10;
    std::uint64_t seed = 0;
};

struct EvalArgs {
    std::string mode;
    std::string in, tracks, features, out;
    std::string targets_out, csv_prefix;
    std::string family = "gb";
    int n_c = 5;
    std::uint64_t seed = 0;
    double score_min = 0.0;
};

struct RunArgs {
    std::string config, out;
    bool force = false;
};

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    SynthConfig cfg = load_synth_config(config_path);
    SynthResult res = generate(cfg);
    save_sequence(out_dir, res.pred, &res.gt);
    std::cout << fmt::format("wrote {} frames to {}\n", res.pred.length(), out_dir);
    return 0;
}

int cmd_track(const TrackArgs& args) {
    LoadedSequence data = load_filtered_sequence(args.in, args.score_min);
    TrackingParams params = args.params;
    params.regression_stage = !args.disable_regression;
    TrackingResult result = track_sequence(data.pred, params, args.seed);
    write_tracks_json(args.out, data.pred.id, params, args.seed, result);
    std::cout << fmt::format("tracked {} frames, {} tracks -> {}\n", result.frames.size(),
                             result.histories.size(), args.out);
    return 0;
}

int cmd_features(const FeatureArgs& args) {
    LoadedSequence data = load_filtered_sequence(args.in, args.score_min);
    auto tracked = read_tracks_json(args.tracks, data.pred);

    std::map<int, double> ratios;
    if (!args.gt_ratios_in.empty()) {
        ratios = read_ratios_json(args.gt_ratios_in);
    } else {
        if (!data.gt) {
            throw std::runtime_error(
                "no --gt-ratios given and the sequence has no gt/ to derive them from");
        }
        std::set<int> classes;
        for (const Frame& f : data.pred.frames) {
            for (const Instance& inst : f.instances) classes.insert(inst.class_label);
        }
        ratios = gt_class_ratios({&*data.gt},
                                 std::vector<int>(classes.begin(), classes.end()));
    }
    if (!args.gt_ratios_out.empty()) write_ratios_json(args.gt_ratios_out, ratios);

    FeatureTable table = assemble_timeseries(data.pred, tracked, ratios, args.n_c);
    if (data.gt) attach_targets(table, compute_targets(data.pred, *data.gt));
    write_feature_csv(args.out, table);
    std::cout << fmt::format("wrote {} feature rows ({} metrics, window {}) -> {}\n",
                             table.rows.size(), table.metric_names.size(), table.window,
                             args.out);
    return 0;
}

int cmd_survival(const SurvivalArgs& args) {
    FeatureTable table = read_feature_csv(args.features);
    CoxModel model;
    if (!args.model_in.empty()) {
        model = read_cox_json(args.model_in);
    } else {
        if (args.gt.empty()) {
            throw std::runtime_error("survival-fit needs --gt (or --model to apply only)");
        }
        GroundTruthSequence gt = load_ground_truth(args.gt);
        SurvivalDataset dataset = build_survival_records(table, gt, args.window);
        model = fit_cox(dataset);
        std::cout << fmt::format("fitted cox model on {} records, {} covariates\n",
                                 dataset.records.size(), dataset.covariate_names.size());
    }
    if (!args.out.empty()) write_cox_json(args.out, model);
    if (!args.out_features.empty()) {
        std::vector<double> v = predict_survival_for_rows(model, table, args.window);
        augment_with_survival(table, v);
        write_feature_csv(args.out_features, table);
        std::cout << fmt::format("wrote survival-augmented features -> {}\n",
                                 args.out_features);
    }
    return 0;
}

int cmd_meta(const MetaArgs& args) {
    FeatureTable table = read_feature_csv(args.features);
    if (!args.targets.empty()) {
        auto targets = read_targets_csv(args.targets);
        std::map<std::pair<int, int>, RowTarget> flattened;
        for (FeatureTable::Row& row : table.rows) {
            auto it = targets.find({row.sequence, row.frame, row.local_id});
            if (it == targets.end()) {
                throw std::runtime_error(
                    fmt::format("targets file has no entry for sequence '{}' frame {} id {}",
                                row.sequence, row.frame, row.local_id));
            }
            row.iou = it->second.iou;
            row.gt_track = it->second.gt_track;
            row.label = it->second.iou >= 0.5 ? 1 : 0;
        }
        table.has_targets = true;
    }
    if (!table.has_targets) {
        throw std::runtime_error("features carry no targets; pass --targets");
    }
    MetaDataset dataset = make_meta_dataset(table, parse_feature_set(args.feature_set), args.n_c);
    ProtocolOptions opts;
    opts.runs = args.runs;
    opts.seed = args.seed;
    ProtocolResult result =
        run_protocol(dataset, parse_family(args.family), parse_task(args.task), opts);
    write_protocol_json(args.out, result, args.feature_set, args.n_c);
    for (const auto& [name, measure] : result.measures) {
        std::cout << fmt::format("{}: {:.4f} +- {:.4f}\n", name, measure.mean, measure.stddev);
    }
    return 0;
}

int cmd_evaluate(const EvalArgs& args) {
    if (args.mode == "meta") {
        LoadedSequence data = load_filtered_sequence(args.in, args.score_min);
        if (!data.gt) throw std::runtime_error("evaluate --mode meta requires gt/");
        auto targets = compute_targets(data.pred, *data.gt);
        std::int64_t fp = 0, total = 0;
        std::vector<ApInput> ap_inputs;
        for (const Frame& frame : data.pred.frames) {
            for (const Instance& inst : frame.instances) {
                ++total;
                if (targets.at({frame.index, inst.local_id}).iou < 0.5) ++fp;
                ap_inputs.push_back(
                    {inst.score, frame.index, inst.local_id, inst.class_label, &inst.mask});
            }
        }
        double ap = average_precision_50(ap_inputs, *data.gt);
        if (!args.targets_out.empty()) write_targets_csv(args.targets_out, data.pred, targets);
        write_json_to(args.out, json{{"sequence", data.pred.id},
                                     {"instances", total},
                                     {"false_positives", fp},
                                     {"ap50", ap}});
        std::cout << fmt::format("{} instances, {} false positives, AP50 {:.4f}\n", total, fp,
                                 ap);
        return 0;
    }
    if (args.mode == "mot") {
        LoadedSequence data = load_filtered_sequence(args.in, args.score_min);
        if (!data.gt) throw std::runtime_error("evaluate --mode mot requires gt/");
        auto tracked = read_tracks_json(args.tracks, data.pred);
        MotReport report = mot_evaluate(tracked, *data.gt);
        write_mot_json(args.out, report);
        std::cout << fmt::format("MOTA {:.4f}  MOTP_geo {:.2f}  mme {}\n", report.mota,
                                 report.motp_geo, report.mismatches);
        return 0;
    }
    if (args.mode == "corr") {
        FeatureTable table = read_feature_csv(args.features);
        if (!table.has_targets) {
            throw std::runtime_error("correlation needs a feature table with targets");
        }
        std::vector<double> iou;
        for (const FeatureTable::Row& row : table.rows) iou.push_back(row.iou);
        json corr = json::object();
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
                corr[name] = nullptr;
            }
        }
        write_json_to(args.out, json{{"n_rows", table.rows.size()}, {"pearson_iou", corr}});
        std::cout << corr.dump() << '\n';
        return 0;
    }
    throw std::runtime_error(fmt::format("unknown evaluate mode '{}'", args.mode));
}

int cmd_sweep(const EvalArgs& args) {
    FeatureTable table = read_feature_csv(args.features);
    if (!table.has_targets) {
        throw std::runtime_error("sweep requires a feature table with targets");
    }
    int score_idx = table.metric_index("score");
    std::vector<double> scores;
    for (const FeatureTable::Row& row : table.rows) {
        scores.push_back(table.value(row, 0, score_idx));
    }
    MetaDataset dataset = make_meta_dataset(table, FeatureSet::All, args.n_c);
    MetaModel classifier = fit_meta_on_random_split(
        dataset, parse_family(args.family), MetaTask::Classification, args.seed, {});
    Eigen::VectorXd tp_prob = predict(classifier, dataset);
    std::vector<double> meta_values(tp_prob.data(), tp_prob.data() + tp_prob.size());

    // Ground-truth observation count from covered (frame, gt) pairs is not
    // recoverable from the table alone; require the sequence directory.
    if (args.in.empty()) {
        throw std::runtime_error("sweep needs --in <seq_dir> for ground-truth counts");
    }
    GroundTruthSequence gt = load_ground_truth(args.in);
    std::int64_t gt_total = 0;
    for (const GroundTruthFrame& f : gt.frames) {
        gt_total += static_cast<std::int64_t>(f.instances.size());
    }

    SweepCurve score_curve =
        threshold_sweep(sweep_inputs_from_table(table, scores), gt_total, "score");
    SweepCurve meta_curve =
        threshold_sweep(sweep_inputs_from_table(table, meta_values), gt_total,
                        "meta_probability");
    write_sweep_json(args.out, {score_curve, meta_curve},
                     static_cast<std::int64_t>(table.rows.size()), gt_total);
    if (!args.csv_prefix.empty()) {
        write_sweep_csv(args.csv_prefix + "_score.csv", score_curve);
        write_sweep_csv(args.csv_prefix + "_meta_probability.csv", meta_curve);
    }
    std::cout << fmt::format("sweep over {} predictions, {} gt observations -> {}\n",
                             table.rows.size(), gt_total, args.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video instance segmentation tracking, temporal uncertainty metrics and meta "
                 "classification/regression"};
    app.require_subcommand(1);

    std::string synth_config, synth_out;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic sequence");
    synth->add_option("--config", synth_config, "synth config (toml)")->required();
    synth->add_option("--out", synth_out, "output sequence directory")->required();

    TrackArgs track_args;
    CLI::App* track = app.add_subcommand("track", "Track instances across frames");
    track->add_option("--in", track_args.in, "sequence directory")->required();
    track->add_option("--out", track_args.out, "tracks json output")->required();
    track->add_option("--c-o", track_args.params.c_o, "overlap threshold");
    track->add_option("--c-d", track_args.params.c_d, "distance threshold (pixels)");
    track->add_option("--c-l", track_args.params.c_l, "regression distance threshold (pixels)");
    track->add_option("--t-l", track_args.params.t_l, "regression window (frames)");
    track->add_option("--seed", track_args.seed, "id generator seed");
    track->add_option("--score-min", track_args.score_min, "score pre-filter threshold");
    track->add_flag("--disable-regression-stage", track_args.disable_regression,
                    "diagnostic: skip the regression matching stage");

    FeatureArgs feature_args;
    CLI::App* features = app.add_subcommand("features", "Extract per-instance metric time series");
    features->add_option("--in", feature_args.in, "sequence directory")->required();
    features->add_option("--tracks", feature_args.tracks, "tracks json")->required();
    features->add_option("--n-c", feature_args.n_c, "history window length (0..10)");
    features->add_option("--out", feature_args.out, "features csv output")->required();
    features->add_option("--gt-ratios", feature_args.gt_ratios_in,
                         "precomputed class ratio json");
    features->add_option("--emit-gt-ratios", feature_args.gt_ratios_out,
                         "write derived class ratios here");
    features->add_option("--score-min", feature_args.score_min, "score pre-filter threshold");

    SurvivalArgs survival_args;
    CLI::App* survival =
        app.add_subcommand("survival-fit", "Fit the survival model and predict v");
    survival->add_option("--features", survival_args.features, "features csv (with targets)")
        ->required();
    survival->add_option("--gt", survival_args.gt, "sequence or gt directory");
    survival->add_option("--out", survival_args.out, "cox model json output");
    survival->add_option("--model", survival_args.model_in, "apply an existing model instead");
    survival->add_option("--out-features", survival_args.out_features,
                         "features csv augmented with the survival column");
    survival->add_option("--window", survival_args.window, "covariate window (frames)");

    MetaArgs meta_args;
    CLI::App* meta = app.add_subcommand("meta-train", "Train and evaluate a meta model");
    meta->add_option("--features", meta_args.features, "features csv")->required();
    meta->add_option("--targets", meta_args.targets, "targets csv (optional if embedded)");
    meta->add_option("--family", meta_args.family, "lr_l1 | gb | nn_l2");
    meta->add_option("--task", meta_args.task, "clf | reg");
    meta->add_option("--feature-set", meta_args.feature_set,
                     "all | u_only | single_frame | score_only | entropy_only");
    meta->add_option("--n-c", meta_args.n_c, "history window used");
    meta->add_option("--runs", meta_args.runs, "protocol repetitions");
    meta->add_option("--seed", meta_args.seed, "protocol seed");
    meta->add_option("--out", meta_args.out, "report json output")->required();

    EvalArgs eval_args;
    CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate predictions or tracks");
    evaluate->add_option("--mode", eval_args.mode, "meta | mot | corr | sweep")->required();
    evaluate->add_option("--in", eval_args.in, "sequence directory");
    evaluate->add_option("--tracks", eval_args.tracks, "tracks json");
    evaluate->add_option("--features", eval_args.features, "features csv");
    evaluate->add_option("--out", eval_args.out, "report output")->required();
    evaluate->add_option("--targets-out", eval_args.targets_out, "per-instance targets csv");
    evaluate->add_option("--family", eval_args.family, "sweep classifier family");
    evaluate->add_option("--n-c", eval_args.n_c, "sweep classifier window");
    evaluate->add_option("--seed", eval_args.seed, "sweep classifier seed");
    evaluate->add_option("--score-min", eval_args.score_min, "score pre-filter threshold");
    evaluate->add_option("--csv-out", eval_args.csv_prefix, "sweep csv prefix");

    EvalArgs sweep_args;
    CLI::App* sweep = app.add_subcommand("sweep", "Score vs meta-probability threshold sweep");
    sweep->add_option("--features", sweep_args.features, "features csv with targets")->required();
    sweep->add_option("--in", sweep_args.in, "sequence directory (ground-truth counts)")
        ->required();
    sweep->add_option("--family", sweep_args.family, "classifier family");
    sweep->add_option("--n-c", sweep_args.n_c, "classifier window");
    sweep->add_option("--seed", sweep_args.seed, "classifier seed");
    sweep->add_option("--out", sweep_args.out, "sweep json output")->required();
    sweep->add_option("--csv-out", sweep_args.csv_prefix, "sweep csv prefix");

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "Run the full pipeline from a config file");
    run->add_option("--config", run_args.config, "pipeline config (toml)")->required();
    run->add_option("--out", run_args.out, "output directory")->required();
    run->add_flag("--force", run_args.force, "re-run stages even when stamps match");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_config, synth_out);
        if (track->parsed()) return cmd_track(track_args);
        if (features->parsed()) return cmd_features(feature_args);
        if (survival->parsed()) return cmd_survival(survival_args);
        if (meta->parsed()) return cmd_meta(meta_args);
        if (evaluate->parsed()) {
            if (eval_args.mode == "sweep") return cmd_sweep(eval_args);
            return cmd_evaluate(eval_args);
        }
        if (sweep->parsed()) {
            sweep_args.mode = "sweep";
            return cmd_sweep(sweep_args);
        }
        if (run->parsed()) {
            PipelineConfig cfg = load_pipeline_config(run_args.config);
            run_pipeline(cfg, run_args.out, run_args.force);
            std::cout << fmt::format("pipeline complete -> {}/report.json\n", run_args.out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
