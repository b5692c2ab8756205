#include "maskmeta/survival.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace maskmeta {

namespace {

constexpr double kCumhazCap = 1e300;  // stands in for an exhausted risk set

struct RowIndex {
    std::map<std::pair<std::int64_t, int>, const FeatureTable::Row*> by_track_frame;
    std::map<std::int64_t, std::vector<int>> frames_of_track;
};

RowIndex index_rows(const FeatureTable& table) {
    RowIndex idx;
    for (const FeatureTable::Row& row : table.rows) {
        idx.by_track_frame[{row.track_id, row.frame}] = &row;
        idx.frames_of_track[row.track_id].push_back(row.frame);
    }
    for (auto& [track, frames] : idx.frames_of_track) std::sort(frames.begin(), frames.end());
    return idx;
}

std::vector<int> covariate_metric_indices(const FeatureTable& table,
                                          std::vector<std::string>* names) {
    std::vector<int> indices;
    for (const std::string& name : survival_covariate_metrics(table.metric_names)) {
        indices.push_back(table.metric_index(name));
        if (names) names->push_back(name);
    }
    return indices;
}

}  // namespace

std::vector<std::string> survival_covariate_metrics(const std::vector<std::string>& metric_names) {
    static const std::set<std::string> excluded{"shape_f", "dev_center", "dev_size", "ratio",
                                                "survival"};
    std::vector<std::string> out;
    for (const std::string& name : metric_names) {
        if (!excluded.count(name)) out.push_back(name);
    }
    return out;
}

SurvivalDataset build_survival_records(const FeatureTable& table, const GroundTruthSequence& gt,
                                       int window) {
    if (!table.has_targets) {
        throw std::invalid_argument("build_survival_records: feature table carries no targets");
    }
    SurvivalDataset dataset;
    std::vector<int> metric_indices;
    std::vector<std::string> metric_names;
    metric_indices = covariate_metric_indices(table, &metric_names);
    for (int d = window; d >= 0; --d) {
        for (const std::string& name : metric_names) {
            dataset.covariate_names.push_back(fmt::format("{}_tm{}", name, d));
        }
    }

    std::map<std::int64_t, std::set<int>> gt_presence;
    for (const GroundTruthFrame& frame : gt.frames) {
        for (const GroundTruthInstance& inst : frame.instances) {
            gt_presence[inst.track_id].insert(frame.index);
        }
    }
    const int last_frame = gt.frames.empty() ? 0 : gt.frames.back().index;

    RowIndex idx = index_rows(table);
    for (const FeatureTable::Row& row : table.rows) {
        const int t = row.frame;
        if (t - window < 1) continue;
        std::int64_t g = row.gt_track;
        if (g < 0 || row.iou < 0.5) continue;

        bool qualifies = true;
        std::vector<const FeatureTable::Row*> window_rows;
        for (int k = t - window; k <= t; ++k) {
            auto it = idx.by_track_frame.find({row.track_id, k});
            if (it == idx.by_track_frame.end() || it->second->iou < 0.5 ||
                it->second->gt_track != g) {
                qualifies = false;
                break;
            }
            window_rows.push_back(it->second);
        }
        if (!qualifies) continue;

        const std::set<int>& present = gt_presence.at(g);
        int run = 0;
        int k = t;
        while (k <= last_frame && present.count(k)) {
            ++run;
            ++k;
        }
        SurvivalRecord record;
        record.time = static_cast<double>(run);
        record.censored = k > last_frame;
        for (const FeatureTable::Row* wr : window_rows) {
            for (int mi : metric_indices) record.covariates.push_back(table.value(*wr, 0, mi));
        }
        dataset.records.push_back(std::move(record));
    }
    return dataset;
}

double cox_partial_loglik(const Eigen::MatrixXd& X, std::span<const double> time,
                          std::span<const std::uint8_t> event, const Eigen::VectorXd& beta,
                          Eigen::VectorXd* grad, Eigen::MatrixXd* hessian) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (static_cast<std::size_t>(n) != time.size() ||
        static_cast<std::size_t>(n) != event.size()) {
        throw std::invalid_argument("cox_partial_loglik: size mismatch");
    }
    Eigen::VectorXd eta = X * beta;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return time[a] > time[b]; });

    double loglik = 0.0;
    if (grad) grad->setZero(p);
    if (hessian) hessian->setZero(p, p);

    // Suffix accumulation over the risk set, processed from the latest time.
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2;
    if (hessian) s2.setZero(p, p);

    std::size_t i = 0;
    while (i < order.size()) {
        double tau = time[order[i]];
        std::size_t j = i;
        while (j < order.size() && time[order[j]] == tau) {
            Eigen::Index r = order[j];
            double w = std::exp(eta[r]);
            s0 += w;
            s1 += w * X.row(r).transpose();
            if (hessian) s2 += w * X.row(r).transpose() * X.row(r);
            ++j;
        }
        // Breslow: all events at tau share the full risk set {time >= tau}.
        int deaths = 0;
        for (std::size_t k = i; k < j; ++k) {
            Eigen::Index r = order[k];
            if (!event[r]) continue;
            ++deaths;
            loglik += eta[r];
            if (grad) *grad += X.row(r).transpose();
        }
        if (deaths > 0) {
            loglik -= deaths * std::log(s0);
            Eigen::VectorXd mu = s1 / s0;
            if (grad) *grad -= deaths * mu;
            if (hessian) *hessian -= deaths * (s2 / s0 - mu * mu.transpose());
        }
        i = j;
    }
    return loglik;
}

CoxModel fit_cox(const SurvivalDataset& dataset) {
    const std::size_t n = dataset.records.size();
    if (n < 2) throw std::runtime_error("fit_cox: needs at least two records");
    std::size_t events = 0;
    for (const SurvivalRecord& r : dataset.records) events += r.censored ? 0 : 1;
    if (events == 0) throw std::runtime_error("fit_cox: no uncensored events, model unfittable");

    const std::size_t p = dataset.covariate_names.size();
    for (const SurvivalRecord& r : dataset.records) {
        if (r.covariates.size() != p) {
            throw std::runtime_error("fit_cox: covariate width mismatch");
        }
        for (double v : r.covariates) {
            if (!std::isfinite(v)) throw std::runtime_error("fit_cox: non-finite covariate");
        }
    }

    CoxModel model;
    model.covariate_names = dataset.covariate_names;
    model.mean.assign(p, 0.0);
    model.stddev.assign(p, 0.0);
    for (const SurvivalRecord& r : dataset.records) {
        for (std::size_t j = 0; j < p; ++j) model.mean[j] += r.covariates[j];
    }
    for (std::size_t j = 0; j < p; ++j) model.mean[j] /= static_cast<double>(n);
    for (const SurvivalRecord& r : dataset.records) {
        for (std::size_t j = 0; j < p; ++j) {
            double d = r.covariates[j] - model.mean[j];
            model.stddev[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < p; ++j) {
        model.stddev[j] = std::sqrt(model.stddev[j] / static_cast<double>(n));
        if (model.stddev[j] < 1e-12) model.stddev[j] = 1.0;
    }

    Eigen::MatrixXd X(n, p);
    std::vector<double> time(n);
    std::vector<std::uint8_t> event(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SurvivalRecord& r = dataset.records[i];
        for (std::size_t j = 0; j < p; ++j) {
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                (r.covariates[j] - model.mean[j]) / model.stddev[j];
        }
        time[i] = r.time;
        event[i] = r.censored ? 0 : 1;
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    Eigen::VectorXd grad(static_cast<Eigen::Index>(p));
    Eigen::MatrixXd hess(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    double loglik = cox_partial_loglik(X, time, event, beta, &grad, &hess);

    for (int iter = 0; iter < 100; ++iter) {
        if (grad.lpNorm<Eigen::Infinity>() < 1e-8) break;
        Eigen::MatrixXd neg_hess = -hess;
        neg_hess.diagonal().array() += 1e-10;  // guards rank deficiency
        Eigen::VectorXd direction = neg_hess.ldlt().solve(grad);

        double step = 1.0;
        bool accepted = false;
        for (int halving = 0; halving <= 30; ++halving) {
            Eigen::VectorXd candidate = beta + step * direction;
            double cand_loglik = cox_partial_loglik(X, time, event, candidate, &grad, &hess);
            if (std::isfinite(cand_loglik) && cand_loglik >= loglik - 1e-12) {
                beta = candidate;
                loglik = cand_loglik;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            throw std::runtime_error("fit_cox: step halving failed after 30 attempts");
        }
    }

    model.beta = beta;

    // Baseline: product-limit transform of the Breslow hazard increments so
    // that exp(-H0) matches the Kaplan-Meier curve at beta = 0.
    Eigen::VectorXd eta = X * beta;
    std::map<double, int> deaths_at;
    for (std::size_t i = 0; i < n; ++i) {
        if (event[i]) ++deaths_at[time[i]];
    }
    double cumhaz = 0.0;
    for (const auto& [tau, deaths] : deaths_at) {
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (time[i] >= tau) denom += std::exp(eta[static_cast<Eigen::Index>(i)]);
        }
        double increment = static_cast<double>(deaths) / denom;
        if (cumhaz < kCumhazCap) {
            cumhaz = increment < 1.0 ? cumhaz - std::log1p(-increment) : kCumhazCap;
        }
        model.baseline_times.push_back(tau);
        model.baseline_cumhaz.push_back(cumhaz);
    }
    model.fitted = true;
    return model;
}

double CoxModel::linear_predictor(std::span<const double> covariates) const {
    if (covariates.size() != covariate_names.size()) {
        throw std::invalid_argument(fmt::format("cox: expected {} covariates, got {}",
                                                covariate_names.size(), covariates.size()));
    }
    double eta = 0.0;
    for (std::size_t j = 0; j < covariates.size(); ++j) {
        eta += beta[static_cast<Eigen::Index>(j)] * (covariates[j] - mean[j]) / stddev[j];
    }
    return eta;
}

double predict_survival(const CoxModel& model, std::span<const double> covariates) {
    if (!model.fitted) throw std::runtime_error("predict_survival: model not fitted");
    double risk = std::exp(model.linear_predictor(covariates));
    double v = 0.0;
    double prev_time = 0.0;
    double prev_survival = 1.0;
    for (std::size_t k = 0; k < model.baseline_times.size(); ++k) {
        v += prev_survival * (model.baseline_times[k] - prev_time);
        prev_time = model.baseline_times[k];
        prev_survival = std::exp(-model.baseline_cumhaz[k] * risk);
    }
    return v;
}

std::vector<double> predict_survival_for_rows(const CoxModel& model, const FeatureTable& table,
                                              int window) {
    std::vector<int> metric_indices = covariate_metric_indices(table, nullptr);
    RowIndex idx = index_rows(table);
    std::vector<double> out;
    out.reserve(table.rows.size());
    for (const FeatureTable::Row& row : table.rows) {
        const std::vector<int>& observed = idx.frames_of_track.at(row.track_id);
        std::vector<double> covariates;
        covariates.reserve(model.covariate_names.size());
        for (int d = window; d >= 0; --d) {
            int source = slot_source_frame(observed, row.frame, d, window);
            const FeatureTable::Row* src = idx.by_track_frame.at({row.track_id, source});
            for (int mi : metric_indices) covariates.push_back(table.value(*src, 0, mi));
        }
        out.push_back(predict_survival(model, covariates));
    }
    return out;
}

void augment_with_survival(FeatureTable& table, const std::vector<double>& row_survival) {
    if (row_survival.size() != table.rows.size()) {
        throw std::invalid_argument("augment_with_survival: one value per row required");
    }
    if (table.metric_index("survival") >= 0) {
        throw std::invalid_argument("augment_with_survival: table already has survival column");
    }
    std::map<std::pair<std::int64_t, int>, double> by_track_frame;
    std::map<std::int64_t, std::vector<int>> frames_of_track;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        by_track_frame[{table.rows[i].track_id, table.rows[i].frame}] = row_survival[i];
        frames_of_track[table.rows[i].track_id].push_back(table.rows[i].frame);
    }
    for (auto& [track, frames] : frames_of_track) std::sort(frames.begin(), frames.end());

    const std::size_t old_width = table.metric_names.size();
    for (FeatureTable::Row& row : table.rows) {
        const std::vector<int>& observed = frames_of_track.at(row.track_id);
        std::vector<double> values;
        values.reserve((old_width + 1) * static_cast<std::size_t>(table.window + 1));
        for (int k = 0; k <= table.window; ++k) {
            for (std::size_t m = 0; m < old_width; ++m) {
                values.push_back(row.values[static_cast<std::size_t>(k) * old_width + m]);
            }
            int source = slot_source_frame(observed, row.frame, k, table.window);
            values.push_back(by_track_frame.at({row.track_id, source}));
        }
        row.values = std::move(values);
    }
    table.metric_names.push_back("survival");
}

void write_cox_json(const std::string& path, const CoxModel& model) {
    json doc{{"covariates", model.covariate_names},
             {"mean", model.mean},
             {"std", model.stddev},
             {"beta", std::vector<double>(model.beta.data(), model.beta.data() + model.beta.size())},
             {"baseline", {{"times", model.baseline_times}, {"cumhaz", model.baseline_cumhaz}}}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    out << doc.dump(2) << '\n';
}

CoxModel read_cox_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    json doc;
    in >> doc;
    CoxModel model;
    model.covariate_names = doc.at("covariates").get<std::vector<std::string>>();
    model.mean = doc.at("mean").get<std::vector<double>>();
    model.stddev = doc.at("std").get<std::vector<double>>();
    std::vector<double> beta = doc.at("beta").get<std::vector<double>>();
    model.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    model.baseline_times = doc.at("baseline").at("times").get<std::vector<double>>();
    model.baseline_cumhaz = doc.at("baseline").at("cumhaz").get<std::vector<double>>();
    model.fitted = true;
    return model;
}

}  // namespace maskmeta
