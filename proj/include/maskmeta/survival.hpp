#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maskmeta/features.hpp"

namespace maskmeta {

struct SurvivalRecord {
    std::vector<double> covariates;
    double time = 0.0;      // frames from the current one, >= 1
    bool censored = false;  // ground-truth track persists to sequence end
};

struct SurvivalDataset {
    std::vector<std::string> covariate_names;
    std::vector<SurvivalRecord> records;
};

/// Selects predicted instances matched (IoU >= 0.5) to the same ground-truth
/// track in every one of frames t-window..t. The survival time counts the
/// consecutive future frames (from t) in which that track appears; censored
/// when the run reaches the sequence end. Covariates are the single-frame
/// metrics U plus the score over the window, oldest frame first.
SurvivalDataset build_survival_records(const FeatureTable& table,
                                       const GroundTruthSequence& gt, int window = 5);

struct CoxModel {
    std::vector<std::string> covariate_names;
    std::vector<double> mean;
    std::vector<double> stddev;
    Eigen::VectorXd beta;  // on standardized covariates
    std::vector<double> baseline_times;   // sorted unique event times
    std::vector<double> baseline_cumhaz;  // non-decreasing
    bool fitted = false;

    /// Coefficient on the original covariate scale.
    double raw_coefficient(std::size_t i) const { return beta[i] / stddev[i]; }
    double linear_predictor(std::span<const double> covariates) const;
};

/// Breslow partial log-likelihood with analytic gradient / Hessian for a
/// covariate matrix X (rows = subjects), used by the Newton fit and by the
/// finite-difference checks.
double cox_partial_loglik(const Eigen::MatrixXd& X, std::span<const double> time,
                          std::span<const std::uint8_t> event, const Eigen::VectorXd& beta,
                          Eigen::VectorXd* grad = nullptr, Eigen::MatrixXd* hessian = nullptr);

/// Newton ascent with step halving until the gradient max-norm drops below
/// 1e-8 (at most 100 iterations). The baseline cumulative hazard stores the
/// product-limit transform of the Breslow increments, so exp(-H0) reproduces
/// the Kaplan-Meier curve when beta = 0.
CoxModel fit_cox(const SurvivalDataset& dataset);

/// Expected survival time: the area under S(t|x) = exp(-H0(t) exp(eta)) up to
/// the last observed event time. Monotone decreasing in the linear predictor.
double predict_survival(const CoxModel& model, std::span<const double> covariates);

/// Predicted v for every table row; window frames without an observation use
/// the feature-table padding rule.
std::vector<double> predict_survival_for_rows(const CoxModel& model, const FeatureTable& table,
                                              int window = 5);

/// Appends a "survival" metric column (per-slot, padded like every metric).
void augment_with_survival(FeatureTable& table, const std::vector<double>& row_survival);

void write_cox_json(const std::string& path, const CoxModel& model);
CoxModel read_cox_json(const std::string& path);

/// Covariate names used for survival modelling: everything except the
/// temporal metrics depending on matching or ground truth.
std::vector<std::string> survival_covariate_metrics(const std::vector<std::string>& metric_names);

}  // namespace maskmeta
