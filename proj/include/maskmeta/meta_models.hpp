#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "maskmeta/features.hpp"

namespace maskmeta {

enum class MetaTask { Classification, Regression };
enum class MetaFamily { LassoLinear, GradientBoosting, ShallowNetwork };

MetaTask parse_task(const std::string& s);      // "clf" | "reg"
MetaFamily parse_family(const std::string& s);  // "lr_l1" | "gb" | "nn_l2"
std::string task_name(MetaTask task);
std::string family_name(MetaFamily family);

/// Which metric columns feed the meta models; the reduced sets are the
/// single-metric and single-frame baselines.
enum class FeatureSet { All, UncertaintyOnly, SingleFrame, ScoreOnly, EntropyOnly };
FeatureSet parse_feature_set(const std::string& s);
std::string feature_set_name(FeatureSet set);

struct MetaDataset {
    std::vector<std::string> feature_names;
    Eigen::MatrixXd features;  // unstandardized
    Eigen::VectorXd target_iou;
    std::vector<int> labels;  // 1 when iou >= 0.5
    std::vector<std::pair<std::string, std::int64_t>> groups;  // (sequence, track)

    void validate() const;  // finite features, labels consistent with iou
};

/// Flattens time-series rows into a feature matrix, using slots 0..n_c of the
/// selected metric columns. The table must carry targets.
MetaDataset make_meta_dataset(const FeatureTable& table, FeatureSet set, int n_c);

// ---------------------------------------------------------------------------
// Linear / logistic regression with l1 penalty.

struct LinearModel {
    Eigen::VectorXd weights;
    double bias = 0.0;
    double lambda = 0.0;
    bool logistic = false;
};

struct LassoFitInfo {
    double lambda = 0.0;
    double kkt_residual = 0.0;
    long iterations = 0;
    double val_loss = 0.0;
};

/// Proximal-gradient (soft-thresholding) solve at a fixed penalty, run until
/// the relative objective change drops below 1e-8 and the KKT residual below
/// 1e-6. Features are expected standardized.
LinearModel lasso_fit_at_lambda(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                double lambda, MetaTask task, LassoFitInfo* info = nullptr,
                                const LinearModel* warm_start = nullptr);

/// Subgradient optimality residual of the l1 objective at the given point.
double lasso_kkt_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const LinearModel& model);

/// Penalty selected from a 20-point log grid on [1e-5, 1e1] by validation loss.
LinearModel fit_lasso(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                      const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
                      LassoFitInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Gradient-boosted depth-3 regression trees.

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;
    double predict(const Eigen::RowVectorXd& row) const;
};

struct GBOptions {
    int rounds = 300;
    double learning_rate = 0.1;
    int max_depth = 3;
    int patience = 20;
};

struct GBModel {
    std::vector<RegressionTree> trees;
    double init = 0.0;
    double learning_rate = 0.1;
    bool logistic = false;

    Eigen::VectorXd decision(const Eigen::MatrixXd& X) const;  // raw F values
};

struct GBFitInfo {
    std::vector<double> train_losses;  // one entry per fitted round
    std::vector<double> val_losses;
    int best_round = 0;  // rounds kept after early stopping
};

/// Stagewise boosting of least-squares trees on the loss gradient, with
/// Newton leaf values for classification, early-stopped on validation loss.
GBModel fit_gb(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
               const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
               const GBOptions& options = {}, GBFitInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Shallow network: one hidden layer of 50 rectifier units.

struct ShallowNet {
    Eigen::MatrixXd w1;  // hidden x inputs
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;
    double b2 = 0.0;
    bool logistic = false;
    double l2 = 1e-3;

    Eigen::VectorXd decision(const Eigen::MatrixXd& X) const;  // pre-activation output
};

struct NNOptions {
    int hidden = 50;
    int epochs = 500;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double l2 = 1e-3;
    int patience = 25;
};

/// Mini-batch gradient descent with momentum from a seeded initialization;
/// diverging runs (NaN loss) restart with a halved step, at most 10 times.
ShallowNet fit_nn(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                  const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
                  std::uint64_t seed, const NNOptions& options = {});

struct NNGradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;
    double b2 = 0.0;
};

/// Full-batch penalized loss and its analytic gradients (finite-difference
/// reference point).
double nn_loss_and_gradients(const ShallowNet& net, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y, NNGradients* grads = nullptr);

// ---------------------------------------------------------------------------
// Unified prediction and the split-and-average protocol.

struct MetaModel {
    MetaFamily family = MetaFamily::GradientBoosting;
    MetaTask task = MetaTask::Classification;
    std::vector<std::string> feature_names;
    std::vector<double> mean;    // empty = identity standardization
    std::vector<double> stddev;
    std::variant<LinearModel, GBModel, ShallowNet> model;
};

/// Probabilities for classification, IoU estimates clamped to [0,1] for
/// regression. Throws listing missing columns on schema mismatch.
Eigen::VectorXd predict(const MetaModel& model, const MetaDataset& dataset);

struct ProtocolOptions {
    int runs = 10;
    std::uint64_t seed = 0;
    GBOptions gb;
    NNOptions nn;
    bool parallel = true;
};

struct Measure {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> values;
};

struct ProtocolResult {
    MetaFamily family = MetaFamily::GradientBoosting;
    MetaTask task = MetaTask::Classification;
    int runs = 0;
    std::uint64_t seed = 0;
    std::int64_t n_train = 0;
    std::int64_t n_val = 0;
    std::int64_t n_test = 0;
    std::map<std::string, Measure> measures;  // acc/auroc or sigma/r2
};

/// 70/10/20 random split, fit with validation-based selection, evaluate on
/// the test rows; repeated `runs` times with reseeded splits and averaged.
/// Splits whose training labels are single-class are resampled (at most 10
/// attempts each).
ProtocolResult run_protocol(const MetaDataset& dataset, MetaFamily family, MetaTask task,
                            const ProtocolOptions& options = {});

/// One seeded 70/10/20 split; fits on train/val and returns the model
/// (used by the sweep, which then scores every row).
MetaModel fit_meta_on_random_split(const MetaDataset& dataset, MetaFamily family, MetaTask task,
                                   std::uint64_t seed, const ProtocolOptions& options = {});

}  // namespace maskmeta
