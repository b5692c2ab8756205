#include "maskmeta/meta_models.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "maskmeta/evaluation.hpp"

namespace maskmeta {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable mean logistic loss for 0/1 targets.
double logistic_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        loss += std::max(z[i], 0.0) - y[i] * z[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    return loss / static_cast<double>(z.size());
}

double mse_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
    return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

MetaTask parse_task(const std::string& s) {
    if (s == "clf") return MetaTask::Classification;
    if (s == "reg") return MetaTask::Regression;
    throw std::runtime_error(fmt::format("unknown task '{}' (expected clf or reg)", s));
}

MetaFamily parse_family(const std::string& s) {
    if (s == "lr_l1") return MetaFamily::LassoLinear;
    if (s == "gb") return MetaFamily::GradientBoosting;
    if (s == "nn_l2") return MetaFamily::ShallowNetwork;
    throw std::runtime_error(fmt::format("unknown family '{}' (expected lr_l1, gb or nn_l2)", s));
}

std::string task_name(MetaTask task) {
    return task == MetaTask::Classification ? "clf" : "reg";
}

std::string family_name(MetaFamily family) {
    switch (family) {
        case MetaFamily::LassoLinear: return "lr_l1";
        case MetaFamily::GradientBoosting: return "gb";
        case MetaFamily::ShallowNetwork: return "nn_l2";
    }
    return "?";
}

FeatureSet parse_feature_set(const std::string& s) {
    if (s == "all") return FeatureSet::All;
    if (s == "u_only") return FeatureSet::UncertaintyOnly;
    if (s == "single_frame") return FeatureSet::SingleFrame;
    if (s == "score_only") return FeatureSet::ScoreOnly;
    if (s == "entropy_only") return FeatureSet::EntropyOnly;
    throw std::runtime_error(fmt::format("unknown feature set '{}'", s));
}

std::string feature_set_name(FeatureSet set) {
    switch (set) {
        case FeatureSet::All: return "all";
        case FeatureSet::UncertaintyOnly: return "u_only";
        case FeatureSet::SingleFrame: return "single_frame";
        case FeatureSet::ScoreOnly: return "score_only";
        case FeatureSet::EntropyOnly: return "entropy_only";
    }
    return "?";
}

void MetaDataset::validate() const {
    if (features.rows() != target_iou.size() ||
        features.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw std::runtime_error("meta dataset: row count mismatch");
    }
    if (!features.allFinite()) throw std::runtime_error("meta dataset: non-finite feature");
    for (Eigen::Index i = 0; i < target_iou.size(); ++i) {
        if (!(target_iou[i] >= 0.0 && target_iou[i] <= 1.0)) {
            throw std::runtime_error(fmt::format("meta dataset: iou {} outside [0,1]",
                                                 target_iou[i]));
        }
        if (labels[static_cast<std::size_t>(i)] != (target_iou[i] >= 0.5 ? 1 : 0)) {
            throw std::runtime_error("meta dataset: label inconsistent with iou");
        }
    }
}

MetaDataset make_meta_dataset(const FeatureTable& table, FeatureSet set, int n_c) {
    if (!table.has_targets) {
        throw std::runtime_error("make_meta_dataset: feature table carries no targets");
    }
    if (n_c > table.window) {
        throw std::runtime_error(fmt::format(
            "make_meta_dataset: n_c = {} exceeds the table window {}", n_c, table.window));
    }
    if (set == FeatureSet::SingleFrame || set == FeatureSet::ScoreOnly ||
        set == FeatureSet::EntropyOnly) {
        n_c = 0;
    }

    std::vector<int> metric_indices;
    std::vector<std::string> metric_names;
    for (std::size_t m = 0; m < table.metric_names.size(); ++m) {
        const std::string& name = table.metric_names[m];
        bool keep = false;
        switch (set) {
            case FeatureSet::All:
            case FeatureSet::SingleFrame: keep = true; break;
            case FeatureSet::UncertaintyOnly:
                keep = name != "score" && name != "shape_f" && name != "dev_center" &&
                       name != "dev_size" && name != "ratio" && name != "survival";
                break;
            case FeatureSet::ScoreOnly: keep = name == "score"; break;
            case FeatureSet::EntropyOnly: keep = name == "ent_mean"; break;
        }
        if (keep) {
            metric_indices.push_back(static_cast<int>(m));
            metric_names.push_back(name);
        }
    }
    if (metric_indices.empty()) {
        throw std::runtime_error(fmt::format("feature set '{}' selects no columns",
                                             feature_set_name(set)));
    }

    MetaDataset ds;
    for (int k = 0; k <= n_c; ++k) {
        for (const std::string& name : metric_names) {
            ds.feature_names.push_back(fmt::format("{}_{}", name, k));
        }
    }
    ds.features.resize(static_cast<Eigen::Index>(table.rows.size()),
                       static_cast<Eigen::Index>(ds.feature_names.size()));
    ds.target_iou.resize(static_cast<Eigen::Index>(table.rows.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const FeatureTable::Row& row = table.rows[i];
        Eigen::Index col = 0;
        for (int k = 0; k <= n_c; ++k) {
            for (int mi : metric_indices) {
                ds.features(static_cast<Eigen::Index>(i), col++) = table.value(row, k, mi);
            }
        }
        ds.target_iou[static_cast<Eigen::Index>(i)] = row.iou;
        ds.labels.push_back(row.iou >= 0.5 ? 1 : 0);
        ds.groups.push_back({row.sequence, row.track_id});
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// LASSO

namespace {

struct LassoProblem {
    const Eigen::MatrixXd& X;
    const Eigen::VectorXd& y;
    bool logistic;

    // Regression uses the Gram form, so iterations cost O(p^2).
    Eigen::MatrixXd gram;      // X'X / n
    Eigen::VectorXd xty;       // X'y / n
    Eigen::VectorXd col_mean;  // X'1 / n
    double y_mean = 0.0;
    double y_sq_mean = 0.0;
    double lipschitz = 1.0;

    explicit LassoProblem(const Eigen::MatrixXd& X_, const Eigen::VectorXd& y_, bool logistic_)
        : X(X_), y(y_), logistic(logistic_) {
        const double n = static_cast<double>(X.rows());
        col_mean = X.colwise().mean();
        y_mean = y.mean();
        Eigen::MatrixXd ext(X.cols() + 1, X.cols() + 1);
        gram = X.transpose() * X / n;
        xty = X.transpose() * y / n;
        y_sq_mean = y.squaredNorm() / n;
        ext.topLeftCorner(X.cols(), X.cols()) = gram;
        ext.topRightCorner(X.cols(), 1) = col_mean;
        ext.bottomLeftCorner(1, X.cols()) = col_mean.transpose();
        ext(X.cols(), X.cols()) = 1.0;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ext);
        lipschitz = std::max(es.eigenvalues().maxCoeff(), 1e-12);
        if (logistic) lipschitz *= 0.25;
    }

    double data_loss(const Eigen::VectorXd& w, double b) const {
        if (logistic) {
            return logistic_loss(X * w + Eigen::VectorXd::Constant(X.rows(), b), y);
        }
        return 0.5 * w.dot(gram * w) + b * col_mean.dot(w) - xty.dot(w) + 0.5 * b * b -
               b * y_mean + 0.5 * y_sq_mean;
    }

    void data_gradient(const Eigen::VectorXd& w, double b, Eigen::VectorXd& gw,
                       double& gb) const {
        if (logistic) {
            const double n = static_cast<double>(X.rows());
            Eigen::VectorXd z = X * w + Eigen::VectorXd::Constant(X.rows(), b);
            Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
            gw = X.transpose() * (p - y) / n;
            gb = (p - y).mean();
        } else {
            gw = gram * w + b * col_mean - xty;
            gb = col_mean.dot(w) + b - y_mean;
        }
    }
};

double kkt_residual_of(const LassoProblem& problem, const Eigen::VectorXd& w, double b,
                       double lambda) {
    Eigen::VectorXd gw;
    double gb = 0.0;
    problem.data_gradient(w, b, gw, gb);
    double residual = std::abs(gb);
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w[j] != 0.0) {
            residual = std::max(residual, std::abs(gw[j] + lambda * (w[j] > 0 ? 1.0 : -1.0)));
        } else {
            residual = std::max(residual, std::max(0.0, std::abs(gw[j]) - lambda));
        }
    }
    return residual;
}

}  // namespace

double lasso_kkt_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const LinearModel& model) {
    LassoProblem problem(X, y, model.logistic);
    return kkt_residual_of(problem, model.weights, model.bias, model.lambda);
}

LinearModel lasso_fit_at_lambda(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                double lambda, MetaTask task, LassoFitInfo* info,
                                const LinearModel* warm_start) {
    if (!X.allFinite() || !y.allFinite()) {
        throw std::invalid_argument("lasso: non-finite input");
    }
    if (lambda < 0.0) throw std::invalid_argument("lasso: negative penalty");
    const bool logistic = task == MetaTask::Classification;
    LassoProblem problem(X, y, logistic);

    const Eigen::Index p = X.cols();
    Eigen::VectorXd w = warm_start && warm_start->weights.size() == p
                            ? warm_start->weights
                            : Eigen::VectorXd::Zero(p);
    double b = warm_start ? warm_start->bias : 0.0;

    const double step = 1.0 / problem.lipschitz;
    auto objective = [&](const Eigen::VectorXd& w_, double b_) {
        return problem.data_loss(w_, b_) + lambda * w_.lpNorm<1>();
    };

    // FISTA with gradient-mapping restart (no objective cancellation noise in
    // the restart decision), stopped once the objective is numerically flat
    // and the subgradient optimality residual is met. Exact closed-form
    // comparisons need the tighter residual at a zero penalty.
    const double kkt_tolerance = lambda == 0.0 ? 1e-10 : 1e-7;
    const long max_iterations = lambda == 0.0 ? 200000 : 25000;
    const long polish_budget = 2000;  // extra iterations past objective flatness

    Eigen::VectorXd zw = w;
    double zb = b;
    double theta = 1.0;
    double f_current = objective(w, b);
    long polish_iters = 0;
    Eigen::VectorXd gw(p);
    double gb = 0.0;

    long iter = 0;
    for (; iter < max_iterations; ++iter) {
        problem.data_gradient(zw, zb, gw, gb);
        Eigen::VectorXd w_next = zw - step * gw;
        for (Eigen::Index j = 0; j < p; ++j) {
            double threshold = step * lambda;
            w_next[j] = w_next[j] > threshold   ? w_next[j] - threshold
                        : w_next[j] < -threshold ? w_next[j] + threshold
                                                  : 0.0;
        }
        double b_next = zb - step * gb;

        // Momentum opposing the proximal step direction means overshoot.
        double across = (zw - w_next).dot(w_next - w) + (zb - b_next) * (b_next - b);
        if (across > 0.0) {
            zw = w;
            zb = b;
            theta = 1.0;
            continue;
        }

        double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
        double blend = (theta - 1.0) / theta_next;
        zw = w_next + blend * (w_next - w);
        zb = b_next + blend * (b_next - b);
        theta = theta_next;

        double f_next = objective(w_next, b_next);
        double rel_change = std::abs(f_current - f_next) / std::max(1.0, std::abs(f_current));
        w = w_next;
        b = b_next;
        f_current = f_next;

        if (rel_change < 1e-8) {
            double kkt = kkt_residual_of(problem, w, b, lambda);
            if (kkt < kkt_tolerance) break;
            if (++polish_iters >= polish_budget) break;  // numerically stationary
        }
    }

    LinearModel model;
    model.weights = w;
    model.bias = b;
    model.lambda = lambda;
    model.logistic = logistic;
    if (info) {
        info->lambda = lambda;
        info->iterations = iter;
        info->kkt_residual = kkt_residual_of(problem, w, b, lambda);
    }
    return model;
}

LinearModel fit_lasso(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                      const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
                      LassoFitInfo* info) {
    constexpr int kGridPoints = 20;
    const bool logistic = task == MetaTask::Classification;

    LinearModel best;
    double best_val = std::numeric_limits<double>::infinity();
    LassoFitInfo best_info;
    LinearModel warm;
    bool have_warm = false;

    for (int i = kGridPoints - 1; i >= 0; --i) {  // descending penalties, warm-started
        double lambda = std::pow(10.0, -5.0 + 6.0 * static_cast<double>(i) / (kGridPoints - 1));
        LassoFitInfo fit_info;
        LinearModel model = lasso_fit_at_lambda(X_train, y_train, lambda, task, &fit_info,
                                                have_warm ? &warm : nullptr);
        warm = model;
        have_warm = true;

        Eigen::VectorXd z = X_val * model.weights + Eigen::VectorXd::Constant(X_val.rows(),
                                                                              model.bias);
        double val_loss = logistic ? logistic_loss(z, y_val) : mse_loss(z, y_val);
        fit_info.val_loss = val_loss;
        if (val_loss < best_val) {
            best_val = val_loss;
            best = model;
            best_info = fit_info;
        }
    }
    if (info) *info = best_info;
    return best;
}

// ---------------------------------------------------------------------------
// Gradient boosting

double RegressionTree::predict(const Eigen::RowVectorXd& row) const {
    int node = 0;
    while (!nodes[static_cast<std::size_t>(node)].leaf()) {
        const TreeNode& n = nodes[static_cast<std::size_t>(node)];
        node = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(node)].value;
}

namespace {

struct TreeBuilder {
    const Eigen::MatrixXd& X;
    const Eigen::VectorXd& grad;
    const Eigen::VectorXd& hess;
    const std::vector<std::vector<int>>& sorted_by_feature;
    int max_depth;
    std::vector<TreeNode> nodes;
    std::vector<char> in_node;  // scratch membership flags

    int build(std::vector<int>& samples, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        for (int i : samples) {
            g_sum += grad[i];
            h_sum += hess[i];
        }
        int index = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[static_cast<std::size_t>(index)].value = h_sum > 1e-12 ? g_sum / h_sum : 0.0;
        if (depth >= max_depth || samples.size() < 2) return index;

        double best_gain = 0.0;  // any strictly positive improvement splits
        int best_feature = -1;
        double best_threshold = 0.0;
        const double parent_score = h_sum > 1e-12 ? g_sum * g_sum / h_sum : 0.0;

        for (int i : samples) in_node[static_cast<std::size_t>(i)] = 1;
        for (int f = 0; f < X.cols(); ++f) {
            double gl = 0.0, hl = 0.0;
            double prev_value = 0.0;
            bool have_prev = false;
            for (int i : sorted_by_feature[static_cast<std::size_t>(f)]) {
                if (!in_node[static_cast<std::size_t>(i)]) continue;
                double value = X(i, f);
                if (have_prev && value != prev_value && hl > 1e-12 && h_sum - hl > 1e-12) {
                    double gr = g_sum - gl;
                    double hr = h_sum - hl;
                    double gain = gl * gl / hl + gr * gr / hr - parent_score;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        best_threshold = 0.5 * (prev_value + value);
                    }
                }
                gl += grad[i];
                hl += hess[i];
                prev_value = value;
                have_prev = true;
            }
        }
        for (int i : samples) in_node[static_cast<std::size_t>(i)] = 0;

        if (best_feature < 0) return index;

        std::vector<int> left, right;
        for (int i : samples) {
            (X(i, best_feature) <= best_threshold ? left : right).push_back(i);
        }
        samples.clear();
        samples.shrink_to_fit();
        nodes[static_cast<std::size_t>(index)].feature = best_feature;
        nodes[static_cast<std::size_t>(index)].threshold = best_threshold;
        int l = build(left, depth + 1);
        int r = build(right, depth + 1);
        nodes[static_cast<std::size_t>(index)].left = l;
        nodes[static_cast<std::size_t>(index)].right = r;
        return index;
    }
};

}  // namespace

Eigen::VectorXd GBModel::decision(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), init);
    for (const RegressionTree& tree : trees) {
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            out[i] += learning_rate * tree.predict(X.row(i));
        }
    }
    return out;
}

GBModel fit_gb(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
               const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
               const GBOptions& options, GBFitInfo* info) {
    const bool logistic = task == MetaTask::Classification;
    const Eigen::Index n = X_train.rows();

    GBModel model;
    model.learning_rate = options.learning_rate;
    model.logistic = logistic;
    if (logistic) {
        double p = std::clamp(y_train.mean(), 1e-12, 1.0 - 1e-12);
        model.init = std::log(p / (1.0 - p));
    } else {
        model.init = y_train.mean();
    }

    std::vector<std::vector<int>> sorted_by_feature(static_cast<std::size_t>(X_train.cols()));
    for (Eigen::Index f = 0; f < X_train.cols(); ++f) {
        auto& order = sorted_by_feature[static_cast<std::size_t>(f)];
        order.resize(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return X_train(a, f) < X_train(b, f); });
    }

    Eigen::VectorXd f_train = Eigen::VectorXd::Constant(n, model.init);
    Eigen::VectorXd f_val = Eigen::VectorXd::Constant(X_val.rows(), model.init);
    auto train_loss = [&]() {
        return logistic ? logistic_loss(f_train, y_train) : mse_loss(f_train, y_train);
    };
    auto val_loss = [&]() {
        return logistic ? logistic_loss(f_val, y_val) : mse_loss(f_val, y_val);
    };

    GBFitInfo local_info;
    double best_val = val_loss();
    int best_round = 0;
    int since_best = 0;

    Eigen::VectorXd grad(n), hess(n);
    for (int round = 0; round < options.rounds; ++round) {
        if (logistic) {
            for (Eigen::Index i = 0; i < n; ++i) {
                double p = sigmoid(f_train[i]);
                grad[i] = y_train[i] - p;
                hess[i] = std::max(p * (1.0 - p), 1e-12);
            }
        } else {
            grad = y_train - f_train;
            hess.setOnes();
        }

        TreeBuilder builder{X_train, grad, hess, sorted_by_feature, options.max_depth,
                            {},       std::vector<char>(static_cast<std::size_t>(n), 0)};
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        builder.build(all, 0);
        RegressionTree tree{std::move(builder.nodes)};

        for (Eigen::Index i = 0; i < n; ++i) {
            f_train[i] += options.learning_rate * tree.predict(X_train.row(i));
        }
        for (Eigen::Index i = 0; i < X_val.rows(); ++i) {
            f_val[i] += options.learning_rate * tree.predict(X_val.row(i));
        }
        model.trees.push_back(std::move(tree));

        local_info.train_losses.push_back(train_loss());
        double v = val_loss();
        local_info.val_losses.push_back(v);
        if (v < best_val) {
            best_val = v;
            best_round = round + 1;
            since_best = 0;
        } else if (++since_best >= options.patience) {
            break;
        }
    }

    model.trees.resize(static_cast<std::size_t>(best_round));
    local_info.best_round = best_round;
    if (info) *info = std::move(local_info);
    return model;
}

// ---------------------------------------------------------------------------
// Shallow network

Eigen::VectorXd ShallowNet::decision(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd hidden = (X * w1.transpose()).rowwise() + b1.transpose();
    hidden = hidden.cwiseMax(0.0);
    return (hidden * w2).array() + b2;
}

double nn_loss_and_gradients(const ShallowNet& net, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y, NNGradients* grads) {
    const double n = static_cast<double>(X.rows());
    Eigen::MatrixXd z1 = (X * net.w1.transpose()).rowwise() + net.b1.transpose();
    Eigen::MatrixXd h = z1.cwiseMax(0.0);
    Eigen::VectorXd out = (h * net.w2).array() + net.b2;

    double data_loss;
    Eigen::VectorXd dout(out.size());
    if (net.logistic) {
        data_loss = logistic_loss(out, y);
        for (Eigen::Index i = 0; i < out.size(); ++i) dout[i] = (sigmoid(out[i]) - y[i]) / n;
    } else {
        data_loss = mse_loss(out, y);
        dout = 2.0 * (out - y) / n;
    }
    double penalty = 0.5 * net.l2 * (net.w1.squaredNorm() + net.w2.squaredNorm());

    if (grads) {
        grads->w2 = h.transpose() * dout + net.l2 * net.w2;
        grads->b2 = dout.sum();
        Eigen::MatrixXd dh = dout * net.w2.transpose();
        Eigen::MatrixXd dz1 =
            dh.array() * (z1.array() > 0.0).cast<double>();
        grads->w1 = dz1.transpose() * X + net.l2 * net.w1;
        grads->b1 = dz1.colwise().sum();
    }
    return data_loss + penalty;
}

ShallowNet fit_nn(const Eigen::MatrixXd& X_train, const Eigen::VectorXd& y_train,
                  const Eigen::MatrixXd& X_val, const Eigen::VectorXd& y_val, MetaTask task,
                  std::uint64_t seed, const NNOptions& options) {
    const Eigen::Index n = X_train.rows();
    const Eigen::Index p = X_train.cols();
    const bool logistic = task == MetaTask::Classification;

    double learning_rate = options.learning_rate;
    for (int attempt = 0; attempt <= 10; ++attempt) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd(0.0, 1.0);
        ShallowNet net;
        net.logistic = logistic;
        net.l2 = options.l2;
        net.w1.resize(options.hidden, p);
        double scale1 = std::sqrt(2.0 / static_cast<double>(p));
        for (Eigen::Index i = 0; i < net.w1.rows(); ++i) {
            for (Eigen::Index j = 0; j < net.w1.cols(); ++j) net.w1(i, j) = scale1 * nd(rng);
        }
        net.b1 = Eigen::VectorXd::Zero(options.hidden);
        net.w2.resize(options.hidden);
        double scale2 = std::sqrt(2.0 / static_cast<double>(options.hidden));
        for (Eigen::Index i = 0; i < net.w2.size(); ++i) net.w2[i] = scale2 * nd(rng);
        net.b2 = 0.0;

        Eigen::MatrixXd v_w1 = Eigen::MatrixXd::Zero(net.w1.rows(), net.w1.cols());
        Eigen::VectorXd v_b1 = Eigen::VectorXd::Zero(options.hidden);
        Eigen::VectorXd v_w2 = Eigen::VectorXd::Zero(options.hidden);
        double v_b2 = 0.0;

        ShallowNet best = net;
        double best_val = std::numeric_limits<double>::infinity();
        int since_best = 0;
        bool diverged = false;

        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < options.epochs && !diverged; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(options.batch_size)) {
                std::size_t end =
                    std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
                Eigen::MatrixXd xb(static_cast<Eigen::Index>(end - start), p);
                Eigen::VectorXd yb(static_cast<Eigen::Index>(end - start));
                for (std::size_t i = start; i < end; ++i) {
                    xb.row(static_cast<Eigen::Index>(i - start)) = X_train.row(order[i]);
                    yb[static_cast<Eigen::Index>(i - start)] = y_train[order[i]];
                }
                NNGradients g;
                double loss = nn_loss_and_gradients(net, xb, yb, &g);
                if (!std::isfinite(loss)) {
                    diverged = true;
                    break;
                }
                v_w1 = options.momentum * v_w1 - learning_rate * g.w1;
                v_b1 = options.momentum * v_b1 - learning_rate * g.b1;
                v_w2 = options.momentum * v_w2 - learning_rate * g.w2;
                v_b2 = options.momentum * v_b2 - learning_rate * g.b2;
                net.w1 += v_w1;
                net.b1 += v_b1;
                net.w2 += v_w2;
                net.b2 += v_b2;
            }
            if (diverged) break;

            Eigen::VectorXd z = net.decision(X_val);
            double v = logistic ? logistic_loss(z, y_val) : mse_loss(z, y_val);
            if (!std::isfinite(v)) {
                diverged = true;
                break;
            }
            if (v < best_val - 1e-12) {
                best_val = v;
                best = net;
                since_best = 0;
            } else if (++since_best >= options.patience) {
                break;
            }
        }
        if (!diverged) return best;
        learning_rate *= 0.5;
    }
    throw std::runtime_error("fit_nn: diverged after 10 step halvings");
}

// ---------------------------------------------------------------------------
// Unified prediction and protocol

namespace {

Eigen::MatrixXd standardized_columns(const MetaModel& model, const MetaDataset& dataset) {
    std::vector<Eigen::Index> permutation;
    std::vector<std::string> missing;
    for (const std::string& name : model.feature_names) {
        auto it = std::find(dataset.feature_names.begin(), dataset.feature_names.end(), name);
        if (it == dataset.feature_names.end()) {
            missing.push_back(name);
        } else {
            permutation.push_back(it - dataset.feature_names.begin());
        }
    }
    if (!missing.empty()) {
        throw std::runtime_error(fmt::format("predict: dataset is missing feature column(s) [{}]",
                                             fmt::join(missing, ", ")));
    }
    Eigen::MatrixXd X(dataset.features.rows(),
                      static_cast<Eigen::Index>(model.feature_names.size()));
    for (std::size_t j = 0; j < permutation.size(); ++j) {
        X.col(static_cast<Eigen::Index>(j)) = dataset.features.col(permutation[j]);
    }
    if (!model.mean.empty()) {
        for (std::size_t j = 0; j < model.mean.size(); ++j) {
            X.col(static_cast<Eigen::Index>(j)) =
                (X.col(static_cast<Eigen::Index>(j)).array() - model.mean[j]) / model.stddev[j];
        }
    }
    return X;
}

Eigen::VectorXd decision_values(const MetaModel& model, const Eigen::MatrixXd& X) {
    if (const auto* linear = std::get_if<LinearModel>(&model.model)) {
        return (X * linear->weights).array() + linear->bias;
    }
    if (const auto* gb = std::get_if<GBModel>(&model.model)) {
        return gb->decision(X);
    }
    return std::get<ShallowNet>(model.model).decision(X);
}

Eigen::VectorXd finalize_predictions(MetaTask task, Eigen::VectorXd z) {
    if (task == MetaTask::Classification) {
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = sigmoid(z[i]);
    } else {
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std::clamp(z[i], 0.0, 1.0);
    }
    return z;
}

struct Split {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

bool has_both_classes(const MetaDataset& ds, const std::vector<int>& rows) {
    bool pos = false, neg = false;
    for (int i : rows) {
        (ds.labels[static_cast<std::size_t>(i)] ? pos : neg) = true;
    }
    return pos && neg;
}

Split sample_split(const MetaDataset& dataset, MetaTask task, std::mt19937_64& rng) {
    const int n = static_cast<int>(dataset.features.rows());
    const int n_train = static_cast<int>(std::llround(0.7 * n));
    const int n_val = static_cast<int>(std::llround(0.1 * n));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int attempt = 0; attempt < 10; ++attempt) {
        std::shuffle(perm.begin(), perm.end(), rng);
        Split split;
        split.train.assign(perm.begin(), perm.begin() + n_train);
        split.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
        split.test.assign(perm.begin() + n_train + n_val, perm.end());
        if (task == MetaTask::Regression ||
            (has_both_classes(dataset, split.train) && has_both_classes(dataset, split.test))) {
            return split;
        }
    }
    throw std::runtime_error(
        "run_protocol: could not sample a split with both classes in 10 attempts");
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<int>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    }
    return out;
}

Eigen::VectorXd take_values(const Eigen::VectorXd& v, const std::vector<int>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

MetaModel fit_on_indices(const MetaDataset& dataset, MetaFamily family, MetaTask task,
                         const Split& split, std::uint64_t seed, const ProtocolOptions& options) {
    MetaModel model;
    model.family = family;
    model.task = task;
    model.feature_names = dataset.feature_names;

    Eigen::VectorXd targets(dataset.features.rows());
    if (task == MetaTask::Classification) {
        for (Eigen::Index i = 0; i < targets.size(); ++i) {
            targets[i] = dataset.labels[static_cast<std::size_t>(i)];
        }
    } else {
        targets = dataset.target_iou;
    }

    Eigen::MatrixXd x_train = take_rows(dataset.features, split.train);
    Eigen::MatrixXd x_val = take_rows(dataset.features, split.val);
    Eigen::VectorXd y_train = take_values(targets, split.train);
    Eigen::VectorXd y_val = take_values(targets, split.val);

    if (family != MetaFamily::GradientBoosting) {  // trees are scale-invariant
        model.mean.resize(static_cast<std::size_t>(x_train.cols()));
        model.stddev.resize(static_cast<std::size_t>(x_train.cols()));
        for (Eigen::Index j = 0; j < x_train.cols(); ++j) {
            double mean = x_train.col(j).mean();
            double var = (x_train.col(j).array() - mean).square().mean();
            double sd = std::sqrt(var);
            if (sd < 1e-12) sd = 1.0;
            model.mean[static_cast<std::size_t>(j)] = mean;
            model.stddev[static_cast<std::size_t>(j)] = sd;
            x_train.col(j) = (x_train.col(j).array() - mean) / sd;
            x_val.col(j) = (x_val.col(j).array() - mean) / sd;
        }
    }

    switch (family) {
        case MetaFamily::LassoLinear:
            model.model = fit_lasso(x_train, y_train, x_val, y_val, task);
            break;
        case MetaFamily::GradientBoosting:
            model.model = fit_gb(x_train, y_train, x_val, y_val, task, options.gb);
            break;
        case MetaFamily::ShallowNetwork:
            model.model = fit_nn(x_train, y_train, x_val, y_val, task, seed, options.nn);
            break;
    }
    return model;
}

}  // namespace

Eigen::VectorXd predict(const MetaModel& model, const MetaDataset& dataset) {
    Eigen::MatrixXd X = standardized_columns(model, dataset);
    return finalize_predictions(model.task, decision_values(model, X));
}

ProtocolResult run_protocol(const MetaDataset& dataset, MetaFamily family, MetaTask task,
                            const ProtocolOptions& options) {
    dataset.validate();
    if (dataset.features.rows() < 50) {
        throw std::runtime_error(fmt::format("run_protocol: dataset has {} rows, needs >= 50",
                                             dataset.features.rows()));
    }

    struct RunOutcome {
        double first = 0.0;
        double second = 0.0;
    };
    auto run_one = [&](int run_index) -> RunOutcome {
        std::mt19937_64 rng(mix_seed(options.seed, static_cast<std::uint64_t>(run_index)));
        Split split = sample_split(dataset, task, rng);
        MetaModel model = fit_on_indices(dataset, family, task, split, rng(), options);

        MetaDataset test;
        test.feature_names = dataset.feature_names;
        test.features = take_rows(dataset.features, split.test);
        test.target_iou = take_values(dataset.target_iou, split.test);
        for (int i : split.test) {
            test.labels.push_back(dataset.labels[static_cast<std::size_t>(i)]);
            test.groups.push_back(dataset.groups[static_cast<std::size_t>(i)]);
        }
        Eigen::VectorXd predictions = predict(model, test);

        RunOutcome outcome;
        std::vector<double> pred_vec(predictions.data(), predictions.data() + predictions.size());
        if (task == MetaTask::Classification) {
            outcome.first = accuracy(pred_vec, test.labels);
            outcome.second = auroc(pred_vec, test.labels);
        } else {
            std::vector<double> target_vec(test.target_iou.data(),
                                           test.target_iou.data() + test.target_iou.size());
            outcome.first = std_error(pred_vec, target_vec);
            outcome.second = r_squared(pred_vec, target_vec);
        }
        return outcome;
    };

    std::vector<RunOutcome> outcomes(static_cast<std::size_t>(options.runs));
    if (options.parallel) {
        std::vector<std::future<RunOutcome>> futures;
        for (int r = 0; r < options.runs; ++r) {
            futures.push_back(std::async(std::launch::async, run_one, r));
        }
        for (int r = 0; r < options.runs; ++r) {
            outcomes[static_cast<std::size_t>(r)] = futures[static_cast<std::size_t>(r)].get();
        }
    } else {
        for (int r = 0; r < options.runs; ++r) {
            outcomes[static_cast<std::size_t>(r)] = run_one(r);
        }
    }

    ProtocolResult result;
    result.family = family;
    result.task = task;
    result.runs = options.runs;
    result.seed = options.seed;
    const int n = static_cast<int>(dataset.features.rows());
    result.n_train = std::llround(0.7 * n);
    result.n_val = std::llround(0.1 * n);
    result.n_test = n - result.n_train - result.n_val;

    auto summarize = [&](const std::string& name, auto getter) {
        Measure m;
        for (const RunOutcome& o : outcomes) m.values.push_back(getter(o));
        for (double v : m.values) m.mean += v;
        m.mean /= static_cast<double>(m.values.size());
        for (double v : m.values) m.stddev += (v - m.mean) * (v - m.mean);
        m.stddev = std::sqrt(m.stddev / static_cast<double>(m.values.size()));
        result.measures[name] = std::move(m);
    };
    if (task == MetaTask::Classification) {
        summarize("acc", [](const RunOutcome& o) { return o.first; });
        summarize("auroc", [](const RunOutcome& o) { return o.second; });
    } else {
        summarize("sigma", [](const RunOutcome& o) { return o.first; });
        summarize("r2", [](const RunOutcome& o) { return o.second; });
    }
    return result;
}

MetaModel fit_meta_on_random_split(const MetaDataset& dataset, MetaFamily family, MetaTask task,
                                   std::uint64_t seed, const ProtocolOptions& options) {
    dataset.validate();
    std::mt19937_64 rng(mix_seed(seed, 0));
    Split split = sample_split(dataset, task, rng);
    return fit_on_indices(dataset, family, task, split, rng(), options);
}

}  // namespace maskmeta
