#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "maskmeta/evaluation.hpp"
#include "maskmeta/meta_models.hpp"

using namespace maskmeta;

namespace {

void standardize_columns(Eigen::MatrixXd& X) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        double mean = X.col(j).mean();
        double sd = std::sqrt((X.col(j).array() - mean).square().mean());
        X.col(j) = (X.col(j).array() - mean) / (sd < 1e-12 ? 1.0 : sd);
    }
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int n, int p) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd X(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) X(i, j) = nd(rng);
    }
    return X;
}

}  // namespace

TEST_CASE("lasso null model above lambda_max") {
    std::mt19937_64 rng(1);
    Eigen::MatrixXd X = random_matrix(rng, 60, 5);
    standardize_columns(X);
    Eigen::VectorXd y = random_matrix(rng, 60, 1);
    y.array() -= y.mean();

    double lambda_max = (X.transpose() * y).cwiseAbs().maxCoeff() / 60.0;
    LinearModel model = lasso_fit_at_lambda(X, y, lambda_max * 1.0001, MetaTask::Regression);
    for (Eigen::Index j = 0; j < model.weights.size(); ++j) {
        CHECK(model.weights[j] == 0.0);
    }

    // Just below lambda_max at least one weight activates.
    LinearModel active = lasso_fit_at_lambda(X, y, lambda_max * 0.95, MetaTask::Regression);
    CHECK(active.weights.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lasso at zero penalty matches least squares") {
    std::mt19937_64 rng(2);
    Eigen::MatrixXd X = random_matrix(rng, 80, 1);
    Eigen::VectorXd y = 2.5 * X.col(0).array() + 0.7;
    y += 0.05 * random_matrix(rng, 80, 1);

    double mx = X.col(0).mean();
    double my = y.mean();
    double sxy = ((X.col(0).array() - mx) * (y.array() - my)).sum();
    double sxx = (X.col(0).array() - mx).square().sum();
    double slope = sxy / sxx;
    double intercept = my - slope * mx;

    LinearModel model = lasso_fit_at_lambda(X, y, 0.0, MetaTask::Regression);
    CHECK(model.weights[0] == doctest::Approx(slope).epsilon(1e-8));
    CHECK(model.bias == doctest::Approx(intercept).epsilon(1e-8));
}

TEST_CASE("lasso orthonormal design equals soft-thresholded least squares") {
    std::mt19937_64 rng(3);
    const int n = 64, p = 6;
    Eigen::MatrixXd A = random_matrix(rng, n, p);
    A.rowwise() -= A.colwise().mean();  // mean-zero columns keep the bias at 0
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
    Eigen::MatrixXd X = std::sqrt(static_cast<double>(n)) * Q;  // X'X / n = I

    Eigen::VectorXd y = random_matrix(rng, n, 1);
    y.array() -= y.mean();
    // Project y onto the column space plus its orthogonal rest; the closed
    // form below holds regardless.
    Eigen::VectorXd w_ls = X.transpose() * y / static_cast<double>(n);

    double lambda = 0.3 * w_ls.cwiseAbs().maxCoeff();
    LinearModel model = lasso_fit_at_lambda(X, y, lambda, MetaTask::Regression);
    for (int j = 0; j < p; ++j) {
        double expected = std::abs(w_ls[j]) <= lambda
                              ? 0.0
                              : w_ls[j] - (w_ls[j] > 0 ? lambda : -lambda);
        CHECK(model.weights[j] == doctest::Approx(expected).epsilon(1e-6));
    }
    CHECK(lasso_kkt_residual(X, y, model) < 1e-6);
}

TEST_CASE("lasso kkt residual at convergence, both tasks") {
    std::mt19937_64 rng(4);
    Eigen::MatrixXd X = random_matrix(rng, 120, 8);
    standardize_columns(X);
    Eigen::VectorXd w_true = Eigen::VectorXd::Zero(8);
    w_true[0] = 1.0;
    w_true[3] = -0.5;
    Eigen::VectorXd z = X * w_true;

    Eigen::VectorXd y_reg = z + 0.1 * random_matrix(rng, 120, 1);
    LinearModel reg = lasso_fit_at_lambda(X, y_reg, 0.05, MetaTask::Regression);
    CHECK(lasso_kkt_residual(X, y_reg, reg) < 1e-6);

    Eigen::VectorXd y_clf(120);
    for (int i = 0; i < 120; ++i) y_clf[i] = z[i] > 0 ? 1.0 : 0.0;
    LinearModel clf = lasso_fit_at_lambda(X, y_clf, 0.05, MetaTask::Classification);
    CHECK(lasso_kkt_residual(X, y_clf, clf) < 1e-6);
    CHECK(clf.logistic);
}

TEST_CASE("gradient boosting") {
    SUBCASE("zero rounds gives the constant model") {
        std::mt19937_64 rng(5);
        Eigen::MatrixXd X = random_matrix(rng, 40, 3);
        Eigen::VectorXd y = random_matrix(rng, 40, 1);
        GBOptions opts;
        opts.rounds = 0;
        GBModel model = fit_gb(X, y, X, y, MetaTask::Regression, opts);
        CHECK(model.trees.empty());
        Eigen::VectorXd out = model.decision(X);
        for (int i = 0; i < 40; ++i) CHECK(out[i] == doctest::Approx(y.mean()).epsilon(1e-15));
    }

    SUBCASE("one-dimensional step function is fit to machine-zero train MSE") {
        const int n = 64;
        Eigen::MatrixXd X(n, 1);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            X(i, 0) = static_cast<double>(i) / (n - 1);
            y[i] = X(i, 0) >= 0.5 ? 1.0 : 0.0;
        }
        GBOptions opts;
        opts.rounds = 300;
        opts.patience = 301;  // run the full schedule
        GBFitInfo info;
        GBModel model = fit_gb(X, y, X, y, MetaTask::Regression, opts, &info);
        Eigen::VectorXd out = model.decision(X);
        double mse = (out - y).squaredNorm() / n;
        CHECK(mse <= 1e-24);
        // Training loss never increases between rounds.
        for (std::size_t r = 1; r < info.train_losses.size(); ++r) {
            CHECK(info.train_losses[r] <= info.train_losses[r - 1] + 1e-15);
        }
    }

    SUBCASE("classification training loss is non-increasing") {
        std::mt19937_64 rng(6);
        Eigen::MatrixXd X = random_matrix(rng, 150, 4);
        Eigen::VectorXd y(150);
        for (int i = 0; i < 150; ++i) {
            y[i] = (X(i, 0) + 0.3 * X(i, 1) + 0.2 * random_matrix(rng, 1, 1)(0, 0)) > 0 ? 1 : 0;
        }
        GBOptions opts;
        opts.rounds = 80;
        GBFitInfo info;
        fit_gb(X.topRows(100), y.head(100), X.bottomRows(50), y.tail(50),
               MetaTask::Classification, opts, &info);
        for (std::size_t r = 1; r < info.train_losses.size(); ++r) {
            CHECK(info.train_losses[r] <= info.train_losses[r - 1] + 1e-12);
        }
    }

    SUBCASE("early stopping keeps no more rounds than argmin plus patience") {
        std::mt19937_64 rng(7);
        Eigen::MatrixXd X = random_matrix(rng, 120, 3);
        Eigen::VectorXd noise = random_matrix(rng, 120, 1);
        Eigen::VectorXd y = X.col(0) + 0.8 * noise;  // noisy target overfits quickly
        GBOptions opts;
        opts.rounds = 200;
        opts.patience = 10;
        GBFitInfo info;
        GBModel model = fit_gb(X.topRows(80), y.head(80), X.bottomRows(40), y.tail(40),
                               MetaTask::Regression, opts, &info);
        std::size_t argmin = 0;
        for (std::size_t r = 0; r < info.val_losses.size(); ++r) {
            if (info.val_losses[r] < info.val_losses[argmin]) argmin = r;
        }
        CHECK(model.trees.size() == argmin + 1);
        CHECK(model.trees.size() <= argmin + 1 + static_cast<std::size_t>(opts.patience));
    }
}

TEST_CASE("shallow network") {
    SUBCASE("analytic gradients match central differences") {
        std::mt19937_64 rng(8);
        const int n = 20, p = 4, hidden = 7;
        Eigen::MatrixXd X = random_matrix(rng, n, p);
        Eigen::VectorXd y_reg = random_matrix(rng, n, 1);
        Eigen::VectorXd y_clf(n);
        for (int i = 0; i < n; ++i) y_clf[i] = rng() % 2;

        for (bool logistic : {false, true}) {
            ShallowNet net;
            net.logistic = logistic;
            net.l2 = 1e-3;
            net.w1 = 0.4 * random_matrix(rng, hidden, p);
            net.b1 = 0.1 * random_matrix(rng, hidden, 1);
            net.w2 = 0.4 * random_matrix(rng, hidden, 1);
            net.b2 = 0.05;
            const Eigen::VectorXd& y = logistic ? y_clf : y_reg;

            NNGradients grads;
            nn_loss_and_gradients(net, X, y, &grads);

            const double h = 1e-6;
            std::uniform_int_distribution<int> pick_row(0, hidden - 1);
            std::uniform_int_distribution<int> pick_col(0, p - 1);
            for (int trial = 0; trial < 5; ++trial) {
                int r = pick_row(rng), c = pick_col(rng);
                ShallowNet plus = net, minus = net;
                plus.w1(r, c) += h;
                minus.w1(r, c) -= h;
                double fd = (nn_loss_and_gradients(plus, X, y) -
                             nn_loss_and_gradients(minus, X, y)) /
                            (2 * h);
                double analytic = grads.w1(r, c);
                CHECK(std::abs(analytic - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
            }
            // One weight from the output layer and both biases.
            {
                ShallowNet plus = net, minus = net;
                plus.w2[2] += h;
                minus.w2[2] -= h;
                double fd = (nn_loss_and_gradients(plus, X, y) -
                             nn_loss_and_gradients(minus, X, y)) /
                            (2 * h);
                CHECK(std::abs(grads.w2[2] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
            }
            {
                ShallowNet plus = net, minus = net;
                plus.b2 += h;
                minus.b2 -= h;
                double fd = (nn_loss_and_gradients(plus, X, y) -
                             nn_loss_and_gradients(minus, X, y)) /
                            (2 * h);
                CHECK(std::abs(grads.b2 - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
            }
        }
    }

    SUBCASE("all-zero weights output the bias") {
        ShallowNet net;
        net.w1 = Eigen::MatrixXd::Zero(50, 3);
        net.b1 = Eigen::VectorXd::Zero(50);
        net.w2 = Eigen::VectorXd::Zero(50);
        net.b2 = 0.37;
        std::mt19937_64 rng(9);
        Eigen::MatrixXd X = random_matrix(rng, 10, 3);
        Eigen::VectorXd out = net.decision(X);
        for (int i = 0; i < 10; ++i) CHECK(out[i] == 0.37);
    }

    SUBCASE("same seed reproduces identical weights") {
        std::mt19937_64 rng(10);
        Eigen::MatrixXd X = random_matrix(rng, 90, 3);
        Eigen::VectorXd y = X.col(0) - 0.5 * X.col(2);
        NNOptions opts;
        opts.epochs = 30;
        ShallowNet a = fit_nn(X.topRows(70), y.head(70), X.bottomRows(20), y.tail(20),
                              MetaTask::Regression, 77, opts);
        ShallowNet b = fit_nn(X.topRows(70), y.head(70), X.bottomRows(20), y.tail(20),
                              MetaTask::Regression, 77, opts);
        CHECK(a.w1 == b.w1);
        CHECK(a.b1 == b.b1);
        CHECK(a.w2 == b.w2);
        CHECK(a.b2 == b.b2);
    }
}

namespace {

MetaDataset threshold_dataset(int n, double tau, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    MetaDataset ds;
    ds.feature_names = {"a_0", "b_0"};
    ds.features.resize(n, 2);
    ds.target_iou.resize(n);
    for (int i = 0; i < n; ++i) {
        // Margin of 0.2 around the threshold keeps the classes separable for
        // any sensible decision boundary.
        double a = ud(rng);
        a = a < 0.5 ? a * 0.8 : 0.6 + (a - 0.5) * 0.8;
        if (std::abs(a - tau) < 0.1) a = a < tau ? tau - 0.1 : tau + 0.1;
        ds.features(i, 0) = a;
        ds.features(i, 1) = ud(rng);
        double iou = a >= tau ? 0.8 : 0.2;
        ds.target_iou[i] = iou;
        ds.labels.push_back(iou >= 0.5 ? 1 : 0);
        ds.groups.push_back({"s", i});
    }
    return ds;
}

}  // namespace

TEST_CASE("predict contracts") {
    MetaDataset ds = threshold_dataset(50, 0.5, 11);

    SUBCASE("zero-weight linear regression predicts a constant") {
        MetaModel model;
        model.family = MetaFamily::LassoLinear;
        model.task = MetaTask::Regression;
        model.feature_names = ds.feature_names;
        LinearModel lm;
        lm.weights = Eigen::VectorXd::Zero(2);
        lm.bias = 0.42;
        model.model = lm;
        Eigen::VectorXd out = predict(model, ds);
        for (int i = 0; i < out.size(); ++i) CHECK(out[i] == 0.42);
    }

    SUBCASE("logistic decision zero maps to probability one half") {
        MetaModel model;
        model.family = MetaFamily::LassoLinear;
        model.task = MetaTask::Classification;
        model.feature_names = ds.feature_names;
        LinearModel lm;
        lm.weights = Eigen::VectorXd::Zero(2);
        lm.bias = 0.0;
        lm.logistic = true;
        model.model = lm;
        Eigen::VectorXd out = predict(model, ds);
        for (int i = 0; i < out.size(); ++i) CHECK(out[i] == 0.5);
    }

    SUBCASE("regression outputs are clamped to [0,1]") {
        MetaModel model;
        model.family = MetaFamily::LassoLinear;
        model.task = MetaTask::Regression;
        model.feature_names = ds.feature_names;
        LinearModel lm;
        lm.weights = Eigen::VectorXd::Zero(2);
        lm.bias = 7.0;
        model.model = lm;
        Eigen::VectorXd out = predict(model, ds);
        for (int i = 0; i < out.size(); ++i) CHECK(out[i] == 1.0);
    }

    SUBCASE("schema mismatch names the missing columns") {
        MetaModel model;
        model.family = MetaFamily::LassoLinear;
        model.task = MetaTask::Regression;
        model.feature_names = {"a_0", "nope_0"};
        LinearModel lm;
        lm.weights = Eigen::VectorXd::Zero(2);
        model.model = lm;
        CHECK_THROWS_WITH_AS(predict(model, ds), doctest::Contains("nope_0"),
                             std::runtime_error);
    }
}

TEST_CASE("run_protocol on separable data reaches perfect accuracy") {
    MetaDataset ds = threshold_dataset(300, 0.5, 12);
    ProtocolOptions opts;
    opts.seed = 5;
    opts.nn.epochs = 60;
    for (MetaFamily family :
         {MetaFamily::LassoLinear, MetaFamily::GradientBoosting, MetaFamily::ShallowNetwork}) {
        ProtocolResult result = run_protocol(ds, family, MetaTask::Classification, opts);
        CHECK(result.runs == 10);
        REQUIRE(result.measures.count("acc"));
        REQUIRE(result.measures.count("auroc"));
        CHECK(result.measures.at("acc").values.size() == 10);
        CHECK(result.measures.at("acc").mean == doctest::Approx(1.0));
        CHECK(result.measures.at("acc").stddev == doctest::Approx(0.0));
        CHECK(result.measures.at("auroc").mean == doctest::Approx(1.0));
    }
}

TEST_CASE("run_protocol regression on an exactly linear target") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    MetaDataset ds;
    ds.feature_names = {"x_0", "y_0"};
    const int n = 240;
    ds.features.resize(n, 2);
    ds.target_iou.resize(n);
    for (int i = 0; i < n; ++i) {
        double a = ud(rng), b = ud(rng);
        ds.features(i, 0) = a;
        ds.features(i, 1) = b;
        double iou = 0.1 + 0.5 * a + 0.3 * b;  // stays inside [0,1]
        ds.target_iou[i] = iou;
        ds.labels.push_back(iou >= 0.5 ? 1 : 0);
        ds.groups.push_back({"s", i});
    }
    ProtocolOptions opts;
    opts.seed = 17;
    ProtocolResult result = run_protocol(ds, MetaFamily::LassoLinear, MetaTask::Regression, opts);
    CHECK(result.measures.at("r2").mean > 0.999);
    CHECK(result.measures.at("sigma").mean < 0.01);

    // Split sizes follow 70/10/20 within rounding.
    CHECK(std::abs(result.n_train - std::llround(0.7 * n)) <= 1);
    CHECK(std::abs(result.n_val - std::llround(0.1 * n)) <= 1);
    CHECK(result.n_train + result.n_val + result.n_test == n);

    // Identical seeds reproduce identical numbers.
    ProtocolResult again = run_protocol(ds, MetaFamily::LassoLinear, MetaTask::Regression, opts);
    CHECK(again.measures.at("r2").values == result.measures.at("r2").values);
    CHECK(again.measures.at("sigma").values == result.measures.at("sigma").values);
}

TEST_CASE("run_protocol rejects tiny datasets") {
    MetaDataset ds = threshold_dataset(40, 0.5, 14);
    CHECK_THROWS_AS(run_protocol(ds, MetaFamily::LassoLinear, MetaTask::Classification, {}),
                    std::runtime_error);
}

TEST_CASE("make_meta_dataset selects columns") {
    FeatureTable table;
    table.metric_names = {"size", "ent_mean", "score", "ratio"};
    table.window = 1;
    table.has_targets = true;
    FeatureTable::Row row;
    row.sequence = "s";
    row.track_id = 1;
    row.frame = 2;
    row.values = {10, 0.5, 0.9, 1.1, 9, 0.4, 0.8, 1.0};
    row.present = {1, 1};
    row.iou = 0.7;
    row.gt_track = 3;
    row.label = 1;
    table.rows.push_back(row);

    MetaDataset all = make_meta_dataset(table, FeatureSet::All, 1);
    CHECK(all.feature_names ==
          std::vector<std::string>{"size_0", "ent_mean_0", "score_0", "ratio_0", "size_1",
                                   "ent_mean_1", "score_1", "ratio_1"});
    CHECK(all.features(0, 4) == 9);

    MetaDataset score = make_meta_dataset(table, FeatureSet::ScoreOnly, 1);
    CHECK(score.feature_names == std::vector<std::string>{"score_0"});
    CHECK(score.features(0, 0) == 0.9);

    MetaDataset u = make_meta_dataset(table, FeatureSet::UncertaintyOnly, 0);
    CHECK(u.feature_names == std::vector<std::string>{"size_0", "ent_mean_0"});

    MetaDataset single = make_meta_dataset(table, FeatureSet::SingleFrame, 1);
    CHECK(single.feature_names.size() == 4);

    CHECK_THROWS_AS(make_meta_dataset(table, FeatureSet::All, 2), std::runtime_error);
}

TEST_CASE("affine feature rescaling invariance") {
    MetaDataset ds = threshold_dataset(200, 0.5, 21);
    MetaDataset scaled = ds;
    // Affine map on one column: 5x + 3.
    scaled.features.col(0) = 5.0 * scaled.features.col(0).array() + 3.0;

    ProtocolOptions opts;
    opts.seed = 9;
    opts.nn.epochs = 40;

    // Trees only compare against thresholds, so results match exactly.
    ProtocolResult gb_a = run_protocol(ds, MetaFamily::GradientBoosting,
                                       MetaTask::Classification, opts);
    ProtocolResult gb_b = run_protocol(scaled, MetaFamily::GradientBoosting,
                                       MetaTask::Classification, opts);
    CHECK(gb_a.measures.at("auroc").values == gb_b.measures.at("auroc").values);

    // Standardization absorbs the affine map for the other families.
    ProtocolResult lr_a =
        run_protocol(ds, MetaFamily::LassoLinear, MetaTask::Classification, opts);
    ProtocolResult lr_b =
        run_protocol(scaled, MetaFamily::LassoLinear, MetaTask::Classification, opts);
    for (int r = 0; r < 10; ++r) {
        CHECK(lr_a.measures.at("auroc").values[r] ==
              doctest::Approx(lr_b.measures.at("auroc").values[r]).epsilon(1e-6));
    }
    ProtocolResult nn_a =
        run_protocol(ds, MetaFamily::ShallowNetwork, MetaTask::Classification, opts);
    ProtocolResult nn_b =
        run_protocol(scaled, MetaFamily::ShallowNetwork, MetaTask::Classification, opts);
    for (int r = 0; r < 10; ++r) {
        CHECK(nn_a.measures.at("auroc").values[r] ==
              doctest::Approx(nn_b.measures.at("auroc").values[r]).epsilon(1e-6));
    }
}

TEST_CASE("logit and probability space give the same ranking") {
    MetaDataset ds = threshold_dataset(120, 0.5, 22);
    MetaModel model = fit_meta_on_random_split(ds, MetaFamily::LassoLinear,
                                               MetaTask::Classification, 4, {});
    Eigen::VectorXd probs = predict(model, ds);
    std::vector<double> p_vec(probs.data(), probs.data() + probs.size());
    std::vector<double> logits;
    for (double p : p_vec) logits.push_back(std::log(p / (1.0 - p)));
    CHECK(maskmeta::auroc(p_vec, ds.labels) ==
          doctest::Approx(maskmeta::auroc(logits, ds.labels)).epsilon(1e-12));
}
