#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aircorrect/boosting.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/rng.hpp"
#include "test_support.hpp"

using namespace aircorrect;

namespace {

// Exhaustive depth-1 oracle: tries every feature and every midpoint between
// consecutive sorted unique values; gain follows the lambda-regularized
// squared-loss reduction. Mirrors the production gain algebra on purpose:
// the point of the test is that the greedy search finds the argmax, and
// ties resolve to the lowest feature then the lowest threshold.
struct StumpChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double left_weight = 0.0;
    double right_weight = 0.0;
};

double leaf_weight(double sum, std::size_t count, double lambda) {
    return sum / (static_cast<double>(count) + lambda);
}

StumpChoice brute_force_stump(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                              const GBTConfig& cfg) {
    StumpChoice best;
    double best_gain = 0.0;
    const std::size_t n = static_cast<std::size_t>(X.rows());
    const double total_sum = residuals.sum();
    const double parent = total_sum * total_sum / (static_cast<double>(n) + cfg.lambda);
    for (int f = 0; f < X.cols(); ++f) {
        std::vector<double> values;
        for (std::size_t r = 0; r < n; ++r) values.push_back(X(static_cast<Eigen::Index>(r), f));
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (std::size_t k = 0; k + 1 < values.size(); ++k) {
            const double thr = (values[k] + values[k + 1]) / 2.0;
            double lsum = 0.0, rsum = 0.0;
            std::size_t lcount = 0, rcount = 0;
            for (std::size_t r = 0; r < n; ++r) {
                if (X(static_cast<Eigen::Index>(r), f) < thr) {
                    lsum += residuals(static_cast<Eigen::Index>(r));
                    ++lcount;
                } else {
                    rsum += residuals(static_cast<Eigen::Index>(r));
                    ++rcount;
                }
            }
            if (lcount < cfg.min_child_weight || rcount < cfg.min_child_weight) continue;
            const double gain = lsum * lsum / (static_cast<double>(lcount) + cfg.lambda) +
                                rsum * rsum / (static_cast<double>(rcount) + cfg.lambda) -
                                parent;
            if (gain > best_gain) {
                best_gain = gain;
                best.found = true;
                best.feature = f;
                best.threshold = thr;
                best.left_weight = leaf_weight(lsum, lcount, cfg.lambda);
                best.right_weight = leaf_weight(rsum, rcount, cfg.lambda);
            }
        }
    }
    return best;
}

// The canonical two-level fixture: feature 0 in {0,1}, y = 10*x, 10 copies each.
void step_fixture(Eigen::MatrixXd& X, Eigen::VectorXd& y) {
    X.resize(20, 1);
    y.resize(20);
    for (int i = 0; i < 20; ++i) {
        X(i, 0) = i < 10 ? 0.0 : 1.0;
        y(i) = i < 10 ? 0.0 : 10.0;
    }
}

}  // namespace

TEST_CASE("single stump: unregularized leaves recover class means") {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    step_fixture(X, y);
    GBTConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.max_depth = 1;
    cfg.n_estimators = 1;
    cfg.lambda = 0.0;
    cfg.min_child_weight = 1;
    GBTModel m = fit_gbt(X, y, cfg, {"x"});
    CHECK(m.base_score == 5.0);
    REQUIRE(m.trees.size() == 1);
    const auto& nodes = m.trees[0].nodes;
    REQUIRE(nodes.size() == 3);
    CHECK(nodes[0].feature == 0);
    CHECK(nodes[0].threshold == 0.5);
    CHECK(nodes[nodes[0].left].weight == -5.0);
    CHECK(nodes[nodes[0].right].weight == 5.0);
    CHECK(predict_gbt(m, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 0.0))) == 0.0);
    CHECK(predict_gbt(m, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 1.0))) == 10.0);
}

TEST_CASE("single stump: lambda shrinks leaves to +-50/11") {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    step_fixture(X, y);
    GBTConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.max_depth = 1;
    cfg.n_estimators = 1;
    cfg.lambda = 1.0;
    cfg.min_child_weight = 1;
    GBTModel m = fit_gbt(X, y, cfg);
    const auto& nodes = m.trees[0].nodes;
    CHECK(nodes[nodes[0].left].weight == doctest::Approx(-50.0 / 11.0).epsilon(1e-15));
    CHECK(nodes[nodes[0].right].weight == doctest::Approx(50.0 / 11.0).epsilon(1e-15));
    // Default feature names are synthesized when none are given.
    REQUIRE(m.feature_names.size() == 1);
}

TEST_CASE("constant targets produce a base-score-only model") {
    Eigen::MatrixXd X(6, 2);
    X << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    Eigen::VectorXd y = Eigen::VectorXd::Constant(6, 3.25);
    GBTConfig cfg;
    cfg.min_child_weight = 1;
    cfg.n_estimators = 10;
    GBTModel m = fit_gbt(X, y, cfg);
    CHECK(m.base_score == 3.25);
    for (const auto& t : m.trees) {
        REQUIRE(t.nodes.size() == 1);
        CHECK(t.nodes[0].is_leaf());
        CHECK(t.nodes[0].weight == 0.0);
    }
    CHECK(predict_gbt(m, Eigen::VectorXd(Eigen::VectorXd::Constant(2, -100.0))) == 3.25);
    CHECK(feature_importance(m).empty());
}

TEST_CASE("stump choice matches brute force on random fixtures") {
    Rng rng(2024);
    for (int trial = 0; trial < 80; ++trial) {
        const Eigen::Index n = 4 + static_cast<Eigen::Index>(rng.below(17));
        const Eigen::Index k = 1 + static_cast<Eigen::Index>(rng.below(3));
        Eigen::MatrixXd X(n, k);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < k; ++j) {
                // Coarse grid values force frequent threshold and gain ties.
                X(i, j) = static_cast<double>(rng.below(5));
            }
            y(i) = static_cast<double>(rng.below(7)) - 3.0;
        }
        GBTConfig cfg;
        cfg.learning_rate = 1.0;
        cfg.max_depth = 1;
        cfg.n_estimators = 1;
        cfg.lambda = trial % 2 == 0 ? 0.0 : 1.0;
        cfg.min_child_weight = 1 + rng.below(2);
        GBTModel m = fit_gbt(X, y, cfg);
        Eigen::VectorXd residuals = y.array() - y.mean();
        StumpChoice oracle = brute_force_stump(X, residuals, cfg);
        const auto& nodes = m.trees[0].nodes;
        if (!oracle.found) {
            REQUIRE(nodes.size() == 1);
            CHECK(nodes[0].is_leaf());
            continue;
        }
        REQUIRE(nodes.size() == 3);
        INFO("trial ", trial);
        CHECK(nodes[0].feature == oracle.feature);
        CHECK(nodes[0].threshold == oracle.threshold);
        CHECK(nodes[nodes[0].left].weight == oracle.left_weight);
        CHECK(nodes[nodes[0].right].weight == oracle.right_weight);
    }
}

TEST_CASE("training loss is non-increasing round over round") {
    Rng rng(55);
    Eigen::MatrixXd X = testsupport::random_matrix(rng, 60, 3, 0.0, 1.0);
    Eigen::VectorXd y(60);
    for (Eigen::Index i = 0; i < 60; ++i)
        y(i) = 3.0 * X(i, 0) - 2.0 * X(i, 1) + 0.3 * rng.normal();
    GBTConfig cfg;
    cfg.n_estimators = 120;
    cfg.min_child_weight = 2;
    cfg.max_depth = 3;
    GBTModel m = fit_gbt(X, y, cfg);
    REQUIRE(m.train_loss.size() == 120);
    for (std::size_t r = 1; r < m.train_loss.size(); ++r)
        CHECK(m.train_loss[r] <= m.train_loss[r - 1] + 1e-12);
    // The final loss reflects the model's own predictions.
    const double mse = (predict_gbt(m, X) - y).squaredNorm() / 60.0;
    CHECK(m.train_loss.back() == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("prediction is base score plus scaled tree sum") {
    Rng rng(9);
    Eigen::MatrixXd X = testsupport::random_matrix(rng, 40, 2, -1.0, 1.0);
    Eigen::VectorXd y(40);
    for (Eigen::Index i = 0; i < 40; ++i) y(i) = X(i, 0) * X(i, 1) + X(i, 1);
    GBTConfig cfg;
    cfg.n_estimators = 5;
    cfg.learning_rate = 0.3;
    cfg.min_child_weight = 3;
    GBTModel m = fit_gbt(X, y, cfg);
    auto leaf_value = [&](const Tree& t, const Eigen::VectorXd& x) {
        int idx = 0;
        while (!t.nodes[static_cast<std::size_t>(idx)].is_leaf()) {
            const auto& nd = t.nodes[static_cast<std::size_t>(idx)];
            idx = x(nd.feature) < nd.threshold ? nd.left : nd.right;
        }
        return t.nodes[static_cast<std::size_t>(idx)].weight;
    };
    for (Eigen::Index i = 0; i < 10; ++i) {
        Eigen::VectorXd x = X.row(i).transpose();
        double manual = m.base_score;
        for (const auto& t : m.trees) manual += m.learning_rate * leaf_value(t, x);
        CHECK(predict_gbt(m, x) == doctest::Approx(manual).epsilon(1e-14));
    }
    Eigen::VectorXd batch = predict_gbt(m, X);
    for (Eigen::Index i = 0; i < 10; ++i)
        CHECK(batch(i) == predict_gbt(m, Eigen::VectorXd(X.row(i).transpose())));
}

TEST_CASE("min_child_weight bounds every leaf's sample count") {
    Rng rng(13);
    Eigen::MatrixXd X = testsupport::random_matrix(rng, 30, 2, 0.0, 1.0);
    Eigen::VectorXd y(30);
    for (Eigen::Index i = 0; i < 30; ++i) y(i) = X(i, 0) > 0.5 ? rng.uniform() : -rng.uniform();
    GBTConfig cfg;
    cfg.n_estimators = 3;
    cfg.max_depth = 4;
    cfg.min_child_weight = 5;
    GBTModel m = fit_gbt(X, y, cfg);
    for (const auto& tree : m.trees) {
        std::vector<std::size_t> counts(tree.nodes.size(), 0);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            int idx = 0;
            while (!tree.nodes[static_cast<std::size_t>(idx)].is_leaf()) {
                const auto& nd = tree.nodes[static_cast<std::size_t>(idx)];
                idx = X(i, nd.feature) < nd.threshold ? nd.left : nd.right;
            }
            ++counts[static_cast<std::size_t>(idx)];
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k)
            if (tree.nodes[k].is_leaf()) CHECK(counts[k] >= cfg.min_child_weight);
    }
}

TEST_CASE("max_depth one yields stumps only") {
    Rng rng(14);
    Eigen::MatrixXd X = testsupport::random_matrix(rng, 25, 3, 0.0, 1.0);
    Eigen::VectorXd y(25);
    for (Eigen::Index i = 0; i < 25; ++i) y(i) = X(i, 2);
    GBTConfig cfg;
    cfg.n_estimators = 10;
    cfg.max_depth = 1;
    cfg.min_child_weight = 1;
    GBTModel m = fit_gbt(X, y, cfg);
    for (const auto& t : m.trees) CHECK(t.nodes.size() <= 3);
}

TEST_CASE("fit_gbt validates inputs") {
    Eigen::MatrixXd X(0, 2);
    Eigen::VectorXd y(0);
    GBTConfig cfg;
    CHECK_THROWS_AS(fit_gbt(X, y, cfg), EmptyDatasetError);
    Eigen::MatrixXd X2(3, 1);
    X2 << 1, 2, 3;
    Eigen::VectorXd y2(2);
    y2 << 1, 2;
    CHECK_THROWS_AS(fit_gbt(X2, y2, cfg), DimensionError);
    GBTConfig bad;
    bad.n_estimators = 0;
    Eigen::VectorXd y3(3);
    y3 << 1, 2, 3;
    CHECK_THROWS_AS(fit_gbt(X2, y3, bad), ConfigError);
    GBTConfig bad2;
    bad2.max_depth = 0;
    CHECK_THROWS_AS(fit_gbt(X2, y3, bad2), ConfigError);
}

TEST_CASE("split-count importance: single stump gives fraction one") {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    step_fixture(X, y);
    GBTConfig cfg;
    cfg.max_depth = 1;
    cfg.n_estimators = 1;
    cfg.learning_rate = 1.0;
    cfg.min_child_weight = 1;
    GBTModel m = fit_gbt(X, y, cfg, {"only"});
    ImportanceReport rep = feature_importance(m);
    REQUIRE(rep.feature_names == std::vector<std::string>{"only"});
    CHECK(rep.score[0] == 1.0);
    CHECK(rep.fraction[0] == 1.0);
    CHECK(rep.total == 1.0);
    CHECK_FALSE(rep.empty());
}

TEST_CASE("importance concentrates on the informative feature") {
    // y is a clean step of feature 0; the other columns are pure noise.
    Rng rng(500);
    const Eigen::Index n = 500;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = rng.uniform();
        X(i, 1) = rng.uniform();
        X(i, 2) = rng.uniform();
        y(i) = X(i, 0) > 0.5 ? 1.0 : 0.0;
    }
    GBTConfig cfg;
    cfg.n_estimators = 500;
    cfg.max_depth = 5;
    cfg.min_child_weight = 5;
    GBTModel m = fit_gbt(X, y, cfg, {"A", "noise1", "noise2"});
    ImportanceReport rep = feature_importance(m);
    CHECK(rep.fraction[0] > 0.9);

    GBTConfig gcfg = cfg;
    gcfg.gain_importance = true;
    GBTModel gm = fit_gbt(X, y, gcfg, {"A", "noise1", "noise2"});
    ImportanceReport grep = feature_importance(gm);
    CHECK(grep.fraction[0] > 0.9);  // gain importance agrees on a clean signal
}

TEST_CASE("default prune threshold is half an equal share") {
    CHECK(default_prune_threshold(27) == doctest::Approx(0.5 / 27.0).epsilon(1e-15));
    CHECK(default_prune_threshold(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("select_features applies threshold with top-1 kept") {
    ImportanceReport rep;
    rep.feature_names = {"A", "B"};
    rep.score = {7.0, 3.0};
    rep.fraction = {0.7, 0.3};
    rep.total = 10.0;
    PruneResult sel = select_features(rep, 2, 0.5);
    CHECK(sel.retained == std::vector<std::size_t>{0});
    CHECK_FALSE(sel.passthrough);

    // threshold 0 keeps everything with nonzero usage.
    ImportanceReport rep2;
    rep2.feature_names = {"A", "B", "C"};
    rep2.score = {5.0, 5.0, 0.0};
    rep2.fraction = {0.5, 0.5, 0.0};
    rep2.total = 10.0;
    PruneResult sel2 = select_features(rep2, 3, 0.0);
    CHECK(sel2.retained == std::vector<std::size_t>{0, 1});

    // Everything below threshold: the argmax alone survives.
    ImportanceReport rep3;
    rep3.feature_names = {"A", "B", "C"};
    rep3.score = {2.0, 5.0, 3.0};
    rep3.fraction = {0.2, 0.5, 0.3};
    rep3.total = 10.0;
    PruneResult sel3 = select_features(rep3, 3, 0.9);
    CHECK(sel3.retained == std::vector<std::size_t>{1});

    // Empty report: passthrough, all columns kept.
    ImportanceReport rep4;
    rep4.feature_names = {"A", "B"};
    rep4.score = {0.0, 0.0};
    rep4.fraction = {0.0, 0.0};
    rep4.total = 0.0;
    PruneResult sel4 = select_features(rep4, 2, 0.1);
    CHECK(sel4.passthrough);
    CHECK(sel4.retained == std::vector<std::size_t>{0, 1});
}

TEST_CASE("take_columns subsets in order") {
    Eigen::MatrixXd X(2, 3);
    X << 1, 2, 3, 4, 5, 6;
    Eigen::MatrixXd sub = take_columns(X, {0, 2});
    REQUIRE(sub.cols() == 2);
    CHECK(sub(0, 0) == 1);
    CHECK(sub(0, 1) == 3);
    CHECK(sub(1, 1) == 6);
}

TEST_CASE("prune_dataset drops unimportant temporal columns") {
    Rng rng(600);
    WindowedDataset ds;
    ds.inputs = testsupport::random_matrix(rng, 50, 4, 0.0, 1.0);
    ds.targets = Eigen::VectorXd::Zero(50);
    for (Eigen::Index i = 0; i < 50; ++i) ds.targets(i) = ds.inputs(i, 1);
    ds.feature_names = {"D1", "D2", "cmaq_24h", "cmaq_48h"};
    ds.pollutant = "pm25";
    ds.horizon_hours = 24;
    ds.scalers.train_count = 50;
    ds.target_rows.assign(50, 0);
    ds.target_timestamps.assign(50, 0);

    GBTConfig cfg;
    cfg.n_estimators = 50;
    cfg.max_depth = 2;
    cfg.min_child_weight = 2;
    GBTModel m = fit_gbt(ds.inputs, ds.targets, cfg, ds.feature_names);
    ImportanceReport rep = feature_importance(m);
    PruneResult info;
    WindowedDataset pruned = prune_dataset(rep, ds, 0.5, &info);
    REQUIRE(info.retained == std::vector<std::size_t>{1});
    CHECK(pruned.feature_names == std::vector<std::string>{"D2"});
    CHECK(pruned.inputs.cols() == 1);
    CHECK(pruned.inputs(7, 0) == ds.inputs(7, 1));
    CHECK(pruned.targets == ds.targets);
    CHECK(pruned.horizon_hours == ds.horizon_hours);

    // Mismatched report/object widths are an internal error.
    ImportanceReport wrong = rep;
    wrong.feature_names.pop_back();
    wrong.score.pop_back();
    wrong.fraction.pop_back();
    CHECK_THROWS_AS(prune_dataset(wrong, ds, 0.5), DimensionError);
}

TEST_CASE("prune_weather keeps scalers aligned with surviving columns") {
    Rng rng(601);
    WeatherMatrix wm;
    wm.values = testsupport::random_matrix(rng, 30, 3, 0.0, 1.0);
    wm.feature_names = {"max_t", "min_t", "ap"};
    wm.met_scalers = {{0.0, 1.0}, {1.0, 2.0}, {2.0, 3.0}};
    wm.target_rows.assign(30, 0);

    ImportanceReport rep;
    rep.feature_names = wm.feature_names;
    rep.score = {1.0, 0.0, 9.0};
    rep.fraction = {0.1, 0.0, 0.9};
    rep.total = 10.0;
    PruneResult info;
    WeatherMatrix pruned = prune_weather(rep, wm, 0.5, &info);
    CHECK(info.retained == std::vector<std::size_t>{2});
    CHECK(pruned.feature_names == std::vector<std::string>{"ap"});
    REQUIRE(pruned.met_scalers.size() == 1);
    CHECK(pruned.met_scalers[0].min == 2.0);
    CHECK(pruned.values.cols() == 1);
    CHECK(pruned.values(3, 0) == wm.values(3, 2));
}

TEST_CASE("gbt handles duplicate feature values without splitting inside ties") {
    // All values identical in a feature: no valid threshold exists there.
    Eigen::MatrixXd X(8, 2);
    Eigen::VectorXd y(8);
    for (int i = 0; i < 8; ++i) {
        X(i, 0) = 1.0;                       // constant: unusable
        X(i, 1) = i < 4 ? 0.0 : 1.0;
        y(i) = i < 4 ? -2.0 : 2.0;
    }
    GBTConfig cfg;
    cfg.max_depth = 2;
    cfg.n_estimators = 1;
    cfg.learning_rate = 1.0;
    cfg.min_child_weight = 1;
    cfg.lambda = 0.0;
    GBTModel m = fit_gbt(X, y, cfg);
    ImportanceReport rep = feature_importance(m);
    CHECK(rep.score[0] == 0.0);
    CHECK(rep.score[1] > 0.0);
    CHECK(predict_gbt(m, (Eigen::VectorXd(2) << 1.0, 0.0).finished()) == -2.0);
}
