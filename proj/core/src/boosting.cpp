#include "aircorrect/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {

struct SplitChoice {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

// One boosting round: level-order exact greedy tree growth. Residual sums are
// always accumulated in sample-index order so results are reproducible and
// bit-comparable with a brute-force search.
Tree build_tree(const Eigen::MatrixXd& X, const std::vector<double>& residuals,
                const std::vector<std::vector<int>>& sorted_order, const GBTConfig& cfg) {
    const int n = static_cast<int>(X.rows());
    const int n_features = static_cast<int>(X.cols());
    const double lambda = cfg.lambda;

    Tree tree;
    tree.nodes.push_back(TreeNode{});
    std::vector<int> node_of(static_cast<std::size_t>(n), 0);
    std::vector<int> frontier{0};

    for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
        const int n_nodes = static_cast<int>(tree.nodes.size());
        std::vector<char> open(static_cast<std::size_t>(n_nodes), 0);
        for (int id : frontier) open[static_cast<std::size_t>(id)] = 1;

        // Node totals, index-order accumulation.
        std::vector<double> node_g(static_cast<std::size_t>(n_nodes), 0.0);
        std::vector<std::size_t> node_n(static_cast<std::size_t>(n_nodes), 0);
        for (int i = 0; i < n; ++i) {
            const int nd = node_of[static_cast<std::size_t>(i)];
            if (!open[static_cast<std::size_t>(nd)]) continue;
            node_g[static_cast<std::size_t>(nd)] += residuals[static_cast<std::size_t>(i)];
            ++node_n[static_cast<std::size_t>(nd)];
        }

        std::vector<SplitChoice> best(static_cast<std::size_t>(n_nodes));
        std::vector<double> left_g(static_cast<std::size_t>(n_nodes));
        std::vector<std::size_t> left_n(static_cast<std::size_t>(n_nodes));
        std::vector<double> last_v(static_cast<std::size_t>(n_nodes));

        for (int f = 0; f < n_features; ++f) {
            std::fill(left_g.begin(), left_g.end(), 0.0);
            std::fill(left_n.begin(), left_n.end(), 0);
            for (int idx : sorted_order[static_cast<std::size_t>(f)]) {
                const auto nd = static_cast<std::size_t>(node_of[static_cast<std::size_t>(idx)]);
                if (!open[nd]) continue;
                const double v = X(idx, f);
                if (left_n[nd] > 0 && v > last_v[nd]) {
                    const std::size_t nl = left_n[nd];
                    const std::size_t nr = node_n[nd] - nl;
                    if (nl >= cfg.min_child_weight && nr >= cfg.min_child_weight) {
                        const double gl = left_g[nd];
                        const double gr = node_g[nd] - gl;
                        const double g = node_g[nd];
                        const double gain =
                            0.5 * (gl * gl / (static_cast<double>(nl) + lambda) +
                                   gr * gr / (static_cast<double>(nr) + lambda) -
                                   g * g / (static_cast<double>(node_n[nd]) + lambda));
                        // Strict > with ascending (feature, threshold) scan keeps
                        // the lowest-feature, lowest-threshold winner on ties.
                        if (gain > best[nd].gain) {
                            best[nd].gain = gain;
                            best[nd].feature = f;
                            best[nd].threshold = (last_v[nd] + v) / 2.0;
                        }
                    }
                }
                left_g[nd] += residuals[static_cast<std::size_t>(idx)];
                ++left_n[nd];
                last_v[nd] = v;
            }
        }

        std::vector<int> next_frontier;
        for (int id : frontier) {
            const auto uid = static_cast<std::size_t>(id);
            if (best[uid].feature < 0 || !(best[uid].gain > 0.0)) continue;
            TreeNode& nd = tree.nodes[uid];
            nd.feature = best[uid].feature;
            nd.threshold = best[uid].threshold;
            nd.gain = best[uid].gain;
            nd.left = static_cast<int>(tree.nodes.size());
            nd.right = nd.left + 1;
            tree.nodes.push_back(TreeNode{});
            tree.nodes.push_back(TreeNode{});
            next_frontier.push_back(nd.left);
            next_frontier.push_back(nd.right);
        }
        if (next_frontier.empty()) break;
        for (int i = 0; i < n; ++i) {
            const auto nd = static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)]);
            const TreeNode& node = tree.nodes[nd];
            if (node.is_leaf()) continue;
            node_of[static_cast<std::size_t>(i)] =
                X(i, node.feature) < node.threshold ? node.left : node.right;
        }
        frontier = std::move(next_frontier);
    }

    // Leaf weights by routing replay in sample-index order.
    std::vector<double> leaf_g(tree.nodes.size(), 0.0);
    std::vector<std::size_t> leaf_n(tree.nodes.size(), 0);
    for (int i = 0; i < n; ++i) {
        int nd = 0;
        while (!tree.nodes[static_cast<std::size_t>(nd)].is_leaf()) {
            const TreeNode& node = tree.nodes[static_cast<std::size_t>(nd)];
            nd = X(i, node.feature) < node.threshold ? node.left : node.right;
        }
        leaf_g[static_cast<std::size_t>(nd)] += residuals[static_cast<std::size_t>(i)];
        ++leaf_n[static_cast<std::size_t>(nd)];
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
        if (!tree.nodes[id].is_leaf()) continue;
        tree.nodes[id].weight =
            leaf_g[id] / (static_cast<double>(leaf_n[id]) + lambda);
    }
    return tree;
}

double route(const Tree& tree, const Eigen::MatrixXd& X, Eigen::Index row) {
    int nd = 0;
    while (!tree.nodes[static_cast<std::size_t>(nd)].is_leaf()) {
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(nd)];
        nd = X(row, node.feature) < node.threshold ? node.left : node.right;
    }
    return tree.nodes[static_cast<std::size_t>(nd)].weight;
}

}  // namespace

GBTModel fit_gbt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GBTConfig& config,
                 std::vector<std::string> feature_names) {
    if (X.rows() == 0) throw EmptyDatasetError("fit_gbt: empty dataset");
    if (X.rows() != y.size()) throw DimensionError("fit_gbt: row/target count mismatch");
    if (!(config.learning_rate > 0.0) || config.max_depth < 1 || config.n_estimators < 1 ||
        config.min_child_weight < 1 || config.lambda < 0.0)
        throw ConfigError("fit_gbt: invalid configuration");
    if (!feature_names.empty() && feature_names.size() != static_cast<std::size_t>(X.cols()))
        throw DimensionError("fit_gbt: feature name count mismatch");

    GBTModel model;
    model.learning_rate = config.learning_rate;
    model.gain_importance = config.gain_importance;
    if (feature_names.empty()) {
        for (Eigen::Index f = 0; f < X.cols(); ++f)
            model.feature_names.push_back("f" + std::to_string(f));
    } else {
        model.feature_names = std::move(feature_names);
    }

    const int n = static_cast<int>(X.rows());
    model.base_score = y.mean();

    // Per-feature sample order by (value, index), computed once.
    std::vector<std::vector<int>> sorted_order(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
        auto& order = sorted_order[static_cast<std::size_t>(f)];
        order.resize(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return X(a, f) < X(b, f); });
    }

    std::vector<double> pred(static_cast<std::size_t>(n), model.base_score);
    std::vector<double> residuals(static_cast<std::size_t>(n));
    for (std::size_t round = 0; round < config.n_estimators; ++round) {
        for (int i = 0; i < n; ++i)
            residuals[static_cast<std::size_t>(i)] = y(i) - pred[static_cast<std::size_t>(i)];

        Tree tree = build_tree(X, residuals, sorted_order, config);
        if (tree.nodes.size() == 1 && tree.nodes[0].weight == 0.0) {
            // No split and a zero root leaf adds nothing; stop early.
            break;
        }
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            pred[static_cast<std::size_t>(i)] += config.learning_rate * route(tree, X, i);
            const double r = y(i) - pred[static_cast<std::size_t>(i)];
            loss += r * r;
        }
        model.train_loss.push_back(loss / static_cast<double>(n));
        model.trees.push_back(std::move(tree));
    }
    return model;
}

double predict_gbt(const GBTModel& model, const Eigen::VectorXd& x) {
    Eigen::MatrixXd row = x.transpose();
    return predict_gbt(model, row)(0);
}

Eigen::VectorXd predict_gbt(const GBTModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != static_cast<Eigen::Index>(model.feature_names.size()))
        throw DimensionError("predict_gbt: expected " +
                             std::to_string(model.feature_names.size()) + " features, got " +
                             std::to_string(X.cols()));
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double acc = model.base_score;
        for (const Tree& tree : model.trees) acc += model.learning_rate * route(tree, X, i);
        out(i) = acc;
    }
    return out;
}

ImportanceReport feature_importance(const GBTModel& model) {
    ImportanceReport rep;
    rep.feature_names = model.feature_names;
    rep.score.assign(model.feature_names.size(), 0.0);
    rep.fraction.assign(model.feature_names.size(), 0.0);
    for (const Tree& tree : model.trees) {
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf()) continue;
            rep.score[static_cast<std::size_t>(node.feature)] +=
                model.gain_importance ? node.gain : 1.0;
        }
    }
    rep.total = std::accumulate(rep.score.begin(), rep.score.end(), 0.0);
    if (rep.total > 0.0)
        for (std::size_t f = 0; f < rep.score.size(); ++f)
            rep.fraction[f] = rep.score[f] / rep.total;
    return rep;
}

double default_prune_threshold(std::size_t n_features) {
    return n_features == 0 ? 0.0 : 0.5 / static_cast<double>(n_features);
}

PruneResult select_features(const ImportanceReport& report, std::size_t n_features,
                            double threshold) {
    if (!(threshold >= 0.0 && threshold < 1.0))
        throw ConfigError("prune threshold must lie in [0,1)");
    if (report.feature_names.size() != n_features)
        throw DimensionError("importance report does not describe this feature set");

    PruneResult result;
    if (report.empty()) {
        result.passthrough = true;
        for (std::size_t f = 0; f < n_features; ++f) result.retained.push_back(f);
        return result;
    }
    std::size_t top = 0;
    for (std::size_t f = 1; f < n_features; ++f)
        if (report.fraction[f] > report.fraction[top]) top = f;
    for (std::size_t f = 0; f < n_features; ++f) {
        const double share = report.fraction[f];
        if (f == top || (share > 0.0 && share >= threshold)) result.retained.push_back(f);
    }
    return result;
}

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

WindowedDataset prune_dataset(const ImportanceReport& report, const WindowedDataset& dataset,
                              double threshold, PruneResult* info) {
    const PruneResult sel =
        select_features(report, static_cast<std::size_t>(dataset.inputs.cols()), threshold);
    if (info) *info = sel;
    WindowedDataset out = dataset;
    out.inputs = take_columns(dataset.inputs, sel.retained);
    out.feature_names.clear();
    for (std::size_t f : sel.retained) out.feature_names.push_back(dataset.feature_names[f]);
    return out;
}

WeatherMatrix prune_weather(const ImportanceReport& report, const WeatherMatrix& weather,
                            double threshold, PruneResult* info) {
    const PruneResult sel =
        select_features(report, static_cast<std::size_t>(weather.values.cols()), threshold);
    if (info) *info = sel;
    WeatherMatrix out = weather;
    out.values = take_columns(weather.values, sel.retained);
    out.feature_names.clear();
    for (std::size_t f : sel.retained) out.feature_names.push_back(weather.feature_names[f]);
    // met_scalers stay aligned with the met columns that survive.
    std::vector<ScalerParams> scalers;
    for (std::size_t f : sel.retained)
        if (f < weather.met_scalers.size()) scalers.push_back(weather.met_scalers[f]);
    out.met_scalers = std::move(scalers);
    return out;
}

}  // namespace aircorrect
