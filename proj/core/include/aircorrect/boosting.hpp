#pragma once

// Gradient-boosted regression trees with squared loss: exact greedy splits
// over sorted unique values (midpoint thresholds), lambda-regularized leaf
// weights, split-count feature importance, and threshold pruning.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "aircorrect/windows.hpp"

namespace aircorrect {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double weight = 0.0;  // leaf value
    double gain = 0.0;    // split gain, kept for gain-based importance

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // root at index 0
};

struct GBTConfig {
    double learning_rate = 0.05;
    int max_depth = 5;
    std::size_t min_child_weight = 5;  // squared loss: hessian 1 per sample
    std::size_t n_estimators = 500;
    double lambda = 1.0;  // L2 leaf regularization
    bool gain_importance = false;  // split counts by default
};

struct GBTModel {
    double base_score = 0.0;
    double learning_rate = 0.05;
    bool gain_importance = false;
    std::vector<Tree> trees;
    std::vector<std::string> feature_names;
    std::vector<double> train_loss;  // mean squared error after each round's tree
};

/// base_score = mean(y); each round fits one tree to the residuals. A dataset
/// with no positive-gain split anywhere yields a base-score-only model.
GBTModel fit_gbt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GBTConfig& config,
                 std::vector<std::string> feature_names = {});

/// Root-to-leaf routing; goes left when value < threshold.
double predict_gbt(const GBTModel& model, const Eigen::VectorXd& x);
Eigen::VectorXd predict_gbt(const GBTModel& model, const Eigen::MatrixXd& X);

struct ImportanceReport {
    std::vector<std::string> feature_names;
    std::vector<double> score;     // split counts (or summed gain behind the flag)
    std::vector<double> fraction;  // normalized; all zero when no splits exist
    double total = 0.0;

    bool empty() const { return total == 0.0; }
};

ImportanceReport feature_importance(const GBTModel& model);

/// Importance share below which a feature is dropped, by default half an
/// equal share.
double default_prune_threshold(std::size_t n_features);

struct PruneResult {
    std::vector<std::size_t> retained;  // original column indices, ascending
    bool passthrough = false;           // empty report: nothing was pruned
};

/// Retains features whose fraction is nonzero and >= threshold; the top
/// feature always survives. Column order is preserved.
PruneResult select_features(const ImportanceReport& report, std::size_t n_features,
                            double threshold);

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols);

/// Column-pruned copies. The report must describe the object's columns.
WindowedDataset prune_dataset(const ImportanceReport& report, const WindowedDataset& dataset,
                              double threshold, PruneResult* info = nullptr);
WeatherMatrix prune_weather(const ImportanceReport& report, const WeatherMatrix& weather,
                            double threshold, PruneResult* info = nullptr);

}  // namespace aircorrect
