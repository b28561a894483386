#pragma once

// Residual-correction network: a small dense net (ReLU hidden stack, sigmoid
// output) learns the gap between recurrent predictions and observations from
// the weather pattern. Because the sigmoid is bounded, training residuals are
// min-max mapped to [0,1] and predictions mapped back before being added.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "aircorrect/optimizer.hpp"
#include "aircorrect/rng.hpp"
#include "aircorrect/scaler.hpp"
#include "aircorrect/windows.hpp"

namespace aircorrect {

struct DenseNetConfig {
    std::vector<int> hidden = {16, 32, 64, 32, 16};
    double dropout_rate = 0.20;
    int dropout_layers = 3;  // dropout follows this many leading hidden layers
};

struct DenseNet {
    DenseNetConfig config;
    int input_width = 0;
    std::vector<Eigen::MatrixXd> W;  // layer l: width_l x width_{l-1}; last maps to 1
    std::vector<Eigen::MatrixXd> b;  // width_l x 1

    std::size_t layer_count() const { return W.size(); }
    ParamViews param_views();
    std::vector<const Eigen::MatrixXd*> param_views() const;
};

DenseNet make_dense_net(const DenseNetConfig& config, int input_width, std::uint64_t seed);

struct DenseDropoutMasks {
    std::vector<Eigen::MatrixXd> layers;  // one per dropped hidden layer
};

DenseDropoutMasks draw_dense_masks(const DenseNet& net, Eigen::Index batch, Rng& rng);

/// Inference forward pass; output in (0,1).
double dense_forward(const DenseNet& net, const Eigen::VectorXd& features);

/// Rows are samples. masks == nullptr means inference mode.
Eigen::VectorXd dense_forward_batch(const DenseNet& net, const Eigen::MatrixXd& rows,
                                    const DenseDropoutMasks* masks = nullptr);

struct DenseGradientResult {
    GradientList grads;
    double loss = 0.0;
    Eigen::VectorXd predictions;
};

/// Exact gradients of batch MSE against targets in [0,1].
DenseGradientResult dense_gradients(const DenseNet& net, const Eigen::MatrixXd& rows,
                                    const Eigen::VectorXd& targets,
                                    const DenseDropoutMasks* masks = nullptr);

struct DenseTrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
};

DenseTrainHistory train_dense(DenseNet& net, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& targets, const Eigen::MatrixXd& val_X,
                              const Eigen::VectorXd& val_targets, const TrainingConfig& config);

struct CorrectorModel {
    DenseNet net;
    ScalerParams residual_scaler;
    bool degenerate = false;  // constant residuals: identity correction
    std::vector<std::string> feature_names;
};

/// Trains the corrector on residuals (observed - recurrent), both in scaled
/// target units. Constant residuals yield a degenerate (identity) corrector
/// rather than an error. The validation fold is the chronological tail.
CorrectorModel train_corrector(const Eigen::VectorXd& recurrent_predictions,
                               const Eigen::VectorXd& observed_targets,
                               const WeatherMatrix& weather, const TrainingConfig& config,
                               const DenseNetConfig& net_config = {});

struct CorrectionResult {
    Eigen::VectorXd final_scaled;    // recurrent + correction, pre-clamp
    Eigen::VectorXd final_physical;  // inverse-transformed, clamped at 0
    std::size_t clamped = 0;
};

/// correction = inverse-residual-scale(dense output); the sum is mapped to
/// physical units and negative concentrations clamp to zero.
CorrectionResult apply_correction(const Eigen::VectorXd& recurrent_predictions,
                                  const WeatherMatrix& weather, const CorrectorModel& model,
                                  const ScalerParams& target_scaler);

}  // namespace aircorrect
