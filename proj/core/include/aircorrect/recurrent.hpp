#pragma once

// From-scratch LSTM/GRU cells, the two-layer cascade with dropout and a dense
// linear head, exact BPTT gradients, and the Adam training loop. Gradients
// returned by bptt_gradients are the raw analytic gradients; global-norm
// clipping happens in the training loop so finite-difference checks see the
// true derivative.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "aircorrect/optimizer.hpp"
#include "aircorrect/rng.hpp"
#include "aircorrect/windows.hpp"

namespace aircorrect {

enum class CellKind { lstm, gru };

// hidden_sequence feeds layer 1's hidden vectors to layer 2; prediction_feed
// compresses each step to a scalar through a 1-unit linear map first.
enum class CascadeWiring { hidden_sequence, prediction_feed };

// univariate treats the feature vector as a one-value-per-step sequence;
// lag_multivariate walks the 24 lags with the three forecast values repeated
// at every step (requires the unpruned 27-feature layout).
enum class SequenceLayout { univariate, lag_multivariate };

struct LstmCellParams {
    Eigen::MatrixXd W_f, W_i, W_C, W_o;  // hidden x (hidden + input), act on [h_prev; x]
    Eigen::MatrixXd b_f, b_i, b_C, b_o;  // hidden x 1

    Eigen::Index hidden_size() const { return W_f.rows(); }
    Eigen::Index input_size() const { return W_f.cols() - W_f.rows(); }
};

struct GruCellParams {
    Eigen::MatrixXd W_z, W_r, W_h;  // hidden x (hidden + input)
    Eigen::MatrixXd b_z, b_r, b_h;  // hidden x 1

    Eigen::Index hidden_size() const { return W_z.rows(); }
    Eigen::Index input_size() const { return W_z.cols() - W_z.rows(); }
};

struct LstmStepResult {
    Eigen::VectorXd h, c;
    Eigen::VectorXd f, i, c_tilde, o;  // gate activations cached for BPTT
};

/// One LSTM step: f=sigma(W_f[h,x]+b_f), i likewise, c_tilde=tanh(W_C[h,x]+b_C),
/// c = f*c_prev + i*c_tilde, o=sigma(W_o[h,x]+b_o), h = o*tanh(c).
LstmStepResult lstm_cell_step(const LstmCellParams& params, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev);

struct GruStepResult {
    Eigen::VectorXd h;
    Eigen::VectorXd z, r, h_tilde;
};

/// One GRU step: z=sigma(W_z[h,x]+b_z), r=sigma(W_r[h,x]+b_r),
/// h_tilde=tanh(W_h[r*h_prev, x]+b_h), h = z*h_prev + (1-z)*h_tilde.
GruStepResult gru_cell_step(const GruCellParams& params, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& h_prev);

struct CascadeConfig {
    CellKind cell = CellKind::lstm;
    int layer1_hidden = 50;
    int layer2_hidden = 100;
    double dropout_rate = 0.20;  // per layer, inverted dropout
    CascadeWiring wiring = CascadeWiring::hidden_sequence;
    SequenceLayout layout = SequenceLayout::univariate;
};

struct CascadeNet {
    CascadeConfig config;
    int feature_count = 0;

    LstmCellParams l1_lstm, l2_lstm;  // populated when config.cell == lstm
    GruCellParams l1_gru, l2_gru;     // populated when config.cell == gru
    Eigen::MatrixXd mid_w, mid_b;     // 1 x H1, 1 x 1; prediction_feed only
    Eigen::MatrixXd dense_w, dense_b;  // 1 x H2, 1 x 1

    // Echo of the training dataset, checked by predict().
    std::vector<std::string> feature_names;
    WindowScalers scalers;

    int steps() const;
    int step_input() const;
    ParamViews param_views();
    std::vector<const Eigen::MatrixXd*> param_views() const;
};

/// Glorot-uniform weights, zero biases except the LSTM forget-gate bias (1.0).
CascadeNet make_cascade(const CascadeConfig& config, int feature_count, std::uint64_t seed);

/// Inverted-dropout masks (entries 0 or 1/(1-rate)): one per step for layer
/// 1's hidden sequence, one for layer 2's final state. Empty when rate == 0.
struct DropoutMasks {
    std::vector<Eigen::MatrixXd> layer1;  // each H1 x B
    Eigen::MatrixXd layer2;               // H2 x B
};

DropoutMasks draw_dropout_masks(const CascadeConfig& config, int steps, Eigen::Index batch,
                                Rng& rng);

/// Inference forward pass for one sample (no dropout).
double cascade_forward(const CascadeNet& net, const Eigen::VectorXd& sample);

/// Forward pass over samples-as-rows. masks == nullptr means inference mode.
Eigen::VectorXd cascade_forward_batch(const CascadeNet& net, const Eigen::MatrixXd& samples,
                                      const DropoutMasks* masks = nullptr);

struct GradientResult {
    GradientList grads;  // aligned with param_views()
    double loss = 0.0;   // batch MSE
    Eigen::VectorXd predictions;
};

/// Exact reverse-mode gradients of batch MSE. Throws DivergenceError when the
/// loss is non-finite and DimensionError on shape mismatch.
GradientResult bptt_gradients(const CascadeNet& net, const Eigen::MatrixXd& samples,
                              const Eigen::VectorXd& targets,
                              const DropoutMasks* masks = nullptr);

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;  // NaN when no validation set was given
    std::size_t best_epoch = 0;
    std::size_t clipped_batches = 0;
};

/// Mini-batch Adam with shuffling, per-batch dropout, global-norm clipping,
/// and early stopping on validation loss (best parameters restored). Fixed
/// seed gives a bit-identical history.
TrainHistory train_recurrent(CascadeNet& net, const WindowedDataset& train,
                             const WindowedDataset& validation, const TrainingConfig& config);

/// Inference over a dataset; verifies the dataset matches the net's training
/// feature names and scalers (InternalConsistencyError otherwise).
Eigen::VectorXd predict(const CascadeNet& net, const WindowedDataset& dataset);

}  // namespace aircorrect
