#pragma once

// Adam with bias correction, global-norm gradient clipping, and the shared
// training configuration. Networks expose their parameters as a flat list of
// matrix views (biases are column matrices) so one optimizer serves every
// architecture here.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace aircorrect {

struct TrainingConfig {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 128;
    std::size_t epochs = 300;
    std::size_t patience = 20;       // early-stop patience on validation loss
    std::uint64_t seed = 0;
    double clip_norm = 5.0;          // global gradient norm; 0 disables
    double validation_fraction = 0.1;
};

using ParamViews = std::vector<Eigen::MatrixXd*>;
using GradientList = std::vector<Eigen::MatrixXd>;

/// Zero-filled gradients shaped like the given parameters.
GradientList make_gradients_like(const ParamViews& params);

struct AdamState {
    GradientList m;
    GradientList v;
    std::size_t step = 0;
};

AdamState make_adam_state(const ParamViews& params);

/// One bias-corrected Adam step; increments state.step. Throws DimensionError
/// on shape mismatch between params, grads, and state.
void adam_update(const ParamViews& params, const GradientList& grads, AdamState& state,
                 const TrainingConfig& config);

/// Euclidean norm over every entry of every gradient.
double global_norm(const GradientList& grads);

/// Scales gradients in place so the global norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(GradientList& grads, double max_norm);

}  // namespace aircorrect
